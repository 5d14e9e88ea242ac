"""Parametric desk-scale scenes rendered to z-depth video with exact correspondence.

Camera convention: pinhole, x right, y down, z forward; pixel (row v, col u) has its
center at integer coordinates and casts the ray ((u - cx)/fx, (v - cy)/fy, 1), so
the ray parameter of a hit equals its z-depth. Poses map camera to world:
``X_world = R @ X_cam + t``. Primitives may translate rigidly with a constant
per-frame velocity.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .imaging import DepthFrame, RawFrame, SensorModel, depth_to_raw
from .noise import NoiseSpec, add_awgn, substream

OCCLUSION_TOL = 0.01  # m, z-buffer disagreement that counts as occlusion


class DepthRangeError(ValueError):
    def __init__(self, frames, limit):
        self.frames = list(frames)
        self.limit = limit
        super().__init__(f"depth exceeds unambiguous range {limit:.4f} m in frames {self.frames}")


def _vec(v):
    return np.asarray(v, dtype=float).reshape(3)


@dataclass
class Plane:
    point: np.ndarray
    normal: np.ndarray
    albedo: float = 1.0
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.point, self.velocity = _vec(self.point), _vec(self.velocity)
        n = _vec(self.normal)
        self.normal = n / np.linalg.norm(n)

    def intersect(self, origin, dirs, shift):
        denom = dirs @ self.normal
        num = (self.point + shift - origin) @ self.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = num / denom
        return np.where((np.abs(denom) > 1e-12) & (t > 1e-9), t, np.inf)

    def to_dict(self):
        return {"type": "plane", "point": self.point.tolist(), "normal": self.normal.tolist(),
                "albedo": self.albedo, "velocity": self.velocity.tolist()}


@dataclass
class Sphere:
    center: np.ndarray
    radius: float
    albedo: float = 1.0
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.center, self.velocity = _vec(self.center), _vec(self.velocity)
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")

    def intersect(self, origin, dirs, shift):
        oc = origin - (self.center + shift)
        a = np.einsum("ij,ij->i", dirs, dirs)
        b = dirs @ oc
        c = oc @ oc - self.radius**2
        disc = b * b - a * c
        ok = disc >= 0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t0 = (-b - sq) / a
        t1 = (-b + sq) / a
        t = np.where(t0 > 1e-9, t0, t1)
        return np.where(ok & (t > 1e-9), t, np.inf)

    def to_dict(self):
        return {"type": "sphere", "center": self.center.tolist(), "radius": self.radius,
                "albedo": self.albedo, "velocity": self.velocity.tolist()}


def rotation_xyz(rx=0.0, ry=0.0, rz=0.0) -> np.ndarray:
    """R = Rz @ Ry @ Rx, angles in radians."""
    cx, sx, cy, sy, cz, sz = np.cos(rx), np.sin(rx), np.cos(ry), np.sin(ry), np.cos(rz), np.sin(rz)
    Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return Rz @ Ry @ Rx


@dataclass
class Box:
    center: np.ndarray
    half_size: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    albedo: float = 1.0
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.center, self.half_size, self.velocity = (
            _vec(self.center), _vec(self.half_size), _vec(self.velocity))
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        if np.any(self.half_size <= 0):
            raise ValueError("box half sizes must be positive")

    def intersect(self, origin, dirs, shift):
        # slab test in the box frame
        o = (origin - self.center - shift) @ self.rotation
        d = dirs @ self.rotation
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            t1 = (-self.half_size - o) * inv
            t2 = (self.half_size - o) * inv
        tmin = np.nanmax(np.minimum(t1, t2), axis=1)
        tmax = np.nanmin(np.maximum(t1, t2), axis=1)
        t = np.where(tmin > 1e-9, tmin, tmax)
        return np.where((tmax >= tmin) & (t > 1e-9), t, np.inf)

    def to_dict(self):
        return {"type": "box", "center": self.center.tolist(), "half_size": self.half_size.tolist(),
                "rotation": self.rotation.tolist(), "albedo": self.albedo,
                "velocity": self.velocity.tolist()}


_PRIMS = {"plane": Plane, "sphere": Sphere, "box": Box}


def primitive_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("type")
    if kind not in _PRIMS:
        raise ValueError(f"unknown primitive type {kind!r}")
    if kind == "box" and "euler" in d:
        d["rotation"] = rotation_xyz(*d.pop("euler"))
    return _PRIMS[kind](**d)


@dataclass
class Scene:
    primitives: list
    ambient: float = 0.0
    falloff: bool = False  # scale alpha by (1 m / range)^2

    def __post_init__(self):
        if not self.primitives:
            raise ValueError("a scene needs at least one primitive")

    def to_dict(self):
        return {"primitives": [p.to_dict() for p in self.primitives], "ambient": self.ambient,
                "falloff": self.falloff}

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        return cls([primitive_from_dict(p) for p in d["primitives"]],
                   float(d.get("ambient", 0.0)), bool(d.get("falloff", False)))


@dataclass
class CameraPath:
    width: int
    height: int
    focal: float
    poses: list  # (R, t) camera-to-world
    principal: tuple | None = None

    def __post_init__(self):
        if self.principal is None:
            self.principal = ((self.width - 1) / 2.0, (self.height - 1) / 2.0)
        if len(self.poses) < 2:
            raise ValueError("a camera path needs at least two poses")
        if self.focal <= 0 or self.width <= 0 or self.height <= 0:
            raise ValueError("intrinsics must be positive")
        self.poses = [(np.asarray(R, dtype=float).reshape(3, 3), _vec(t)) for R, t in self.poses]

    @property
    def n_frames(self):
        return len(self.poses)

    @property
    def shape(self):
        return (self.height, self.width)

    def rays(self, u=None, v=None):
        """Camera-frame ray directions (z = 1) through pixel coordinates."""
        if u is None:
            v, u = np.mgrid[0:self.height, 0:self.width].astype(float)
        cx, cy = self.principal
        return np.stack([(u - cx) / self.focal, (v - cy) / self.focal, np.ones_like(u)], axis=-1)

    def to_dict(self):
        return {"width": self.width, "height": self.height, "focal": self.focal,
                "principal": list(self.principal),
                "poses": [{"R": R.tolist(), "t": t.tolist()} for R, t in self.poses]}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraPath":
        poses = []
        for p in d["poses"]:
            R = p["R"] if "R" in p else rotation_xyz(*p.get("euler", (0, 0, 0)))
            poses.append((R, p["t"]))
        principal = tuple(d["principal"]) if d.get("principal") is not None else None
        return cls(int(d["width"]), int(d["height"]), float(d["focal"]), poses, principal)


@dataclass
class Correspondence:
    """Where each pixel of frame t is seen in frame t - dt."""

    coords: np.ndarray  # (H, W, 2) continuous (col, row) in frame t - dt
    occluded: np.ndarray  # (H, W) bool; also set out of view and on background
    prev_depth: np.ndarray  # z-depth of the same surface point in frame t - dt
    dt: int = 1

    @property
    def flow(self) -> np.ndarray:
        h, w = self.occluded.shape
        v, u = np.mgrid[0:h, 0:w].astype(float)
        return self.coords - np.stack([u, v], axis=-1)


def _trace(scene: Scene, origin, dirs, frame_t):
    best = np.full(dirs.shape[0], np.inf)
    ids = np.full(dirs.shape[0], -1, dtype=int)
    for k, p in enumerate(scene.primitives):
        t = p.intersect(origin, dirs, frame_t * p.velocity)
        closer = t < best
        best[closer] = t[closer]
        ids[closer] = k
    return best, ids


def _trace_camera(scene, path, frame_t, cam_dirs):
    R, c = path.poses[frame_t]
    shp = cam_dirs.shape[:-1]
    z, ids = _trace(scene, c, cam_dirs.reshape(-1, 3) @ R.T, frame_t)
    return z.reshape(shp), ids.reshape(shp)


def _alpha(scene, path, z, ids, cam_dirs):
    albedo = np.array([p.albedo for p in scene.primitives] + [0.0])
    alpha = albedo[ids]
    if scene.falloff:
        rng = z * np.linalg.norm(cam_dirs, axis=-1)
        alpha = alpha / np.maximum(rng, 1e-6) ** 2
    return np.where(ids >= 0, alpha, 0.0)


def render(scene: Scene, path: CameraPath, frame_t: int):
    """Depth frame plus primitive-id raster (-1 for background)."""
    dirs = path.rays()
    z, ids = _trace_camera(scene, path, frame_t, dirs)
    valid = ids >= 0
    depth = np.where(valid, z, 0.0)
    return DepthFrame(depth, _alpha(scene, path, depth, ids, dirs), valid), ids


def render_depth(scene: Scene, path: CameraPath, frame_t: int) -> DepthFrame:
    return render(scene, path, frame_t)[0]


def render_correspondence(scene: Scene, path: CameraPath, t: int, dt: int = 1) -> Correspondence:
    if t - dt < 0 or dt < 1:
        raise ValueError("reference frame precedes the sequence")
    h, w = path.shape
    dirs = path.rays()
    z, ids = _trace_camera(scene, path, t, dirs)
    R, c = path.poses[t]
    hit = ids >= 0
    X = c + (dirs * np.where(hit, z, 0.0)[..., None]) @ R.T
    vel = np.array([p.velocity for p in scene.primitives] + [np.zeros(3)])
    X_prev = X - dt * vel[ids]
    Rp, cp = path.poses[t - dt]
    Xc = (X_prev - cp) @ Rp
    zp = Xc[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = path.focal * Xc[..., 0] / zp + path.principal[0]
        v = path.focal * Xc[..., 1] / zp + path.principal[1]
    # border pixels reproject to within rounding of the image edge; keep them
    tol = 1e-6
    in_view = (hit & (zp > 1e-9) & (u >= -tol) & (u <= w - 1 + tol)
               & (v >= -tol) & (v <= h - 1 + tol))
    u, v = np.clip(u, 0, w - 1), np.clip(v, 0, h - 1)
    uu, vv = np.where(in_view, u, 0.0), np.where(in_view, v, 0.0)
    zbuf, ids_prev = _trace_camera(scene, path, t - dt, path.rays(uu, vv))
    occluded = ~in_view | (ids_prev < 0) | (np.abs(zbuf - zp) > OCCLUSION_TOL)
    coords = np.stack([np.where(in_view, u, np.nan), np.where(in_view, v, np.nan)], axis=-1)
    return Correspondence(coords, occluded, np.where(in_view, zp, np.nan), dt)


@dataclass
class Sequence:
    clean: list  # per frame: tuple of RawFrame, one per frequency
    noisy: list
    gt: list  # DepthFrame per frame
    correspondence: list  # Correspondence per frame; None where t < dt
    dt: int = 1

    @property
    def n_frames(self):
        return len(self.gt)


def synth_sequence(scene: Scene, path: CameraPath, model: SensorModel, spec: NoiseSpec,
                   dt: int = 1) -> Sequence:
    """Render, check range, simulate clean and noisy raw data for every frame/frequency.

    Noise of frame t and frequency k comes from ``substream(spec.seed, t, k)``.
    """
    gts = [render_depth(scene, path, t) for t in range(path.n_frames)]
    limit = model.max_range
    bad = [t for t, g in enumerate(gts) if np.any(g.depth[g.valid] >= limit)]
    if bad:
        raise DepthRangeError(bad, limit)
    gain = model.gain / 2.0
    clean, noisy = [], []
    for t, g in enumerate(gts):
        frames_c, frames_n = [], []
        for k in range(len(model.mod_freqs)):
            raw = depth_to_raw(g.depth, g.amplitude / gain, scene.ambient, model, k)
            frames_c.append(raw)
            frames_n.append(add_awgn(raw, spec, substream(spec.seed, t, k)))
        clean.append(tuple(frames_c))
        noisy.append(tuple(frames_n))
    corr = [None if t < dt else render_correspondence(scene, path, t, dt)
            for t in range(path.n_frames)]
    return Sequence(clean, noisy, gts, corr, dt)


# ---- presets ---------------------------------------------------------------

def look_at(eye, target, up=(0.0, -1.0, 0.0)):
    """Camera-to-world pose looking from eye toward target (image y follows -up)."""
    eye, target, up = _vec(eye), _vec(target), _vec(up)
    z = target - eye
    z /= np.linalg.norm(z)
    x = np.cross(up, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.stack([x, y, z], axis=1), eye


def teapot_lite() -> Scene:
    """Back wall, desk top, a sphere and a rotated box; depths about 1.0-2.4 m."""
    return Scene(
        [
            Plane(point=(0.0, 0.0, 2.3), normal=(0.15, 0.0, -1.0), albedo=0.8),
            Plane(point=(0.0, 0.45, 0.0), normal=(0.0, -1.0, 0.0), albedo=0.6),
            Sphere(center=(-0.25, 0.15, 1.55), radius=0.28, albedo=1.0),
            Box(center=(0.35, 0.2, 1.75), half_size=(0.18, 0.25, 0.15),
                rotation=rotation_xyz(0.0, 0.5, 0.0), albedo=0.9),
        ],
        ambient=0.3,
    )


def plane_scene(z=2.0, albedo=1.0) -> Scene:
    return Scene([Plane(point=(0.0, 0.0, z), normal=(0.0, 0.0, -1.0), albedo=albedo)])


def static_path(n_frames, width, height, focal=None) -> CameraPath:
    focal = focal or 0.9 * width
    return CameraPath(width, height, focal, [(np.eye(3), np.zeros(3))] * n_frames)


def random_path(n_frames, width, height, seed=0, step=0.01, turn=0.004, focal=None) -> CameraPath:
    """Smooth random walk: constant-ish velocity in position and yaw/pitch."""
    focal = focal or 0.9 * width
    rng = np.random.default_rng(seed)
    vel = rng.uniform(-1, 1, 3) * step * np.array([1.0, 0.5, 0.5])
    rot_vel = rng.uniform(-1, 1, 2) * turn
    poses, pos, ang = [], np.zeros(3), np.zeros(2)
    for _ in range(n_frames):
        poses.append((rotation_xyz(ang[0], ang[1], 0.0), pos.copy()))
        vel = vel + rng.normal(0, 0.2 * step, 3)
        rot_vel = rot_vel + rng.normal(0, 0.2 * turn, 2)
        pos = pos + vel
        ang = ang + rot_vel
    return CameraPath(width, height, focal, poses)


def default_sequence_inputs(width=320, height=240, n_frames=8, seed=0):
    return teapot_lite(), random_path(n_frames, width, height, seed=seed)


def mean_gamma_sigma(scene: Scene, path: CameraPath, model: SensorModel, target_mae: float,
                     freq_index: int | None = None) -> float:
    """I/Q noise sigma giving roughly ``target_mae`` depth MAE at the given frequency.

    Uses the small-noise depth error: |N(0, (sigma/a * c/(4 pi f))^2)| averaged over
    the valid pixels of frame 0. Defaults to the highest frequency, which sets the
    merged depth's noise.
    """
    if freq_index is None:
        freq_index = int(np.argmax(model.mod_freqs))
    g = render_depth(scene, path, 0)
    inv_amp = np.mean(1.0 / g.amplitude[g.valid])
    k = model.phase_to_depth(freq_index) * np.sqrt(2.0 / np.pi)
    return float(target_mae / (k * inv_amp))


def make_raw(depth: DepthFrame, scene_ambient: float, model: SensorModel):
    gain = model.gain / 2.0
    return tuple(depth_to_raw(depth.depth, depth.amplitude / gain, scene_ambient, model, k)
                 for k in range(len(model.mod_freqs)))

