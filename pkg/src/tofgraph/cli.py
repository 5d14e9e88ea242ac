"""Command-line interface: ``tofgraph {synth,denoise,eval,noise-sim}``.

Exit codes: 0 ok, 2 unparseable arguments or input files, 3 domain validation
failure, 4 missing input. Every successful run writes ``manifest.json`` into its
output directory.
"""
from __future__ import annotations

import argparse
import glob
import json
import logging
import os
import platform
import sys
import time
import warnings
from contextlib import contextmanager

import numpy as np

from . import __version__, frd, kernels
from .graphs import AttentionParams
from .imaging import DepthFrame, RawFrame, SensorModel
from .metrics import evaluate, xt_slice
from .noise import (NoiseSpec, depth_noise_pdf_approx, depth_noise_pdf_exact,
                    monte_carlo_depth_noise, phase_jacobian, tv_distance)
from .pipeline import GraphConfig, denoise_sequence
from .scene import (CameraPath, Correspondence, Scene, default_sequence_inputs, mean_gamma_sigma,
                    random_path, synth_sequence)
from .solver import SolverConfig, SolverError

log = logging.getLogger("tofgraph")

EXIT_OK, EXIT_PARSE, EXIT_DOMAIN, EXIT_MISSING = 0, 2, 3, 4


class ParseError(Exception):
    pass


class MissingInput(Exception):
    pass


# ---- run manifest -----------------------------------------------------------

class Run:
    """Collects config, digests and stage timings for one command."""

    def __init__(self, command: str, args: argparse.Namespace, config: dict):
        self.command = command
        self.args = {k: v for k, v in vars(args).items() if k != "func"}
        self.config = config
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}
        self.timings: dict[str, float] = {}
        self.extra: dict = {}

    @contextmanager
    def stage(self, name):
        t0 = time.perf_counter()
        yield
        self.timings[name] = round(time.perf_counter() - t0, 6)

    def add_input(self, path):
        self.inputs[os.path.relpath(path)] = frd.sha256_file(path)

    def write_frd(self, out_dir, rel, data):
        path = os.path.join(out_dir, rel)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        self.outputs[rel] = frd.write(path, data)

    def write_text(self, out_dir, rel, text):
        path = os.path.join(out_dir, rel)
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(text)
        self.outputs[rel] = frd.sha256_file(path)

    def save(self, out_dir):
        doc = {
            "tool": "tofgraph", "version": __version__, "command": self.command,
            "python": platform.python_version(), "numpy": np.__version__,
            "backend": kernels.BACKEND, "args": self.args, "config": self.config,
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": dict(sorted(self.outputs.items())),
            "timings_s": self.timings, **self.extra,
        }
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
            json.dump(doc, fh, indent=2, default=_json_default)
            fh.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _num(x) -> str:
    """Shortest round-tripping text for a float."""
    return repr(float(x))


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


# ---- config and inputs ------------------------------------------------------

def load_json(path):
    if not os.path.exists(path):
        raise MissingInput(f"{path}: no such file")
    with open(path) as fh:
        text = fh.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from None


_SECTIONS = ("sensor", "noise", "graph", "solver", "scene", "path")


def load_config(path) -> dict:
    if path is None:
        return {}
    cfg = load_json(path)
    if not isinstance(cfg, dict):
        raise ValueError(f"{path}: top level must be an object")
    unknown = sorted(set(cfg) - set(_SECTIONS))
    if unknown:
        raise ValueError(f"{path}: unknown sections {unknown}")
    return cfg


def _read_frd(path, run: Run | None = None):
    if not os.path.exists(path):
        raise MissingInput(f"{path}: no such file")
    if run is not None:
        run.add_input(path)
    return frd.read(path).astype(np.float64)


def raw_name(t, k):
    return f"raw_{t:03d}_f{k}.frd"


def depth_name(t):
    return f"depth_{t:03d}.frd"


def corr_name(t):
    return f"corr_{t:03d}.frd"


def depth_raster(d: DepthFrame) -> np.ndarray:
    """Channels (depth, amplitude); NaN depth marks invalid pixels."""
    return np.stack([np.where(d.valid, d.depth, np.nan), d.amplitude], axis=-1)


def depth_from_raster(a: np.ndarray) -> DepthFrame:
    if a.shape[2] < 1:
        raise ValueError("depth raster needs at least one channel")
    depth = a[..., 0]
    valid = np.isfinite(depth)
    amp = a[..., 1] if a.shape[2] > 1 else np.ones_like(depth)
    return DepthFrame(np.where(valid, depth, 0.0), amp, valid)


def corr_raster(c: Correspondence) -> np.ndarray:
    return np.stack([c.coords[..., 0], c.coords[..., 1], c.occluded.astype(float),
                     c.prev_depth], axis=-1)


def corr_from_raster(a: np.ndarray, dt: int) -> Correspondence:
    if a.shape[2] < 3:
        raise ValueError("correspondence raster needs channels (col, row, occluded[, prev_depth])")
    prev = a[..., 3] if a.shape[2] > 3 else np.full(a.shape[:2], np.nan)
    return Correspondence(a[..., :2].copy(), a[..., 2] > 0.5, prev, dt)


def read_sequence_meta(seq_dir, run: Run | None = None) -> dict:
    path = os.path.join(seq_dir, "sequence.json")
    meta = load_json(path)
    if run is not None:
        run.add_input(path)
    for key in ("n_frames", "width", "height", "sensor"):
        if key not in meta:
            raise ValueError(f"{path}: missing key {key!r}")
    return meta


def read_raw_sequence(seq_dir, subdir, meta, run):
    model = SensorModel.from_dict(meta["sensor"])
    frames = []
    for t in range(int(meta["n_frames"])):
        per_freq = []
        for k in range(len(model.mod_freqs)):
            a = _read_frd(os.path.join(seq_dir, subdir, raw_name(t, k)), run)
            if a.shape[2] != 2:
                raise ValueError(f"{raw_name(t, k)}: expected 2 channels (I, Q), got {a.shape[2]}")
            per_freq.append(RawFrame(a[..., 0], a[..., 1], k))
        frames.append(tuple(per_freq))
    return frames, model


def read_depth_dir(d, run, n_frames=None):
    """Depth rasters ``depth_NNN.frd`` from ``d`` or ``d/depth``."""
    if not os.path.isdir(d):
        raise MissingInput(f"{d}: no such directory")
    if not glob.glob(os.path.join(d, "depth_*.frd")) and os.path.isdir(os.path.join(d, "depth")):
        d = os.path.join(d, "depth")
    if n_frames is None:
        n_frames = len(glob.glob(os.path.join(d, "depth_*.frd")))
        if n_frames == 0:
            raise MissingInput(f"{d}: no depth rasters")
    return [depth_from_raster(_read_frd(os.path.join(d, depth_name(t)), run)) for t in range(n_frames)]


# ---- commands ---------------------------------------------------------------

def _noise_section(cfg, args):
    noise = dict(cfg.get("noise", {}))
    unknown = sorted(set(noise) - {"sigma", "target_mae", "seed"})
    if unknown:
        raise ValueError(f"noise: unknown keys {unknown}")
    if args.sigma is not None:
        noise["sigma"] = args.sigma
        noise.pop("target_mae", None)
    if args.target_mae is not None:
        noise["target_mae"] = args.target_mae
        noise.pop("sigma", None)
    if "sigma" not in noise and "target_mae" not in noise:
        noise["target_mae"] = 0.05
    return noise


def cmd_synth(args, cfg, run: Run):
    model = SensorModel.from_dict(cfg.get("sensor", {}))
    seed = args.seed
    scene_spec = load_json(args.scene) if args.scene else cfg.get("scene")
    path_spec = load_json(args.path) if args.path else cfg.get("path")
    if args.scene:
        run.add_input(args.scene)
    if args.path:
        run.add_input(args.path)
    scene, path = default_sequence_inputs(args.width, args.height, args.frames, seed=seed)
    if scene_spec is not None:
        scene = Scene.from_dict(scene_spec)
    if path_spec is not None:
        path = CameraPath.from_dict(path_spec) if "poses" in path_spec else random_path(
            args.frames, args.width, args.height, seed=seed, **path_spec)
    noise = _noise_section(cfg, args)
    sigma = noise.get("sigma")
    if sigma is None:
        sigma = mean_gamma_sigma(scene, path, model, float(noise["target_mae"]))
    spec = NoiseSpec(float(sigma), int(noise.get("seed", seed)))
    run.config.update({"sensor": model.to_dict(), "noise": {**noise, **spec.to_dict()},
                       "scene": scene.to_dict(), "path": path.to_dict()})
    with run.stage("synth"):
        seq = synth_sequence(scene, path, model, spec, dt=args.dt)
    out = args.out
    with run.stage("write"):
        for t in range(seq.n_frames):
            for k in range(len(model.mod_freqs)):
                c, n = seq.clean[t][k], seq.noisy[t][k]
                run.write_frd(out, f"clean/{raw_name(t, k)}", np.stack([c.i, c.q], axis=-1))
                run.write_frd(out, f"noisy/{raw_name(t, k)}", np.stack([n.i, n.q], axis=-1))
            run.write_frd(out, f"gt/{depth_name(t)}", depth_raster(seq.gt[t]))
            if seq.correspondence[t] is not None:
                run.write_frd(out, f"corr/{corr_name(t)}", corr_raster(seq.correspondence[t]))
        meta = {"n_frames": seq.n_frames, "width": path.width, "height": path.height,
                "dt": seq.dt, "sensor": model.to_dict(), "noise": spec.to_dict()}
        run.write_text(out, "sequence.json", _dumps(meta))
    log.info("synth: %d frames %dx%d, sigma=%.6g", seq.n_frames, path.width, path.height, spec.sigma)


def _solver_config(cfg, args) -> SolverConfig:
    d = dict(cfg.get("solver", {}))
    for flag, key in (("lam", "lam"), ("outer_iters", "outer_iters"), ("inner_iters", "inner_iters"),
                      ("solver", "mode")):
        v = getattr(args, flag)
        if v is not None:
            d[key] = v
    return SolverConfig.from_dict(d)


def _graph_config(cfg, args) -> GraphConfig:
    d = dict(cfg.get("graph", {}))
    if args.attention:
        d["attention"] = load_json(args.attention)
    g = GraphConfig.from_dict(d)
    if isinstance(g.attention, AttentionParams) and g.attention.Q.shape[0] != 3 * g.features.window ** 2:
        raise ValueError(f"attention matrices must be {3 * g.features.window ** 2}-square "
                         f"for window {g.features.window}")
    return g


def cmd_denoise(args, cfg, run: Run):
    meta = read_sequence_meta(args.input, run)
    noisy, model = read_raw_sequence(args.input, args.source, meta, run)
    if "sensor" in cfg and SensorModel.from_dict(cfg["sensor"]) != model:
        raise ValueError("config sensor section disagrees with the sequence's sensor model")
    gcfg = _graph_config(cfg, args)
    scfg = _solver_config(cfg, args)
    dt = int(meta.get("dt", 1))
    run.config.update({"sensor": model.to_dict(), "graph": gcfg.to_dict(), "solver": scfg.to_dict(),
                       "mode": args.mode, "dt": dt, "confidence": args.confidence})
    with run.stage("denoise"):
        res = denoise_sequence(noisy, model, gcfg, scfg, mode=args.mode, dt=dt,
                               confidence_override=args.confidence, trace=args.trace)
    out = args.out
    with run.stage("write"):
        for t, (raws, depth) in enumerate(zip(res.raws, res.depths)):
            for k, r in enumerate(raws):
                run.write_frd(out, f"raw/{raw_name(t, k)}", np.stack([r.i, r.q], axis=-1))
            run.write_frd(out, f"depth/{depth_name(t)}", depth_raster(depth))
        run.write_text(out, "sequence.json", _dumps({**meta, "denoised": True}))
        if args.trace:
            rows = ["frame,freq_index,r,fidelity,prior,objective"]
            for tr in res.traces:
                for row in tr["rows"]:
                    rows.append(f"{tr['frame']},{tr['freq_index']},{row['r']},{_num(row['fidelity'])},"
                                f"{_num(row['prior'])},{_num(row['objective'])}")
            run.write_text(out, "trace.csv", "\n".join(rows) + "\n")


def cmd_eval(args, cfg, run: Run):
    gt_dir = args.gt
    meta = read_sequence_meta(gt_dir, run)
    n = int(meta["n_frames"])
    gt = read_depth_dir(os.path.join(gt_dir, "gt"), run, n)
    pred = read_depth_dir(args.pred, run, n)
    corr = None
    if args.tepe:
        corr_dir = args.corr or os.path.join(gt_dir, "corr")
        dt = int(meta.get("dt", 1))
        corr = [None if t < dt else
                corr_from_raster(_read_frd(os.path.join(corr_dir, corr_name(t)), run), dt)
                for t in range(n)]
    with run.stage("evaluate"):
        report = evaluate(pred, gt, corr)
    run.write_text(args.out, "report.json", _dumps(report.to_dict()))
    if args.xt_row is not None:
        run.write_frd(args.out, f"xt_row{args.xt_row:04d}.frd", xt_slice(pred, args.xt_row))
    print(json.dumps(report.mean, sort_keys=True))


def _gamma_tag(g):
    return f"{g:.6g}".replace(".", "p")


def cmd_noise_sim(args, cfg, run: Run):
    model = SensorModel.from_dict(cfg.get("sensor", {}))
    if not 0 <= args.freq_index < len(model.mod_freqs):
        raise ValueError(f"freq index {args.freq_index} outside the sensor's frequency list")
    gammas = []
    for g in args.gamma:
        if g in gammas:
            warnings.warn(f"duplicate gamma {g} ignored", stacklevel=1)
            continue
        gammas.append(g)
    if any(g <= 0 for g in gammas):
        raise ValueError("gamma must be positive")
    run.config.update({"sensor": model.to_dict(), "gammas": gammas, "samples": args.samples,
                       "bins": args.bins, "freq_index": args.freq_index, "seed": args.seed})
    freq = model.mod_freqs[args.freq_index]
    depth = 0.25 * model.wrap_range(args.freq_index)
    summary = {}
    for j, g in enumerate(gammas):
        with run.stage(f"gamma_{_gamma_tag(g)}"):
            hist = monte_carlo_depth_noise(depth, 1.0, NoiseSpec(g, args.seed + j), model,
                                           n_samples=args.samples, freq_index=args.freq_index,
                                           n_bins=args.bins, n_streams=args.streams)
        centers = hist.centers
        exact = depth_noise_pdf_exact(centers, g, freq, model.light_speed)
        approx = depth_noise_pdf_approx(centers, g, freq, model.light_speed)
        emp = hist.phase_density()
        lines = ["n_d,pdf_exact,pdf_approx,empirical_density"]
        lines += [",".join(_num(v) for v in row) for row in zip(centers, exact, approx, emp)]
        run.write_text(args.out, f"noise_gamma_{_gamma_tag(g)}.csv", "\n".join(lines) + "\n")
        summary[str(g)] = {"tv_exact": tv_distance(hist, depth_noise_pdf_exact, model.light_speed),
                           "tv_approx": tv_distance(hist, depth_noise_pdf_approx, model.light_speed),
                           "peak_exact": float(depth_noise_pdf_exact(0.0, g, freq, model.light_speed)),
                           "peak_gaussian": float(1.0 / (g * np.sqrt(2 * np.pi))),
                           "jacobian": phase_jacobian(freq, model.light_speed)}
    run.write_text(args.out, "summary.json", _dumps(summary))


# ---- argument parsing ---------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_PARSE)


def _globals(p, suppress):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="JSON file with sections " + ", ".join(_SECTIONS))
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS if suppress else 0)
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS if suppress else 1)
    p.add_argument("--trace", action="store_true", default=argparse.SUPPRESS if suppress else False)
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tofgraph", description="Graph-fusion ToF raw-data denoising")
    _globals(p, False)
    common = _Parser(add_help=False)
    _globals(common, True)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="render a synthetic ToF sequence")
    s.add_argument("--out", required=True)
    s.add_argument("--scene", help="scene JSON (default: built-in desk scene)")
    s.add_argument("--path", help="camera path JSON: explicit poses, or random_path parameters")
    s.add_argument("--width", type=int, default=320)
    s.add_argument("--height", type=int, default=240)
    s.add_argument("--frames", type=int, default=8)
    s.add_argument("--dt", type=int, default=1)
    g = s.add_mutually_exclusive_group()
    g.add_argument("--sigma", type=float, help="I/Q noise standard deviation")
    g.add_argument("--target-mae", type=float, help="pick sigma for this noisy depth MAE (m)")
    s.set_defaults(func=cmd_synth)

    d = sub.add_parser("denoise", parents=[common], help="denoise a sequence directory")
    d.add_argument("--input", required=True, help="sequence directory written by synth")
    d.add_argument("--source", default="noisy", help="raw subdirectory to denoise")
    d.add_argument("--out", required=True)
    d.add_argument("--mode", choices=("single", "fused"), default="fused")
    d.add_argument("--solver", choices=("unrolled", "direct"))
    d.add_argument("--lam", type=float)
    d.add_argument("--outer-iters", type=int)
    d.add_argument("--inner-iters", type=int)
    d.add_argument("--confidence", type=float, help="replace the mapping confidence by a constant")
    d.add_argument("--attention", help="JSON with Q and K matrices")
    d.set_defaults(func=cmd_denoise)

    e = sub.add_parser("eval", parents=[common], help="score depth against ground truth")
    e.add_argument("--pred", required=True, help="directory of depth_NNN.frd (or its parent)")
    e.add_argument("--gt", required=True, help="sequence directory written by synth")
    e.add_argument("--corr", help="correspondence directory (default: <gt>/corr)")
    e.add_argument("--tepe", action="store_true", help="also compute TEPE")
    e.add_argument("--xt-row", type=int)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    n = sub.add_parser("noise-sim", parents=[common], help="Monte-Carlo depth-noise curves")
    n.add_argument("--gamma", type=float, nargs="+", default=[0.05])
    n.add_argument("--freq-index", type=int, default=0)
    n.add_argument("--samples", type=int, default=10**6)
    n.add_argument("--bins", type=int, default=101)
    n.add_argument("--streams", type=int, default=1)
    n.add_argument("--out", required=True)
    n.set_defaults(func=cmd_noise_sim)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise ValueError("--threads must be >= 1")
        kernels.set_num_threads(args.threads)
        cfg = load_config(args.config)
        run = Run(args.command, args, {})
        if args.config:
            run.add_input(args.config)
        args.func(args, cfg, run)
        run.save(args.out)
    except ParseError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except frd.FrdFormatError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except (MissingInput, FileNotFoundError) as e:
        print(f"error: missing input: {e}", file=sys.stderr)
        return EXIT_MISSING
    except (ValueError, TypeError, KeyError, SolverError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_DOMAIN
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
