"""Hot-loop backend selection.

The compiled extension ``tofgraph._kernels`` is used when it imports; otherwise
(or when ``TOFGRAPH_PURE_PYTHON=1``) the numpy versions in ``_kernels_py`` are used.
Both operate on float64 C-contiguous arrays with the layouts documented in
``_kernels_py``.
"""
import os
from contextlib import contextmanager

import numpy as np

from . import _kernels_py
from ._kernels_py import EDGE_OFFSETS, NEIGHBORS, neighbor_weights, shifted, window_offsets

_compiled = None
if os.environ.get("TOFGRAPH_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
_FUNCS = ("degree", "adjacency_apply", "unrolled_iterations", "attention_scores",
          "min_feature_distance", "map_graph")


def set_backend(name):
    """Switch the process-wide backend ("python" or "cython")."""
    global BACKEND
    backend_module(name)
    BACKEND = name


@contextmanager
def use_backend(name):
    prev = BACKEND
    set_backend(name)
    try:
        yield
    finally:
        set_backend(prev)


def backend_module(name=None):
    name = name or BACKEND
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not available")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def available_backends():
    return ["python"] + (["cython"] if _compiled is not None else [])


def set_num_threads(n):
    """Row-parallel thread count of the compiled kernels (the numpy path ignores it)."""
    n = int(n)
    if n < 1:
        raise ValueError("thread count must be >= 1")
    if _compiled is not None:
        _compiled.set_num_threads(n)


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def degree(w4):
    return backend_module().degree(_f64(w4))


def adjacency_apply(w4, x):
    return backend_module().adjacency_apply(_f64(w4), _f64(x))


def unrolled_iterations(b, lam, w4, deg, n_iter):
    return backend_module().unrolled_iterations(_f64(b), _f64(lam), _f64(w4), _f64(deg), int(n_iter))


def attention_scores(qf, kf, q):
    return backend_module().attention_scores(_f64(qf), _f64(kf), int(q))


def min_feature_distance(ft, fp, q):
    return backend_module().min_feature_distance(_f64(ft), _f64(fp), int(q))


def map_graph(a, w4_prev, q):
    return backend_module().map_graph(_f64(a), _f64(w4_prev), int(q))


__all__ = ["BACKEND", "EDGE_OFFSETS", "NEIGHBORS", "available_backends", "backend_module",
           "neighbor_weights", "set_backend", "set_num_threads", "shifted", "use_backend", "window_offsets", *_FUNCS]
