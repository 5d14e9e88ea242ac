import numpy as np
import pytest

from tofgraph import kernels
from tofgraph.graphs import PixelGraph, grid_mask


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    """Run the test once per importable kernel backend."""
    with kernels.use_backend(request.param):
        yield request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_graph(rng, shape, sparsity=0.0):
    w4 = rng.random((4,) + tuple(shape))
    if sparsity:
        w4 *= rng.random(w4.shape) >= sparsity
    return PixelGraph(np.where(grid_mask(shape), w4, 0.0))


def dense_laplacian(graph):
    return graph.laplacian().toarray()


# acceptance criteria append (label, passed, detail) here; printed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{label}: {'PASS' if ok else 'FAIL'}  {detail}")
