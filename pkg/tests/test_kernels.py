"""Backend equivalence: the compiled core and the NumPy fallback must
agree bit-for-bit in structure and to float tolerance in values."""

import numpy as np
import pytest

from tagnets import kernels
from tagnets.kernels import numpy_backend

fastcore = pytest.importorskip("tagnets.kernels._fastcore")

CASES = [
    # (input shape, kernel shape, pads)
    ((2, 3, 8, 10), (4, 3, 3, 3), (1, 1, 1, 1)),
    ((1, 1, 96, 50), (5, 1, 96, 4), (0, 0, 1, 2)),  # frequency-collapse kernel
    ((3, 2, 5, 9), (2, 2, 1, 4), (0, 0, 1, 2)),
    ((1, 4, 7, 7), (3, 4, 3, 3), (0, 0, 0, 0)),  # valid
]


@pytest.mark.parametrize("xs,ws,pads", CASES)
def test_conv_forward_backward_agree(xs, ws, pads):
    rng = np.random.default_rng(42)
    x = rng.standard_normal(xs)
    w = rng.standard_normal(ws)
    b = rng.standard_normal(ws[0])
    y_np = numpy_backend.conv2d_forward(x, w, b, pads)
    y_cy = fastcore.conv2d_forward(x, w, b, pads)
    np.testing.assert_allclose(y_cy, y_np, rtol=1e-12, atol=1e-12)
    dy = rng.standard_normal(y_np.shape)
    for need_dx, need_dw in [(True, True), (False, True), (True, False)]:
        g_np = numpy_backend.conv2d_backward(x, w, dy, pads, need_dx, need_dw)
        g_cy = fastcore.conv2d_backward(x, w, dy, pads, need_dx, need_dw)
        for a, b_ in zip(g_np, g_cy):
            assert (a is None) == (b_ is None)
            if a is not None:
                np.testing.assert_allclose(b_, a, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("pool,ceil", [((2, 3), False), ((2, 3), True), ((4, 4), True), ((1, 1), False)])
def test_pool_agree_including_tie_routing(pool, ceil):
    rng = np.random.default_rng(7)
    x = rng.standard_normal((2, 3, 9, 11))
    # inject exact ties so argmax tie-breaking is exercised
    x[0, 0, :4, :4] = 1.0
    y_np, i_np = numpy_backend.maxpool2d_forward(x, pool[0], pool[1], ceil)
    y_cy, i_cy = fastcore.maxpool2d_forward(x, pool[0], pool[1], ceil)
    np.testing.assert_array_equal(y_cy, y_np)
    np.testing.assert_array_equal(i_cy, i_np)
    dy = rng.standard_normal(y_np.shape)
    np.testing.assert_array_equal(
        fastcore.maxpool2d_backward(dy, i_cy, 9, 11),
        numpy_backend.maxpool2d_backward(dy, i_np, 9, 11),
    )


def test_backend_selector_round_trip():
    before = kernels.active_backend()
    try:
        assert kernels.use_backend("numpy").NAME == "numpy"
        assert kernels.active_backend() == "numpy"
        if "compiled" in kernels.available_backends():
            assert kernels.use_backend("compiled").NAME == "compiled"
        with pytest.raises(ValueError):
            kernels.use_backend("cuda")
    finally:
        kernels.use_backend(before)


def test_bench_smoke():
    from tagnets.kernels import bench

    rows = bench.run(batch=1, seconds=0.01)
    assert len(rows) >= len(bench.WORKLOADS)
