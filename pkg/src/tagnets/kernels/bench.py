"""Backend comparison benchmark: times the compiled kernel core against
the NumPy fallback on the architectures' real layer shapes.

Run as ``python -m tagnets.kernels.bench`` (options: --batch, --seconds).
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from .._alloc import tune_allocator
from . import available_backends, numpy_backend

try:
    from . import _fastcore
except ImportError:
    _fastcore = None

# (label, input shape sans batch, kernel shape, pads)
WORKLOADS = [
    ("k1c2 conv2", (15, 96, 341), (15, 15, 1, 4), (0, 0, 1, 2)),
    ("k2c1 conv1", (1, 96, 1366), (43, 1, 96, 4), (0, 0, 1, 2)),
    ("k2c2 conv1", (1, 96, 1366), (20, 1, 3, 3), (1, 1, 1, 1)),
    ("k2c2 conv2", (20, 48, 341), (41, 20, 3, 3), (1, 1, 1, 1)),
    ("crnn conv2", (30, 48, 683), (60, 30, 3, 3), (1, 1, 1, 1)),
    ("crnn conv3", (60, 16, 228), (60, 60, 3, 3), (1, 1, 1, 1)),
]
POOLS = [
    ("k2c2 pool1", (20, 96, 1366), (2, 4), False),
    ("crnn pool1", (30, 96, 1366), (2, 2), True),
]


def _time(fn, budget: float) -> float:
    fn()
    n, t0 = 0, time.perf_counter()
    while time.perf_counter() - t0 < budget:
        fn()
        n += 1
    return (time.perf_counter() - t0) / n


def run(batch: int = 8, seconds: float = 0.4) -> list:
    rng = np.random.default_rng(0)
    backends = [numpy_backend] + ([_fastcore] if _fastcore is not None else [])
    rows = []
    for label, xs, ws, pads in WORKLOADS:
        x = rng.standard_normal((batch,) + xs)
        w = rng.standard_normal(ws)
        b = np.zeros(ws[0])
        ref = None
        for mod in backends:
            y = mod.conv2d_forward(x, w, b, pads)
            if ref is None:
                ref = y
            else:
                assert np.allclose(y, ref, rtol=1e-10, atol=1e-10), f"{label}: backends disagree"
            dy = np.ones_like(y)
            fwd = _time(lambda: mod.conv2d_forward(x, w, b, pads), seconds)
            bwd = _time(lambda: mod.conv2d_backward(x, w, dy, pads, True, True), seconds)
            macs = y.size * ws[1] * ws[2] * ws[3]
            rows.append((label, mod.NAME, fwd, bwd, 2 * macs / fwd / 1e9))
    for label, xs, pool, ceil in POOLS:
        x = rng.standard_normal((batch,) + xs)
        for mod in backends:
            y, idx = mod.maxpool2d_forward(x, pool[0], pool[1], ceil)
            dy = np.ones_like(y)
            fwd = _time(lambda: mod.maxpool2d_forward(x, pool[0], pool[1], ceil), seconds)
            bwd = _time(lambda: mod.maxpool2d_backward(dy, idx, xs[1], xs[2]), seconds)
            rows.append((label, mod.NAME, fwd, bwd, None))
    return rows


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--batch", type=int, default=8)
    parser.add_argument("--seconds", type=float, default=0.4, help="time budget per measurement")
    args = parser.parse_args(argv)
    tune_allocator()
    print(f"backends available: {', '.join(available_backends())}")
    rows = run(args.batch, args.seconds)
    print(f"{'workload':<14}{'backend':<10}{'fwd ms':>9}{'bwd ms':>9}{'fwd GF/s':>10}")
    base: dict = {}
    for label, name, fwd, bwd, gfs in rows:
        gf = f"{gfs:9.1f}" if gfs else "         "
        speed = ""
        if name == "numpy":
            base[label] = (fwd, bwd)
        elif label in base:
            speed = f"   ({base[label][0] / fwd:.2f}x fwd, {base[label][1] / bwd:.2f}x bwd)"
        print(f"{label:<14}{name:<10}{fwd * 1e3:9.1f}{bwd * 1e3:9.1f}{gf}{speed}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
