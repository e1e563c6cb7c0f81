"""Vectorized NumPy implementations of the convolution/pooling kernels.

This is the fallback backend: pure array code, no compiled extension
required. Convolutions are im2col + GEMM, processed in batch chunks so the
unrolled column matrix stays under a fixed memory cap.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NAME = "numpy"

# cap on the per-chunk im2col buffer
_MAX_COL_BYTES = 256 * 1024 * 1024


def _chunk_size(per_sample_cols: int) -> int:
    return max(1, _MAX_COL_BYTES // max(1, per_sample_cols * 8))


def _im2col(xp: np.ndarray, kf: int, kt: int) -> np.ndarray:
    """(B, C, Fp, Tp) -> (B, C*kf*kt, Fo*To) for stride-1 windows."""
    win = sliding_window_view(xp, (kf, kt), axis=(2, 3))  # (B, C, Fo, To, kf, kt)
    b, c, fo, to = win.shape[:4]
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(b, c * kf * kt, fo * to)
    return np.ascontiguousarray(cols)


def conv2d_forward(x, w, b, pads):
    """Cross-correlation plus bias. x: (B,C,F,T), w: (O,C,kf,kt), b: (O,).

    ``pads`` is (pf_lo, pf_hi, pt_lo, pt_hi) of zero padding; stride is 1.
    """
    bs, cin, f, t = x.shape
    cout, _, kf, kt = w.shape
    pf_lo, pf_hi, pt_lo, pt_hi = pads
    xp = np.pad(x, ((0, 0), (0, 0), (pf_lo, pf_hi), (pt_lo, pt_hi)))
    fo = xp.shape[2] - kf + 1
    to = xp.shape[3] - kt + 1
    w2 = w.reshape(cout, cin * kf * kt)
    y = np.empty((bs, cout, fo * to))
    step = _chunk_size(cin * kf * kt * fo * to)
    for s in range(0, bs, step):
        cols = _im2col(xp[s : s + step], kf, kt)
        y[s : s + step] = np.matmul(w2, cols)
    y += b[:, None]
    return y.reshape(bs, cout, fo, to)


def conv2d_backward(x, w, dy, pads, need_dx=True, need_dw=True):
    """Gradients of conv2d_forward. Returns (dx, dw, db); unneeded slots None."""
    bs, cin, f, t = x.shape
    cout, _, kf, kt = w.shape
    pf_lo, pf_hi, pt_lo, pt_hi = pads
    fo, to = dy.shape[2], dy.shape[3]
    k = cin * kf * kt
    w2 = w.reshape(cout, k)
    dy2 = dy.reshape(bs, cout, fo * to)

    db = dy.sum(axis=(0, 2, 3))
    dw = np.zeros((cout, k)) if need_dw else None
    dxp = (
        np.zeros((bs, cin, f + pf_lo + pf_hi, t + pt_lo + pt_hi))
        if need_dx
        else None
    )
    if need_dw or need_dx:
        xp = np.pad(x, ((0, 0), (0, 0), (pf_lo, pf_hi), (pt_lo, pt_hi)))
        step = _chunk_size(k * fo * to)
        for s in range(0, bs, step):
            e = min(bs, s + step)
            if need_dw:
                cols = _im2col(xp[s:e], kf, kt)
                dw += np.einsum("bon,bkn->ok", dy2[s:e], cols, optimize=True)
            if need_dx:
                g = np.matmul(w2.T, dy2[s:e])  # (b, k, fo*to)
                g = g.reshape(e - s, cin, kf, kt, fo, to)
                for i in range(kf):
                    for j in range(kt):
                        dxp[s:e, :, i : i + fo, j : j + to] += g[:, :, i, j]
    dx = None
    if need_dx:
        dx = dxp[:, :, pf_lo : pf_lo + f, pt_lo : pt_lo + t]
        if not dx.flags.c_contiguous:
            dx = np.ascontiguousarray(dx)
    if need_dw:
        dw = dw.reshape(cout, cin, kf, kt)
    return dx, dw, db


def maxpool2d_forward(x, pf, pt, ceil_mode):
    """Non-overlapping max pooling (stride = pool size).

    Returns (y, idx) where idx holds, per output cell, the flat index of
    the window maximum inside the original F*T plane (first occurrence in
    row-major scan order on ties). ceil_mode keeps partial edge windows by
    padding with -inf; floor mode drops them.
    """
    bs, c, f, t = x.shape
    if ceil_mode:
        fo, to = -(-f // pf), -(-t // pt)
        xw = x
        if fo * pf != f or to * pt != t:
            xw = np.pad(
                x,
                ((0, 0), (0, 0), (0, fo * pf - f), (0, to * pt - t)),
                constant_values=-np.inf,
            )
    else:
        fo, to = f // pf, t // pt
        xw = x[:, :, : fo * pf, : to * pt]
    win = xw.reshape(bs, c, fo, pf, to, pt).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(bs, c, fo, to, pf * pt)
    local = win.argmax(axis=-1)
    y = np.take_along_axis(win, local[..., None], axis=-1)[..., 0]
    fi = np.arange(fo)[:, None] * pf + (local // pt)
    ti = np.arange(to)[None, :] * pt + (local % pt)
    idx = (fi * t + ti).astype(np.int64)
    return np.ascontiguousarray(y), idx


def maxpool2d_backward(dy, idx, f, t):
    """Route each output gradient to its recorded argmax position."""
    bs, c = dy.shape[:2]
    dx = np.zeros((bs, c, f * t))
    np.put_along_axis(dx, idx.reshape(bs, c, -1), dy.reshape(bs, c, -1), axis=2)
    return dx.reshape(bs, c, f, t)
