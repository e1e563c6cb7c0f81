# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernel core: im2col packing, col2im scatter, and max pooling
in C loops, with the convolution contractions dispatched to BLAS dgemm.

Mirrors the signatures of ``numpy_backend`` exactly; the backend selector
in ``tagnets.kernels`` picks whichever is available.
"""

import numpy as np

cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm

NAME = "compiled"


cdef void _pack_cols(const double[:, :, ::1] x, double[:, ::1] cols,
                     int kf, int kt, int pf_lo, int pt_lo,
                     int fo, int to) nogil:
    # x: (C, F, T) one sample; cols: (C*kf*kt, fo*to)
    cdef int c, i, j, f, t, row, src_f, src_t, lo, hi
    cdef int cin = x.shape[0], fdim = x.shape[1], tdim = x.shape[2]
    for c in range(cin):
        for i in range(kf):
            for j in range(kt):
                row = (c * kf + i) * kt + j
                for f in range(fo):
                    src_f = f + i - pf_lo
                    if src_f < 0 or src_f >= fdim:
                        for t in range(to):
                            cols[row, f * to + t] = 0.0
                        continue
                    # valid t range: 0 <= t + j - pt_lo < tdim
                    lo = pt_lo - j
                    if lo < 0:
                        lo = 0
                    hi = tdim + pt_lo - j
                    if hi > to:
                        hi = to
                    for t in range(0, lo):
                        cols[row, f * to + t] = 0.0
                    for t in range(lo, hi):
                        cols[row, f * to + t] = x[c, src_f, t + j - pt_lo]
                    for t in range(hi, to):
                        cols[row, f * to + t] = 0.0


cdef void _scatter_cols(double[:, :, ::1] dx, const double[:, ::1] g,
                        int kf, int kt, int pf_lo, int pt_lo,
                        int fo, int to) nogil:
    # adds col-gradients back into one sample's (C, F, T) plane
    cdef int c, i, j, f, t, row, src_f, lo, hi
    cdef int cin = dx.shape[0], fdim = dx.shape[1], tdim = dx.shape[2]
    for c in range(cin):
        for i in range(kf):
            for j in range(kt):
                row = (c * kf + i) * kt + j
                for f in range(fo):
                    src_f = f + i - pf_lo
                    if src_f < 0 or src_f >= fdim:
                        continue
                    lo = pt_lo - j
                    if lo < 0:
                        lo = 0
                    hi = tdim + pt_lo - j
                    if hi > to:
                        hi = to
                    for t in range(lo, hi):
                        dx[c, src_f, t + j - pt_lo] += g[row, f * to + t]


cdef void _gemm_ab(const double[:, ::1] a, const double[:, ::1] b,
                   double[:, ::1] c, double beta) nogil:
    # row-major c(m,n) = a(m,k) @ b(k,n) + beta*c
    cdef int m = a.shape[0], k = a.shape[1], n = b.shape[1]
    cdef double alpha = 1.0
    dgemm("N", "N", &n, &m, &k, &alpha, &b[0, 0], &n, &a[0, 0], &k, &beta, &c[0, 0], &n)


cdef void _gemm_abt(const double[:, ::1] a, const double[:, ::1] b,
                    double[:, ::1] c, double beta) nogil:
    # row-major c(m,n) = a(m,k) @ b(n,k)^T + beta*c
    cdef int m = a.shape[0], k = a.shape[1], n = b.shape[0]
    cdef double alpha = 1.0
    dgemm("T", "N", &n, &m, &k, &alpha, &b[0, 0], &k, &a[0, 0], &k, &beta, &c[0, 0], &n)


cdef void _gemm_atb(const double[:, ::1] a, const double[:, ::1] b,
                    double[:, ::1] c, double beta) nogil:
    # row-major c(m,n) = a(k,m)^T @ b(k,n) + beta*c
    cdef int k = a.shape[0], m = a.shape[1], n = b.shape[1]
    cdef double alpha = 1.0
    dgemm("N", "T", &n, &m, &k, &alpha, &b[0, 0], &n, &a[0, 0], &m, &beta, &c[0, 0], &n)


def conv2d_forward(x, w, b, pads):
    """Cross-correlation plus bias. x: (B,C,F,T), w: (O,C,kf,kt), b: (O,)."""
    x = np.ascontiguousarray(x)
    w = np.ascontiguousarray(w)
    cdef int bs = x.shape[0], cin = x.shape[1], f = x.shape[2], t = x.shape[3]
    cdef int cout = w.shape[0], kf = w.shape[2], kt = w.shape[3]
    cdef int pf_lo = pads[0], pf_hi = pads[1], pt_lo = pads[2], pt_hi = pads[3]
    cdef int fo = f + pf_lo + pf_hi - kf + 1
    cdef int to = t + pt_lo + pt_hi - kt + 1
    if fo <= 0 or to <= 0:
        raise ValueError(f"kernel ({kf}x{kt}) larger than padded input ({f}x{t})")
    cdef int K = cin * kf * kt, N = fo * to
    y = np.empty((bs, cout, N))
    cols_arr = np.empty((K, N))
    w2 = w.reshape(cout, K)
    cdef double[:, ::1] cols = cols_arr
    cdef double[:, ::1] w2v = w2
    cdef double[:, :, :, ::1] xv = x
    cdef double[:, :, ::1] yv = y
    cdef int s
    for s in range(bs):
        _pack_cols(xv[s], cols, kf, kt, pf_lo, pt_lo, fo, to)
        _gemm_ab(w2v, cols, yv[s], 0.0)
    y += b[:, None]
    return y.reshape(bs, cout, fo, to)


def conv2d_backward(x, w, dy, pads, need_dx=True, need_dw=True):
    """Gradients of conv2d_forward. Returns (dx, dw, db); unneeded slots None."""
    x = np.ascontiguousarray(x)
    w = np.ascontiguousarray(w)
    dy = np.ascontiguousarray(dy)
    cdef int bs = x.shape[0], cin = x.shape[1], f = x.shape[2], t = x.shape[3]
    cdef int cout = w.shape[0], kf = w.shape[2], kt = w.shape[3]
    cdef int pf_lo = pads[0], pt_lo = pads[2]
    cdef int fo = dy.shape[2], to = dy.shape[3]
    cdef int K = cin * kf * kt, N = fo * to
    db = dy.sum(axis=(0, 2, 3))
    dy2 = dy.reshape(bs, cout, N)
    w2 = w.reshape(cout, K)
    cdef bint want_dx = bool(need_dx), want_dw = bool(need_dw)
    dw_arr = np.zeros((cout, K)) if want_dw else None
    dx_arr = np.zeros((bs, cin, f, t)) if want_dx else None
    cols_arr = np.empty((K, N))
    cdef double[:, ::1] cols = cols_arr
    cdef double[:, ::1] w2v = w2
    cdef double[:, :, :, ::1] xv = x
    cdef double[:, :, ::1] dy2v = dy2
    cdef double[:, ::1] dwv
    cdef double[:, :, :, ::1] dxv
    cdef int s
    if want_dw:
        dwv = dw_arr
        for s in range(bs):
            _pack_cols(xv[s], cols, kf, kt, pf_lo, pt_lo, fo, to)
            _gemm_abt(dy2v[s], cols, dwv, 1.0)
    if want_dx:
        dxv = dx_arr
        for s in range(bs):
            _gemm_atb(w2v, dy2v[s], cols, 0.0)  # cols <- w2^T @ dy  (K, N)
            _scatter_cols(dxv[s], cols, kf, kt, pf_lo, pt_lo, fo, to)
    dw = dw_arr.reshape(cout, cin, kf, kt) if want_dw else None
    return dx_arr, dw, db


def maxpool2d_forward(x, int pf, int pt, bint ceil_mode):
    """Non-overlapping max pooling; returns (y, argmax flat index into F*T)."""
    x = np.ascontiguousarray(x)
    cdef int bs = x.shape[0], c = x.shape[1], f = x.shape[2], t = x.shape[3]
    cdef int fo, to
    if ceil_mode:
        fo = (f + pf - 1) // pf
        to = (t + pt - 1) // pt
    else:
        fo = f // pf
        to = t // pt
    y = np.empty((bs, c, fo, to))
    idx = np.empty((bs, c, fo, to), dtype=np.int64)
    cdef double[:, :, :, ::1] xv = x
    cdef double[:, :, :, ::1] yv = y
    cdef cnp.int64_t[:, :, :, ::1] iv = idx
    cdef int s, ch, of, ot, i, j, f_end, t_end, bi, bj
    cdef double best, v
    with nogil:
        for s in range(bs):
            for ch in range(c):
                for of in range(fo):
                    f_end = (of + 1) * pf
                    if f_end > f:
                        f_end = f
                    for ot in range(to):
                        t_end = (ot + 1) * pt
                        if t_end > t:
                            t_end = t
                        best = -1e308
                        bi = of * pf
                        bj = ot * pt
                        for i in range(of * pf, f_end):
                            for j in range(ot * pt, t_end):
                                v = xv[s, ch, i, j]
                                if v > best:
                                    best = v
                                    bi = i
                                    bj = j
                        yv[s, ch, of, ot] = best
                        iv[s, ch, of, ot] = bi * t + bj
    return y, idx


def maxpool2d_backward(dy, idx, int f, int t):
    """Route each output gradient to its recorded argmax position."""
    dy = np.ascontiguousarray(dy)
    idx = np.ascontiguousarray(idx)
    cdef int bs = dy.shape[0], c = dy.shape[1], fo = dy.shape[2], to = dy.shape[3]
    dx = np.zeros((bs, c, f, t))
    cdef double[:, :, :, ::1] dxv = dx
    cdef double[:, :, :, ::1] dyv = dy
    cdef cnp.int64_t[:, :, :, ::1] iv = idx
    cdef int s, ch, of, ot
    cdef cnp.int64_t flat
    with nogil:
        for s in range(bs):
            for ch in range(c):
                for of in range(fo):
                    for ot in range(to):
                        flat = iv[s, ch, of, ot]
                        dxv[s, ch, flat // t, flat % t] += dyv[s, ch, of, ot]
    return dx
