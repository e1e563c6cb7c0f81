"""Neural network building blocks: convolution, pooling, dense, batch
normalization, ELU, sigmoid, dropout, and the GRU recurrence.

Layers are stateless functions over :class:`LayerParams`. Tensors flow as
(B, C, F, T) feature maps (batch, channels, frequency, time) or (B, D)
feature vectors; a rank-3 input is treated as a single unbatched sample.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from . import kernels
from .tensor import (
    Tensor,
    ShapeError,
    as_tensor,
    elu,
    matmul,
    record,
    sigmoid,
    tanh,
)

__all__ = [
    "LayerParams",
    "BN_EPS",
    "conv2d",
    "maxpool2d",
    "dense",
    "batchnorm",
    "elu",
    "sigmoid",
    "dropout",
    "gru_layer",
]

BN_EPS = 1e-5


class LayerParams:
    """Named parameter tensors for one layer plus non-trainable state.

    ``params`` maps role names (kernel, bias, gamma, w_z, ...) to trainable
    tensors; ``state`` holds plain arrays such as batch-norm running
    statistics and the momentum scalar.
    """

    def __init__(self, params=None, state=None):
        self.params: dict[str, Tensor] = dict(params or {})
        self.state: dict[str, np.ndarray] = dict(state or {})

    def __getitem__(self, role: str) -> Tensor:
        return self.params[role]

    def trainables(self):
        return self.params.items()


def _batched(x: Tensor):
    """Return (rank-4 tensor, had_batch) for conv/pool style inputs."""
    if x.ndim == 3:
        return x.reshape((1,) + x.shape), False
    if x.ndim == 4:
        return x, True
    raise ShapeError(f"expected a (C,F,T) or (B,C,F,T) input, got {x.shape}")


def _resolve_pads(pad, kf: int, kt: int):
    """Padding amounts for a padding mode, per axis ('same' or 'valid')."""
    if isinstance(pad, str):
        pad = (pad, pad)
    mode_f, mode_t = pad
    out = []
    for mode, k in ((mode_f, kf), (mode_t, kt)):
        if mode == "same":
            lo = (k - 1) // 2
            out += [lo, k - 1 - lo]
        elif mode == "valid":
            out += [0, 0]
        else:
            raise ValueError(f"unknown padding mode {mode!r}")
    return tuple(out)


def conv2d(x: Tensor, p: LayerParams, pad="same") -> Tensor:
    """2D cross-correlation plus bias, stride 1.

    ``pad`` is 'same', 'valid', or a (freq_mode, time_mode) pair; 'same'
    zero-pads so the axis extent is preserved, 'valid' shrinks it by k-1.
    """
    xt, had_batch = _batched(as_tensor(x))
    w, b = p.params["kernel"], p.params["bias"]
    if w.ndim != 4:
        raise ShapeError(f"conv kernel must be (out, in, kf, kt), got {w.shape}")
    cout, cin, kf, kt = w.shape
    if xt.shape[1] != cin:
        raise ShapeError(
            f"conv input channels {xt.shape[1]} do not match kernel {w.shape}"
        )
    pads = _resolve_pads(pad, kf, kt)
    f, t = xt.shape[2], xt.shape[3]
    if f + pads[0] + pads[1] < kf or t + pads[2] + pads[3] < kt:
        raise ShapeError(
            f"kernel ({kf}x{kt}) larger than padded input ({f}x{t}) under {pad!r} padding"
        )
    y = kernels.conv2d_forward(xt.data, w.data, b.data, pads)
    out = Tensor(y, xt.requires_grad or w.requires_grad or b.requires_grad)

    def fn(dy):
        need_dx = xt.requires_grad
        need_dw = w.requires_grad
        dx, dw, db = kernels.conv2d_backward(
            xt.data, w.data, dy, pads, need_dx, need_dw
        )
        return dx, dw, (db if b.requires_grad else None)

    record(out, (xt, w, b), fn)
    return out if had_batch else out.reshape(out.shape[1:])


def maxpool2d(x: Tensor, pool, ceil_mode: bool = False) -> Tensor:
    """Non-overlapping max pooling with stride equal to the pool size.

    With ceil_mode, partial edge windows are kept (padded with -inf), so
    output extents round up; otherwise they round down. The backward pass
    routes each gradient to the window's first maximum.
    """
    pf, pt = pool
    if pf < 1 or pt < 1:
        raise ValueError(f"pool extents must be >= 1, got {pool}")
    xt, had_batch = _batched(as_tensor(x))
    f, t = xt.shape[2], xt.shape[3]
    if not ceil_mode and (f < pf or t < pt):
        raise ShapeError(f"pool {pool} larger than input ({f}x{t}) without ceil_mode")
    y, idx = kernels.maxpool2d_forward(xt.data, pf, pt, ceil_mode)
    out = Tensor(y, xt.requires_grad)

    def fn(dy):
        if not xt.requires_grad:
            return (None,)
        return (kernels.maxpool2d_backward(dy, idx, f, t),)

    record(out, (xt,), fn)
    return out if had_batch else out.reshape(out.shape[1:])


def dense(x: Tensor, p: LayerParams) -> Tensor:
    """Affine map x @ W + b for (D,) or (B, D) inputs."""
    x = as_tensor(x)
    w, b = p.params["weight"], p.params["bias"]
    if x.ndim == 1:
        return (matmul(x.reshape((1, x.shape[0])), w) + b).reshape((w.shape[1],))
    if x.ndim != 2:
        raise ShapeError(f"dense expects (D,) or (B,D) input, got {x.shape}")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"dense input {x.shape} does not match weight {w.shape}")
    return matmul(x, w) + b


def batchnorm(x: Tensor, p: LayerParams, train: bool) -> Tensor:
    """Per-channel batch normalization over batch and spatial axes.

    Train mode normalizes with batch statistics (biased variance) and
    updates the running mean/variance in ``p.state`` with the configured
    momentum; infer mode is a pure function of the running statistics.
    Batch size must be >= 2 in train mode.
    """
    x = as_tensor(x)
    if x.ndim not in (2, 4):
        raise ShapeError(f"batchnorm expects (B,D) or (B,C,F,T) input, got {x.shape}")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    shape = (1, -1) if x.ndim == 2 else (1, -1, 1, 1)
    sig = "bc,bc->c" if x.ndim == 2 else "bcft,bcft->c"
    gamma, beta = p.params["gamma"], p.params["beta"]
    count = x.size // gamma.size
    if train:
        if x.shape[0] < 2:
            raise ValueError(
                f"batchnorm train mode requires batch size >= 2, got {x.shape[0]}"
            )
        mean = x.data.mean(axis=axes)
        xhat = x.data - mean.reshape(shape)
        var = np.einsum(sig, xhat, xhat) / count
        mom = float(p.state["momentum"])
        p.state["running_mean"] = mom * p.state["running_mean"] + (1 - mom) * mean
        p.state["running_var"] = mom * p.state["running_var"] + (1 - mom) * var
        inv = 1.0 / np.sqrt(var + BN_EPS)
        xhat *= inv.reshape(shape)
        y = xhat * gamma.data.reshape(shape)
        y += beta.data.reshape(shape)
    else:
        mean = p.state["running_mean"]
        var = p.state["running_var"]
        inv = 1.0 / np.sqrt(var + BN_EPS)
        xhat = None  # not needed: infer-mode backward is a fixed rescale
        scale = gamma.data * inv
        y = x.data * scale.reshape(shape)
        y += (beta.data - mean * scale).reshape(shape)
    out = Tensor(y, x.requires_grad or gamma.requires_grad or beta.requires_grad)

    def infer_fn(dy):
        dbeta = dy.sum(axis=axes) if beta.requires_grad else None
        dgamma = None
        if gamma.requires_grad:
            dgamma = np.einsum(sig, dy, x.data) * inv
            dgamma -= dy.sum(axis=axes) * mean * inv
        dx = dy * (gamma.data * inv).reshape(shape) if x.requires_grad else None
        return dx, dgamma, dbeta

    def train_fn(dy):
        dbeta = dy.sum(axis=axes)
        dgamma = np.einsum(sig, dy, xhat)
        dx = None
        if x.requires_grad:
            # gradient through the batch statistics
            dx = dy - (dbeta / count).reshape(shape)
            t = xhat * (dgamma / count).reshape(shape)
            dx -= t
            dx *= (gamma.data * inv).reshape(shape)
        return (
            dx,
            dgamma if gamma.requires_grad else None,
            dbeta if beta.requires_grad else None,
        )

    record(out, (x, gamma, beta), train_fn if train else infer_fn)
    return out


def dropout(x: Tensor, rate: float, train: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, scale survivors by
    1/(1-rate) in train mode; identity at inference."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs a seeded generator")
    keep = rng.random(x.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    y = x.data * keep
    y *= scale
    out = Tensor(y, x.requires_grad)

    def fn(dy):
        if not x.requires_grad:
            return (None,)
        d = dy * keep
        d *= scale
        return (d,)

    record(out, (x,), fn)
    return out


def gru_layer(
    xs: Sequence[Tensor],
    p: LayerParams,
    h0: Optional[Tensor] = None,
):
    """Gated recurrent unit over a sequence of (B, D) step inputs.

    Per step: z = sigmoid(x W_z + h U_z + b_z), r = sigmoid(x W_r + h U_r + b_r),
    cand = tanh(x W_h + (r * h) U_h + b_h), h' = (1 - z) * h + z * cand.
    The reset gate multiplies the previous state before the U_h product.
    Returns (outputs, final_state); final_state is outputs[-1].
    """
    if len(xs) == 0:
        raise ValueError("gru_layer requires a non-empty input sequence")
    xs = [as_tensor(x) for x in xs]
    first = xs[0]
    squeeze = first.ndim == 1
    if squeeze:
        xs = [x.reshape((1, x.shape[0])) for x in xs]
    d_in = xs[0].shape[1]
    for i, x in enumerate(xs):
        if x.shape != xs[0].shape:
            raise ShapeError(
                f"gru step {i} has shape {x.shape}, expected {xs[0].shape}"
            )
    w_z, w_r, w_h = p.params["w_z"], p.params["w_r"], p.params["w_h"]
    u_z, u_r, u_h = p.params["u_z"], p.params["u_r"], p.params["u_h"]
    b_z, b_r, b_h = p.params["b_z"], p.params["b_r"], p.params["b_h"]
    if w_z.shape[0] != d_in:
        raise ShapeError(f"gru input width {d_in} does not match w_z {w_z.shape}")
    batch = xs[0].shape[0]
    d_h = w_z.shape[1]
    if h0 is None:
        h = Tensor(np.zeros((batch, d_h)))
    else:
        h = as_tensor(h0)
        if h.ndim == 1:
            h = h.reshape((1, d_h))
    outputs = []
    for x in xs:
        z = sigmoid(matmul(x, w_z) + matmul(h, u_z) + b_z)
        r = sigmoid(matmul(x, w_r) + matmul(h, u_r) + b_r)
        cand = tanh(matmul(x, w_h) + matmul(r * h, u_h) + b_h)
        h = (1.0 - z) * h + z * cand
        outputs.append(h)
    if squeeze:
        outputs = [o.reshape((d_h,)) for o in outputs]
    return outputs, outputs[-1]
