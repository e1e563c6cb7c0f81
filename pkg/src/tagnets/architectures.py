"""The four tagging architectures as symbolic templates, plus shape
inference, parameter counting, the width scaler that hits a target
parameter budget, deterministic initialization, and the forward pass.

Template ids:

* ``k1c2``: 4 convolutions with 1x4 kernels shared over both axes, time-only
  pooling, then 2 fully-connected layers over the flattened per-band map.
* ``k2c1``: a tall 96x4 first kernel collapses the frequency axis, then 1x4
  time convolutions and time pooling, then 2 fully-connected layers.
* ``k2c2``: 5 convolutions with 3x3 kernels and 2D pooling down to a 1x1
  map; the only dense weights are the 50-way output readout.
* ``crnn``: 4 convolutions with 3x3 kernels and 2D pooling down to a
  width x 1 x 15 map, summarised over time by a 2-layer GRU whose final
  hidden state feeds the output readout.

Scaling a template changes layer widths only; depth, kernel shapes, and
pool shapes are immutable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .layers import LayerParams, batchnorm, conv2d, dense, dropout, gru_layer, maxpool2d
from .tensor import ShapeError, Tensor, as_tensor, elu, sigmoid

ARCH_IDS = ("k1c2", "k2c1", "k2c2", "crnn")
INPUT_SHAPE = (1, 96, 1366)
N_TAGS = 50
BUDGET_GRID = (100_000, 250_000, 500_000, 1_000_000, 3_000_000)


@dataclass(frozen=True)
class ConvBlock:
    width: int
    kernel: tuple
    pool: tuple
    pad: object = "same"
    ceil_mode: bool = False
    dropout: float = 0.0
    kind: str = "conv2d"


@dataclass(frozen=True)
class DenseBlock:
    width: int
    kind: str = "dense"


@dataclass(frozen=True)
class GruBlock:
    width: int
    kind: str = "gru"


@dataclass(frozen=True)
class ArchitectureTemplate:
    """Ordered block list with base widths (the smallest-budget profile)."""

    id: str
    blocks: tuple
    output_dim: int = N_TAGS

    @property
    def base_widths(self) -> tuple:
        return tuple(b.width for b in self.blocks)

    def with_widths(self, widths: Sequence[int]) -> tuple:
        if len(widths) != len(self.blocks):
            raise ValueError(
                f"{self.id} needs {len(self.blocks)} widths, got {len(widths)}"
            )
        out = []
        for blk, w in zip(self.blocks, widths):
            if isinstance(blk, ConvBlock):
                out.append(
                    ConvBlock(int(w), blk.kernel, blk.pool, blk.pad, blk.ceil_mode, blk.dropout)
                )
            elif isinstance(blk, DenseBlock):
                out.append(DenseBlock(int(w)))
            else:
                out.append(GruBlock(int(w)))
        return tuple(out)


def template(arch_id: str) -> ArchitectureTemplate:
    """Return the template for an architecture id."""
    if arch_id == "k1c2":
        pools = [(1, 4), (1, 5), (1, 8), (1, 8)]
        widths = [15, 15, 30, 30]
        blocks = [
            ConvBlock(w, (1, 4), p) for w, p in zip(widths, pools)
        ] + [DenseBlock(30), DenseBlock(30)]
    elif arch_id == "k2c1":
        blocks = [ConvBlock(43, (96, 4), (1, 4), pad=("valid", "same"))]
        widths = [43, 43, 87, 87]
        pools = [(1, 4), (1, 4), (1, 4), (1, 5)]
        blocks += [ConvBlock(w, (1, 4), p) for w, p in zip(widths, pools)]
        blocks += [DenseBlock(87), DenseBlock(87)]
    elif arch_id == "k2c2":
        pools = [(2, 4), (2, 4), (2, 4), (3, 5), (4, 4)]
        widths = [20, 41, 41, 62, 83]
        blocks = [ConvBlock(w, (3, 3), p) for w, p in zip(widths, pools)]
    elif arch_id == "crnn":
        pools = [(2, 2), (3, 3), (4, 4), (4, 4)]
        widths = [30, 60, 60, 60]
        # ceil-mode pooling keeps the 15th partial time window; weak dropout
        # after each block protects the recurrent summariser
        blocks = [
            ConvBlock(w, (3, 3), p, ceil_mode=True, dropout=0.1)
            for w, p in zip(widths, pools)
        ] + [GruBlock(30), GruBlock(30)]
    else:
        raise ValueError(f"unknown architecture id {arch_id!r}, expected one of {ARCH_IDS}")
    return ArchitectureTemplate(arch_id, tuple(blocks))


@dataclass(frozen=True)
class NetworkSpec:
    """A template with resolved widths, layer shapes, and parameter count."""

    arch_id: str
    widths: tuple
    input_shape: tuple = INPUT_SHAPE
    blocks: tuple = field(default=(), compare=False)
    layer_shapes: tuple = field(default=(), compare=False)
    param_count: int = field(default=0, compare=False)

    @staticmethod
    def resolve(arch_id: str, widths: Optional[Sequence[int]] = None,
                input_shape: tuple = INPUT_SHAPE) -> "NetworkSpec":
        tpl = template(arch_id)
        widths = tuple(int(w) for w in (widths if widths is not None else tpl.base_widths))
        blocks = tpl.with_widths(widths)
        shapes = _infer_shapes(arch_id, blocks, input_shape, tpl.output_dim)
        count = _count_params(arch_id, blocks, input_shape, tpl.output_dim)
        return NetworkSpec(arch_id, widths, tuple(input_shape), blocks, shapes, count)

    @property
    def output_dim(self) -> int:
        return N_TAGS


def _pool_out(n: int, p: int, ceil_mode: bool) -> int:
    return -(-n // p) if ceil_mode else n // p


def _infer_shapes(arch_id, blocks, input_shape, output_dim):
    """Per-layer output shapes; raises naming the offending block."""
    c, f, t = input_shape
    rows = [("input", (c, f, t))]
    for i, blk in enumerate(blocks):
        name = f"{blk.kind}{i + 1}"
        if isinstance(blk, ConvBlock):
            kf, kt = blk.kernel
            pad = blk.pad if isinstance(blk.pad, tuple) else (blk.pad, blk.pad)
            fo = f if pad[0] == "same" else f - kf + 1
            to = t if pad[1] == "same" else t - kt + 1
            if fo <= 0 or to <= 0:
                raise ShapeError(
                    f"{arch_id} block {name}: kernel {blk.kernel} does not fit input ({f}x{t})"
                )
            fo = _pool_out(fo, blk.pool[0], blk.ceil_mode)
            to = _pool_out(to, blk.pool[1], blk.ceil_mode)
            if fo <= 0 or to <= 0:
                raise ShapeError(
                    f"{arch_id} block {name}: pool {blk.pool} exhausts the ({f}x{t}) map"
                )
            c, f, t = blk.width, fo, to
            rows.append((name, (c, f, t)))
        elif isinstance(blk, DenseBlock):
            if f is not None:
                c, f, t = c * f * t, None, None  # flatten once
            rows.append((name, (blk.width,)))
            c = blk.width
        else:  # GruBlock
            if f is not None:
                if f != 1:
                    raise ShapeError(
                        f"{arch_id} block {name}: recurrent input needs a 1-band map, got {f} bands"
                    )
                seq_len, d_in = t, c
                f, t = None, None
                c = d_in
                rows.append((f"{name}(seq {seq_len})", (blk.width,)))
            else:
                rows.append((name, (blk.width,)))
            c = blk.width
    if f is not None:
        c = c * f * t
    rows.append(("output", (output_dim,)))
    return tuple(rows)


def infer_shapes(spec: NetworkSpec, input_shape: tuple = INPUT_SHAPE):
    """Shape table for a resolved spec on a given input shape."""
    tpl = template(spec.arch_id)
    return _infer_shapes(spec.arch_id, spec.blocks or tpl.with_widths(spec.widths),
                         input_shape, tpl.output_dim)


def _count_params(arch_id, blocks, input_shape, output_dim):
    """Trainable scalars: weights + biases + batch-norm gamma/beta.

    Running statistics are excluded. The 50-way output readout (no batch
    norm) is included.
    """
    c, f, t = input_shape
    n = 0
    for blk in blocks:
        if isinstance(blk, ConvBlock):
            kf, kt = blk.kernel
            n += blk.width * c * kf * kt + blk.width + 2 * blk.width
            pad = blk.pad if isinstance(blk.pad, tuple) else (blk.pad, blk.pad)
            fo = f if pad[0] == "same" else f - kf + 1
            to = t if pad[1] == "same" else t - kt + 1
            f = _pool_out(fo, blk.pool[0], blk.ceil_mode)
            t = _pool_out(to, blk.pool[1], blk.ceil_mode)
            c = blk.width
        elif isinstance(blk, DenseBlock):
            if f is not None:
                c, f, t = c * f * t, None, None
            n += c * blk.width + blk.width + 2 * blk.width
            c = blk.width
        else:
            if f is not None:
                c, f, t = c, None, None
            n += 3 * (c * blk.width + blk.width * blk.width + blk.width)
            c = blk.width
    if f is not None:
        c = c * f * t
    n += c * output_dim + output_dim
    return n


def count_params(spec: NetworkSpec) -> int:
    return _count_params(spec.arch_id, spec.blocks, spec.input_shape, N_TAGS)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def scale_widths(base: Sequence[int], m: float) -> tuple:
    return tuple(max(1, _round_half_up(m * b)) for b in base)


class BudgetError(ValueError):
    """Raised when no width multiplier reaches the target within tolerance."""


def scale_to_target(arch_id: str, target: int, tol: float = 0.02,
                    input_shape: tuple = INPUT_SHAPE) -> NetworkSpec:
    """Resolve widths w_i = max(1, round(m * base_i)) for the smallest
    multiplier m whose parameter count lands within ``tol`` of ``target``.

    Depth and kernel/pool shapes are untouched; only widths scale. The
    count is a step function of m, so bisection brackets the crossing and
    the nearer plateau is chosen (ties to the smaller count). Raises
    :class:`BudgetError` naming the nearest achievable count when integer
    rounding cannot reach the tolerance.
    """
    tpl = template(arch_id)
    base = tpl.base_widths

    def count_at(m: float) -> int:
        return _count_params(arch_id, tpl.with_widths(scale_widths(base, m)),
                             input_shape, tpl.output_dim)

    floor_count = count_at(0.0)  # all widths clamp to 1
    if target < floor_count:
        raise BudgetError(
            f"{arch_id}: target {target} below the minimum width-1 count {floor_count}"
        )
    lo, hi = 1e-9, 1.0
    while count_at(hi) < target:
        hi *= 2.0
        if hi > 1e9:
            raise BudgetError(f"{arch_id}: target {target} is out of range")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if count_at(mid) >= target:
            hi = mid
        else:
            lo = mid
    # two plateaus straddle the target; take the closer count, ties to the
    # smaller one
    c_lo, c_hi = count_at(lo), count_at(hi)
    m, c = (lo, c_lo) if abs(c_lo - target) <= abs(c_hi - target) else (hi, c_hi)
    if abs(c - target) / target > tol:
        raise BudgetError(
            f"{arch_id}: cannot reach {target} within {tol:.1%} at integer width "
            f"granularity; nearest achievable count is {c}"
        )
    return NetworkSpec.resolve(arch_id, scale_widths(base, m), input_shape)


class ModelParams:
    """All layer parameters of one network, in a fixed iteration order."""

    def __init__(self, arch_id: str, blocks: dict[str, LayerParams]):
        self.arch_id = arch_id
        self.blocks = blocks

    def named_trainables(self):
        for bname, lp in self.blocks.items():
            for role, t in lp.params.items():
                yield f"{bname}/{role}", t

    def named_state(self):
        for bname, lp in self.blocks.items():
            for key, arr in lp.state.items():
                yield f"{bname}/{key}", arr

    def trainable_tensors(self):
        return [t for _, t in self.named_trainables()]

    def n_trainable(self) -> int:
        return sum(t.size for t in self.trainable_tensors())

    def copy(self) -> "ModelParams":
        blocks = {}
        for bname, lp in self.blocks.items():
            params = {
                role: Tensor(t.data.copy(), t.requires_grad)
                for role, t in lp.params.items()
            }
            state = {
                k: (v.copy() if isinstance(v, np.ndarray) else v)
                for k, v in lp.state.items()
            }
            blocks[bname] = LayerParams(params, state)
        return ModelParams(self.arch_id, blocks)

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        """Overwrite parameters and state from a flat {path: array} map."""
        for name, t in self.named_trainables():
            if name not in arrays:
                raise KeyError(f"checkpoint is missing parameter {name}")
            if arrays[name].shape != t.shape:
                raise ShapeError(
                    f"checkpoint parameter {name} has shape {arrays[name].shape}, expected {t.shape}"
                )
            t.data = arrays[name].astype(np.float64).copy()
        for bname, lp in self.blocks.items():
            for key in lp.state:
                if key == "momentum":
                    continue
                path = f"{bname}/{key}"
                if path in arrays:
                    lp.state[key] = arrays[path].astype(np.float64).copy()


def _he_uniform(rng, shape, fan_in):
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def _bn_params(width):
    return (
        {"gamma": Tensor(np.ones(width), True), "beta": Tensor(np.zeros(width), True)},
        {
            "running_mean": np.zeros(width),
            "running_var": np.ones(width),
            "momentum": 0.9,
        },
    )


def build(spec: NetworkSpec, rng: np.random.Generator) -> ModelParams:
    """Allocate and initialize every parameter tensor of a resolved spec.

    Conv/dense kernels are He-uniform, GRU matrices uniform(+-1/sqrt(d_h)),
    biases and batch-norm beta zero, gamma one. The draw order is fixed,
    so equal seeds give bitwise-identical parameters.
    """
    c, f, t = spec.input_shape
    blocks: dict[str, LayerParams] = {}
    for i, blk in enumerate(spec.blocks):
        name = f"{blk.kind}{i + 1}"
        if isinstance(blk, ConvBlock):
            kf, kt = blk.kernel
            fan_in = c * kf * kt
            kernel = _he_uniform(rng, (blk.width, c, kf, kt), fan_in)
            bn_p, bn_s = _bn_params(blk.width)
            lp = LayerParams(
                {"kernel": Tensor(kernel, True), "bias": Tensor(np.zeros(blk.width), True), **bn_p},
                bn_s,
            )
            pad = blk.pad if isinstance(blk.pad, tuple) else (blk.pad, blk.pad)
            fo = f if pad[0] == "same" else f - kf + 1
            to = t if pad[1] == "same" else t - kt + 1
            f = _pool_out(fo, blk.pool[0], blk.ceil_mode)
            t = _pool_out(to, blk.pool[1], blk.ceil_mode)
            c = blk.width
        elif isinstance(blk, DenseBlock):
            if f is not None:
                c, f, t = c * f * t, None, None
            weight = _he_uniform(rng, (c, blk.width), c)
            bn_p, bn_s = _bn_params(blk.width)
            lp = LayerParams(
                {"weight": Tensor(weight, True), "bias": Tensor(np.zeros(blk.width), True), **bn_p},
                bn_s,
            )
            c = blk.width
        else:  # GruBlock
            if f is not None:
                f, t = None, None
            d_h = blk.width
            lim = 1.0 / math.sqrt(d_h)
            params = {}
            for gate in ("z", "r", "h"):
                params[f"w_{gate}"] = Tensor(rng.uniform(-lim, lim, (c, d_h)), True)
                params[f"u_{gate}"] = Tensor(rng.uniform(-lim, lim, (d_h, d_h)), True)
                params[f"b_{gate}"] = Tensor(np.zeros(d_h), True)
            lp = LayerParams(params)
            c = d_h
        blocks[name] = lp
    if f is not None:
        c = c * f * t
    weight = _he_uniform(rng, (c, N_TAGS), c)
    blocks["output"] = LayerParams(
        {"weight": Tensor(weight, True), "bias": Tensor(np.zeros(N_TAGS), True)}
    )
    return ModelParams(spec.arch_id, blocks)


def forward(
    spec: NetworkSpec,
    model: ModelParams,
    x,
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Run one batch through the network; returns sigmoid tag scores (B, 50).

    Train mode uses batch statistics (updating the running ones) and
    applies the template's dropout with ``rng``; infer mode is a pure
    function of the parameters.
    """
    h = as_tensor(x)
    if h.ndim == 3:
        h = h.reshape((1,) + h.shape)
    if h.shape[1:] != tuple(spec.input_shape):
        raise ShapeError(
            f"{spec.arch_id} expects input {spec.input_shape}, got {h.shape[1:]}"
        )
    batch = h.shape[0]
    gru_reached = False
    for i, blk in enumerate(spec.blocks):
        name = f"{blk.kind}{i + 1}"
        lp = model.blocks[name]
        if isinstance(blk, ConvBlock):
            h = conv2d(h, lp, pad=blk.pad)
            h = batchnorm(h, lp, train)
            h = elu(h)
            h = maxpool2d(h, blk.pool, ceil_mode=blk.ceil_mode)
            if blk.dropout > 0.0:
                h = dropout(h, blk.dropout, train, rng)
        elif isinstance(blk, DenseBlock):
            if h.ndim == 4:
                h = h.reshape((batch, h.shape[1] * h.shape[2] * h.shape[3]))
            h = dense(h, lp)
            h = batchnorm(h, lp, train)
            h = elu(h)
        else:  # GruBlock
            if not gru_reached:
                if h.shape[2] != 1:
                    raise ShapeError(
                        f"{spec.arch_id}: recurrent input needs a 1-band map, got {h.shape}"
                    )
                seq = h.reshape((batch, h.shape[1], h.shape[3]))
                steps = [seq[:, :, ti] for ti in range(seq.shape[2])]
                gru_reached = True
            steps, _ = gru_layer(steps, lp)
            h = steps[-1]
    if h.ndim == 4:
        h = h.reshape((batch, h.shape[1] * h.shape[2] * h.shape[3]))
    h = dense(h, model.blocks["output"])
    return sigmoid(h)


def describe(arch_id: str, target: Optional[int] = None, tol: float = 0.02) -> dict:
    """Spec sheet for an architecture at a budget (or at base widths)."""
    spec = (
        scale_to_target(arch_id, target, tol)
        if target is not None
        else NetworkSpec.resolve(arch_id)
    )
    layers = []
    for blk, (name, shape) in zip(spec.blocks, spec.layer_shapes[1:]):
        entry = {"name": name, "kind": blk.kind, "width": blk.width,
                 "out_shape": list(shape)}
        if isinstance(blk, ConvBlock):
            entry["kernel"] = list(blk.kernel)
            entry["pool"] = list(blk.pool)
        layers.append(entry)
    layers.append({"name": "output", "kind": "dense", "width": N_TAGS,
                   "out_shape": [N_TAGS]})
    return {
        "arch": spec.arch_id,
        "target_params": target,
        "widths": list(spec.widths),
        "param_count": spec.param_count,
        "input_shape": list(spec.input_shape),
        "layers": layers,
    }


def render_describe(sheet: dict) -> str:
    lines = [
        f"{sheet['arch']}  params={sheet['param_count']:,}"
        + (f"  target={sheet['target_params']:,}" if sheet["target_params"] else ""),
        f"  input {tuple(sheet['input_shape'])}",
    ]
    for lay in sheet["layers"]:
        extra = ""
        if "kernel" in lay:
            extra = f" kernel={tuple(lay['kernel'])} pool={tuple(lay['pool'])}"
        lines.append(
            f"  {lay['name']:<12} width={lay['width']:<5}{extra} -> {tuple(lay['out_shape'])}"
        )
    return "\n".join(lines)
