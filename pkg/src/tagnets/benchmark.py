"""Training-throughput benchmarks: wall-clock seconds per fixed sample
budget, and the params-vs-AUC / time-vs-AUC result grids.

Timing covers full training steps (forward, backward, optimizer) only;
batches are materialized before the clock starts, and a full untimed
warm-up pass precedes the measured repetitions. Reports embed an
environment fingerprint so cross-machine numbers are never silently
comparable.
"""

from __future__ import annotations

import csv
import json
import math
import platform
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import kernels
from ._alloc import tune_allocator
from .architectures import NetworkSpec, build, forward, scale_to_target
from .data import TaggedDataset
from .tensor import Tape, Tensor, backward
from .training import TrainState, TrainingConfig, adam_step, bce_loss, load_batch

REFERENCE_SAMPLES = 2500


def environment_fingerprint(threads: Optional[int] = None) -> dict:
    return {
        "platform": platform.platform(),
        "machine": platform.machine(),
        "processor": platform.processor() or "unknown",
        "python": platform.python_version(),
        "numpy": np.__version__,
        "kernel_backend": kernels.active_backend(),
        "threads": threads,
    }


@dataclass
class TimingResult:
    seconds: list  # one measurement per repetition
    sample_budget: int
    steps: int

    @property
    def median_seconds(self) -> float:
        return statistics.median(self.seconds)

    @property
    def spread(self) -> tuple:
        return (min(self.seconds), max(self.seconds))

    @property
    def seconds_per_2500(self) -> float:
        return self.median_seconds * REFERENCE_SAMPLES / self.sample_budget


def _materialize_batches(data, sample_budget: int, batch_size: int, input_shape, n_tags: int,
                         rng: np.random.Generator):
    """Pre-build the training batches covering the sample budget.

    ``data`` may be a TaggedDataset (cycled if smaller than the budget) or
    None, in which case random batches of the right shapes are used; the
    step cost does not depend on the values.
    """
    batches = []
    remaining = sample_budget
    cursor = 0
    while remaining > 0:
        b = min(batch_size, remaining)
        if b < 2:
            break
        if isinstance(data, TaggedDataset):
            idx = [(cursor + j) % len(data) for j in range(b)]
            cursor += b
            x, y = load_batch(data, idx)
        else:
            x = rng.standard_normal((b,) + tuple(input_shape))
            y = (rng.random((b, n_tags)) < 0.2).astype(np.float64)
        batches.append((x, y))
        remaining -= b
    return batches


def time_training(
    spec: NetworkSpec,
    data=None,
    sample_budget: int = REFERENCE_SAMPLES,
    reps: int = 3,
    cfg: Optional[TrainingConfig] = None,
    rng: Optional[np.random.Generator] = None,
) -> TimingResult:
    """Median wall-clock seconds for ``sample_budget`` training samples.

    Runs one untimed warm-up pass over the batches, then ``reps`` timed
    passes; training state carries across passes (step cost is
    shape-bound, not value-bound).
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    tune_allocator()
    cfg = cfg or TrainingConfig()
    rng = rng or np.random.default_rng(cfg.seed)
    batches = _materialize_batches(
        data, sample_budget, cfg.batch_size, spec.input_shape, spec.output_dim, rng
    )
    covered = sum(len(x) for x, _ in batches)
    model = build(spec, rng)
    state = TrainState(model)
    params = dict(model.named_trainables())

    def one_pass():
        for x, y in batches:
            with Tape() as tape:
                pred = forward(spec, model, Tensor(x), train=True, rng=rng)
                loss = bce_loss(pred, y)
            backward(loss, tape)
            adam_step(state, {n: t.grad for n, t in params.items()}, cfg)
            for t in params.values():
                t.grad = None

    one_pass()  # warm-up, untimed
    seconds = []
    for _ in range(reps):
        t0 = time.perf_counter()
        one_pass()
        seconds.append(time.perf_counter() - t0)
    return TimingResult(seconds, covered, len(batches))


@dataclass
class BenchRow:
    arch: str
    budget: int
    params: int
    seconds_per_2500: float
    spread: tuple = (0.0, 0.0)
    mean_auc: Optional[float] = None
    error: Optional[str] = None


@dataclass
class BenchReport:
    rows: list
    fingerprint: dict = field(default_factory=dict)

    def save_params_csv(self, path) -> None:
        self._save(path, "params")

    def save_time_csv(self, path) -> None:
        self._save(path, "time")

    def _save(self, path, flavor: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["arch", "budget", "params", "seconds_per_2500", "mean_auc", "error"])
            for r in sorted(self.rows, key=lambda r: (r.arch, r.budget)):
                w.writerow([
                    r.arch,
                    r.budget,
                    r.params,
                    f"{r.seconds_per_2500:.6f}" if r.error is None else "",
                    "" if r.mean_auc is None else f"{r.mean_auc:.6f}",
                    r.error or "",
                ])

    @staticmethod
    def load_csv(path, fingerprint: Optional[dict] = None) -> "BenchReport":
        rows = []
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                rows.append(
                    BenchRow(
                        rec["arch"],
                        int(rec["budget"]),
                        int(rec["params"]),
                        float(rec["seconds_per_2500"]) if rec["seconds_per_2500"] else math.nan,
                        (0.0, 0.0),
                        float(rec["mean_auc"]) if rec["mean_auc"] else None,
                        rec["error"] or None,
                    )
                )
        return BenchReport(rows, fingerprint or {})

    def save_fingerprint(self, path) -> None:
        Path(path).write_text(json.dumps(self.fingerprint, indent=1))


def run_grid(
    arch_ids: Sequence[str],
    budgets: Sequence[int],
    data=None,
    cfg: Optional[TrainingConfig] = None,
    sample_budget: int = REFERENCE_SAMPLES,
    reps: int = 3,
    threads: Optional[int] = None,
    aucs: Optional[dict] = None,
) -> BenchReport:
    """Time every architecture x budget cell; failures are recorded per
    cell and the grid continues. ``aucs`` may inject (arch, budget) ->
    mean AUC values obtained from separate training runs."""
    cfg = cfg or TrainingConfig()
    rows = []
    for arch in arch_ids:
        for budget in budgets:
            try:
                spec = scale_to_target(arch, budget)
                timing = time_training(spec, data, sample_budget, reps, cfg)
                rows.append(
                    BenchRow(
                        arch,
                        int(budget),
                        spec.param_count,
                        timing.seconds_per_2500,
                        timing.spread,
                        (aucs or {}).get((arch, int(budget))),
                    )
                )
            except Exception as exc:
                rows.append(BenchRow(arch, int(budget), 0, math.nan, (0.0, 0.0), None, str(exc)))
    return BenchReport(rows, environment_fingerprint(threads))
