"""tagnets: budget-scaled CNN/CRNN music auto-tagging networks on a
self-contained float64 autodiff core.

Subpackages and modules:

* ``tensor``: tape-based reverse-mode autodiff over dense float64 arrays.
* ``kernels``: conv/pool hot loops (compiled core + NumPy fallback).
* ``layers``: conv, pooling, dense, batch norm, ELU, sigmoid, dropout, GRU.
* ``architectures``: the k1c2/k2c1/k2c2/crnn templates, shape inference,
  parameter counting, and the width scaler.
* ``frontend``: WAV -> 96x1366 log-mel spectrogram pipeline.
* ``data``: tag vocabulary, manifests, stratified splits, synthetic corpus.
* ``training``: ADAM + binary cross-entropy with AUC early stopping.
* ``evaluation``: per-tag AUC-ROC reports and rank correlations.
* ``benchmark``: wall-clock training-time grids.
* ``cli``: the ``tagnets`` command.
"""

from .tensor import Tensor, Tape, backward
from .architectures import (
    ARCH_IDS,
    BUDGET_GRID,
    INPUT_SHAPE,
    NetworkSpec,
    build,
    count_params,
    forward,
    infer_shapes,
    scale_to_target,
)

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "ARCH_IDS",
    "BUDGET_GRID",
    "INPUT_SHAPE",
    "NetworkSpec",
    "build",
    "count_params",
    "forward",
    "infer_shapes",
    "scale_to_target",
    "__version__",
]
