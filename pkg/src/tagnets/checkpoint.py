"""Model checkpoints: a zip archive of serialized parameter tensors plus a
JSON metadata record (architecture id, widths, seed, and free-form extras).

Entries: ``meta.json``, ``params/<block>/<role>.ten`` for trainables, and
``state/<block>/<key>.ten`` for running statistics.
"""

from __future__ import annotations

import json
import zipfile
from pathlib import Path

import numpy as np

from .architectures import ModelParams, NetworkSpec, build
from .tensor import array_from_bytes, array_to_bytes

FORMAT = "tagnets-checkpoint-v1"


def save_checkpoint(path, spec: NetworkSpec, model: ModelParams, meta: dict | None = None) -> None:
    doc = {
        "format": FORMAT,
        "arch": spec.arch_id,
        "widths": list(spec.widths),
        "input_shape": list(spec.input_shape),
        "param_count": int(spec.param_count),
    }
    doc.update(meta or {})
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        zf.writestr("meta.json", json.dumps(doc, indent=1, sort_keys=True))
        for name, t in model.named_trainables():
            zf.writestr(f"params/{name}.ten", array_to_bytes(t.data))
        for name, arr in model.named_state():
            if np.isscalar(arr) or not isinstance(arr, np.ndarray):
                continue  # scalar knobs like momentum live in meta-land
            zf.writestr(f"state/{name}.ten", array_to_bytes(arr))


def load_checkpoint(path):
    """Returns (spec, model, meta) with parameters restored."""
    path = Path(path)
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("format") != FORMAT:
            raise ValueError(f"{path}: not a {FORMAT} archive")
        arrays = {}
        for info in zf.infolist():
            if info.filename.endswith(".ten"):
                kind, name = info.filename.split("/", 1)
                arrays[name[: -len(".ten")]] = array_from_bytes(zf.read(info))
    spec = NetworkSpec.resolve(meta["arch"], meta["widths"], tuple(meta["input_shape"]))
    model = build(spec, np.random.default_rng(0))
    model.load_arrays(arrays)
    return spec, model, meta
