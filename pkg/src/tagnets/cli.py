"""Command line entry point.

Subcommands: ``generate``, ``featurize``, ``describe``, ``train``,
``evaluate``, ``benchmark``. Common flags: ``--seed``, ``--threads``,
``--out``, ``--config`` (JSON file; command-line flags win over it, it
wins over defaults). The environment variable ``TAGNETS_OUT`` sets the
default output root. Exit codes: 0 success, 1 user/config error,
2 runtime failure; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._alloc import tune_allocator
from .architectures import ARCH_IDS, BUDGET_GRID, describe, render_describe, scale_to_target
from .benchmark import environment_fingerprint, run_grid
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    ManifestError,
    SplitError,
    default_vocabulary,
    generate_synthetic,
    load_manifest,
    load_vocabulary,
    save_manifest,
    save_vocabulary,
    split,
)
from .evaluation import evaluate
from .frontend import AudioConfigError, MelConfig, featurize_directory
from .training import TrainingConfig, TrainingDivergedError, fit, history_to_csv

USER_ERRORS = (
    ManifestError,
    SplitError,
    AudioConfigError,
    ValueError,
    FileNotFoundError,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on bad usage, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _out_root() -> Path:
    return Path(os.environ.get("TAGNETS_OUT", "."))


def _apply_threads(threads):
    if threads is None:
        return None
    import threadpoolctl

    global _limiter  # keep the controller alive for the process lifetime
    _limiter = threadpoolctl.threadpool_limits(limits=int(threads))
    return int(threads)


def _merge_config(args: argparse.Namespace, defaults: dict) -> dict:
    """Precedence: command-line flags > config file > defaults."""
    merged = dict(defaults)
    if getattr(args, "config", None):
        try:
            merged.update(json.loads(Path(args.config).read_text()))
        except (OSError, ValueError) as exc:
            raise ValueError(f"cannot read config file {args.config}: {exc}")
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _write_run_record(out_dir: Path, command: str, resolved: dict, threads) -> None:
    record = {
        "command": command,
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in resolved.items()},
        "environment": environment_fingerprint(threads),
        "argv": sys.argv[1:],
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "version": __version__,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"run-{command}.json").write_text(json.dumps(record, indent=1))


def _parse_fractions(text: str):
    parts = tuple(float(p) for p in text.split(","))
    if len(parts) != 3:
        raise ValueError(f"--fractions needs three comma-separated values, got {text!r}")
    return parts


def _expand_archs(values):
    if not values or "all" in values:
        return list(ARCH_IDS)
    for v in values:
        if v not in ARCH_IDS:
            raise ValueError(f"unknown architecture {v!r}; choose from {ARCH_IDS} or 'all'")
    return list(values)


def _expand_budgets(values):
    if not values or "all" in values:
        return list(BUDGET_GRID)
    out = []
    for v in values:
        try:
            out.append(int(float(v)))
        except ValueError:
            raise ValueError(f"--params values must be integers or 'all', got {v!r}")
    if any(b <= 0 for b in out):
        raise ValueError("--params budgets must be positive")
    return out


def cmd_generate(args) -> int:
    threads = _apply_threads(args.threads)
    cfg = _merge_config(args, {"n": 64, "seed": 0, "sample_rate": 12000, "min_positives": None})
    out = Path(args.out) if args.out else _out_root() / "corpus"
    rng = np.random.default_rng(int(cfg["seed"]))
    corpus = generate_synthetic(
        int(cfg["n"]), default_vocabulary(), rng, out,
        sample_rate=int(cfg["sample_rate"]),
        min_positives=cfg["min_positives"],
    )
    _write_run_record(out, "generate", cfg, threads)
    print(f"wrote {int(cfg['n'])} clips under {corpus.audio_dir}")
    print(f"manifest: {corpus.manifest_path}")
    return 0


def cmd_featurize(args) -> int:
    threads = _apply_threads(args.threads)
    audio_dir = Path(args.audio)
    if not audio_dir.is_dir():
        raise ValueError(f"audio directory {audio_dir} does not exist")
    out = Path(args.out) if args.out else audio_dir.parent / "spectrograms"
    cfg = MelConfig()
    written, skipped, failures = featurize_directory(audio_dir, out, cfg, force=args.force)
    for path, msg in failures:
        print(f"featurize failed for {path}: {msg}", file=sys.stderr)
    total = written + skipped + len(failures)
    if total == 0:
        print(f"warning: no .wav files under {audio_dir}", file=sys.stderr)
    # manifest stub for hand-labelled corpora; rows must be filled in
    # before loading (the loader rejects all-zero labels)
    stub = out / "manifest_stub.csv"
    vocab = default_vocabulary()
    with stub.open("w") as fh:
        fh.write(",".join(["spectrogram_path"] + vocab.names) + "\n")
        for ten in sorted(out.glob("*.ten")):
            fh.write(",".join([ten.name] + ["0"] * len(vocab.names)) + "\n")
    _write_run_record(out, "featurize", {"audio": str(audio_dir), "force": bool(args.force)}, threads)
    print(f"featurized {written}, cached {skipped}, failed {len(failures)}; stub: {stub}")
    if total > 0 and written + skipped == 0:
        return 2
    return 0


def cmd_describe(args) -> int:
    archs = _expand_archs(args.arch)
    budgets = _expand_budgets(args.params) if args.params else [None]
    sheets = []
    for arch in archs:
        for budget in budgets:
            sheets.append(describe(arch, budget))
    if args.json:
        print(json.dumps(sheets, indent=1))
    else:
        for sheet in sheets:
            print(render_describe(sheet))
            print()
    return 0


def _load_split(args, cfg):
    ds = load_manifest(args.manifest)
    fractions = cfg["fractions"]
    rng = np.random.default_rng(int(cfg["seed"]))
    return split(ds, fractions, rng)


def cmd_train(args) -> int:
    threads = _apply_threads(args.threads)
    defaults = {
        "arch": "crnn",
        "params": 100_000,
        "seed": 0,
        "batch_size": 16,
        "learning_rate": 1e-3,
        "max_epochs": 20,
        "patience_epochs": 1,
        "fractions": (0.84, 0.05, 0.11),
        "target_valid_auc": None,
    }
    cfg = _merge_config(args, defaults)
    if isinstance(cfg["fractions"], str):
        cfg["fractions"] = _parse_fractions(cfg["fractions"])
    out = Path(args.out) if args.out else _out_root() / "train"
    out.mkdir(parents=True, exist_ok=True)
    archs = _expand_archs([cfg["arch"]])
    if len(archs) != 1:
        raise ValueError("train takes exactly one --arch")
    spec = scale_to_target(archs[0], int(cfg["params"]))
    train_ds, valid_ds, _ = _load_split(args, cfg)
    tcfg = TrainingConfig(
        batch_size=int(cfg["batch_size"]),
        learning_rate=float(cfg["learning_rate"]),
        max_epochs=int(cfg["max_epochs"]),
        patience_epochs=int(cfg["patience_epochs"]),
        seed=int(cfg["seed"]),
        target_valid_auc=cfg["target_valid_auc"],
    )
    model, history = fit(spec, train_ds, valid_ds, tcfg)
    ckpt = out / f"{spec.arch_id}_{spec.param_count}.ckpt"
    save_checkpoint(
        ckpt, spec, model,
        {"seed": tcfg.seed, "budget": int(cfg["params"]),
         "best_valid_auc": max((h.valid_auc for h in history), default=None)},
    )
    history_to_csv(history, out / "history.csv")
    vocab = default_vocabulary()
    vocab_path = Path(args.manifest).parent / "vocab.json"
    if vocab_path.exists():
        vocab = load_vocabulary(vocab_path)
    save_vocabulary(out / "vocab.json", vocab.with_counts(train_ds.tag_counts()))
    save_manifest(out / "train_manifest.csv", train_ds)
    save_manifest(out / "valid_manifest.csv", valid_ds)
    _write_run_record(out, "train", cfg, threads)
    best = max((h.valid_auc for h in history), default=float("nan"))
    print(f"checkpoint: {ckpt}")
    print(f"epochs: {len(history)}  best valid AUC: {best:.4f}" if history else "epochs: 0")
    return 0


def cmd_evaluate(args) -> int:
    threads = _apply_threads(args.threads)
    cfg = _merge_config(
        args, {"seed": 0, "fractions": (0.84, 0.05, 0.11), "split": "all", "batch_size": 16}
    )
    if isinstance(cfg["fractions"], str):
        cfg["fractions"] = _parse_fractions(cfg["fractions"])
    spec, model, meta = load_checkpoint(args.checkpoint)
    if cfg["split"] == "all":
        ds = load_manifest(args.manifest)
    else:
        parts = dict(zip(("train", "valid", "test"), _load_split(args, cfg)))
        if cfg["split"] not in parts:
            raise ValueError(f"--split must be one of all/train/valid/test, got {cfg['split']!r}")
        ds = parts[cfg["split"]]
    if args.vocab:
        vocab = load_vocabulary(args.vocab)
    else:
        candidate = Path(args.manifest).parent / "vocab.json"
        vocab = load_vocabulary(candidate) if candidate.exists() else default_vocabulary().with_counts(ds.tag_counts())
    out = Path(args.out) if args.out else _out_root() / "eval"
    out.mkdir(parents=True, exist_ok=True)
    report = evaluate(model, spec, ds, vocab, batch_size=int(cfg["batch_size"]))
    report.save_json(out / "report.json")
    report.save_csv(out / "report.csv")
    _write_run_record(out, "evaluate", {**cfg, "checkpoint": str(args.checkpoint)}, threads)
    rho = report.spearman_popularity_auc
    print(f"mean AUC: {report.mean_auc:.4f} over {sum(a is not None for a in report.per_tag_auc)} tags")
    if report.excluded:
        print(f"excluded {len(report.excluded)} single-class tags")
    if rho is not None:
        print(f"popularity/AUC spearman rho: {rho:.4f}")
    print(f"report: {out / 'report.json'}")
    return 0


def cmd_benchmark(args) -> int:
    threads = _apply_threads(args.threads)
    cfg = _merge_config(
        args,
        {"seed": 0, "sample_budget": 2500, "reps": 3, "batch_size": 16},
    )
    archs = _expand_archs(args.arch)
    budgets = _expand_budgets(args.params)
    data = load_manifest(args.manifest) if args.manifest else None
    out = Path(args.out) if args.out else _out_root() / "bench"
    out.mkdir(parents=True, exist_ok=True)
    tcfg = TrainingConfig(batch_size=int(cfg["batch_size"]), seed=int(cfg["seed"]))
    report = run_grid(
        archs, budgets, data, tcfg,
        sample_budget=int(cfg["sample_budget"]), reps=int(cfg["reps"]), threads=threads,
    )
    report.save_params_csv(out / "grid_params_auc.csv")
    report.save_time_csv(out / "grid_time_auc.csv")
    report.save_fingerprint(out / "fingerprint.json")
    _write_run_record(out, "benchmark", cfg, threads)
    for row in sorted(report.rows, key=lambda r: (r.arch, r.budget)):
        status = f"{row.seconds_per_2500:.2f} s/2500" if row.error is None else f"FAILED: {row.error}"
        print(f"{row.arch:6s} @{row.budget:>9,}  params={row.params:>9,}  {status}")
    print(f"grids: {out / 'grid_params_auc.csv'}, {out / 'grid_time_auc.csv'}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="tagnets", description=__doc__)
    parser.add_argument("--version", action="version", version=f"tagnets {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None,
                       help="pin BLAS/thread pools to this many threads")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--config", default=None, help="JSON config file")

    p = sub.add_parser("generate", help="write a synthetic labelled corpus")
    common(p)
    p.add_argument("--n", type=int, default=None, help="number of clips")
    p.add_argument("--sample-rate", dest="sample_rate", type=int, default=None)
    p.add_argument("--min-positives", dest="min_positives", type=int, default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("featurize", help="WAV directory -> spectrogram tensors")
    common(p)
    p.add_argument("--audio", required=True, help="directory of .wav files")
    p.add_argument("--force", action="store_true", help="ignore the fingerprint cache")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("describe", help="architecture spec sheets")
    common(p)
    p.add_argument("--arch", nargs="+", default=["all"])
    p.add_argument("--params", nargs="+", default=None, help="budgets or 'all'")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("train", help="train one architecture on a manifest")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--arch", default=None)
    p.add_argument("--params", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    p.add_argument("--max-epochs", dest="max_epochs", type=int, default=None)
    p.add_argument("--patience", dest="patience_epochs", type=int, default=None)
    p.add_argument("--fractions", default=None, help="train,valid,test e.g. 0.84,0.05,0.11")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a manifest")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--vocab", default=None)
    p.add_argument("--split", default=None, choices=["all", "train", "valid", "test"])
    p.add_argument("--fractions", default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("benchmark", help="training-time grid over architectures x budgets")
    common(p)
    p.add_argument("--arch", nargs="+", default=["all"])
    p.add_argument("--params", nargs="+", default=["all"])
    p.add_argument("--manifest", default=None, help="time against real spectrograms")
    p.add_argument("--sample-budget", dest="sample_budget", type=int, default=None)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    tune_allocator()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except USER_ERRORS as exc:
        print(f"tagnets {args.command}: {exc}", file=sys.stderr)
        return 1
    except TrainingDivergedError as exc:
        print(f"tagnets {args.command}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # unexpected runtime failure
        print(f"tagnets {args.command}: unexpected failure: {exc!r}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
