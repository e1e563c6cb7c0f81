"""Multi-label evaluation: per-tag AUC-ROC, category summaries, and the
popularity/AUC rank correlation.

AUC is the probability that a uniformly random positive outscores a
uniformly random negative, ties counted half, computed from average ranks
in O(n log n). Tags whose test labels contain a single class have no
defined AUC; reports exclude them with an explicit note.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .data import CATEGORIES, TaggedDataset, TagVocabulary


class UndefinedAUCError(ValueError):
    """Raised when labels contain a single class."""


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the average rank of their group."""
    order = np.argsort(x, kind="mergesort")
    sx = x[order]
    boundaries = np.flatnonzero(np.diff(sx) != 0) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [x.size]))
    ranks = np.empty(x.size)
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = 0.5 * (s + 1 + e)
    return ranks


def auc_roc(scores, labels) -> float:
    """Rank-based AUC-ROC with ties counted one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} must be equal-length vectors")
    pos = int(labels.sum())
    neg = labels.size - pos
    if pos == 0 or neg == 0:
        raise UndefinedAUCError(
            f"AUC needs both classes, got {pos} positives / {neg} negatives"
        )
    ranks = _average_ranks(scores)
    rank_sum = float(ranks[labels.astype(bool)].sum())
    return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg)


def mean_auc_over_tags(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mean per-tag AUC, skipping tags without both classes; NaN if none."""
    vals = []
    for k in range(labels.shape[1]):
        col = labels[:, k]
        if 0 < col.sum() < col.size:
            vals.append(auc_roc(scores[:, k], col))
    return float(np.mean(vals)) if vals else float("nan")


def spearman_rho(a, b) -> float:
    """Spearman rank correlation: Pearson correlation of average ranks."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("spearman_rho needs two equal-length vectors of length >= 2")
    ra, rb = _average_ranks(a), _average_ranks(b)
    sa, sb = ra.std(), rb.std()
    if sa == 0 or sb == 0:
        raise ValueError("spearman_rho is undefined for a constant vector")
    return float(((ra - ra.mean()) * (rb - rb.mean())).mean() / (sa * sb))


@dataclass
class EvalReport:
    """Per-tag AUCs plus the summary statistics of one model evaluation."""

    tag_names: list
    tag_categories: list
    per_tag_auc: list  # float or None where excluded
    excluded: list  # (tag, reason)
    mean_auc: float
    per_category_auc: dict
    spearman_popularity_auc: Optional[float]
    popularity_rank: list
    fingerprint: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "mean_auc": self.mean_auc,
            "spearman_popularity_auc": self.spearman_popularity_auc,
            "per_category_auc": self.per_category_auc,
            "excluded": [{"tag": t, "reason": r} for t, r in self.excluded],
            "tags": [
                {
                    "name": n,
                    "category": c,
                    "auc": a,
                    "popularity_rank": pr,
                }
                for n, c, a, pr in zip(
                    self.tag_names, self.tag_categories, self.per_tag_auc, self.popularity_rank
                )
            ],
            "fingerprint": self.fingerprint,
        }

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    def save_csv(self, path) -> None:
        """Per-tag table (tag, category, popularity rank, AUC) for plotting."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tag", "category", "popularity_rank", "auc"])
            for n, c, pr, a in zip(
                self.tag_names, self.tag_categories, self.popularity_rank, self.per_tag_auc
            ):
                w.writerow([n, c, pr, "" if a is None else f"{a:.6f}"])


def report_from_scores(
    scores: np.ndarray,
    ds: TaggedDataset,
    vocab: TagVocabulary,
    fingerprint: Optional[dict] = None,
) -> EvalReport:
    """Assemble the evaluation report from precomputed tag scores."""
    labels = ds.labels
    per_tag: list = []
    excluded = []
    for k, name in enumerate(ds.tag_names):
        col = labels[:, k]
        if 0 < col.sum() < col.size:
            per_tag.append(auc_roc(scores[:, k], col))
        else:
            per_tag.append(None)
            reason = "no positive examples" if col.sum() == 0 else "no negative examples"
            excluded.append((name, reason))
    included = [a for a in per_tag if a is not None]
    mean_auc = float(np.mean(included)) if included else float("nan")
    per_cat = {}
    for cat in CATEGORIES:
        vals = [
            a
            for a, c in zip(per_tag, vocab.categories)
            if a is not None and c == cat
        ]
        per_cat[cat] = float(np.mean(vals)) if vals else None
    if vocab.counts is not None:
        ranks = vocab.popularity_rank()
    else:
        ranks = [None] * len(ds.tag_names)
    rho = None
    if vocab.counts is not None:
        pairs = [
            (self_count, a)
            for self_count, a in zip(vocab.counts, per_tag)
            if a is not None
        ]
        if len(pairs) >= 2:
            pops = np.array([p for p, _ in pairs], dtype=float)
            aucs = np.array([a for _, a in pairs], dtype=float)
            if pops.std() > 0 and aucs.std() > 0:
                rho = spearman_rho(pops, aucs)
    return EvalReport(
        list(ds.tag_names),
        list(vocab.categories),
        per_tag,
        excluded,
        mean_auc,
        per_cat,
        rho,
        [int(r) if r is not None else None for r in np.asarray(ranks).tolist()]
        if vocab.counts is not None
        else [None] * len(ds.tag_names),
        fingerprint or {},
    )


def evaluate(
    model,
    spec,
    test_ds: TaggedDataset,
    vocab: TagVocabulary,
    batch_size: int = 16,
) -> EvalReport:
    """Run inference over a test split and build the report."""
    from .training import predict_scores

    scores = predict_scores(spec, model, test_ds, batch_size)
    fingerprint = {
        "arch": spec.arch_id,
        "widths": list(spec.widths),
        "param_count": int(spec.param_count),
    }
    return report_from_scores(scores, test_ds, vocab, fingerprint)
