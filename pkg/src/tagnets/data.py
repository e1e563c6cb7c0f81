"""Tag vocabulary, manifest-based corpora, stratified splits, and a
synthetic desk-scale corpus generator with known tag-audio correlations.

A corpus is a directory with ``audio/`` (29 s mono WAVs), ``manifest.csv``
(header: spectrogram_path plus 50 tag-name columns; rows: path plus 0/1
labels), and ``vocab.json`` (tag categories and popularity counts). The
manifest references spectrogram files under ``spectrograms/`` which are
materialized by the frontend's featurize step.

Synthetic audio gives every tag a deterministic acoustic signature so the
labels are learnable by construction:

* instrument tags: a three-partial sinusoid chord at tag-specific
  frequencies;
* mood tags: a tag-specific narrowband noise carrier, amplitude-modulated
  at a tag-specific rate;
* genre tags: colored noise concentrated in two tag-specific bands;
* era tags: a global spectral tilt applied to the whole mix.

Tag popularity follows a long-tailed profile scaled to the corpus size,
floored so that stratified splitting can place positives in every split.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.io import wavfile

from .frontend import MelConfig, hz_to_mel, mel_to_hz

CATEGORIES = ("genre", "mood", "instrument", "era")
N_TAGS = 50

_GENRES = [
    "rock", "pop", "electronic", "indie", "alternative", "jazz", "metal",
    "folk", "punk", "soul", "blues", "country", "reggae", "rnb",
    "classical", "hiphop", "ambient", "house", "techno", "disco",
]
_MOODS = [
    "mellow", "chill", "sad", "upbeat", "calm", "dreamy", "dark",
    "energetic", "romantic", "melancholy", "groovy", "happy",
]
_INSTRUMENTS = [
    "guitar", "piano", "female-vocal", "male-vocal", "synth", "drums",
    "bass", "violin", "saxophone", "trumpet", "flute", "organ", "cello",
]
_ERAS = ["60s", "70s", "80s", "90s", "00s"]


class ManifestError(ValueError):
    """Raised for malformed or inconsistent manifest rows."""


class SplitError(ValueError):
    """Raised when stratification cannot satisfy per-split tag coverage."""


@dataclass
class TagVocabulary:
    """Exactly 50 uniquely named tags, each in one category, with optional
    per-tag occurrence counts (popularity)."""

    names: list
    categories: list
    counts: Optional[list] = None

    def __post_init__(self):
        if len(self.names) != N_TAGS:
            raise ValueError(f"vocabulary must have exactly {N_TAGS} tags, got {len(self.names)}")
        if len(set(self.names)) != len(self.names):
            raise ValueError("tag names must be unique")
        if len(self.categories) != len(self.names):
            raise ValueError("each tag needs exactly one category")
        for c in self.categories:
            if c not in CATEGORIES:
                raise ValueError(f"unknown tag category {c!r}")
        if self.counts is not None and len(self.counts) != len(self.names):
            raise ValueError("counts must align with tag names")

    def index(self, name: str) -> int:
        return self.names.index(name)

    def with_counts(self, counts) -> "TagVocabulary":
        return TagVocabulary(list(self.names), list(self.categories), [int(c) for c in counts])

    def popularity_rank(self) -> np.ndarray:
        """Rank 1 = most popular; requires counts."""
        if self.counts is None:
            raise ValueError("vocabulary has no popularity counts")
        order = np.argsort(-np.asarray(self.counts), kind="stable")
        ranks = np.empty(len(self.names), dtype=int)
        ranks[order] = np.arange(1, len(self.names) + 1)
        return ranks

    def to_json(self) -> dict:
        tags = []
        for i, (n, c) in enumerate(zip(self.names, self.categories)):
            entry = {"name": n, "category": c}
            if self.counts is not None:
                entry["count"] = int(self.counts[i])
            tags.append(entry)
        return {"tags": tags}

    @staticmethod
    def from_json(doc: dict) -> "TagVocabulary":
        tags = doc["tags"]
        counts = [t.get("count") for t in tags]
        return TagVocabulary(
            [t["name"] for t in tags],
            [t["category"] for t in tags],
            None if any(c is None for c in counts) else counts,
        )


def default_vocabulary() -> TagVocabulary:
    names = _GENRES + _MOODS + _INSTRUMENTS + _ERAS
    cats = (
        ["genre"] * len(_GENRES)
        + ["mood"] * len(_MOODS)
        + ["instrument"] * len(_INSTRUMENTS)
        + ["era"] * len(_ERAS)
    )
    return TagVocabulary(names, cats)


def save_vocabulary(path, vocab: TagVocabulary) -> None:
    Path(path).write_text(json.dumps(vocab.to_json(), indent=1))


def load_vocabulary(path) -> TagVocabulary:
    return TagVocabulary.from_json(json.loads(Path(path).read_text()))


@dataclass
class TaggedDataset:
    """Spectrogram references plus 50-dim binary label vectors."""

    paths: list
    labels: np.ndarray
    tag_names: list
    split: str = "all"

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int8)
        if self.labels.ndim != 2 or self.labels.shape[1] != len(self.tag_names):
            raise ValueError(
                f"labels shape {self.labels.shape} does not match {len(self.tag_names)} tags"
            )
        if len(self.paths) != self.labels.shape[0]:
            raise ValueError("one label row per spectrogram path required")

    def __len__(self) -> int:
        return len(self.paths)

    def subset(self, idx, split: Optional[str] = None) -> "TaggedDataset":
        idx = np.asarray(idx, dtype=int)
        return TaggedDataset(
            [self.paths[i] for i in idx],
            self.labels[idx],
            list(self.tag_names),
            split or self.split,
        )

    def tag_counts(self) -> np.ndarray:
        return self.labels.sum(axis=0)


def save_manifest(path, ds: TaggedDataset) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["spectrogram_path"] + list(ds.tag_names))
        for p, row in zip(ds.paths, ds.labels):
            w.writerow([str(p)] + [str(int(v)) for v in row])


def load_manifest(path, check_files: bool = True) -> TaggedDataset:
    """Read and validate a manifest; rejects all-zero label rows, wrong
    arity, unparseable labels, and (optionally) missing spectrogram files,
    naming the offending row number."""
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest {path} does not exist")
    root = path.parent
    paths, rows = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: empty file, expected a header row")
        tag_names = header[1:]
        if header[0] != "spectrogram_path" or not tag_names:
            raise ManifestError(
                f"{path}: header must be 'spectrogram_path' plus tag names"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(tag_names) + 1:
                raise ManifestError(
                    f"{path} row {lineno}: expected {len(tag_names) + 1} columns, got {len(row)}"
                )
            try:
                labels = [int(v) for v in row[1:]]
            except ValueError:
                raise ManifestError(f"{path} row {lineno}: labels must be 0/1 integers")
            if any(v not in (0, 1) for v in labels):
                raise ManifestError(f"{path} row {lineno}: labels must be 0 or 1")
            if not any(labels):
                raise ManifestError(
                    f"{path} row {lineno}: example has no positive tag; "
                    "items without any tag are excluded from corpora"
                )
            spec_path = root / row[0]
            if check_files and not spec_path.exists():
                raise ManifestError(
                    f"{path} row {lineno}: spectrogram file {spec_path} is missing "
                    "(run featurize first?)"
                )
            paths.append(spec_path)
            rows.append(labels)
    labels = np.asarray(rows, dtype=np.int8) if rows else np.zeros((0, len(tag_names)), np.int8)
    return TaggedDataset(paths, labels, tag_names)


# --- splitting -----------------------------------------------------------


def split(
    ds: TaggedDataset,
    fractions: Sequence[float] = (0.84, 0.05, 0.11),
    rng: Optional[np.random.Generator] = None,
):
    """Deterministic stratified split into (train, valid, test).

    Iterative stratification: repeatedly take the tag with the fewest
    unassigned positives and deal its examples to the split whose desired
    share of that tag is least satisfied. Splits are disjoint and
    exhaustive. Raises :class:`SplitError` when some tag cannot reach
    every nonzero-fraction split.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")
    if len(fractions) != 3:
        raise ValueError("expected (train, valid, test) fractions")
    rng = rng or np.random.default_rng(0)
    n = len(ds)
    labels = ds.labels.astype(bool)
    n_tags = labels.shape[1]
    active = [s for s, f in enumerate(fractions) if f > 0]
    desired = np.outer(fractions, labels.sum(axis=0)).astype(float)  # (3, tags)
    placed = np.zeros_like(desired)
    assign = np.full(n, -1, dtype=int)
    remaining_per_tag = labels.sum(axis=0).astype(float)
    unassigned = labels.sum(axis=1).astype(int)  # per-example remaining marker

    order_pool = np.arange(n)
    while True:
        todo = np.flatnonzero(assign < 0)
        if todo.size == 0:
            break
        counts = np.where(remaining_per_tag > 0, remaining_per_tag, np.inf)
        tag = int(np.argmin(counts))
        if not np.isfinite(counts[tag]):
            # leftover examples whose tags are exhausted cannot happen (every
            # example has a tag), but guard by dealing them round-robin
            for i, ex in enumerate(todo):
                assign[ex] = active[i % len(active)]
            break
        members = [i for i in order_pool if assign[i] < 0 and labels[i, tag]]
        for ex in members:
            gaps = np.array(
                [desired[s, tag] - placed[s, tag] if s in active else -np.inf for s in range(3)]
            )
            best = np.flatnonzero(gaps == gaps.max())
            s = int(best[0] if best.size == 1 else rng.choice(best))
            assign[ex] = s
            placed[s] += labels[ex]
            remaining_per_tag -= labels[ex]

    names = ("train", "valid", "test")
    parts = [np.flatnonzero(assign == s) for s in range(3)]

    # coverage repair: every nonzero split should see every tag when feasible
    starving = []
    for tag in range(n_tags):
        total = int(labels[:, tag].sum())
        if total == 0:
            continue
        missing = [s for s in active if not labels[parts[s], tag].any()]
        if not missing:
            continue
        if total < len(active):
            starving.append(ds.tag_names[tag])
            continue
        for s in missing:
            donors = sorted(
                (d for d in active if d != s),
                key=lambda d: -int(labels[parts[d], tag].sum()),
            )
            moved = False
            for d in donors:
                cand = [i for i in parts[d] if labels[i, tag]]
                if len(cand) > 1:
                    ex = cand[0]
                    parts[d] = parts[d][parts[d] != ex]
                    parts[s] = np.append(parts[s], ex)
                    moved = True
                    break
            if not moved:
                starving.append(ds.tag_names[tag])
    if starving:
        raise SplitError(
            "stratification cannot cover every split for tags: "
            + ", ".join(sorted(set(starving)))
        )
    return tuple(
        ds.subset(np.sort(parts[s]), names[s]) for s in range(3)
    )


# --- synthetic corpus ----------------------------------------------------


@dataclass(frozen=True)
class _Signature:
    kind: str
    freqs: tuple = ()
    am_rate: float = 0.0
    tilt: float = 0.0
    amp: float = 0.0


def _mel_spread(lo_hz: float, hi_hz: float, k: int, offset: float = 0.0) -> np.ndarray:
    """k frequencies uniform on the mel scale inside [lo_hz, hi_hz]."""
    lo, hi = hz_to_mel(lo_hz), hz_to_mel(hi_hz)
    pos = (np.arange(k) + 0.5 + offset) / k
    return np.asarray(mel_to_hz(lo + pos * (hi - lo)), dtype=float)


def tag_signatures(vocab: TagVocabulary) -> list:
    """Deterministic per-tag acoustic signatures, indexed like the vocab."""
    by_cat = {c: [i for i, cc in enumerate(vocab.categories) if cc == c] for c in CATEGORIES}
    sigs: list = [None] * len(vocab.names)
    genre_centers = _mel_spread(180.0, 5200.0, len(by_cat["genre"]))
    for j, i in enumerate(by_cat["genre"]):
        second = genre_centers[(j + 7) % len(genre_centers)] * 1.19
        tilt = -1.0 + 2.0 * j / max(1, len(by_cat["genre"]) - 1)
        sigs[i] = _Signature("genre", freqs=(genre_centers[j], second), tilt=tilt, amp=0.17)
    mood_centers = _mel_spread(240.0, 5400.0, len(by_cat["mood"]), offset=0.31)
    for j, i in enumerate(by_cat["mood"]):
        rate = 0.6 * (1.45**j)  # 0.6 .. ~16 Hz
        sigs[i] = _Signature("mood", freqs=(mood_centers[j],), am_rate=rate, amp=0.20)
    inst_roots = _mel_spread(200.0, 4200.0, len(by_cat["instrument"]), offset=0.63)
    for j, i in enumerate(by_cat["instrument"]):
        root = inst_roots[j]
        sigs[i] = _Signature("instrument", freqs=(root, 2.0 * root, 3.0 * root), amp=0.15)
    # distinct nonzero tilts: a zero tilt would be indistinguishable from
    # the tag being absent
    era_tilts = (-2.6, -1.3, 0.8, 1.7, 2.6)
    for j, i in enumerate(by_cat["era"]):
        sigs[i] = _Signature("era", tilt=era_tilts[j % len(era_tilts)], amp=0.0)
    return sigs


def _band_noise(rng, n, sr, center, rel_width, tilt=0.0):
    """Gaussian-band colored noise built in the frequency domain."""
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / sr)
    width = max(30.0, rel_width * center)
    mask = np.exp(-0.5 * ((freqs - center) / width) ** 2)
    if tilt:
        mask = mask * ((freqs + 50.0) / 1000.0) ** (tilt / 2.0)
    y = np.fft.irfft(spec * mask, n)
    rms = np.sqrt(np.mean(y * y)) + 1e-12
    return y / rms


def synth_clip(
    label_row: np.ndarray,
    sigs: list,
    rng: np.random.Generator,
    sample_rate: int = 12000,
    seconds: float = 29.0,
) -> np.ndarray:
    """Render one clip from its label vector; deterministic per rng state."""
    n = int(round(seconds * sample_rate))
    t = np.arange(n) / sample_rate
    x = 0.02 * rng.standard_normal(n)
    tilt_total = 0.0
    for k in np.flatnonzero(label_row):
        sig = sigs[k]
        if sig.kind == "instrument":
            for order, f in enumerate(sig.freqs):
                if f >= sample_rate / 2:
                    continue
                phase = rng.uniform(0.0, 2.0 * math.pi)
                x += (sig.amp / (order + 1.0)) * np.sin(2.0 * math.pi * f * t + phase)
        elif sig.kind == "mood":
            carrier = _band_noise(rng, n, sample_rate, sig.freqs[0], 0.05)
            phase = rng.uniform(0.0, 2.0 * math.pi)
            am = 1.0 + 0.9 * np.cos(2.0 * math.pi * sig.am_rate * t + phase)
            x += sig.amp * carrier * am
        elif sig.kind == "genre":
            x += sig.amp * _band_noise(rng, n, sample_rate, sig.freqs[0], 0.07, sig.tilt)
            x += 0.5 * sig.amp * _band_noise(rng, n, sample_rate, sig.freqs[1], 0.07)
        else:  # era: accumulate a global tilt
            tilt_total += sig.tilt
    if tilt_total:
        spec = np.fft.rfft(x)
        freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
        spec *= ((freqs + 50.0) / 1000.0) ** (tilt_total / 2.0)
        x = np.fft.irfft(spec, n)
    peak = np.max(np.abs(x))
    if peak > 0.95:
        x = x * (0.95 / peak)
    return x


def draw_labels(
    n: int,
    vocab: TagVocabulary,
    rng: np.random.Generator,
    min_positives: Optional[int] = None,
    max_fraction: float = 0.5,
) -> np.ndarray:
    """Long-tailed label matrix: per-tag popularity decays geometrically
    with rank, floored so every tag keeps at least ``min_positives``
    examples, and every example keeps at least one tag."""
    n_tags = len(vocab.names)
    if min_positives is None:
        min_positives = max(6, min(40, int(round(0.12 * n))))
    min_positives = min(min_positives, max(1, n // 2))
    # popularity by a fixed category-mixing order: rank 0 is the first
    # genre; later ranks interleave the categories
    order = np.argsort([(i * 37) % 101 for i in range(n_tags)], kind="stable")
    top, bottom = 0.45, 0.02
    fracs = np.empty(n_tags)
    for rank, tag in enumerate(order):
        fracs[tag] = top * (bottom / top) ** (rank / max(1, n_tags - 1))
    probs = np.clip(fracs, min_positives / n, max_fraction)
    labels = (rng.random((n, n_tags)) < probs[None, :]).astype(np.int8)
    # every example needs a tag
    for i in np.flatnonzero(labels.sum(axis=1) == 0):
        labels[i, rng.choice(n_tags, p=probs / probs.sum())] = 1
    # every tag needs its floor of positives
    for k in range(n_tags):
        deficit = min_positives - int(labels[:, k].sum())
        if deficit > 0:
            negatives = np.flatnonzero(labels[:, k] == 0)
            picks = rng.choice(negatives, size=deficit, replace=False)
            labels[picks, k] = 1
    return labels


@dataclass
class SyntheticCorpus:
    root: Path
    manifest_path: Path
    vocab_path: Path
    audio_dir: Path
    spectrogram_dir: Path
    labels: np.ndarray


def generate_synthetic(
    n: int,
    vocab: TagVocabulary,
    rng: np.random.Generator,
    out_dir,
    sample_rate: int = 12000,
    seconds: float = 29.0,
    min_positives: Optional[int] = None,
) -> SyntheticCorpus:
    """Write a synthetic corpus: WAV clips, manifest, and vocabulary.

    The manifest references spectrogram files under ``spectrograms/``;
    run featurize over ``audio/`` to materialize them.
    """
    if n < 1:
        raise ValueError("need at least one example")
    root = Path(out_dir)
    audio_dir = root / "audio"
    spec_dir = root / "spectrograms"
    audio_dir.mkdir(parents=True, exist_ok=True)
    spec_dir.mkdir(parents=True, exist_ok=True)
    labels = draw_labels(n, vocab, rng, min_positives=min_positives)
    sigs = tag_signatures(vocab)
    digits = max(5, len(str(n - 1)))
    paths = []
    for i in range(n):
        x = synth_clip(labels[i], sigs, rng, sample_rate, seconds)
        pcm = np.clip(x * 32767.0, -32768, 32767).astype(np.int16)
        stem = f"clip_{i:0{digits}d}"
        wavfile.write(audio_dir / f"{stem}.wav", sample_rate, pcm)
        paths.append(Path("spectrograms") / f"{stem}.ten")
    ds = TaggedDataset(paths, labels, list(vocab.names))
    manifest_path = root / "manifest.csv"
    save_manifest(manifest_path, ds)
    vocab_path = root / "vocab.json"
    save_vocabulary(vocab_path, vocab.with_counts(labels.sum(axis=0)))
    return SyntheticCorpus(root, manifest_path, vocab_path, audio_dir, spec_dir, labels)
