"""Audio frontend: WAV input to a 96x1366 log-amplitude mel spectrogram.

Pipeline: band-limited resampling to 12 kHz, center-trim/zero-pad to 29 s,
Hann STFT (n_fft 512, hop 256, reflection-centered), power spectrum, a
96-filter triangular mel bank on the HTK scale over 0..6 kHz, and dB
compression 10*log10(max(p, floor)). 29 s at hop 256 yields 1360 centered
frames; the time axis is then padded symmetrically with floor-valued
frames to exactly 1366 so the network input contract holds for any input
duration.

All functions are pure and deterministic: identical audio bytes give a
bit-identical spectrogram.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from .tensor import load_array, save_array


class AudioConfigError(ValueError):
    """Raised for invalid frontend configuration."""


@dataclass(frozen=True)
class MelConfig:
    source_rate: int = 22050
    target_rate: int = 12000
    clip_seconds: float = 29.0
    n_fft: int = 512
    hop: int = 256
    n_mels: int = 96
    f_min: float = 0.0
    f_max: float = 6000.0
    log_floor: float = 1e-10
    n_frames: int = 1366

    def __post_init__(self):
        if self.hop > self.n_fft:
            raise AudioConfigError(f"hop {self.hop} exceeds window {self.n_fft}")
        if not (0 <= self.f_min < self.f_max <= self.target_rate / 2):
            raise AudioConfigError(
                f"mel band [{self.f_min}, {self.f_max}] outside (0, {self.target_rate / 2}]"
            )
        if self.n_mels < 1:
            raise AudioConfigError("n_mels must be >= 1")

    @property
    def clip_samples(self) -> int:
        return int(round(self.clip_seconds * self.target_rate))

    @property
    def floor_db(self) -> float:
        return 10.0 * math.log10(self.log_floor)

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class Spectrogram:
    """A (n_mels, n_frames) array of dB values plus its config fingerprint."""

    data: np.ndarray
    config_fingerprint: str

    def save(self, path) -> None:
        save_array(path, self.data)


def load_spectrogram(path, cfg: Optional[MelConfig] = None) -> Spectrogram:
    data = load_array(path)
    if data.ndim != 2:
        raise ValueError(f"{path}: spectrogram file must be rank 2, got rank {data.ndim}")
    return Spectrogram(data, cfg.fingerprint() if cfg else "")


def load_wav(path) -> tuple[np.ndarray, int]:
    """Read a PCM or float WAV as mono float64 in [-1, 1]."""
    rate, data = wavfile.read(path)
    if data.ndim == 2:
        data = data.mean(axis=1)
    if data.dtype == np.int16:
        x = data / 32768.0
    elif data.dtype == np.int32:
        x = data / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    else:
        raise ValueError(f"{path}: unsupported WAV sample format {data.dtype}")
    return np.asarray(x, dtype=np.float64), int(rate)


def resample(x: np.ndarray, sr_in: int, sr_out: int) -> np.ndarray:
    """Polyphase windowed-sinc resampling; output length round(len * ratio)."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("resample requires a non-empty signal")
    if sr_in == sr_out:
        return x.copy()
    g = math.gcd(sr_out, sr_in)
    y = resample_poly(x, sr_out // g, sr_in // g)
    want = int(math.floor(x.size * sr_out / sr_in + 0.5))
    if y.size > want:
        y = y[:want]
    elif y.size < want:
        y = np.pad(y, (0, want - y.size))
    return y


def trim_center(x: np.ndarray, seconds: float, rate: int) -> np.ndarray:
    """Center window of exactly seconds*rate samples; short inputs are
    zero-padded symmetrically."""
    x = np.asarray(x, dtype=np.float64)
    want = int(round(seconds * rate))
    n = x.size
    if n == want:
        return x.copy()
    if n > want:
        start = (n - want) // 2
        return x[start : start + want].copy()
    pad = want - n
    lo = pad // 2
    return np.pad(x, (lo, pad - lo))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """Triangular filters, centers uniform on the mel scale.

    Returns (n_mels, n_fft//2 + 1); every row is nonnegative with one
    contiguous support. Raises when a filter captures no FFT bin.
    """
    n_bins = cfg.n_fft // 2 + 1
    freqs = np.fft.rfftfreq(cfg.n_fft, 1.0 / cfg.target_rate)
    pts = mel_to_hz(np.linspace(hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max), cfg.n_mels + 2))
    fb = np.zeros((cfg.n_mels, n_bins))
    for m in range(cfg.n_mels):
        left, center, right = pts[m], pts[m + 1], pts[m + 2]
        rise = (freqs - left) / max(center - left, 1e-12)
        fall = (right - freqs) / max(right - center, 1e-12)
        fb[m] = np.clip(np.minimum(rise, fall), 0.0, None)
        if not fb[m].any():
            raise AudioConfigError(
                f"mel filter {m} (center {center:.1f} Hz) captures no FFT bin; "
                f"n_mels={cfg.n_mels} too large for n_fft={cfg.n_fft}"
            )
    return fb


def stft_power(x: np.ndarray, cfg: MelConfig) -> np.ndarray:
    """Hann-windowed power spectrogram, reflection-centered.

    Returns (n_fft//2 + 1, 1 + len(x)//hop).
    """
    half = cfg.n_fft // 2
    xp = np.pad(x, (half, half), mode="reflect")
    n_frames = 1 + x.size // cfg.hop
    window = np.hanning(cfg.n_fft)
    idx = np.arange(cfg.n_fft)[None, :] + cfg.hop * np.arange(n_frames)[:, None]
    frames = xp[idx] * window
    spec = np.fft.rfft(frames, axis=1)
    return (spec.real**2 + spec.imag**2).T


def mel_spectrogram(x: np.ndarray, cfg: Optional[MelConfig] = None) -> Spectrogram:
    """Log-amplitude mel spectrogram of a full-length clip at the target
    rate; output shape is exactly (n_mels, n_frames)."""
    cfg = cfg or MelConfig()
    x = np.asarray(x, dtype=np.float64)
    if x.size != cfg.clip_samples:
        raise ValueError(
            f"mel_spectrogram expects {cfg.clip_samples} samples "
            f"({cfg.clip_seconds} s at {cfg.target_rate} Hz), got {x.size}"
        )
    power = stft_power(x, cfg)
    mel = mel_filterbank(cfg) @ power
    db = 10.0 * np.log10(np.maximum(mel, cfg.log_floor))
    frames = db.shape[1]
    if frames < cfg.n_frames:
        pad = cfg.n_frames - frames
        lo = pad // 2
        db = np.pad(db, ((0, 0), (lo, pad - lo)), constant_values=cfg.floor_db)
    elif frames > cfg.n_frames:
        start = (frames - cfg.n_frames) // 2
        db = db[:, start : start + cfg.n_frames]
    return Spectrogram(np.ascontiguousarray(db), cfg.fingerprint())


def featurize_signal(x: np.ndarray, rate: int, cfg: Optional[MelConfig] = None) -> Spectrogram:
    """Full pipeline from any-rate mono samples to the network input."""
    cfg = cfg or MelConfig()
    if rate != cfg.target_rate:
        x = resample(x, rate, cfg.target_rate)
    x = trim_center(x, cfg.clip_seconds, cfg.target_rate)
    return mel_spectrogram(x, cfg)


def featurize_file(path, cfg: Optional[MelConfig] = None) -> Spectrogram:
    x, rate = load_wav(path)
    return featurize_signal(x, rate, cfg)


def featurize_directory(audio_dir, out_dir, cfg: Optional[MelConfig] = None,
                        force: bool = False):
    """Featurize every WAV under ``audio_dir`` into ``out_dir``.

    One ``<stem>.ten`` tensor file per input. Outputs that already exist
    under the same config fingerprint are skipped; a changed config
    invalidates the whole cache. Returns (written, skipped, failures)
    where failures is a list of (path, message).
    """
    from pathlib import Path

    cfg = cfg or MelConfig()
    audio_dir, out_dir = Path(audio_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    marker = out_dir / "_frontend.json"
    fingerprint = cfg.fingerprint()
    cache_valid = False
    if marker.exists() and not force:
        try:
            cache_valid = json.loads(marker.read_text()).get("fingerprint") == fingerprint
        except (ValueError, OSError):
            cache_valid = False
    written, skipped, failures = 0, 0, []
    for wav in sorted(audio_dir.glob("*.wav")):
        dst = out_dir / (wav.stem + ".ten")
        if cache_valid and dst.exists():
            skipped += 1
            continue
        try:
            spec = featurize_file(wav, cfg)
        except Exception as exc:  # per-file diagnostic, keep going
            failures.append((wav, str(exc)))
            continue
        spec.save(dst)
        written += 1
    marker.write_text(json.dumps({"fingerprint": fingerprint, "config": asdict(cfg)}, indent=1))
    return written, skipped, failures
