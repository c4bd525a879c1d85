"""Log mel filterbank features with deltas, and the binary feature-file format."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .audio import Waveform
from .errors import ArgumentError, FormatError

FBANK240 = "fbank240"
EXTERNAL = "external"
KIND_CODES = {FBANK240: 0, EXTERNAL: 1}
KIND_DIMS = {FBANK240: 240, EXTERNAL: 768}
KIND_SHIFTS = {FBANK240: 0.010, EXTERNAL: 0.020}

FEATURE_MAGIC = b"SGFT"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<4sIIIfI")


@dataclass
class FeatureMatrix:
    values: np.ndarray = field(repr=False)
    frame_shift: float
    kind: str

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise ArgumentError(f"feature matrix must be 2-D, got {self.values.shape}")
        if self.kind not in KIND_CODES:
            raise ArgumentError(f"unknown feature kind {self.kind!r}")
        if self.kind == FBANK240 and self.values.shape[1] != 240:
            raise ArgumentError("fbank240 features must have 240 columns")
        if not np.all(np.isfinite(self.values)):
            raise ArgumentError("feature matrix contains non-finite values")

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class FbankConfig:
    frame_length: float = 0.025
    frame_shift: float = 0.010
    n_fft: int = 512
    n_mels: int = 80
    preemph: float = 0.97
    window: str = "hamming"
    low_freq: float = 20.0
    high_freq: float | None = None
    log_floor: float = 1e-10
    # Applied after deltas; "none" leaves the stream raw.
    normalize: str = "none"

    def samples(self, sample_rate: int) -> tuple[int, int]:
        return int(round(self.frame_length * sample_rate)), int(round(self.frame_shift * sample_rate))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=16)
def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int, low: float, high: float) -> np.ndarray:
    """HTK-style triangles laid out uniformly on the mel axis, (n_mels, n_fft//2+1)."""
    edges = np.linspace(hz_to_mel(low), hz_to_mel(high), n_mels + 2)
    bin_mel = hz_to_mel(np.arange(n_fft // 2 + 1) * sample_rate / n_fft)
    left, center, right = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (bin_mel[None, :] - left) / (center - left)
    down = (right - bin_mel[None, :]) / (right - center)
    fb = np.maximum(0.0, np.minimum(up, down))
    fb.setflags(write=False)
    return fb


def mel_centers(n_mels: int, sample_rate: int, low: float = 20.0, high: float | None = None):
    high = sample_rate / 2 if high is None else high
    return mel_to_hz(np.linspace(hz_to_mel(low), hz_to_mel(high), n_mels + 2)[1:-1])


def _window(kind: str, n: int) -> np.ndarray:
    if kind == "hamming":
        return np.hamming(n)
    if kind == "povey":
        return np.hanning(n) ** 0.85
    if kind == "rectangular":
        return np.ones(n)
    raise ArgumentError(f"unknown window {kind!r}")


def fbank80(w: Waveform, cfg: FbankConfig = FbankConfig()) -> np.ndarray:
    """Natural-log mel energies, one row per 25 ms frame at a 10 ms hop.

    Pre-emphasis is applied inside each frame so that frames depend only on
    their own samples.
    """
    sr = w.sample_rate
    flen, hop = cfg.samples(sr)
    x = w.samples.astype(np.float64)
    if len(x) < flen:
        raise ArgumentError(f"waveform of {len(x)} samples is shorter than one frame ({flen})")
    if flen > cfg.n_fft:
        raise ArgumentError("frame length exceeds n_fft")
    frames = np.lib.stride_tricks.sliding_window_view(x, flen)[::hop]
    emph = np.empty_like(frames)
    emph[:, 1:] = frames[:, 1:] - cfg.preemph * frames[:, :-1]
    emph[:, 0] = frames[:, 0] * (1.0 - cfg.preemph)
    emph *= _window(cfg.window, flen)
    power = np.abs(np.fft.rfft(emph, cfg.n_fft)) ** 2
    high = sr / 2 if cfg.high_freq is None else cfg.high_freq
    fb = mel_filterbank(cfg.n_mels, cfg.n_fft, sr, cfg.low_freq, high)
    energies = power @ fb.T
    return np.log(np.maximum(energies, cfg.log_floor))


def deltas(F: np.ndarray, half_window: int = 2) -> np.ndarray:
    """Regression deltas over +-half_window frames with replicated edges."""
    F = np.asarray(F, dtype=np.float64)
    T = F.shape[0]
    padded = np.pad(F, ((half_window, half_window), (0, 0)), mode="edge")
    denom = 2.0 * sum(k * k for k in range(1, half_window + 1))
    out = np.zeros_like(F)
    for k in range(1, half_window + 1):
        out += k * (padded[half_window + k:half_window + k + T] - padded[half_window - k:half_window - k + T])
    return out / denom


def add_deltas(F: np.ndarray) -> np.ndarray:
    if F.shape[0] < 1:
        raise ArgumentError("need at least one frame")
    d1 = deltas(F)
    return np.concatenate([F, d1, deltas(d1)], axis=1)


def normalize_features(values: np.ndarray, mode: str) -> np.ndarray:
    if mode == "none":
        return values
    if mode == "cmn":
        return values - values.mean(axis=0, keepdims=True)
    if mode == "cmvn":
        return (values - values.mean(axis=0, keepdims=True)) / (values.std(axis=0, keepdims=True) + 1e-5)
    raise ArgumentError(f"unknown normalisation {mode!r}")


def fbank240(w: Waveform, cfg: FbankConfig = FbankConfig()) -> FeatureMatrix:
    values = normalize_features(add_deltas(fbank80(w, cfg)), cfg.normalize)
    return FeatureMatrix(values, cfg.frame_shift, FBANK240)


# -- feature files --------------------------------------------------------


def export_features(fm: FeatureMatrix, path) -> None:
    """Write ``fm`` as little-endian float32, row-major, behind a 24-byte header."""
    values = np.ascontiguousarray(fm.values, dtype="<f4")
    T, D = values.shape
    header = _HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, T, D, fm.frame_shift, KIND_CODES[fm.kind])
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(values.tobytes())


def read_feature_file(path) -> FeatureMatrix:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: truncated feature header")
    magic, version, T, D, shift, code = _HEADER.unpack_from(blob)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise FormatError(f"{path}: unsupported feature file version {version}")
    kinds = {v: k for k, v in KIND_CODES.items()}
    if code not in kinds:
        raise FormatError(f"{path}: unknown feature kind code {code}")
    kind = kinds[code]
    if D != KIND_DIMS[kind]:
        raise FormatError(f"{path}: kind {kind} requires D={KIND_DIMS[kind]}, header says {D}")
    payload = blob[_HEADER.size:]
    if len(payload) != 4 * T * D:
        raise FormatError(f"{path}: payload holds {len(payload)} bytes, expected {4 * T * D}")
    values = np.frombuffer(payload, dtype="<f4").reshape(T, D).astype(np.float32)
    if not np.all(np.isfinite(values)):
        raise FormatError(f"{path}: non-finite feature values")
    return FeatureMatrix(values, float(shift), kind)


def import_external_features(path) -> FeatureMatrix:
    """Load precomputed 768-d, 20 ms embeddings exported by an external tool."""
    fm = read_feature_file(path)
    if fm.kind != EXTERNAL:
        raise FormatError(f"{path}: expected external features, found {fm.kind}")
    return fm
