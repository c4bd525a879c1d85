"""Mono waveform container and WAV file I/O."""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.io import wavfile

from .errors import ArgumentError, FormatError, UnsupportedFormatError

PCM16_SCALE = 32768.0


@dataclass(frozen=True, eq=False)
class Waveform:
    """Mono PCM signal with amplitudes in [-1, 1].

    Samples are kept as float32; that is enough headroom for 16-bit sources
    and halves the memory of a synthetic corpus.
    """

    samples: np.ndarray = field(repr=False)
    sample_rate: int = 16000

    def __post_init__(self):
        samples = np.ascontiguousarray(self.samples, dtype=np.float32)
        if samples.ndim != 1:
            raise ArgumentError(f"samples must be 1-D, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ArgumentError("samples contain non-finite values")
        if int(self.sample_rate) <= 0:
            raise ArgumentError(f"sample_rate must be positive, got {self.sample_rate}")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def __eq__(self, other):
        if not isinstance(other, Waveform):
            return NotImplemented
        return self.sample_rate == other.sample_rate and np.array_equal(
            self.samples, other.samples
        )

    __hash__ = None


def read_wav(path) -> Waveform:
    """Read a PCM16 or float32 RIFF/WAVE file, averaging channels to mono."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", wavfile.WavFileWarning)
            rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except (
        ValueError, EOFError, OSError, IndexError, struct.error, wavfile.WavFileWarning
    ) as exc:
        message = str(exc)
        if "Unknown wave file format" in message or "Unsupported bit depth" in message:
            raise UnsupportedFormatError(f"{path}: {message}") from exc
        raise FormatError(f"{path}: {message or type(exc).__name__}") from exc

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / PCM16_SCALE
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise UnsupportedFormatError(
            f"{path}: only PCM 16-bit and IEEE float 32-bit are supported, got {data.dtype}"
        )
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    if not np.all(np.isfinite(samples)):
        raise FormatError(f"{path}: non-finite float samples")
    return Waveform(samples, int(rate))


def write_wav(w: Waveform, path) -> None:
    """Write ``w`` as 16-bit PCM mono, clamping to [-1, 1] first."""
    clipped = np.clip(w.samples.astype(np.float64), -1.0, 1.0)
    pcm = np.clip(np.round(clipped * PCM16_SCALE), -32768, 32767).astype("<i2")
    wavfile.write(path, w.sample_rate, pcm)
