"""Input checks shared by the estimator wrappers."""

from __future__ import annotations

import numbers

import numpy as np

from .audio import Waveform
from .errors import ArgumentError, ShapeError


def check_waveforms(X, sample_rate: int = 16000) -> list[Waveform]:
    """Accept a Waveform, a 1-D array, or a sequence of either; return Waveforms.

    A 2-D array is read as one waveform per row.
    """
    if isinstance(X, Waveform):
        return [X]
    if isinstance(X, np.ndarray):
        if X.ndim == 1:
            return [Waveform(X, sample_rate)]
        if X.ndim == 2:
            return [Waveform(row, sample_rate) for row in X]
        raise ShapeError(f"expected 1-D or 2-D audio array, got shape {X.shape}")
    try:
        items = list(X)
    except TypeError as exc:
        raise ArgumentError(f"cannot interpret {type(X).__name__} as audio") from exc
    if not items:
        raise ArgumentError("no waveforms given")
    out = []
    for k, item in enumerate(items):
        if isinstance(item, Waveform):
            if item.sample_rate != sample_rate:
                raise ArgumentError(f"waveform {k} has rate {item.sample_rate}, expected {sample_rate}")
            out.append(item)
            continue
        arr = np.asarray(item)
        if arr.ndim != 1:
            raise ShapeError(f"waveform {k} must be 1-D, got shape {arr.shape}")
        out.append(Waveform(arr, sample_rate))
    return out


def check_boundaries(y, waves: list[Waveform]) -> list[list[int]]:
    """One sorted list of integer sample positions per waveform.

    Empty lists mark genuine utterances.
    """
    if y is None:
        raise ArgumentError("boundary targets are required")
    y = list(y)
    if len(y) != len(waves):
        raise ShapeError(f"{len(y)} targets for {len(waves)} waveforms")
    out = []
    for k, (bounds, w) in enumerate(zip(y, waves)):
        bounds = list(np.atleast_1d(np.asarray(bounds if bounds is not None else [], dtype=object)))
        clean = []
        for b in bounds:
            if not isinstance(b, numbers.Integral) or isinstance(b, bool):
                raise ArgumentError(f"target {k}: boundary {b!r} is not an integer sample index")
            if not 0 <= int(b) < len(w):
                raise ArgumentError(f"target {k}: boundary {b} outside [0, {len(w)})")
            clean.append(int(b))
        if len(set(clean)) != len(clean):
            raise ArgumentError(f"target {k}: duplicate boundaries")
        out.append(sorted(clean))
    return out


def check_probability(value, name: str) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ArgumentError(f"{name} must lie in [0, 1], got {value}")
    return value
