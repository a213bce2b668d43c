"""Input checks shared by the estimator and the command line."""
from __future__ import annotations

import numpy as np

from .dsp import FRAME_LEN, SAMPLE_RATE, AudioFormatError, Waveform


def check_waveform(x, name: str = "X") -> np.ndarray:
    """Return ``x`` as a finite 1-D float64 array at least one frame long."""
    if isinstance(x, Waveform):
        if x.sample_rate != SAMPLE_RATE:
            raise AudioFormatError(f"{name}: expected {SAMPLE_RATE} Hz audio, got {x.sample_rate} Hz")
        x = x.samples
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name}: expected a 1-D waveform, got shape {arr.shape}")
    if len(arr) < FRAME_LEN:
        raise ValueError(f"{name}: waveform of {len(arr)} samples is shorter than one frame ({FRAME_LEN})")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: waveform contains NaN or inf")
    return arr


def check_waveforms(X, name: str = "X") -> list[np.ndarray]:
    """Accept a 2-D array (one clip per row), a single 1-D clip, or a list of clips."""
    if isinstance(X, Waveform):
        return [check_waveform(X, name)]
    if isinstance(X, np.ndarray):
        if X.ndim == 1:
            return [check_waveform(X, name)]
        if X.ndim == 2:
            return [check_waveform(row, f"{name}[{i}]") for i, row in enumerate(X)]
        raise ValueError(f"{name}: expected 1-D or 2-D input, got shape {X.shape}")
    clips = list(X)
    if not clips:
        raise ValueError(f"{name}: no waveforms given")
    return [check_waveform(c, f"{name}[{i}]") for i, c in enumerate(clips)]


def check_pairs(X, y) -> tuple[list[np.ndarray], list[np.ndarray]]:
    xs, ys = check_waveforms(X, "X"), check_waveforms(y, "y")
    if len(xs) != len(ys):
        raise ValueError(f"X has {len(xs)} clips but y has {len(ys)}")
    for i, (a, b) in enumerate(zip(xs, ys)):
        if len(a) != len(b):
            raise ValueError(f"clip {i}: noisy has {len(a)} samples, clean has {len(b)}")
    return xs, ys
