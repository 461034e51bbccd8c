"""Input checks shared by the estimator API and the command line."""

from __future__ import annotations

import numbers

import numpy as np

from .dsp import DEFAULT_SAMPLE_RATE, Waveform
from .errors import InvalidArgumentError


def check_waveform(x, name: str = "x", min_length: int = 1) -> np.ndarray:
    """Return ``x`` as a finite 1-D float64 array, or raise naming ``name``."""
    if isinstance(x, Waveform):
        x = x.samples
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 2 and 1 in arr.shape:
        arr = arr.reshape(-1)
    if arr.ndim != 1:
        raise InvalidArgumentError(f"{name} must be a 1-D waveform, got shape {arr.shape}")
    if arr.size < min_length:
        raise InvalidArgumentError(f"{name} has {arr.size} samples, need at least {min_length}")
    if not np.isfinite(arr).all():
        raise InvalidArgumentError(f"{name} contains NaN or infinite samples")
    return arr


def check_waveforms(xs, name: str = "X", min_length: int = 1) -> list[np.ndarray]:
    """Accept a list of 1-D signals or a 2-D (items, samples) array."""
    if isinstance(xs, (np.ndarray, Waveform)) and np.ndim(getattr(xs, "samples", xs)) == 1:
        raise InvalidArgumentError(f"{name} must be a collection of waveforms; wrap a single "
                                   "signal in a list")
    items = [check_waveform(x, f"{name}[{i}]", min_length) for i, x in enumerate(xs)]
    if not items:
        raise InvalidArgumentError(f"{name} is empty")
    return items


def check_paired(X, y, min_length: int = 1) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Noisy/clean collections of equal size whose items have matching lengths."""
    noisy, clean = check_waveforms(X, "X", min_length), check_waveforms(y, "y", min_length)
    if len(noisy) != len(clean):
        raise InvalidArgumentError(f"X has {len(noisy)} items but y has {len(clean)}")
    for i, (a, b) in enumerate(zip(noisy, clean)):
        if a.size != b.size:
            raise InvalidArgumentError(f"item {i}: noisy has {a.size} samples, clean {b.size}")
    return noisy, clean


def check_sample_rate(rate, expected: int = DEFAULT_SAMPLE_RATE) -> int:
    if rate != expected:
        raise InvalidArgumentError(f"sample rate {rate} Hz; only {expected} Hz is supported")
    return int(rate)


def check_positive_int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < 1:
        raise InvalidArgumentError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_fraction(value, name: str, inclusive_one: bool = False) -> float:
    value = float(value)
    upper_ok = value <= 1.0 if inclusive_one else value < 1.0
    if not (0.0 <= value and upper_ok):
        raise InvalidArgumentError(f"{name} must lie in [0, 1{']' if inclusive_one else ')'}, "
                                   f"got {value}")
    return value
