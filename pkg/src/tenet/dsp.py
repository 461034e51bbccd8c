"""Waveform and time-frequency primitives.

The STFT here is written as two explicit real matrices: an analysis basis
``U`` that maps a (zero-padded) frame to stacked real/imaginary one-sided DFT
coefficients, and a synthesis basis ``V`` that inverts it.  Windowing lives in
:func:`frame` and in the overlap-add of :func:`istft`, never inside ``U``/``V``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InvalidArgumentError

DEFAULT_SAMPLE_RATE = 16000
DEFAULT_FRAME_LEN = 400  # 25 ms at 16 kHz
DEFAULT_HOP = 100  # 6.25 ms at 16 kHz
DEFAULT_DFT_SIZE = 512
WINDOWS = ("rectangular", "hanning")


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size < 1:
            raise InvalidArgumentError("waveform must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(self.samples)):
            raise InvalidArgumentError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise InvalidArgumentError(f"sample_rate must be positive, got {self.sample_rate}")

    def __len__(self):
        return self.samples.size


@dataclass
class FrameMatrix:
    data: np.ndarray  # frame_len x num_frames
    frame_len: int
    hop: int
    window: str
    length: int  # unpadded signal length

    @property
    def num_frames(self) -> int:
        return self.data.shape[1]


@dataclass
class Spectrogram:
    data: np.ndarray  # 2F x num_frames, real rows then imaginary rows
    dft_size: int
    length: int | None = field(default=None)

    @property
    def num_bins(self) -> int:
        return self.dft_size // 2 + 1

    @property
    def real(self) -> np.ndarray:
        return self.data[: self.num_bins]

    @property
    def imag(self) -> np.ndarray:
        return self.data[self.num_bins :]

    def to_complex(self) -> np.ndarray:
        return self.real + 1j * self.imag


def _samples(x) -> np.ndarray:
    if isinstance(x, Waveform):
        return x.samples
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise InvalidArgumentError("expected a non-empty 1-D sample sequence")
    return arr


def reverse(x):
    """Array time reversal, ``out[n] = x[L-1-n]``.

    Returns a :class:`Waveform` when given one, otherwise an ndarray.
    """
    samples = _samples(x)[::-1].copy()
    if isinstance(x, Waveform):
        return Waveform(samples, x.sample_rate)
    return samples


def hanning(n: int) -> np.ndarray:
    # Hanning without zero endpoints, w[k] = 0.5 * (1 - cos(2 pi (k + 1) / (n + 1))).
    # Every sample, including the first and the last, receives nonzero weight,
    # which is what makes uncentred framing exactly invertible.
    k = np.arange(1, n + 1, dtype=np.float64)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * k / (n + 1)))


def get_window(name: str, n: int) -> np.ndarray:
    if name == "rectangular":
        return np.ones(n)
    if name == "hanning":
        return hanning(n)
    raise InvalidArgumentError(f"unknown window {name!r}; expected one of {WINDOWS}")


def num_frames(length: int, frame_len: int, hop: int) -> int:
    return math.ceil(max(length - frame_len, 0) / hop) + 1


def _check_framing(frame_len: int, hop: int):
    if frame_len < 1:
        raise InvalidArgumentError(f"frame_len must be >= 1, got {frame_len}")
    if not 1 <= hop <= frame_len:
        raise InvalidArgumentError(f"hop must lie in [1, frame_len={frame_len}], got {hop}")


def frame(x, frame_len: int = DEFAULT_FRAME_LEN, hop: int = DEFAULT_HOP,
          window: str = "hanning") -> FrameMatrix:
    """Slice ``x`` into windowed columns, zero-padding the tail of the last frame."""
    _check_framing(frame_len, hop)
    samples = _samples(x)
    length = samples.size
    count = num_frames(length, frame_len, hop)
    padded = np.zeros((count - 1) * hop + frame_len)
    padded[:length] = samples
    idx = np.arange(frame_len)[:, None] + hop * np.arange(count)[None, :]
    data = padded[idx] * get_window(window, frame_len)[:, None]
    return FrameMatrix(data, frame_len, hop, window, length)


def analysis_basis(dft_size: int) -> np.ndarray:
    """Real DFT matrix ``U`` of shape (2F, dft_size): cosine rows then -sine rows."""
    if dft_size < 2 or dft_size % 2:
        raise InvalidArgumentError(f"dft_size must be even and >= 2, got {dft_size}")
    bins = dft_size // 2 + 1
    phase = 2.0 * np.pi * np.outer(np.arange(bins), np.arange(dft_size)) / dft_size
    return np.concatenate([np.cos(phase), -np.sin(phase)], axis=0)


def synthesis_basis(dft_size: int) -> np.ndarray:
    """Inverse real DFT matrix ``V`` of shape (dft_size, 2F), with ``V @ U = I``."""
    bins = dft_size // 2 + 1
    weight = np.full(bins, 2.0)
    weight[0] = 1.0
    weight[-1] = 1.0
    phase = 2.0 * np.pi * np.outer(np.arange(dft_size), np.arange(bins)) / dft_size
    cos_part = np.cos(phase) * weight / dft_size
    sin_part = -np.sin(phase) * weight / dft_size
    return np.concatenate([cos_part, sin_part], axis=1)


def stft(f: FrameMatrix, dft_size: int = DEFAULT_DFT_SIZE) -> Spectrogram:
    if dft_size < f.frame_len:
        raise InvalidArgumentError(
            f"dft_size ({dft_size}) must be >= frame_len ({f.frame_len})")
    basis = analysis_basis(dft_size)
    # zero-padding frames to dft_size is the same as dropping the trailing basis columns
    data = basis[:, : f.frame_len] @ f.data
    return Spectrogram(data, dft_size, f.length)


def window_envelope(window: np.ndarray, hop: int, count: int) -> np.ndarray:
    """Per-sample sum of the squared window over ``count`` frames at ``hop``."""
    frame_len = window.size
    env = np.zeros((count - 1) * hop + frame_len)
    sq = window**2
    for i in range(count):
        env[i * hop : i * hop + frame_len] += sq
    return env


def check_overlap_add(window: str | np.ndarray, frame_len: int, hop: int, count: int = 8,
                      rtol: float = 1e-10) -> np.ndarray:
    """Raise ConfigurationError unless the squared-window envelope is nonzero everywhere.

    With per-sample normalisation by this envelope, a nonzero envelope is
    exactly the overlap-add condition needed for perfect reconstruction.
    """
    _check_framing(frame_len, hop)
    w = get_window(window, frame_len) if isinstance(window, str) else np.asarray(window)
    env = window_envelope(w, hop, max(count, 1))
    if env.min() <= rtol * env.max():
        raise ConfigurationError(
            f"window/hop pair (frame_len={frame_len}, hop={hop}) leaves samples with zero "
            "overlap-add weight; reconstruction is impossible")
    return env


def floored_envelope(env: np.ndarray, floor: float) -> np.ndarray:
    """Clamp the envelope at ``floor`` times its maximum (``floor=0`` leaves it exact)."""
    if floor <= 0:
        return env
    return np.maximum(env, floor * env.max())


def istft(w: Spectrogram, frame_len: int = DEFAULT_FRAME_LEN, hop: int = DEFAULT_HOP,
          window: str = "hanning", length: int | None = None,
          envelope_floor: float = 0.0) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft` applied to :func:`frame` output.

    With ``envelope_floor=0`` the inverse is exact.  A positive floor bounds
    the gain applied to the first and last few samples, where the window
    weight is tiny; a modified spectrogram would otherwise explode there.
    """
    if w.data.shape[0] != 2 * w.num_bins:
        raise InvalidArgumentError(
            f"spectrogram has {w.data.shape[0]} rows, expected {2 * w.num_bins}")
    count = w.data.shape[1]
    win = get_window(window, frame_len)
    env = check_overlap_add(win, frame_len, hop, count)
    frames = (synthesis_basis(w.dft_size) @ w.data)[:frame_len] * win[:, None]
    out = np.zeros(env.size)
    for i in range(count):
        out[i * hop : i * hop + frame_len] += frames[:, i]
    out /= floored_envelope(env, envelope_floor)
    if length is None:
        length = w.length
    if length is not None:
        out = out[:length]
    return out


@dataclass
class DeviationReport:
    spectral_deviation: float
    autocorr_deviation: float
    num_frames: int
    frame_len: int
    max_lag: int

    def passed(self, tol: float = 1e-6) -> bool:
        return self.spectral_deviation < tol and self.autocorr_deviation < tol


def frame_autocorrelation(spec: np.ndarray, max_lag: int) -> np.ndarray:
    """Matched-range average ``sum_i X_i conj(X_{i+tau}) / (N - tau)`` along frames.

    ``spec`` is complex, shape (bins, N).  Returns shape (max_lag + 1, bins).
    """
    n = spec.shape[1]
    out = np.empty((max_lag + 1, spec.shape[0]), dtype=complex)
    for tau in range(max_lag + 1):
        prod = spec[:, : n - tau] * np.conj(spec[:, tau:])
        out[tau] = prod.sum(axis=1) / (n - tau)
    return out


def verify_reversal_identity(x, frame_len: int, max_lag: int) -> DeviationReport:
    """Check the frame-reversal spectral identity and the frame-axis autocorrelation equality.

    The signal is truncated to ``N * frame_len`` samples and framed with a
    rectangular window, ``hop = dft_size = frame_len``.

    Spectral side, with the modular reversal ``x_r[n] = x_f[(L - n) mod L]``:
    each reversed frame ``i`` covers ``x_r[iM + 1 .. iM + M]`` and its transform
    ``sum_m x_r[iM + m] e^{-jwm}`` must equal
    ``conj(X_{f, N-1-i}(w)) e^{-jwM}`` at every bin ``w = 2 pi k / M``.

    Autocorrelation side, with array reversal: the matched-range frame-axis
    autocorrelations of the two STFTs must coincide for lags ``0..max_lag``.
    Both deviations are relative to the largest modulus on the reference side.
    """
    samples = _samples(x)
    m = int(frame_len)
    if m < 2 or m % 2:
        raise InvalidArgumentError(f"frame_len must be even and >= 2, got {frame_len}")
    n = samples.size // m
    if n <= max_lag:
        raise InvalidArgumentError(
            f"need more frames than max_lag: have N={n}, max_lag={max_lag}")
    xf = samples[: n * m]
    length = xf.size

    def spectrum(sig):
        return stft(frame(sig, m, m, "rectangular"), m).to_complex()

    forward = spectrum(xf)  # (bins, N)
    bins = m // 2 + 1
    omega = 2.0 * np.pi * np.arange(bins) / m

    # modular reversal, read with frames starting one sample late
    x_mod = xf[(-np.arange(length + 1)) % length]
    offsets = np.arange(1, m + 1)
    kernel = np.exp(-1j * np.outer(omega, offsets))  # (bins, M)
    lhs = np.stack([kernel @ x_mod[i * m + offsets] for i in range(n)], axis=1)
    rhs = np.conj(forward[:, ::-1]) * np.exp(-1j * omega * m)[:, None]
    spectral = np.abs(lhs - rhs).max() / max(np.abs(rhs).max(), np.finfo(float).tiny)

    reversed_spec = spectrum(xf[::-1])
    r_f = frame_autocorrelation(forward, max_lag)
    r_r = frame_autocorrelation(reversed_spec, max_lag)
    autocorr = np.abs(r_r - r_f).max() / max(np.abs(r_f).max(), np.finfo(float).tiny)
    return DeviationReport(float(spectral), float(autocorr), n, m, max_lag)
