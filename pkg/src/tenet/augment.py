"""On-the-fly waveform augmentation and siamese input assembly.

Per item, in this order: speed perturbation, right time shift, sample
masking (noisy side only).  The reversed stream is the element-wise reversal
of the augmented forward pair, so both streams see one augmentation draw.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import dsp
from .errors import DegenerateInputError, InvalidArgumentError

RESAMPLER_TAPS = 16
KAISER_BETA = 8.0


@dataclass
class AugmentSpec:
    speed_range: tuple = (0.95, 1.05)
    shift_range_s: tuple = (0.0, 0.625)
    mask_len: int = 10
    max_masks: int = 150
    speed_perturbation: bool = True
    time_shifting: bool = True
    sample_masking: bool = True
    seed: int = 0

    def __post_init__(self):
        self.speed_range = tuple(float(v) for v in self.speed_range)
        self.shift_range_s = tuple(float(v) for v in self.shift_range_s)
        lo, hi = self.speed_range
        if not 0 < lo <= hi < 2:
            raise InvalidArgumentError(f"speed_range must lie within (0, 2), got {self.speed_range}")
        if not 0 <= self.shift_range_s[0] <= self.shift_range_s[1]:
            raise InvalidArgumentError(f"bad shift_range_s {self.shift_range_s}")
        if self.mask_len < 1 or self.max_masks < 0:
            raise InvalidArgumentError("mask_len must be >= 1 and max_masks >= 0")

    @classmethod
    def disabled(cls, **kw) -> "AugmentSpec":
        return cls(speed_perturbation=False, time_shifting=False, sample_masking=False, **kw)


@dataclass
class TrainingPair:
    noisy: dsp.Waveform
    clean: dsp.Waveform

    def __post_init__(self):
        if len(self.noisy) != len(self.clean):
            raise InvalidArgumentError(
                f"noisy/clean length mismatch: {len(self.noisy)} vs {len(self.clean)}")
        if self.noisy.sample_rate != self.clean.sample_rate:
            raise InvalidArgumentError("noisy/clean sample rates differ")

    @classmethod
    def from_arrays(cls, noisy, clean, sample_rate=dsp.DEFAULT_SAMPLE_RATE) -> "TrainingPair":
        return cls(dsp.Waveform(noisy, sample_rate), dsp.Waveform(clean, sample_rate))

    @property
    def sample_rate(self) -> int:
        return self.noisy.sample_rate

    def map(self, fn) -> "TrainingPair":
        return TrainingPair(dsp.Waveform(fn(self.noisy.samples), self.sample_rate),
                            dsp.Waveform(fn(self.clean.samples), self.sample_rate))


def item_seed(global_seed: int, epoch: int, index: int) -> int:
    """Mix (seed, epoch, index) into one 64-bit item seed."""
    state = np.random.SeedSequence([int(global_seed), int(epoch), int(index)])
    return int(state.generate_state(1, dtype=np.uint64)[0])


def _kaiser(u, beta=KAISER_BETA):
    # continuous Kaiser window on u in [-1, 1]
    inside = np.abs(u) <= 1.0
    arg = np.sqrt(np.clip(1.0 - u**2, 0.0, None))
    return np.where(inside, np.i0(beta * arg) / np.i0(beta), 0.0)


def change_speed(samples: np.ndarray, factor: float) -> np.ndarray:
    """Resample as if played back ``factor`` times faster (tempo and pitch together).

    Output sample ``n`` is the band-limited value of the input at time
    ``n * factor``, interpolated with a 16-tap Kaiser-windowed sinc whose cutoff
    drops below Nyquist when speeding up.
    """
    samples = np.asarray(samples, dtype=np.float64)
    length = samples.size
    out_len = int(round(length / factor))
    t = np.arange(out_len) * factor
    base = np.floor(t).astype(np.int64)
    half = RESAMPLER_TAPS // 2
    taps = np.arange(-half + 1, half + 1)  # 16 neighbours around t
    idx = base[:, None] + taps[None, :]
    dist = t[:, None] - idx
    cutoff = min(1.0, 1.0 / factor)
    kernel = cutoff * np.sinc(cutoff * dist) * _kaiser(dist / half)
    valid = (idx >= 0) & (idx < length)
    gathered = np.where(valid, samples[np.clip(idx, 0, length - 1)], 0.0)
    return (gathered * kernel).sum(axis=1)


def speed_perturb(p: TrainingPair, factor: float, speed_range=(0.95, 1.05)) -> TrainingPair:
    lo, hi = speed_range
    if not lo <= factor <= hi:
        raise InvalidArgumentError(f"speed factor {factor} outside [{lo}, {hi}]")
    if factor == 1.0:
        return p.map(np.copy)
    return p.map(lambda s: change_speed(s, factor))


def shift_right(samples: np.ndarray, shift: int) -> np.ndarray:
    out = np.zeros_like(samples)
    if shift < samples.size:
        out[shift:] = samples[: samples.size - shift]
    return out


def time_shift(p: TrainingPair, shift_s: float, shift_range_s=(0.0, 0.625)) -> TrainingPair:
    lo, hi = shift_range_s
    if not lo <= shift_s <= hi:
        raise InvalidArgumentError(f"shift {shift_s} s outside [{lo}, {hi}]")
    shift = int(round(shift_s * p.sample_rate))
    if shift >= len(p.noisy):
        raise DegenerateInputError(
            f"shift of {shift} samples would empty a {len(p.noisy)}-sample signal")
    return p.map(lambda s: shift_right(s, shift))


def mask_samples(samples: np.ndarray, starts, mask_len: int) -> np.ndarray:
    out = np.array(samples, dtype=np.float64, copy=True)
    for t0 in starts:
        out[t0 : t0 + mask_len] = 0.0
    return out


def draw_mask_starts(rng: np.random.Generator, length: int, mask_len: int = 10,
                     max_masks: int = 150) -> np.ndarray:
    if length < mask_len:
        raise InvalidArgumentError(f"signal of {length} samples shorter than mask length {mask_len}")
    count = int(rng.integers(0, max_masks + 1))
    return rng.integers(0, length - mask_len + 1, size=count)


def sample_mask(x, rng: np.random.Generator, mask_len: int = 10, max_masks: int = 150):
    """Zero ``m ~ U{0..max_masks}`` windows of ``mask_len`` samples at uniform starts."""
    samples = x.samples if isinstance(x, dsp.Waveform) else np.asarray(x, dtype=np.float64)
    starts = draw_mask_starts(rng, samples.size, mask_len, max_masks)
    out = mask_samples(samples, starts, mask_len)
    if isinstance(x, dsp.Waveform):
        return dsp.Waveform(out, x.sample_rate)
    return out


def augment_pair(p: TrainingPair, spec: AugmentSpec, rng: np.random.Generator) -> TrainingPair:
    # every draw is consumed whether or not its augmentation is enabled, so
    # switching one augmentation off leaves the others' realisations unchanged
    factor = float(rng.uniform(*spec.speed_range))
    shift_s = float(rng.uniform(*spec.shift_range_s))
    if spec.speed_perturbation:
        p = speed_perturb(p, factor, spec.speed_range)
    if spec.time_shifting and int(round(shift_s * p.sample_rate)) < len(p.noisy):
        p = time_shift(p, shift_s, spec.shift_range_s)
    if spec.sample_masking:
        noisy = sample_mask(p.noisy, rng, spec.mask_len, spec.max_masks)
        p = replace(p, noisy=noisy)
    return p


def make_siamese_inputs(p: TrainingPair, spec: AugmentSpec, seed: int) -> dict:
    """Augment ``p`` with a generator seeded by ``seed``; pair it with its time reversal."""
    forward = augment_pair(p, spec, np.random.default_rng(seed))
    return {"forward": forward, "reversed": forward.map(lambda s: s[::-1].copy())}
