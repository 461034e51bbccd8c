"""Self-checks behind the ``verify`` subcommand.

Each check returns a :class:`CheckResult`; :func:`run_all` runs the whole
suite.  The checks use small random inputs drawn from one seed, so a run is
reproducible and finishes in well under a minute on one core.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import torch

from . import dsp
from .augment import (AugmentSpec, TrainingPair, change_speed, draw_mask_starts,
                      make_siamese_inputs, mask_samples)
from .compute import ParamStore, grad_check
from .model import ModelConfig, build_model, overlap_add, segment
from .objectives import ConvFeatureEncoder, LossWeights, si_sdr, total_loss
from .trainer import siamese_step, stream_loss

SAMPLE_RATE = dsp.DEFAULT_SAMPLE_RATE


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: {self.detail} ({self.seconds:.2f}s)"


def _timed(name, fn, *args, **kwargs) -> CheckResult:
    start = time.perf_counter()
    passed, detail = fn(*args, **kwargs)
    return CheckResult(name, bool(passed), detail, time.perf_counter() - start)


def tiny_model_config(**overrides) -> ModelConfig:
    """Smallest sensible CDPT, used for the model-level checks."""
    base = dict(feature_dim=16, chunk_len=8, num_blocks=2, num_heads=2, ff_hidden=16,
                conv_filters=4)
    base.update(overrides)
    return ModelConfig(**base)


# ---------------------------------------------------------------------------
# signal core


def _reversal_identity(signals, frame_len, max_lag, tol):
    worst_spec = worst_acf = 0.0
    for x in signals:
        report = dsp.verify_reversal_identity(x, frame_len, max_lag)
        worst_spec = max(worst_spec, report.spectral_deviation)
        worst_acf = max(worst_acf, report.autocorr_deviation)
    passed = worst_spec < tol and worst_acf < tol
    return passed, (f"{len(signals)} signals, max spectral deviation {worst_spec:.2e}, "
                    f"max autocorrelation deviation {worst_acf:.2e} (tol {tol:g})")


def check_reversal_identity(seed=0, count=10, num_frames=8, frame_len=64, max_lag=4,
                            tol=1e-6, signal=None) -> CheckResult:
    if signal is not None:
        signals = [np.asarray(signal, dtype=np.float64)]
    else:
        rng = np.random.default_rng(seed)
        signals = [rng.standard_normal(num_frames * frame_len) for _ in range(count)]
    return _timed("reversal identity", _reversal_identity, signals, frame_len, max_lag, tol)


def _round_trip(signals, tol):
    worst = 0.0
    for x in signals:
        y = dsp.istft(dsp.stft(dsp.frame(x, 400, 100, "hanning"), 512))
        worst = max(worst, np.linalg.norm(x - y) / max(np.linalg.norm(x), 1e-300))
    return worst < tol, f"{len(signals)} signals, max relative L2 error {worst:.2e} (tol {tol:g})"


def check_round_trip(seed=0, count=10, tol=1e-6, signal=None) -> CheckResult:
    if signal is not None:
        signals = [np.asarray(signal, dtype=np.float64)]
    else:
        rng = np.random.default_rng(seed)
        signals = [rng.standard_normal(SAMPLE_RATE) for _ in range(count)]
    return _timed("stft/istft round trip", _round_trip, signals, tol)


# ---------------------------------------------------------------------------
# model


def _mask_bounds(seed, count):
    rng = np.random.default_rng(seed)
    model = build_model(tiny_model_config(), seed=seed).double()
    with torch.no_grad():
        # spread the logits beyond the near-identity initialisation (float64 tanh
        # only rounds to +-1 past |x| ~ 19, far outside this range)
        gen = torch.Generator().manual_seed(seed)
        model.out_proj.weight.normal_(std=0.5, generator=gen)
        model.out_proj.bias.normal_(std=1.0, generator=gen)
    worst_mask, worst_ratio = 0.0, 0.0
    for _ in range(count):
        x = torch.as_tensor(rng.standard_normal((1, int(rng.integers(400, 2400)))))
        with torch.no_grad():
            w = model.encode(x)
            w_hat, logits = model.enhance_spectrogram(w)
        worst_mask = max(worst_mask, torch.tanh(logits).abs().max().item())
        worst_ratio = max(worst_ratio, (torch.linalg.norm(w_hat) / torch.linalg.norm(w)).item())
    passed = worst_mask < 1.0 and worst_ratio <= 1.0
    return passed, (f"{count} inputs, 1 - max |mask| = {1.0 - worst_mask:.2e}, "
                    f"max |W^|/|W| {worst_ratio:.6f}")


def check_mask_bounds(seed=0, count=100) -> CheckResult:
    return _timed("mask bounds", _mask_bounds, seed, count)


def _segmentation(seed, chunk_len, frame_counts, tol):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in frame_counts:
        f = torch.as_tensor(rng.standard_normal((2, 3, k)))
        back = overlap_add(segment(f, chunk_len), k)
        worst = max(worst, (back - f).abs().max().item())
    return worst < tol, f"Q={chunk_len}, K in {list(frame_counts)}, max error {worst:.2e}"


def check_segmentation(seed=0, chunk_len=100, tol=1e-6) -> CheckResult:
    q = chunk_len
    return _timed("segment/overlap-add identity", _segmentation, seed, q,
                  (q, q + 1, 3 * q - 1, 157), tol)


def _gradients(seed, num_samples, tol):
    cfg = tiny_model_config()
    model = build_model(cfg, seed=seed).double()
    encoder = ConvFeatureEncoder(seed=seed, width=16).double()
    rng = np.random.default_rng(seed)
    length = SAMPLE_RATE // 10
    clean = rng.standard_normal(length) * 0.3
    noisy = clean + 0.3 * rng.standard_normal(length)
    pair = TrainingPair.from_arrays(noisy, clean)
    streams = make_siamese_inputs(pair, AugmentSpec.disabled(), seed)
    weights = LossWeights()

    def as_t(w):
        return torch.as_tensor(w.samples)

    def loss():
        fwd, rev = streams["forward"], streams["reversed"]
        return total_loss((as_t(fwd.clean), model(as_t(fwd.noisy))),
                          (as_t(rev.clean), model(as_t(rev.noisy))), weights, encoder)

    report = grad_check(loss, ParamStore(model).trainable(), eps=1e-6, tol=tol,
                        num_samples=num_samples, seed=seed)
    passed = report.passed and report.checked >= num_samples
    return passed, (f"{report.checked} elements, max relative error {report.max_error:.2e} "
                    f"(tol {tol:g})")


def check_gradients(seed=0, num_samples=200, tol=1e-4) -> CheckResult:
    return _timed("end-to-end gradient check", _gradients, seed, num_samples, tol)


# ---------------------------------------------------------------------------
# objectives


def _scale_invariance(seed, count, tol):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        s = rng.standard_normal(1000)
        s_hat = s + rng.standard_normal(1000) * rng.uniform(0.1, 2.0)
        a, b = rng.uniform(0.1, 10.0, size=2)
        ref = si_sdr(s, s_hat)
        worst = max(worst, abs(si_sdr(a * s, s_hat) - ref), abs(si_sdr(s, b * s_hat) - ref))
    return worst < tol, f"{count} pairs, max change {worst:.2e} dB (tol {tol:g})"


def check_scale_invariance(seed=0, count=100, tol=1e-6) -> CheckResult:
    return _timed("si-sdr scale invariance", _scale_invariance, seed, count, tol)


def _hand_case(tol):
    value = si_sdr([1.0, 0.0, 0.0], [1.0, 1.0, 0.0])
    return abs(value) <= tol, f"si_sdr([1,0,0], [1,1,0]) = {value:.3e} dB"


def check_hand_case(tol=1e-9) -> CheckResult:
    return _timed("si-sdr hand-computed case", _hand_case, tol)


def _gamma_zero(seed):
    model = build_model(tiny_model_config(), seed=seed)
    encoder = ConvFeatureEncoder(seed=seed, width=16)
    rng = np.random.default_rng(seed)
    batch = [TrainingPair.from_arrays(rng.standard_normal(1600) * 0.3,
                                      rng.standard_normal(1600) * 0.3) for _ in range(2)]
    weights = LossWeights(gamma=0.0)
    augment = AugmentSpec(seed=seed)
    seeds = [seed + 10, seed + 11]
    _, grads = siamese_step(batch, model, weights, encoder, augment, seeds)

    inputs = [make_siamese_inputs(p, augment, s)["forward"] for p, s in zip(batch, seeds)]
    params = ParamStore(model).trainable()
    single = torch.autograd.grad(stream_loss(model, inputs, weights.beta, weights, encoder),
                                 list(params.values()), allow_unused=True)
    mismatched = [name for name, g in zip(params, single)
                  if not torch.equal(grads[name], torch.zeros_like(grads[name]) if g is None else g)]
    detail = ("all parameter gradients bit-equal" if not mismatched
              else f"{len(mismatched)} tensors differ, first {mismatched[0]}")
    return not mismatched, detail


def check_gamma_zero(seed=0) -> CheckResult:
    return _timed("gamma=0 equals single stream", _gamma_zero, seed)


# ---------------------------------------------------------------------------
# augmentation


def _augment_determinism(seed):
    rng = np.random.default_rng(seed)
    pair = TrainingPair.from_arrays(rng.standard_normal(8000), rng.standard_normal(8000))
    spec = AugmentSpec(seed=seed)
    a = make_siamese_inputs(pair, spec, seed + 5)
    b = make_siamese_inputs(pair, spec, seed + 5)
    c = make_siamese_inputs(pair, spec, seed + 6)
    same = all(np.array_equal(getattr(a[k], side).samples, getattr(b[k], side).samples)
               for k in a for side in ("noisy", "clean"))
    differs = not np.array_equal(a["forward"].noisy.samples, c["forward"].noisy.samples)
    return same and differs, f"same seed identical: {same}, other seed differs: {differs}"


def check_augment_determinism(seed=0) -> CheckResult:
    return _timed("augmentation determinism", _augment_determinism, seed)


def _mask_contract(seed, trials, mask_len, max_masks):
    rng = np.random.default_rng(seed)
    length = 4000
    x = rng.uniform(0.5, 1.0, length)  # no zeros, so every zero comes from a mask
    for _ in range(trials):
        starts = draw_mask_starts(rng, length, mask_len, max_masks)
        out = mask_samples(x, starts, mask_len)
        expected = np.ones(length, dtype=bool)
        for t0 in starts:
            if not 0 <= t0 <= length - mask_len:
                return False, f"window start {t0} out of range"
            expected[t0 : t0 + mask_len] = False
        if len(starts) > max_masks:
            return False, f"{len(starts)} windows exceed the limit of {max_masks}"
        if not np.array_equal(out == 0.0, ~expected) or not np.array_equal(out[expected], x[expected]):
            return False, "zeroed samples do not match the drawn windows"
    return True, f"{trials} draws, t={mask_len}, m <= {max_masks}"


def check_mask_contract(seed=0, trials=200) -> CheckResult:
    return _timed("sample-mask placement", _mask_contract, seed, trials, 10, 150)


def _speed_tone(factors, length):
    n = np.arange(length)
    tone = np.sin(2 * np.pi * 1000.0 * n / SAMPLE_RATE)
    worst = 0.0
    for f in factors:
        out = change_speed(tone, f)
        spec = np.abs(np.fft.rfft(out * np.hanning(out.size)))
        bin_hz = SAMPLE_RATE / out.size
        peak_hz = np.argmax(spec) * bin_hz
        worst = max(worst, abs(peak_hz - f * 1000.0) / bin_hz)
    return worst <= 1.0, f"factors {list(factors)}, worst peak offset {worst:.2f} bins"


def check_speed_tone(factors=(0.95, 0.97, 1.0, 1.03, 1.05), length=SAMPLE_RATE) -> CheckResult:
    return _timed("speed-perturbed tone peak", _speed_tone, factors, length)


def _max_shift():
    spec = AugmentSpec()
    shift = int(round(spec.shift_range_s[1] * SAMPLE_RATE))
    return shift == 10000, f"max shift {shift} samples at {SAMPLE_RATE} Hz"


def check_max_shift() -> CheckResult:
    return _timed("maximum time shift", _max_shift)


# ---------------------------------------------------------------------------


def run_all(seed: int = 0, wav=None, gradients: bool = True) -> list[CheckResult]:
    """Run every check; with ``wav`` the signal-core checks also run on that file."""
    results = [check_reversal_identity(seed), check_round_trip(seed)]
    if wav is not None:
        samples = wav.samples if isinstance(wav, dsp.Waveform) else np.asarray(wav)
        r = check_reversal_identity(signal=samples)
        results.append(CheckResult("reversal identity (wav)", r.passed, r.detail, r.seconds))
        r = check_round_trip(signal=samples)
        results.append(CheckResult("stft/istft round trip (wav)", r.passed, r.detail, r.seconds))
    results += [check_mask_bounds(seed), check_segmentation(seed),
                check_scale_invariance(seed), check_hand_case(), check_gamma_zero(seed),
                check_augment_determinism(seed), check_mask_contract(seed),
                check_speed_tone(), check_max_shift()]
    if gradients:
        results.append(check_gradients(seed))
    return results
