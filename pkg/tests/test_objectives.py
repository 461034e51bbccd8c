import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tenet.compute import grad_check
from tenet.errors import DegenerateInputError, FormatError, InvalidArgumentError
from tenet.objectives import (ConvFeatureEncoder, LossWeights, PrecomputedEncoder,
                              hybrid_loss, pfp_loss, si_sdr, si_sdr_loss, total_loss)

signal = arrays(np.float64, 64, elements=st.floats(-1, 1, allow_nan=False)).filter(
    lambda a: np.sum(a**2) > 1e-3)


def ceiling(s, c=1.0, eps=1e-8):
    return 10 * math.log10((c * c * np.sum(np.square(s)) + eps) / eps)


@pytest.fixture(scope="module")
def encoder():
    return ConvFeatureEncoder(seed=0).double()


def noisy_pair(seed=0, length=4000, sigma=0.3):
    rng = np.random.default_rng(seed)
    s = rng.standard_normal(length) * 0.5
    return torch.as_tensor(s), torch.as_tensor(s + sigma * rng.standard_normal(length))


class TestSiSdr:
    def test_hand_case(self):
        assert si_sdr([1.0, 0.0, 0.0], [1.0, 1.0, 0.0]) == pytest.approx(0.0, abs=1e-9)

    @pytest.mark.parametrize("c", [1.0, 0.3, -2.0, 17.0])
    def test_scaled_copy_hits_ceiling(self, c):
        s = np.random.default_rng(0).standard_normal(100)
        assert si_sdr(s, c * s) == pytest.approx(ceiling(s, c), abs=1e-6)

    def test_eps_bounds_the_value(self):
        s = np.random.default_rng(1).standard_normal(100)
        assert math.isfinite(si_sdr(s, s))

    def test_known_value(self):
        # s_hat = s + orthogonal noise of equal energy -> 0 dB
        s = np.array([1.0, 0.0, 1.0, 0.0])
        n = np.array([0.0, 1.0, 0.0, 1.0])
        assert si_sdr(s, s + n) == pytest.approx(0.0, abs=1e-7)
        # eps enters both energies: (2 + eps) / (0.02 + eps)
        assert si_sdr(s, s + 0.1 * n) == pytest.approx(10 * math.log10((2 + 1e-8) / (0.02 + 1e-8)),
                                                       abs=1e-9)

    def test_errors(self):
        with pytest.raises(InvalidArgumentError):
            si_sdr([1.0, 2.0], [1.0])
        with pytest.raises(DegenerateInputError):
            si_sdr([0.0, 0.0], [1.0, 2.0])

    def test_batched_tensor(self):
        s = torch.randn(3, 50, dtype=torch.float64)
        s_hat = s + 0.1 * torch.randn(3, 50, dtype=torch.float64)
        batched = si_sdr(s, s_hat)
        assert batched.shape == (3,)
        for i in range(3):
            assert batched[i].item() == pytest.approx(si_sdr(s[i].numpy(), s_hat[i].numpy()))

    def test_zero_mean_flag(self):
        s = np.array([1.0, 2.0, 3.0, 4.0])
        assert si_sdr(s, s + 5.0, zero_mean=True) == pytest.approx(ceiling(s - s.mean()), abs=1e-6)
        assert si_sdr(s, s + 5.0) < 20

    @given(signal, signal, st.floats(0.1, 10), st.floats(0.1, 10))
    @settings(max_examples=50, deadline=None)
    def test_scale_invariance(self, s, s_hat, a, b):
        # eps is not scaled with the signals, so invariance is only exact while both
        # energies dominate it; a collinear pair drives the residual to zero
        target = (s_hat @ s) / (s @ s) * s
        residual = s_hat - target
        if min(np.sum(target**2), np.sum(residual**2), np.sum(s**2)) < 1.0:
            return
        ref = si_sdr(s, s_hat)
        assert si_sdr(a * s, s_hat) == pytest.approx(ref, abs=1e-6)
        assert si_sdr(s, b * s_hat) == pytest.approx(ref, abs=1e-5)

    @given(signal, signal)
    @settings(max_examples=50, deadline=None)
    def test_self_is_upper_bound(self, s, s_hat):
        assert si_sdr(s, s_hat) <= si_sdr(s, s) + 1e-9

    def test_loss_gradient(self):
        s, s_hat = noisy_pair(length=64)
        s_hat.requires_grad_(True)
        assert grad_check(lambda: si_sdr_loss(s, s_hat), {"s_hat": s_hat}).passed


class TestEncoder:
    def test_geometry(self, encoder):
        assert encoder.receptive_field == 465
        feats = encoder(torch.zeros(16000, dtype=torch.float64))
        assert feats.shape[-1] == 512
        assert feats.shape[1] == (16000 - 465) // 160 + 1

    def test_frozen_and_deterministic(self):
        a, b = ConvFeatureEncoder(seed=3), ConvFeatureEncoder(seed=3)
        assert not any(p.requires_grad for p in a.parameters())
        assert all(torch.equal(p, q) for p, q in zip(a.parameters(), b.parameters()))
        assert a.identity == b.identity != ConvFeatureEncoder(seed=4).identity

    def test_short_input_padded(self, encoder):
        assert encoder(torch.zeros(100, dtype=torch.float64)).shape == (1, 1, 512)

    def test_save_load(self, tmp_path):
        enc = ConvFeatureEncoder(seed=2, width=8)
        enc.save(tmp_path / "enc.tnt")
        back = ConvFeatureEncoder.load(tmp_path / "enc.tnt")
        assert back.identity == enc.identity
        assert all(torch.equal(p, q) for p, q in zip(enc.parameters(), back.parameters()))

    def test_load_wrong_kind(self, tmp_path):
        from tenet.compute import save_checkpoint
        save_checkpoint(tmp_path / "x.tnt", {"w": torch.zeros(1)}, {"kind": "cdpt"})
        with pytest.raises(FormatError):
            ConvFeatureEncoder.load(tmp_path / "x.tnt")

    def test_precomputed(self, tmp_path):
        x = np.random.default_rng(0).standard_normal(320)
        table = {PrecomputedEncoder.key(x): np.ones((2, 512))}
        np.savez(tmp_path / "emb.npz", **table)
        enc = PrecomputedEncoder(tmp_path / "emb.npz")
        assert enc(torch.as_tensor(x)).shape == (1, 2, 512)
        with pytest.raises(KeyError):
            enc(torch.zeros(320))


class TestPfp:
    def test_identity_zero(self, encoder):
        s, _ = noisy_pair()
        assert pfp_loss(s, s, encoder).item() == 0.0

    def test_symmetry(self, encoder):
        s, s_hat = noisy_pair()
        assert pfp_loss(s, s_hat, encoder).item() == pytest.approx(pfp_loss(s_hat, s, encoder).item())

    def test_monotone_degradation(self, encoder):
        rng = np.random.default_rng(5)
        s = torch.as_tensor(rng.standard_normal(8000) * 0.5)
        noise = torch.as_tensor(rng.standard_normal(8000))
        assert pfp_loss(s, s + 0.1 * noise, encoder) < pfp_loss(s, s + 0.5 * noise, encoder)

    def test_nonnegative(self, encoder):
        for seed in range(5):
            assert pfp_loss(*noisy_pair(seed), encoder).item() > 0

    def test_gradient(self):
        enc = ConvFeatureEncoder(seed=1, width=8).double()
        s, s_hat = noisy_pair(length=800)
        s_hat.requires_grad_(True)
        report = grad_check(lambda: pfp_loss(s, s_hat, enc), {"s_hat": s_hat}, eps=1e-6)
        assert report.passed, report.worst

    def test_length_mismatch(self, encoder):
        with pytest.raises(InvalidArgumentError):
            pfp_loss(torch.zeros(500), torch.zeros(501), encoder)


class TestCombinations:
    def test_alpha_zero_is_negative_sisdr(self):
        s, s_hat = noisy_pair()
        got = hybrid_loss(s, s_hat, LossWeights(alpha=0.0))
        assert got.item() == -si_sdr(s, s_hat).item()

    def test_linear_in_alpha(self, encoder):
        s, s_hat = noisy_pair()
        h1 = hybrid_loss(s, s_hat, LossWeights(alpha=1.0), encoder)
        h2 = hybrid_loss(s, s_hat, LossWeights(alpha=2.0), encoder)
        assert (h2 - h1).item() == pytest.approx(pfp_loss(s, s_hat, encoder).item(), rel=1e-9)

    def test_perfect_is_minimum(self, encoder):
        s, s_hat = noisy_pair()
        w = LossWeights()
        best = hybrid_loss(s, s, w, encoder).item()
        assert best == pytest.approx(-ceiling(s.numpy()))
        assert best < hybrid_loss(s, s_hat, w, encoder).item()

    def test_gamma_zero(self, encoder):
        f, r = noisy_pair(0), noisy_pair(1)
        w = LossWeights(gamma=0.0)
        assert total_loss(f, r, w, encoder).item() == pytest.approx(
            0.5 * hybrid_loss(*f, w, encoder).item(), rel=1e-12)

    def test_perfect_streams(self, encoder):
        s, _ = noisy_pair()
        r = torch.flip(s, [0])
        w = LossWeights(beta=0.5, gamma=0.5)
        total = total_loss((s, s), (r, r), w, encoder).item()
        assert total == pytest.approx(2 * 0.5 * hybrid_loss(s, s, w, encoder).item())

    def test_swap_symmetry(self, encoder):
        f, r = noisy_pair(0), noisy_pair(1)
        w = LossWeights(beta=0.7, gamma=0.7)
        assert total_loss(f, r, w, encoder).item() == pytest.approx(
            total_loss(r, f, w, encoder).item(), rel=1e-12)

    def test_alpha_requires_encoder(self):
        with pytest.raises(InvalidArgumentError):
            hybrid_loss(*noisy_pair(), LossWeights(alpha=1.0))

    @pytest.mark.parametrize("kw", [{"alpha": -1.0}, {"eps": 0.0}])
    def test_invalid_weights(self, kw):
        with pytest.raises(InvalidArgumentError):
            LossWeights(**kw)

    def test_total_loss_gradient(self):
        enc = ConvFeatureEncoder(seed=1, width=8).double()
        s, s_hat = noisy_pair(length=600)
        s_r = torch.flip(s, [0])
        s_hat.requires_grad_(True)
        r_hat = torch.flip(noisy_pair(2, 600)[1], [0]).requires_grad_(True)
        report = grad_check(lambda: total_loss((s, s_hat), (s_r, r_hat), LossWeights(), enc),
                            {"f": s_hat, "r": r_hat}, eps=1e-6)
        assert report.passed, report.worst
