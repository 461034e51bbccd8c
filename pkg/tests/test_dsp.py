import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tenet import dsp
from tenet.errors import ConfigurationError, InvalidArgumentError

finite = st.floats(-1.0, 1.0, allow_nan=False, allow_infinity=False)


def naive_dft(x, size):
    padded = np.zeros(size)
    padded[: x.size] = x
    n = np.arange(size)
    return np.array([np.sum(padded * np.exp(-2j * np.pi * k * n / size))
                     for k in range(size // 2 + 1)])


class TestReverse:
    def test_definition(self):
        np.testing.assert_array_equal(dsp.reverse([1.0, 2.0, 3.0]), [3.0, 2.0, 1.0])

    def test_waveform_keeps_rate(self):
        w = dsp.reverse(dsp.Waveform([1.0, 2.0], 8000))
        assert w.sample_rate == 8000
        np.testing.assert_array_equal(w.samples, [2.0, 1.0])

    @given(arrays(np.float64, st.integers(1, 200), elements=finite))
    def test_involution_and_energy(self, x):
        np.testing.assert_array_equal(dsp.reverse(dsp.reverse(x)), x)
        assert np.sum(dsp.reverse(x) ** 2) == pytest.approx(np.sum(x**2), rel=1e-12, abs=1e-300)

    def test_empty_rejected(self):
        with pytest.raises(InvalidArgumentError):
            dsp.reverse([])


class TestFrame:
    def test_single_frame(self):
        x = np.random.default_rng(0).standard_normal(400)
        f = dsp.frame(x, 400, 100, "rectangular")
        assert f.num_frames == 1
        np.testing.assert_array_equal(f.data[:, 0], x)

    def test_tail_padding(self):
        x = np.ones(450)
        f = dsp.frame(x, 400, 100, "rectangular")
        assert f.num_frames == 2  # ceil((450 - 400) / 100) + 1
        np.testing.assert_array_equal(f.data[:, 1], np.r_[np.ones(350), np.zeros(50)])

    def test_hanning_column(self):
        x = np.random.default_rng(1).standard_normal(1000)
        f = dsp.frame(x, 400, 100, "hanning")
        np.testing.assert_allclose(f.data[:, 0], x[:400] * dsp.hanning(400))

    def test_hanning_has_no_zero_endpoints(self):
        w = dsp.hanning(400)
        assert w.min() > 0
        np.testing.assert_allclose(w, w[::-1])

    @pytest.mark.parametrize("length,count", [(1, 1), (400, 1), (401, 2), (16000, 157)])
    def test_count_formula(self, length, count):
        assert dsp.frame(np.ones(length)).num_frames == count

    def test_bad_hop(self):
        with pytest.raises(InvalidArgumentError):
            dsp.frame(np.ones(10), 4, 5)


class TestSTFT:
    def test_zero(self):
        w = dsp.stft(dsp.frame(np.zeros(1000)))
        assert w.data.shape == (514, 7)
        assert not w.data.any()

    def test_impulse(self):
        x = np.zeros(400)
        x[0] = 1.0
        w = dsp.stft(dsp.frame(x, 400, 100, "rectangular"), 512)
        np.testing.assert_allclose(w.real[:, 0], 1.0, atol=1e-12)
        np.testing.assert_allclose(w.imag[:, 0], 0.0, atol=1e-12)

    def test_matches_direct_dft(self):
        x = np.random.default_rng(2).standard_normal(400)
        w = dsp.stft(dsp.frame(x, 400, 100, "rectangular"), 512)
        np.testing.assert_allclose(w.to_complex()[:, 0], naive_dft(x, 512), atol=1e-9)

    def test_dc_and_nyquist_imag_zero(self):
        x = np.random.default_rng(3).standard_normal(3000)
        w = dsp.stft(dsp.frame(x))
        np.testing.assert_allclose(w.imag[0], 0.0, atol=1e-10)
        np.testing.assert_allclose(w.imag[-1], 0.0, atol=1e-10)

    def test_parseval(self):
        x = np.random.default_rng(4).standard_normal(512 * 3)
        w = dsp.stft(dsp.frame(x, 512, 512, "rectangular"), 512)
        weight = np.full(w.num_bins, 2.0)
        weight[[0, -1]] = 1.0
        energy = (weight[:, None] * (w.real**2 + w.imag**2)).sum() / 512
        assert energy == pytest.approx(np.sum(x**2), rel=1e-12)

    def test_dft_smaller_than_frame(self):
        with pytest.raises(InvalidArgumentError):
            dsp.stft(dsp.frame(np.ones(400)), 256)

    def test_bases_invert(self):
        u, v = dsp.analysis_basis(16), dsp.synthesis_basis(16)
        np.testing.assert_allclose(v @ u, np.eye(16), atol=1e-12)

    def test_linearity(self):
        rng = np.random.default_rng(5)
        x, y = rng.standard_normal(2000), rng.standard_normal(2000)
        lhs = dsp.stft(dsp.frame(2.0 * x - 3.0 * y)).data
        rhs = 2.0 * dsp.stft(dsp.frame(x)).data - 3.0 * dsp.stft(dsp.frame(y)).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)


class TestISTFT:
    def test_round_trip_default(self):
        x = np.random.default_rng(6).standard_normal(16000)
        y = dsp.istft(dsp.stft(dsp.frame(x)))
        assert np.linalg.norm(x - y) / np.linalg.norm(x) < 1e-6

    @given(arrays(np.float64, st.integers(1, 1500), elements=finite))
    @settings(max_examples=30, deadline=None)
    def test_round_trip_any_length(self, x):
        y = dsp.istft(dsp.stft(dsp.frame(x)))
        assert y.size == x.size
        np.testing.assert_allclose(y, x, atol=1e-7)

    def test_zero(self):
        w = dsp.Spectrogram(np.zeros((514, 5)), 512)
        assert not dsp.istft(w).any()

    def test_scaling(self):
        x = np.random.default_rng(7).standard_normal(2000)
        w = dsp.stft(dsp.frame(x))
        scaled = dsp.Spectrogram(2.5 * w.data, 512, w.length)
        np.testing.assert_allclose(dsp.istft(scaled), 2.5 * dsp.istft(w), atol=1e-10)

    def test_overlap_add_violation(self):
        # a window with a zero at its edge and no overlap leaves unreachable samples
        with pytest.raises(ConfigurationError):
            dsp.check_overlap_add(np.hanning(64), 64, 64)

    def test_envelope_floor_bounds_edge_gain(self):
        env = dsp.window_envelope(dsp.hanning(400), 100, 10)
        floored = dsp.floored_envelope(env, 0.01)
        assert floored.min() == pytest.approx(0.01 * env.max())
        np.testing.assert_array_equal(dsp.floored_envelope(env, 0.0), env)


class TestReversalIdentity:
    def test_random_signals(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            report = dsp.verify_reversal_identity(rng.standard_normal(8 * 64 + 13), 64, 7)
            assert report.num_frames == 8
            assert report.spectral_deviation < 1e-9
            assert report.autocorr_deviation < 1e-9

    def test_constant_signal_equal_power(self):
        x = np.full(8 * 64, 0.3)
        fwd = dsp.stft(dsp.frame(x, 64, 64, "rectangular"), 64).to_complex()
        rev = dsp.stft(dsp.frame(dsp.reverse(x), 64, 64, "rectangular"), 64).to_complex()
        np.testing.assert_allclose(dsp.frame_autocorrelation(fwd, 0),
                                   dsp.frame_autocorrelation(rev, 0), atol=1e-12)

    def test_lag_zero_is_mean_power(self):
        x = np.random.default_rng(9).standard_normal(8 * 64)
        spec = dsp.stft(dsp.frame(x, 64, 64, "rectangular"), 64).to_complex()
        r0 = dsp.frame_autocorrelation(spec, 0)[0]
        np.testing.assert_allclose(r0.imag, 0.0, atol=1e-12)
        assert (r0.real >= 0).all()
        np.testing.assert_allclose(r0.real, np.mean(np.abs(spec) ** 2, axis=1))

    def test_too_few_frames(self):
        with pytest.raises(InvalidArgumentError):
            dsp.verify_reversal_identity(np.ones(4 * 64), 64, 4)
