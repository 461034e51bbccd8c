import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from tenet.data import multitone, white_noise
from tenet.errors import InvalidArgumentError
from tenet.estimator import TENETEnhancer

TINY = dict(feature_dim=16, chunk_len=8, num_blocks=1, num_heads=2, ff_hidden=16,
            conv_filters=4, epochs=2, batch_size=2, crop_len_s=0.25)


def toy_data(count=4, seconds=0.4, seed=0, lengths=None):
    rng = np.random.default_rng(seed)
    X, y = [], []
    for i in range(count):
        n = lengths[i] if lengths else int(seconds * 16000)
        clean = 0.5 * multitone(rng, n)
        X.append(clean + 0.2 * white_noise(rng, n))
        y.append(clean)
    return X, y


@pytest.fixture(scope="module")
def fitted():
    X, y = toy_data()
    return TENETEnhancer(**TINY, validation_fraction=0.25).fit(X, y), X, y


class TestParams:
    def test_get_set_params(self):
        est = TENETEnhancer(epochs=3)
        params = est.get_params()
        assert params["epochs"] == 3 and params["gamma"] == 0.5
        assert est.set_params(alpha=0.0).alpha == 0.0

    def test_clone_is_unfitted(self, fitted):
        est, _, _ = fitted
        twin = clone(est)
        assert twin.get_params() == est.get_params()
        assert not hasattr(twin, "model_")

    def test_config_reflects_params(self):
        cfg = TENETEnhancer(time_reversal=False, seed=4, lr=2e-3).make_config()
        assert cfg.effective_loss().gamma == 0.0
        assert cfg.train.seed == cfg.augment.seed == 4
        assert cfg.optim.lr == 2e-3

    @pytest.mark.parametrize("kw", [{"epochs": 0}, {"batch_size": 1.5}, {"threads": -1}])
    def test_invalid(self, kw):
        with pytest.raises(InvalidArgumentError):
            TENETEnhancer(**kw).make_config()


class TestFitted:
    def test_attributes(self, fitted):
        est, _, _ = fitted
        assert est.n_epochs_ == 2 == len(est.runlog_)
        assert np.isfinite(est.best_val_sisdr_)

    def test_transform_keeps_lengths(self, fitted):
        est, _, _ = fitted
        X, _ = toy_data(2, lengths=[3000, 5123], seed=1)
        out = est.predict(X)
        assert [o.size for o in out] == [3000, 5123]
        assert all(np.isfinite(o).all() for o in out)

    def test_score_is_mean_sisdr(self, fitted):
        from tenet.objectives import si_sdr
        est, X, y = fitted
        expected = np.mean([si_sdr(c, e) for c, e in zip(y, est.transform(X))])
        assert est.score(X, y) == pytest.approx(expected)

    def test_deterministic_fit(self, fitted):
        est, X, y = fitted
        again = clone(est).fit(X, y)
        for a, b in zip(est.transform(X[:1]), again.transform(X[:1])):
            np.testing.assert_array_equal(a, b)

    def test_fit_transform_needs_targets(self, fitted):
        est, X, _ = fitted
        with pytest.raises(ValueError):
            clone(est).fit_transform(X)


class TestInputs:
    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            TENETEnhancer().transform([np.zeros(1000)])

    def test_mismatched_pairs(self):
        with pytest.raises(InvalidArgumentError):
            TENETEnhancer(**TINY).fit([np.zeros(1000)], [np.zeros(999)])

    def test_too_short(self):
        with pytest.raises(InvalidArgumentError):
            TENETEnhancer(**TINY).fit([np.zeros(100)], [np.zeros(100)])

    def test_bare_signal(self, fitted):
        with pytest.raises(InvalidArgumentError):
            fitted[0].transform(np.zeros(1000))
