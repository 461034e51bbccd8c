"""scikit-learn style wrapper around training and inference.

>>> est = TENETEnhancer(epochs=2, feature_dim=16, chunk_len=8, num_blocks=1,
...                     num_heads=2, ff_hidden=16, conv_filters=4)   # doctest: +SKIP
>>> est.fit(noisy_list, clean_list).transform(noisy_list)            # doctest: +SKIP

``X`` is a list of noisy 16 kHz waveforms and ``y`` the matching clean ones.
Items may have different lengths.  ``transform`` (and its alias ``predict``)
returns a list of enhanced waveforms, each as long as its input; ``score``
is the mean SI-SDR in dB.
"""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .augment import AugmentSpec, TrainingPair
from .model import ModelConfig
from .objectives import LossWeights, si_sdr
from .trainer import AblationSwitches, OptimConfig, RunConfig, TrainConfig, train
from .validation import check_fraction, check_paired, check_positive_int, check_waveforms


class TENETEnhancer(TransformerMixin, BaseEstimator):
    """Train a CDPT mask estimator with forward and time-reversed streams.

    Hyperparameters mirror the sections of the training config file; the
    defaults are the toy-scale values that train on a CPU in minutes.
    ``validation_fraction`` holds out the last part of ``X`` for model
    selection (none by default, in which case the best training loss wins).
    """

    def __init__(self, feature_dim=32, chunk_len=50, num_blocks=2, num_heads=4, ff_hidden=64,
                 conv_filters=8, alpha=1.0, beta=0.5, gamma=0.5, time_reversal=True,
                 speed_perturbation=True, time_shifting=True, sample_masking=True,
                 lr=1e-3, epochs=30, patience=10, batch_size=8, crop_len_s=1.0,
                 validation_fraction=0.0, seed=0, threads=1, out_dir=None):
        self.feature_dim = feature_dim
        self.chunk_len = chunk_len
        self.num_blocks = num_blocks
        self.num_heads = num_heads
        self.ff_hidden = ff_hidden
        self.conv_filters = conv_filters
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.time_reversal = time_reversal
        self.speed_perturbation = speed_perturbation
        self.time_shifting = time_shifting
        self.sample_masking = sample_masking
        self.lr = lr
        self.epochs = epochs
        self.patience = patience
        self.batch_size = batch_size
        self.crop_len_s = crop_len_s
        self.validation_fraction = validation_fraction
        self.seed = seed
        self.threads = threads
        self.out_dir = out_dir

    def make_config(self) -> TrainConfig:
        """The TrainConfig these hyperparameters describe."""
        return TrainConfig(
            model=ModelConfig(feature_dim=self.feature_dim, chunk_len=self.chunk_len,
                              num_blocks=self.num_blocks, num_heads=self.num_heads,
                              ff_hidden=self.ff_hidden, conv_filters=self.conv_filters),
            augment=AugmentSpec(seed=self.seed),
            loss=LossWeights(alpha=self.alpha, beta=self.beta, gamma=self.gamma),
            optim=OptimConfig(lr=self.lr),
            train=RunConfig(batch_size=check_positive_int(self.batch_size, "batch_size"),
                            crop_len_s=self.crop_len_s,
                            epochs=check_positive_int(self.epochs, "epochs"),
                            patience=check_positive_int(self.patience, "patience"),
                            seed=self.seed, threads=check_positive_int(self.threads, "threads")),
            ablation=AblationSwitches(time_reversal=self.time_reversal,
                                      sample_masking=self.sample_masking,
                                      time_shifting=self.time_shifting,
                                      speed_perturbation=self.speed_perturbation))

    def fit(self, X, y):
        cfg = self.make_config()
        noisy, clean = check_paired(X, y, min_length=cfg.model.frame_len)
        pairs = [TrainingPair.from_arrays(a, b) for a, b in zip(noisy, clean)]
        fraction = check_fraction(self.validation_fraction, "validation_fraction")
        n_val = int(round(fraction * len(pairs)))
        if n_val >= len(pairs):
            n_val = len(pairs) - 1
        train_pairs, val_pairs = pairs[: len(pairs) - n_val], pairs[len(pairs) - n_val :]
        result = train(cfg, train_pairs, val_pairs, self.out_dir)
        self.model_ = result.model
        self.runlog_ = result.runlog
        self.config_ = cfg
        self.best_val_sisdr_ = result.best_val_sisdr
        self.n_epochs_ = len(result.runlog)
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("TENETEnhancer is not fitted yet; call fit first")

    def transform(self, X):
        self._check_fitted()
        items = check_waveforms(X, "X")
        dtype = next(self.model_.parameters()).dtype
        out = []
        with torch.no_grad():
            for x in items:
                out.append(self.model_(torch.as_tensor(x, dtype=dtype)).double().numpy())
        return out

    def predict(self, X):
        return self.transform(X)

    def score(self, X, y):
        """Mean SI-SDR (dB) of the enhanced ``X`` against the clean ``y``."""
        noisy, clean = check_paired(X, y)
        return float(np.mean([si_sdr(c, e) for c, e in zip(clean, self.transform(noisy))]))

    def fit_transform(self, X, y=None, **fit_params):
        if y is None:
            raise ValueError("TENETEnhancer.fit needs the clean targets y")
        return self.fit(X, y).transform(X)
