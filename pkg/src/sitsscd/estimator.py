"""scikit-learn style wrapper around the network, trainer and scorer."""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .inference import SplitScheme, evaluate_samples, infer, predict_change
from .metrics import argmax_labels
from .model import ModelConfig, TemporalAttentionUNet
from .training import TrainConfig, train
from .validation import as_samples, check_days, check_images


class SitsChangeDetector(BaseEstimator):
    """Per-date semantic segmentation of image time series, scored by SCS.

    ``fit`` accepts a list of :class:`~sitsscd.data.SitsSample` or arrays
    ``X (N, T, C, H, W)`` with labels ``y (N, T, H, W)``.

    Example:
        >>> est = SitsChangeDetector(n_classes=4, max_iters=50, crop=32)  # doctest: +SKIP
        >>> est.fit(train_samples, validation=val_samples).score(test_samples)  # doctest: +SKIP
    """

    def __init__(self, n_classes: int = 4, variant: str = "ours", levels: int = 3,
                 feature_size: int = 32, key_dim: int = 4, heads: int = 4,
                 channels_per_level: Optional[tuple] = (16, 16, 32), t_max: int = 24,
                 max_iters: int = 300, warmup_iters: int = 20, peak_lr: float = 2e-3,
                 weight_decay: float = 0.01, focal_gamma: float = 2.0, batch_size: int = 2,
                 crop: Optional[int] = 32, months_per_sample: Optional[int] = None,
                 val_every: int = 100, random_state: int = 0):
        self.n_classes = n_classes
        self.variant = variant
        self.levels = levels
        self.feature_size = feature_size
        self.key_dim = key_dim
        self.heads = heads
        self.channels_per_level = channels_per_level
        self.t_max = t_max
        self.max_iters = max_iters
        self.warmup_iters = warmup_iters
        self.peak_lr = peak_lr
        self.weight_decay = weight_decay
        self.focal_gamma = focal_gamma
        self.batch_size = batch_size
        self.crop = crop
        self.months_per_sample = months_per_sample
        self.val_every = val_every
        self.random_state = random_state

    def _model_config(self, in_channels: int) -> ModelConfig:
        return ModelConfig(
            n_classes=self.n_classes, in_channels=in_channels, levels=self.levels,
            feature_size=self.feature_size, key_dim=self.key_dim, heads=self.heads,
            t_max=self.t_max, variant=self.variant,
            channels_per_level=None if self.channels_per_level is None else list(self.channels_per_level),
            seed=self.random_state,
        )

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            max_iters=self.max_iters, warmup_iters=min(self.warmup_iters, self.max_iters), peak_lr=self.peak_lr,
            weight_decay=self.weight_decay, focal_gamma=self.focal_gamma, batch_size=self.batch_size,
            seed=self.random_state, months_per_sample=self.months_per_sample,
            val_every=self.val_every, crop=self.crop,
        )

    def fit(self, X, y=None, days=None, ignore=None, validation=None):
        samples = as_samples(X, y, days, ignore)
        val = as_samples(validation) if validation is not None else []
        self.n_features_in_ = samples[0].images.shape[1]
        self.config_ = self._model_config(self.n_features_in_)
        self.model_ = TemporalAttentionUNet(self.config_)
        self.train_result_ = train(self.model_, samples, val, self._train_config())
        self.model_.params = self.train_result_.params
        return self

    def predict_logits(self, X, days=None, scheme: Optional[SplitScheme] = None) -> np.ndarray:
        """Logits ``(T, K, H, W)`` for one series, or ``(N, T, K, H, W)`` for a batch."""
        check_is_fitted(self, "model_")
        if hasattr(X, "images"):
            return infer(self.model_, X, scheme)
        images = check_images(X)
        if images.ndim == 4:
            return infer(self.model_, images, scheme, days=check_days(days, images.shape[0]))
        d = check_days(days, images.shape[1], images.shape[0])
        return np.stack([infer(self.model_, im, scheme, days=dd) for im, dd in zip(images, d)])

    def predict(self, X, days=None, scheme: Optional[SplitScheme] = None) -> np.ndarray:
        """Class index per pixel and date."""
        logits = self.predict_logits(X, days, scheme)
        return argmax_labels(logits, axis=-3)

    def predict_change(self, X, days=None, scheme: Optional[SplitScheme] = None) -> np.ndarray:
        """Boolean change maps between consecutive dates, ``(T-1, H, W)``."""
        return predict_change(self.predict_logits(X, days, scheme)).change

    def evaluate(self, X, y=None, days=None, ignore=None, scheme: Optional[SplitScheme] = None):
        check_is_fitted(self, "model_")
        return evaluate_samples(self.model_, as_samples(X, y, days, ignore), scheme)

    def score(self, X, y=None, days=None, ignore=None) -> float:
        """Semantic change segmentation score (SCS) in [0, 1]."""
        return self.evaluate(X, y, days, ignore).scs
