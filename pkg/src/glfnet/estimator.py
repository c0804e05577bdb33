"""scikit-learn style wrapper around the segmentation network."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils import check_array

from .data import SampleRecord
from .errors import ShapeError, DataError
from .network import ModelConfig, build_model, predict_logits
from .nn import softmax_channels
from .autodiff import Tensor
from .training import TrainConfig, evaluate, fit, model_predictor


def check_images(X, in_channels=None):
    """Validate an image batch; ``[N, H, W]`` gains a channel axis.

    Returns a float64 ``[N, C, H, W]`` array.
    """
    X = check_array(X, allow_nd=True, dtype=np.float64, ensure_2d=False)
    if X.ndim == 3:
        X = X[:, None]
    if X.ndim != 4:
        raise ShapeError(f"images must be [N, H, W] or [N, C, H, W], got shape {X.shape}")
    if in_channels is not None and X.shape[1] != in_channels:
        raise ShapeError(f"expected {in_channels} channels, got {X.shape[1]}")
    return X


def check_masks(y, X=None, num_classes=None):
    """Validate integer label maps ``[N, H, W]`` against an image batch."""
    y = check_array(y, allow_nd=True, dtype=None, ensure_2d=False)
    if y.ndim != 3:
        raise ShapeError(f"masks must be [N, H, W], got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise DataError("masks must hold integer class labels")
    y = y.astype(np.int64)
    if X is not None and (y.shape[0], *y.shape[1:]) != (X.shape[0], *X.shape[2:]):
        raise ShapeError(f"masks {y.shape} do not match images {X.shape}")
    if num_classes is not None and (y.min() < 0 or y.max() >= num_classes):
        raise DataError(f"labels must lie in [0, {num_classes})")
    return y


class GLFNetSegmenter(BaseEstimator):
    """Dense K-class segmenter with ``fit`` / ``predict`` / ``score``.

    Input size and channel count are taken from the training images.
    ``score`` is the mean foreground Dice.
    """

    def __init__(
        self,
        num_classes=4,
        stage_widths=(8, 16, 32, 64, 128),
        patch_size=4,
        wiring="gfb+lfb",
        deep_supervision_weights=(0.5, 0.25, 0.125),
        multiscale_enabled=True,
        epochs=50,
        batch_size=4,
        learning_rate=1e-3,
        random_state=0,
    ):
        self.num_classes = num_classes
        self.stage_widths = stage_widths
        self.patch_size = patch_size
        self.wiring = wiring
        self.deep_supervision_weights = deep_supervision_weights
        self.multiscale_enabled = multiscale_enabled
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state

    def _configs(self, X):
        cfg = ModelConfig(
            in_channels=X.shape[1],
            num_classes=self.num_classes,
            input_size=X.shape[2:],
            stage_widths=tuple(self.stage_widths),
            patch_size=self.patch_size,
            wiring=self.wiring,
            deep_supervision_weights=tuple(self.deep_supervision_weights),
            multiscale_enabled=self.multiscale_enabled,
        )
        tc = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            seed=self.random_state,
        )
        return cfg, tc

    def fit(self, X, y):
        X = check_images(X)
        y = check_masks(y, X, self.num_classes)
        cfg, tc = self._configs(X)
        params = build_model(cfg, seed=self.random_state)
        samples = [SampleRecord(img, m) for img, m in zip(X, y)]
        self.params_, self.history_ = fit(params, cfg, samples, tc)
        self.config_ = cfg
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("GLFNetSegmenter is not fitted yet; call fit first")

    def decision_function(self, X):
        """Raw logits ``[N, K, H, W]``."""
        self._check_fitted()
        X = check_images(X, self.config_.in_channels)
        if X.shape[2:] != tuple(self.config_.input_size):
            raise ShapeError(f"model expects {self.config_.input_size} inputs, got {X.shape[2:]}")
        return predict_logits(self.params_, self.config_, X)

    def predict_proba(self, X):
        return softmax_channels(Tensor(self.decision_function(X))).data

    def predict(self, X):
        return self.decision_function(X).argmax(axis=1)

    def score(self, X, y):
        self._check_fitted()
        X = check_images(X, self.config_.in_channels)
        y = check_masks(y, X, self.num_classes)
        samples = [SampleRecord(img, m) for img, m in zip(X, y)]
        return evaluate(model_predictor(self.params_, self.config_), samples, self.num_classes).mean_dice
