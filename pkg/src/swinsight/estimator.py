"""scikit-learn style wrappers around the model, the preprocessing and t-SNE."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import datapipe
from .errors import ShapeError
from .swin import PRESETS, SwinModel, preset
from .training import TrainConfig, array_batches, fit
from .tsne import run_tsne


def _check_images(X, image_size: int | None = None, dtype=np.float64) -> np.ndarray:
    X = check_array(X, allow_nd=True, dtype=dtype, ensure_min_samples=1)
    if X.ndim != 4 or X.shape[1] != 3:
        raise ShapeError(f"expected images shaped (n, 3, H, W), got {X.shape}")
    if image_size is not None and X.shape[2:] != (image_size, image_size):
        raise ShapeError(f"expected {image_size}x{image_size} images, got {X.shape[2]}x{X.shape[3]}")
    return X


class ImagePreprocessor(TransformerMixin, BaseEstimator):
    """Resize (bilinear) and normalise raw ``(n, 3, H, W)`` images in [0, 1]."""

    def __init__(self, size: int = 32, normalize: bool = True):
        self.size = size
        self.normalize = normalize

    def fit(self, X, y=None):
        _check_images(X)
        self.n_features_in_ = 3
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = _check_images(X)
        out = np.empty((X.shape[0], 3, self.size, self.size))
        for i, img in enumerate(X):
            img = datapipe.resize_bilinear(img, self.size)
            out[i] = datapipe.normalize(img) if self.normalize else img
        return out


class SwinClassifier(ClassifierMixin, BaseEstimator):
    """Binary Swin classifier.  ``X`` is ``(n, 3, H, W)`` preprocessed images.

    Labels are sorted; the larger one plays the CGI (positive) role.
    ``transform`` returns the pooled pre-head features.
    """

    def __init__(
        self,
        preset: str = "swin-micro",
        learning_rate: float = 1e-4,
        batch_size: int = 32,
        epochs: int = 10,
        seed: int = 0,
        dtype: str = "float32",
        model_overrides: dict | None = None,
    ):
        self.preset = preset
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.dtype = dtype
        self.model_overrides = model_overrides

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.seed,
            dtype=self.dtype,
        )

    def fit(self, X, y, X_val=None, y_val=None):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}")
        config = preset(self.preset, **(self.model_overrides or {}))
        cfg = self._train_config()
        X = _check_images(X, config.image_size, cfg.dtype)
        y = np.asarray(y).reshape(-1)
        if len(y) != len(X):
            raise ValueError(f"X has {len(X)} samples but y has {len(y)}")
        classes = np.unique(y)
        if len(classes) != 2:
            raise ValueError(f"need exactly two classes, got {classes.tolist()}")
        self.classes_ = classes
        yi = np.searchsorted(classes, y)
        val = None
        if X_val is not None:
            val = (_check_images(X_val, config.image_size, cfg.dtype), np.searchsorted(classes, np.asarray(y_val)))
        self.model_ = SwinModel.initialize(config, self.seed, cfg.dtype)
        self.trace_, self.adam_ = fit(self.model_, X, yi, *(val or (None, None)), cfg)
        self.n_features_in_ = 3
        return self

    def _batched(self, X, fn):
        check_is_fitted(self, "model_")
        X = _check_images(X, self.model_.config.image_size, self.model_.dtype)
        dummy = np.zeros(len(X), dtype=np.int64)
        return np.concatenate([fn(xb) for xb, _ in array_batches(X, dummy, self.batch_size)])

    def decision_function(self, X) -> np.ndarray:
        """Logit margin of the positive class."""
        logits = self._batched(X, self.model_.predict_logits).astype(np.float64)
        return logits[:, 1] - logits[:, 0]

    def predict_proba(self, X) -> np.ndarray:
        logits = self._batched(X, self.model_.predict_logits).astype(np.float64)
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        # same >= 0.5 rule as the metrics
        return self.classes_[(self.predict_proba(X)[:, 1] >= 0.5).astype(int)]

    def transform(self, X) -> np.ndarray:
        return self._batched(X, self.model_.extract_features).astype(np.float64)


class TSNE(BaseEstimator):
    """Exact t-SNE with the usual optimiser schedule."""

    def __init__(self, perplexity: float = 30.0, n_iter: int = 1000, learning_rate: float = 200.0, random_state: int = 0):
        self.perplexity = perplexity
        self.n_iter = n_iter
        self.learning_rate = learning_rate
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64, ensure_min_samples=4)
        emb = run_tsne(X, self.perplexity, self.n_iter, self.learning_rate, seed=self.random_state)
        self.embedding_ = emb.Y
        self.cost_trace_ = np.asarray(emb.cost_trace)
        self.kl_divergence_ = float(emb.cost_trace[-1])
        self.n_iter_ = emb.iterations
        self.n_features_in_ = X.shape[1]
        return self

    def fit_transform(self, X, y=None) -> np.ndarray:
        return self.fit(X).embedding_
