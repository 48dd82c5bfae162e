"""Observation preprocessing: grayscale, [0, 1] scaling, flattening."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def to_grayscale(obs, weights=LUMA_WEIGHTS) -> np.ndarray:
    """Weighted channel sum of an ``(..., H, W, 3)`` RGB array, divided by 255.

    Returns a float array of shape ``(..., H * W)`` with entries in [0, 1]
    when the weights are non-negative and sum to one.
    """
    obs = np.asarray(obs)
    if obs.shape[-1] != 3 or obs.ndim < 3:
        raise ValueError(f"expected (..., H, W, 3) RGB input, got shape {obs.shape}")
    w = np.asarray(weights, dtype=np.float64)
    gray = obs.astype(np.float64) @ w / 255.0
    return gray.reshape(*gray.shape[:-2], -1)


def scale_rgb(obs) -> np.ndarray:
    """Raw RGB in [0, 255] to flat float vectors in [0, 1]; no channel mixing."""
    obs = np.asarray(obs)
    if obs.shape[-1] != 3 or obs.ndim < 3:
        raise ValueError(f"expected (..., H, W, 3) RGB input, got shape {obs.shape}")
    return (obs.astype(np.float64) / 255.0).reshape(*obs.shape[:-3], -1)


def flatten_batch(batch, dim: int | None = None) -> np.ndarray:
    """Stack a sequence of same-length vectors into a ``(B, D)`` matrix.

    An empty batch yields a ``(0, dim)`` matrix (``dim`` defaults to 0).
    """
    rows = [np.asarray(o, dtype=np.float64).ravel() for o in batch]
    if not rows:
        return np.zeros((0, dim or 0))
    d = rows[0].size
    if any(r.size != d for r in rows) or (dim is not None and d != dim):
        raise ValueError("observations in a batch must share one length")
    return np.stack(rows)


def unflatten_batch(matrix, shape) -> list[np.ndarray]:
    return [row.reshape(shape) for row in np.asarray(matrix)]


class GrayscaleTransformer(TransformerMixin, BaseEstimator):
    """Stateless transformer mapping RGB frames ``(B, H, W, 3)`` to ``(B, H*W)`` gray vectors."""

    def __init__(self, weights=LUMA_WEIGHTS):
        self.weights = weights

    def fit(self, X, y=None):
        X = np.asarray(X)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def transform(self, X):
        return to_grayscale(X, self.weights)

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.requires_fit = False
        return tags
