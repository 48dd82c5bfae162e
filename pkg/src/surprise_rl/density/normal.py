"""Independent per-pixel Gaussian over a FIFO buffer of recent observations."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from ..exceptions import InsufficientDataError

logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-3
BUFFER_MULTIPLE = 20


class ObsBuffer:
    """Fixed-capacity FIFO of flat observations backed by a ring array."""

    def __init__(self, capacity: int, dim: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.dim = int(dim)
        self._data = np.zeros((self.capacity, self.dim))
        self._start = 0
        self._len = 0

    def __len__(self) -> int:
        return self._len

    def push(self, batch) -> "ObsBuffer":
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim != 2 or batch.shape[1] != self.dim:
            raise ValueError(f"expected a (B, {self.dim}) batch, got shape {batch.shape}")
        if len(batch) == 0:
            return self
        batch = batch[-self.capacity :]
        n = len(batch)
        end = (self._start + self._len) % self.capacity
        idx = (end + np.arange(n)) % self.capacity
        self._data[idx] = batch
        overflow = max(self._len + n - self.capacity, 0)
        self._start = (self._start + overflow) % self.capacity
        self._len = min(self._len + n, self.capacity)
        return self

    def contents(self) -> np.ndarray:
        """Stored rows, oldest first."""
        idx = (self._start + np.arange(self._len)) % self.capacity
        return self._data[idx]


@dataclass(frozen=True)
class NormalDensityParams:
    mu: np.ndarray
    sigma: np.ndarray


def buffer_push(buffer: ObsBuffer, batch) -> ObsBuffer:
    return buffer.push(batch)


def fit_params(buffer: ObsBuffer | np.ndarray, sigma_floor: float = SIGMA_FLOOR) -> NormalDensityParams:
    """Per-dimension mean and population (1/N) standard deviation, floored."""
    data = buffer.contents() if isinstance(buffer, ObsBuffer) else np.asarray(buffer, dtype=np.float64)
    if len(data) < 2:
        raise InsufficientDataError(f"need at least 2 observations, have {len(data)}")
    mu = data.mean(axis=0)
    std = data.std(axis=0)
    floored = std < sigma_floor
    if floored.any():
        logger.debug("sigma floor applied to %d of %d dimensions", int(floored.sum()), floored.size)
    return NormalDensityParams(mu=mu, sigma=np.maximum(std, sigma_floor))


def sm_reward(params: NormalDensityParams, s) -> np.ndarray | float:
    """``-sum_i (log sigma_i + (s_i - mu_i)^2 / (2 sigma_i^2))`` for one vector or each row."""
    s = np.asarray(s, dtype=np.float64)
    if s.shape[-1] != params.mu.shape[0]:
        raise ValueError(f"dimension mismatch: {s.shape[-1]} vs {params.mu.shape[0]}")
    z = (s - params.mu) / params.sigma
    out = -(np.log(params.sigma).sum() + 0.5 * np.sum(z * z, axis=-1))
    return float(out) if s.ndim == 1 else out


class NormalSurpriseModel(BaseEstimator):
    """Streaming surprise model: push batches with ``partial_fit``, score with ``score_samples``.

    The buffer holds ``buffer_multiple * minibatch_size`` observations.
    """

    def __init__(self, minibatch_size=512, buffer_multiple=BUFFER_MULTIPLE, sigma_floor=SIGMA_FLOOR):
        self.minibatch_size = minibatch_size
        self.buffer_multiple = buffer_multiple
        self.sigma_floor = sigma_floor

    def partial_fit(self, X, y=None):
        X = check_array(X, dtype=np.float64, ensure_min_samples=0)
        if not hasattr(self, "buffer_"):
            self.buffer_ = ObsBuffer(self.buffer_multiple * self.minibatch_size, X.shape[1])
            self.n_features_in_ = X.shape[1]
        self.buffer_.push(X)
        if len(self.buffer_) >= 2:
            self.params_ = fit_params(self.buffer_, self.sigma_floor)
        return self

    def fit(self, X, y=None):
        for attr in ("buffer_", "params_"):
            self.__dict__.pop(attr, None)
        return self.partial_fit(X)

    def score_samples(self, X):
        check_is_fitted(self, "params_")
        return sm_reward(self.params_, check_array(X, dtype=np.float64))
