"""Online VAE whose batch latent codes define a diagonal Gaussian surprise model."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .. import nn
from ..exceptions import InsufficientDataError, NonFiniteError
from .normal import SIGMA_FLOOR

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class VaeParams:
    encoder: nn.MlpParams
    decoder: nn.MlpParams
    latent_dim: int

    def __post_init__(self):
        if self.encoder.sizes[-1] != 2 * self.latent_dim:
            raise ValueError("encoder must output 2 * latent_dim values (mean, log_var)")
        if self.decoder.sizes[0] != self.latent_dim:
            raise ValueError("decoder input size must equal latent_dim")

    @property
    def nets(self) -> tuple[nn.MlpParams, nn.MlpParams]:
        return (self.encoder, self.decoder)


def init_vae(input_dim: int, latent_dim: int = 8, hidden: int = 64, rng=None) -> VaeParams:
    rng = np.random.default_rng(rng)
    enc = nn.init_mlp([input_dim, hidden, hidden, 2 * latent_dim], ["tanh", "tanh", "identity"], rng)
    dec = nn.init_mlp([latent_dim, hidden, hidden, input_dim], ["tanh", "tanh", "identity"], rng)
    return VaeParams(enc, dec, latent_dim)


def kl_to_standard_normal(mean: np.ndarray, log_var: np.ndarray) -> np.ndarray:
    """Per-row ``KL(N(mean, exp(log_var)) || N(0, I))``."""
    return -0.5 * np.sum(1.0 + log_var - mean**2 - np.exp(log_var), axis=-1)


def vae_loss_and_grads(params: VaeParams, batch, noise, beta: float = 1.0):
    """Negative ELBO averaged over the batch and its gradient.

    Reconstruction is the squared error summed over input dimensions. Returns
    ``(loss, grads, parts)`` with ``grads`` flat in ``(encoder, decoder)``
    tensor order and ``parts = {"recon": ..., "kl": ...}``.
    """
    x = np.asarray(batch, dtype=np.float64)
    eps = np.asarray(noise, dtype=np.float64)
    L, B = params.latent_dim, len(x)
    if eps.shape != (B, L):
        raise ValueError(f"noise must have shape {(B, L)}, got {eps.shape}")

    enc_out, enc_tape = nn.forward(params.encoder, x)
    mean, log_var = enc_out[:, :L], enc_out[:, L:]
    std = np.exp(0.5 * log_var)
    z = mean + std * eps
    recon_x, dec_tape = nn.forward(params.decoder, z)

    diff = recon_x - x
    recon = float(np.sum(diff * diff) / B)
    kl = float(np.mean(kl_to_standard_normal(mean, log_var)))
    loss = recon + beta * kl
    if not np.isfinite(loss):
        raise NonFiniteError("non-finite VAE loss")

    dec_grads, dz = nn.backward(params.decoder, dec_tape, 2.0 * diff / B)
    d_mean = dz + beta * mean / B
    d_log_var = dz * eps * 0.5 * std + beta * 0.5 * (np.exp(log_var) - 1.0) / B
    enc_grads, _ = nn.backward(params.encoder, enc_tape, np.concatenate([d_mean, d_log_var], axis=1))
    return loss, enc_grads + dec_grads, {"recon": recon, "kl": kl}


def encode_mean(params: VaeParams, batch) -> np.ndarray:
    """Posterior means ``E[q(z | s)]``, one row per observation."""
    out = nn.predict(params.encoder, batch)
    return out[:, : params.latent_dim]


@dataclass(frozen=True)
class LatentBatchStats:
    mu: np.ndarray
    sigma_sq: np.ndarray
    batch_size: int


def batch_latent_stats(latents, sigma_floor: float = SIGMA_FLOOR, denominator: str = "b_plus_1",
                       sigma_is_variance: bool = True) -> LatentBatchStats:
    """Diagonal Gaussian over a batch of latent codes.

    With the default ``denominator="b_plus_1"`` both the mean and the squared
    deviation sums are divided by ``B + 1``, which behaves like an extra zero
    pseudo-observation; ``"b"`` divides by ``B``. When ``sigma_is_variance`` is
    False the deviation average is read as a standard deviation and squared.
    """
    z = np.asarray(latents, dtype=np.float64)
    if z.ndim != 2 or len(z) == 0:
        raise InsufficientDataError("batch_latent_stats needs at least one latent row")
    B = len(z)
    if denominator not in ("b_plus_1", "b"):
        raise ValueError(f"unknown denominator {denominator!r}")
    d = B + 1 if denominator == "b_plus_1" else B
    mu = z.sum(axis=0) / d
    spread = ((mu - z) ** 2).sum(axis=0) / d
    var = spread if sigma_is_variance else spread**2
    return LatentBatchStats(mu=mu, sigma_sq=np.maximum(var, sigma_floor**2), batch_size=B)


def vae_sm_reward(stats: LatentBatchStats, z) -> np.ndarray | float:
    """Full diagonal-Gaussian log density of ``z`` (one vector or each row)."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != stats.mu.shape[0]:
        raise ValueError(f"dimension mismatch: {z.shape[-1]} vs {stats.mu.shape[0]}")
    out = -0.5 * (np.sum(np.log(stats.sigma_sq)) + stats.mu.size * LOG_2PI
                  + np.sum((z - stats.mu) ** 2 / stats.sigma_sq, axis=-1))
    return float(out) if z.ndim == 1 else out


class VAESurpriseModel(BaseEstimator):
    """Online VAE surprise model.

    ``partial_fit`` takes one Adam step on the given batch, ``transform``
    returns posterior means, and ``score_samples`` fits the batch latent
    Gaussian to the rows it is given and returns their log densities.
    """

    def __init__(self, latent_dim=8, hidden=64, learning_rate=3e-4, beta=1.0, sigma_floor=SIGMA_FLOOR,
                 denominator="b_plus_1", sigma_is_variance=True, random_state=0):
        self.latent_dim = latent_dim
        self.hidden = hidden
        self.learning_rate = learning_rate
        self.beta = beta
        self.sigma_floor = sigma_floor
        self.denominator = denominator
        self.sigma_is_variance = sigma_is_variance
        self.random_state = random_state

    def _init(self, n_features: int) -> None:
        init_ss, noise_ss = np.random.SeedSequence(self.random_state).spawn(2)
        self.params_ = init_vae(n_features, self.latent_dim, self.hidden, np.random.default_rng(init_ss))
        self.opt_ = nn.adam_init(self.params_.nets, lr=self.learning_rate)
        self.noise_rng_ = np.random.default_rng(noise_ss)
        self.n_features_in_ = n_features
        self.loss_curve_: list[float] = []

    def partial_fit(self, X, y=None, noise=None):
        X = check_array(X, dtype=np.float64)
        if not hasattr(self, "params_"):
            self._init(X.shape[1])
        if noise is None:
            noise = self.noise_rng_.standard_normal((len(X), self.latent_dim))
        loss, grads, _ = vae_loss_and_grads(self.params_, X, noise, self.beta)
        nets, self.opt_ = nn.adam_step(self.opt_, self.params_.nets, grads)
        self.params_ = VaeParams(nets[0], nets[1], self.latent_dim)
        self.loss_ = loss
        self.loss_curve_.append(loss)
        return self

    def fit(self, X, y=None, n_steps=1):
        self.__dict__.pop("params_", None)
        for _ in range(n_steps):
            self.partial_fit(X)
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        return encode_mean(self.params_, check_array(X, dtype=np.float64))

    def score_samples(self, X):
        z = self.transform(X)
        self.stats_ = batch_latent_stats(z, self.sigma_floor, self.denominator, self.sigma_is_variance)
        return vae_sm_reward(self.stats_, z)
