from .normal import NormalDensityParams, NormalSurpriseModel, ObsBuffer, buffer_push, fit_params, sm_reward
from .vae import (
    LatentBatchStats,
    VaeParams,
    VAESurpriseModel,
    batch_latent_stats,
    encode_mean,
    init_vae,
    vae_loss_and_grads,
    vae_sm_reward,
)

__all__ = [
    "LatentBatchStats",
    "NormalDensityParams",
    "NormalSurpriseModel",
    "ObsBuffer",
    "VAESurpriseModel",
    "VaeParams",
    "batch_latent_stats",
    "buffer_push",
    "encode_mean",
    "fit_params",
    "init_vae",
    "sm_reward",
    "vae_loss_and_grads",
    "vae_sm_reward",
]
