"""Scikit-learn style wrapper around the training loop."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import config as config_mod
from . import envs, nn
from .harness import evaluate, run_experiment
from .preprocessing import scale_rgb


class SurprisePPO(BaseEstimator):
    """PPO agent with an optional surprise-minimizing reward.

    ``fit`` trains on the procedurally generated game named by ``game_id``
    (the ``X``/``y`` arguments are accepted for API compatibility and
    ignored). ``predict``/``predict_proba`` take RGB frames ``(B, 16, 16, 3)``.
    Fields of ``ExperimentConfig`` not exposed here can be passed through
    ``config_overrides``.
    """

    def __init__(self, game_id="coin_seek", sm_mode="off", alpha=0.0, total_env_steps=200_000,
                 minibatch_size=512, train_level_count=200, learning_rate=5e-4, seed=0, config_overrides=None):
        self.game_id = game_id
        self.sm_mode = sm_mode
        self.alpha = alpha
        self.total_env_steps = total_env_steps
        self.minibatch_size = minibatch_size
        self.train_level_count = train_level_count
        self.learning_rate = learning_rate
        self.seed = seed
        self.config_overrides = config_overrides

    @classmethod
    def from_preset(cls, name: str, **params) -> "SurprisePPO":
        if name not in config_mod.PRESETS:
            raise ValueError(f"unknown preset {name!r}")
        return cls(**{**config_mod.PRESETS[name], **params})

    def experiment_config(self) -> config_mod.ExperimentConfig:
        params = {k: v for k, v in self.get_params().items() if k != "config_overrides"}
        return config_mod.apply(config_mod.ExperimentConfig(), {**params, **(self.config_overrides or {})}).validate()

    def fit(self, X=None, y=None):
        self.config_ = self.experiment_config()
        result = run_experiment(self.config_)
        self.policy_ = result.ppo.policy
        self.value_ = result.ppo.value
        self.metrics_ = result.log
        self.density_ = result.density
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "policy_")
        return nn.predict(self.policy_, scale_rgb(np.asarray(X)))

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)

    def score(self, X=None, y=None, split="test", episodes=32, random_state=0):
        """Mean task return on fresh test levels (or training levels with ``split="train"``)."""
        check_is_fitted(self, "policy_")
        rng = np.random.default_rng(random_state)
        train, sampler = envs.seed_split(self.config_.train_level_count, meta_seed=random_state)
        seeds = sorted(train) if split == "train" else sampler.draw(episodes)
        return evaluate(self.policy_, self.game_id, seeds, episodes, rng)
