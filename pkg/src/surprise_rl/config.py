"""Experiment configuration, presets, and the sectioned key=value file format."""
from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, fields

from .envs import GAMES
from .exceptions import ConfigError
from .ppo import SM_MODES, PpoConfig


@dataclass
class ExperimentConfig:
    # env
    game_id: str = "coin_seek"
    train_level_count: int = 200
    num_envs: int = 16
    # density
    sm_mode: str = "off"
    alpha: float = 0.0
    sm_normalize: bool = False
    buffer_multiple: int = 20
    sigma_floor: float = 1e-3
    latent_dim: int = 8
    vae_hidden: int = 64
    vae_learning_rate: float = 3e-4
    vae_beta: float = 1.0
    vae_denominator: str = "b_plus_1"
    vae_sigma_is_variance: bool = True
    # ppo
    gamma: float = 0.999
    gae_lambda: float = 0.95
    clip: float = 0.2
    ent_coef: float = 0.01
    vf_coef: float = 0.5
    epochs: int = 3
    n_minibatches: int = 8
    learning_rate: float = 5e-4
    max_grad_norm: float = 0.5
    hidden: int = 64
    # harness
    total_env_steps: int = 200_000
    minibatch_size: int = 512
    eval_every: int = 10
    eval_episodes: int = 32
    seed: int = 0
    record_wall_clock: bool = False

    def ppo_config(self) -> PpoConfig:
        return PpoConfig(
            clip=self.clip, gamma=self.gamma, gae_lambda=self.gae_lambda, ent_coef=self.ent_coef,
            vf_coef=self.vf_coef, epochs=self.epochs, n_minibatches=self.n_minibatches,
            learning_rate=self.learning_rate, max_grad_norm=self.max_grad_norm,
            alpha=self.alpha, sm_mode=self.sm_mode,
        )

    @property
    def n_updates(self) -> int:
        return self.total_env_steps // self.minibatch_size

    def validate(self) -> "ExperimentConfig":
        problems = []
        if self.game_id not in GAMES:
            problems.append(f"game_id: must be one of {GAMES}, got {self.game_id!r}")
        if self.sm_mode not in SM_MODES:
            problems.append(f"sm_mode: must be one of {SM_MODES}, got {self.sm_mode!r}")
        if self.total_env_steps < self.minibatch_size:
            problems.append("total_env_steps: must be >= minibatch_size")
        if self.num_envs < 1 or self.minibatch_size % self.num_envs:
            problems.append("num_envs: must be positive and divide minibatch_size")
        if self.eval_episodes < 1:
            problems.append("eval_episodes: must be >= 1")
        if self.eval_every < 1:
            problems.append("eval_every: must be >= 1")
        if self.train_level_count < 1:
            problems.append("train_level_count: must be >= 1")
        if not 0.0 < self.clip < 1.0:
            problems.append("clip: must lie in (0, 1)")
        for name in ("gamma", "gae_lambda"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                problems.append(f"{name}: must lie in [0, 1]")
        if self.minibatch_size < self.n_minibatches:
            problems.append("n_minibatches: must not exceed minibatch_size")
        if self.vae_denominator not in ("b_plus_1", "b"):
            problems.append("vae_denominator: must be 'b_plus_1' or 'b'")
        if self.sigma_floor <= 0:
            problems.append("sigma_floor: must be positive")
        if problems:
            raise ConfigError("; ".join(problems))
        return self


SECTIONS = {
    "env": ("game_id", "train_level_count", "num_envs"),
    "density": ("sm_mode", "alpha", "sm_normalize", "buffer_multiple", "sigma_floor", "latent_dim",
                "vae_hidden", "vae_learning_rate", "vae_beta", "vae_denominator", "vae_sigma_is_variance"),
    "ppo": ("gamma", "gae_lambda", "clip", "ent_coef", "vf_coef", "epochs", "n_minibatches",
            "learning_rate", "max_grad_norm", "hidden"),
    "harness": ("total_env_steps", "minibatch_size", "eval_every", "eval_episodes", "seed", "record_wall_clock"),
}
_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}
assert sorted(k for ks in SECTIONS.values() for k in ks) == sorted(_FIELD_TYPES)

PRESETS: dict[str, dict] = {
    "coinrun-ppo": {"game_id": "coin_seek", "sm_mode": "off", "alpha": 0.0},
    "bossfight-ppo": {"game_id": "dodge_fight", "sm_mode": "off", "alpha": 0.0},
    "coinrun-normal": {"game_id": "coin_seek", "sm_mode": "normal", "alpha": 1e-4},
    "bossfight-normal": {"game_id": "dodge_fight", "sm_mode": "normal", "alpha": 1e-6},
    "coinrun-vae": {"game_id": "coin_seek", "sm_mode": "vae", "alpha": 1e-3},
    "bossfight-vae": {"game_id": "dodge_fight", "sm_mode": "vae", "alpha": 1e-5},
}


def coerce(key: str, raw):
    """Parse a textual value for config field ``key``."""
    if key not in _FIELD_TYPES:
        raise ConfigError(f"{key}: unknown config key")
    kind = _FIELD_TYPES[key]
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(float(text)) if "e" in text.lower() else int(text)
        if kind == "float":
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind}") from None
    return text


def apply(cfg: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    return dataclasses.replace(cfg, **{k: coerce(k, v) for k, v in overrides.items()})


def parse_override(item: str) -> tuple[str, str]:
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not key=value")
    key, value = item.split("=", 1)
    key = key.strip()
    if "." in key:  # allow section.key
        key = key.split(".", 1)[1]
    coerce(key, value)
    return key, value


def dumps(cfg: ExperimentConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    for section, keys in SECTIONS.items():
        parser[section] = {k: repr(getattr(cfg, k)) if isinstance(getattr(cfg, k), float) else str(getattr(cfg, k))
                           for k in keys}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def loads(text: str) -> dict:
    """Overrides found in a config file (only keys that are present)."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file: {exc}") from None
    out = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"[{section}]: unknown section")
        for key, value in parser[section].items():
            if key not in SECTIONS[section]:
                raise ConfigError(f"{section}.{key}: unknown key for this section")
            out[key] = coerce(key, value)
    return out


def resolve(preset: str | None = None, config_text: str | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Defaults < preset < config file < explicit overrides."""
    cfg = ExperimentConfig()
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"preset: unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        cfg = apply(cfg, PRESETS[preset])
    if config_text is not None:
        cfg = apply(cfg, loads(config_text))
    if overrides:
        cfg = apply(cfg, overrides)
    return cfg.validate()
