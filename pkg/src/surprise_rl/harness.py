"""Training loop for PPO with an optional surprise-minimizing reward, plus evaluation.

One update: roll out ``minibatch_size`` steps on training levels, feed the
observations to the density model (buffered Gaussian over grayscale frames,
or one online VAE step on RGB frames), score every observation of the batch
with the freshly fitted density, add ``alpha`` times that score to the task
reward, and run PPO on the result. Train and test scores are measured with
the same stochastic-policy evaluation on training seeds and fresh seeds.
"""
from __future__ import annotations

import csv
import dataclasses
import functools
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import envs, nn
from .config import ExperimentConfig, dumps
from .density.normal import NormalSurpriseModel
from .density.vae import VAESurpriseModel
from .exceptions import ExperimentFailure, SurpriseRLError
from .ppo import PpoState, TrajectoryBatch, combine_rewards, gae, init_ppo_state, normalize, ppo_update, sample_actions
from .preprocessing import scale_rgb, to_grayscale

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("update", "steps", "train_score", "test_score", "sm_mean", "sm_std",
               "pi_loss", "v_loss", "entropy", "vae_loss", "wall_ms")
STREAMS = ("env", "init", "vae", "shuffle", "action", "eval")


@functools.lru_cache(maxsize=4096)
def level_for(game_id: str, seed: int) -> envs.LevelSpec:
    return envs.generate_level(game_id, seed)


def derive_streams(master_seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(master_seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(ss) for name, ss in zip(STREAMS, children)}


# --------------------------------------------------------------------------
# metrics


@dataclass
class MetricsRecord:
    update: int
    steps: int
    train_score: float | None = None
    test_score: float | None = None
    sm_mean: float | None = None
    sm_std: float | None = None
    pi_loss: float | None = None
    v_loss: float | None = None
    entropy: float | None = None
    vae_loss: float | None = None
    wall_ms: float | None = None
    test_seeds: tuple[int, ...] = field(default=(), repr=False)


@dataclass
class MetricsLog:
    records: list[MetricsRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: MetricsRecord) -> None:
        self.records.append(record)

    def column(self, name: str) -> np.ndarray:
        return np.array([np.nan if getattr(r, name) is None else getattr(r, name) for r in self.records], dtype=float)

    def evaluated(self) -> list[MetricsRecord]:
        return [r for r in self.records if r.train_score is not None and r.test_score is not None]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for r in self.records:
                writer.writerow([_csv_cell(getattr(r, c)) for c in CSV_COLUMNS])

    @classmethod
    def from_csv(cls, path) -> "MetricsLog":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or tuple(reader.fieldnames) != CSV_COLUMNS:
                raise ValueError(f"{path}: header does not match {','.join(CSV_COLUMNS)}")
            log = cls()
            for row in reader:
                values = {c: (None if row[c] == "" else float(row[c])) for c in CSV_COLUMNS}
                values["update"], values["steps"] = int(values["update"]), int(values["steps"])
                log.append(MetricsRecord(**values))
        return log


def _csv_cell(value) -> str:
    """Shortest round-tripping text for a metric; numpy scalars are unwrapped first."""
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return repr(float(value))


def smooth(series: Sequence[float], weight: float = 0.5) -> np.ndarray:
    """Exponential smoothing ``s_t = weight * s_{t-1} + (1 - weight) * x_t``, seeded with ``x_0``."""
    if not 0.0 <= weight < 1.0:
        raise ValueError("weight must lie in [0, 1)")
    x = np.asarray(series, dtype=np.float64)
    out = np.empty_like(x)
    for t in range(len(x)):
        out[t] = x[0] if t == 0 else weight * out[t - 1] + (1.0 - weight) * x[t]
    return out


def generalization_gap(log: MetricsLog, window: int) -> float:
    """Mean train score minus mean test score over the last ``window`` evaluated records.

    Negative values mean the test levels scored higher.
    """
    rows = log.evaluated()
    if window < 1 or len(rows) < window:
        raise ValueError(f"need at least {window} evaluated records, have {len(rows)}")
    tail = rows[-window:]
    return float(np.mean([r.train_score for r in tail]) - np.mean([r.test_score for r in tail]))


# --------------------------------------------------------------------------
# evaluation and rollouts


def policy_input(obs: np.ndarray) -> np.ndarray:
    """Flat [0, 1] RGB rows for a stack of frames."""
    return scale_rgb(obs)


def evaluate(policy: nn.MlpParams, game_id: str, seeds: Sequence[int], episodes: int,
             rng: np.random.Generator) -> float:
    """Mean raw task return of ``episodes`` episodes, sampling actions from the policy.

    Episode ``i`` is played on level ``seeds[i % len(seeds)]``; all episodes
    run side by side so the policy is queried once per tick.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    states = []
    frames = []
    for i in range(episodes):
        s, o = envs.reset(level_for(game_id, int(seeds[i % len(seeds)])))
        states.append(s)
        frames.append(o)
    frames = np.stack(frames)
    active = np.arange(episodes)
    while len(active):
        probs = nn.predict(policy, policy_input(frames[active]))
        actions = sample_actions(probs, rng)
        still = []
        for k, i in enumerate(active):
            states[i], res = envs.step(states[i], int(actions[k]))
            frames[i] = res.obs
            if not res.done:
                still.append(i)
        active = np.array(still, dtype=int)
    return float(np.mean([s.episode_return_so_far for s in states]))


class VecRollout:
    """N environments advanced in lockstep, each restarting on a uniformly drawn training level."""

    def __init__(self, game_id: str, train_seeds: Sequence[int], num_envs: int, rng: np.random.Generator):
        self.game_id = game_id
        self.train_seeds = np.array(sorted(train_seeds))
        self.rng = rng
        self.states: list[envs.EnvState] = []
        frames = []
        for _ in range(num_envs):
            s, o = self._new_episode()
            self.states.append(s)
            frames.append(o)
        self.frames = np.stack(frames)
        self.finished_returns: list[float] = []

    def _new_episode(self):
        seed = int(self.train_seeds[self.rng.integers(len(self.train_seeds))])
        return envs.reset(level_for(self.game_id, seed))

    def collect(self, policy: nn.MlpParams, value: nn.MlpParams, steps: int, action_rng: np.random.Generator):
        """Run ``steps`` ticks in every env; arrays come back time-major ``(T, N, ...)``."""
        n = len(self.states)
        raw = np.empty((steps, n) + self.frames.shape[1:], dtype=np.uint8)
        obs = np.empty((steps, n, self.frames[0].size))
        actions = np.empty((steps, n), dtype=int)
        rewards = np.empty((steps, n))
        dones = np.empty((steps, n))
        log_probs = np.empty((steps, n))
        values = np.empty((steps, n))
        for t in range(steps):
            x = policy_input(self.frames)
            probs = nn.predict(policy, x)
            a = sample_actions(probs, action_rng)
            raw[t], obs[t], actions[t] = self.frames, x, a
            log_probs[t] = np.log(np.maximum(probs[np.arange(n), a], 1e-12))
            values[t] = nn.predict(value, x)[:, 0]
            for i in range(n):
                self.states[i], res = envs.step(self.states[i], int(a[i]))
                rewards[t, i], dones[t, i] = res.task_reward, res.done
                if res.done:
                    self.finished_returns.append(self.states[i].episode_return_so_far)
                    self.states[i], self.frames[i] = self._new_episode()
                else:
                    self.frames[i] = res.obs
        bootstrap = nn.predict(value, policy_input(self.frames))[:, 0]
        return raw, obs, actions, rewards, dones, log_probs, values, bootstrap


# --------------------------------------------------------------------------
# the experiment loop


@dataclass
class ExperimentResult:
    log: MetricsLog
    ppo: PpoState
    density: object | None = None
    checkpoints: list[Path] = field(default_factory=list)


class SurpriseReward:
    """Per-batch SM reward for one of the density modes."""

    def __init__(self, cfg: ExperimentConfig, vae_rng: np.random.Generator):
        self.cfg = cfg
        self.vae_loss: float | None = None
        if cfg.sm_mode == "normal":
            self.model = NormalSurpriseModel(cfg.minibatch_size, cfg.buffer_multiple, cfg.sigma_floor)
        elif cfg.sm_mode == "vae":
            self.model = VAESurpriseModel(
                cfg.latent_dim, cfg.vae_hidden, cfg.vae_learning_rate, cfg.vae_beta, cfg.sigma_floor,
                cfg.vae_denominator, cfg.vae_sigma_is_variance, random_state=int(vae_rng.integers(2**63)),
            )
        else:
            self.model = None

    def __call__(self, raw: np.ndarray, rgb_flat: np.ndarray) -> np.ndarray:
        n = len(raw)
        if self.model is None:
            return np.zeros(n)
        if self.cfg.sm_mode == "normal":
            gray = to_grayscale(raw)
            held = len(self.model.buffer_) if hasattr(self.model, "buffer_") else 0
            self.model.partial_fit(gray)
            # no reward until the buffer already held a full batch of history
            if held < self.cfg.minibatch_size:
                return np.zeros(n)
            return self.model.score_samples(gray)
        self.model.partial_fit(rgb_flat)
        self.vae_loss = self.model.loss_
        return self.model.score_samples(rgb_flat)


def run_experiment(cfg: ExperimentConfig, checkpoint_dir=None,
                   on_record: Callable[[MetricsRecord], None] | None = None) -> ExperimentResult:
    """Train one agent; a pure function of ``cfg`` apart from the optional wall-clock column."""
    cfg.validate()
    streams = derive_streams(cfg.seed)
    train_seeds, test_sampler = envs.seed_split(cfg.train_level_count, meta_seed=int(streams["eval"].integers(2**63)))
    n_actions = envs.N_ACTIONS[cfg.game_id]
    obs_dim = envs.VIEW * envs.VIEW * 3
    state = init_ppo_state(obs_dim, n_actions, streams["init"], cfg.hidden, cfg.learning_rate)
    sm = SurpriseReward(cfg, streams["vae"])
    rollout = VecRollout(cfg.game_id, train_seeds, cfg.num_envs, streams["env"])
    pcfg = cfg.ppo_config()
    horizon = cfg.minibatch_size // cfg.num_envs
    train_list = sorted(train_seeds)
    log = MetricsLog()
    ckpts: list[Path] = []
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()

    for update in range(1, cfg.n_updates + 1):
        try:
            raw, obs, actions, task, dones, logp, values, boot = rollout.collect(
                state.policy, state.value, horizon, streams["action"]
            )
            flat = lambda a: a.reshape(cfg.minibatch_size, *a.shape[2:])  # noqa: E731
            r_sm = sm(flat(raw), flat(obs)).reshape(horizon, cfg.num_envs)
            scaled = normalize(r_sm) if cfg.sm_normalize and cfg.sm_mode != "off" else r_sm
            combined = combine_rewards(task, scaled, cfg.alpha)
            adv, ret = gae(combined, values, dones, boot, cfg.gamma, cfg.gae_lambda)
            batch = TrajectoryBatch(
                obs=flat(obs), actions=flat(actions), task_rewards=flat(task), sm_rewards=flat(r_sm),
                dones=flat(dones), log_probs=flat(logp), values=flat(values), advantages=flat(adv),
                returns=flat(ret),
            )
            state = ppo_update(state, batch, pcfg, streams["shuffle"])

            record = MetricsRecord(
                update=update, steps=update * cfg.minibatch_size,
                sm_mean=float(r_sm.mean()), sm_std=float(r_sm.std()),
                pi_loss=state.stats.get("pi_loss"), v_loss=state.stats.get("v_loss"),
                entropy=state.stats.get("entropy"), vae_loss=sm.vae_loss,
            )
            if update % cfg.eval_every == 0 or update == cfg.n_updates:
                eval_rng = streams["eval"]
                train_pick = [train_list[i] for i in eval_rng.integers(len(train_list), size=cfg.eval_episodes)]
                test_pick = test_sampler.draw(cfg.eval_episodes)
                record.train_score = evaluate(state.policy, cfg.game_id, train_pick, cfg.eval_episodes, eval_rng)
                record.test_score = evaluate(state.policy, cfg.game_id, test_pick, cfg.eval_episodes, eval_rng)
                record.test_seeds = tuple(test_pick)
                if checkpoint_dir is not None:
                    path = checkpoint_dir / f"update_{update:05d}.ckpt"
                    save_agent(path, state, sm, cfg)
                    ckpts.append(path)
            if cfg.record_wall_clock:
                record.wall_ms = round((time.perf_counter() - start) * 1000.0, 3)
        except (SurpriseRLError, FloatingPointError, ValueError) as exc:
            raise ExperimentFailure(update, exc) from exc
        log.append(record)
        if on_record is not None:
            on_record(record)
    return ExperimentResult(log, state, sm.model, ckpts)


def save_agent(path, state: PpoState, sm: SurpriseReward | None, cfg: ExperimentConfig) -> None:
    nets = {"policy": state.policy, "value": state.value}
    if sm is not None and cfg.sm_mode == "vae" and hasattr(sm.model, "params_"):
        nets["vae_encoder"] = sm.model.params_.encoder
        nets["vae_decoder"] = sm.model.params_.decoder
    meta = {"game_id": cfg.game_id, "sm_mode": cfg.sm_mode, "seed": str(cfg.seed)}
    nn.save_checkpoint(path, nets, meta)


def write_run(out_dir, cfg: ExperimentConfig, result: ExperimentResult) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.dump").write_text(dumps(cfg))
    result.log.to_csv(out / "metrics.csv")
    return out


def train_run(cfg: ExperimentConfig, run_dir) -> ExperimentResult:
    """Run an experiment and lay it out as ``run_dir/{config.dump, metrics.csv, checkpoints/}``."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.dump").write_text(dumps(cfg))
    result = run_experiment(cfg, checkpoint_dir=run_dir / "checkpoints")
    write_run(run_dir, cfg, result)
    return result


def random_baseline(game_id: str, seeds: Sequence[int], episodes: int, rng: np.random.Generator) -> tuple[float, float]:
    """Mean and standard deviation of uniformly random returns."""
    rets = np.array([envs.random_rollout(level_for(game_id, int(seeds[i % len(seeds)])), rng) for i in range(episodes)])
    return float(rets.mean()), float(rets.std())


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return dataclasses.replace(cfg, **kw).validate()
