"""Seeded procedural grid games.

Two small games stand in for the CoinRun/BossFight pair:

* ``coin_seek``: a side-on platformer with gravity. Walk and jump over wall
  stacks, pits and floor hazards to reach the coin at the right end. The
  16x16 view scrolls with the agent, so the background shifts whenever it
  moves horizontally.
* ``dodge_fight``: shoot a patrolling boss while dodging its lasers in a fixed
  arena. Only the boss, the agent and the projectiles move.

Levels are a pure function of ``(game_id, seed)`` and every step is a pure
function of ``(state, action)``; hazard schedules are derived from the level
parameters and the tick counter, never from a hidden RNG.
"""
from __future__ import annotations

import dataclasses
import functools
from collections import deque
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .exceptions import ContractViolation, GeneratorDefectError

GAMES = ("coin_seek", "dodge_fight")
N_ACTIONS = {"coin_seek": 5, "dodge_fight": 5}
SCORE_RANGE = {"coin_seek": (0.0, 10.0), "dodge_fight": (0.0, 12.0)}

VIEW = 16
MAX_EPISODE_LEN = 256
N_PALETTES = 8
MAX_GEN_ATTEMPTS = 100

# coin_seek actions
LEFT, RIGHT, JUMP, NOOP, DOWN = range(5)
# dodge_fight actions
UP, DF_DOWN, DF_LEFT, DF_RIGHT, FIRE = range(5)

COIN_REWARD = 10.0
JUMP_HEIGHT = 3
MAX_BOSS_SCORE = 12

# single-char cell tags used in layouts and level dumps
EMPTY, WALL, GAP, HAZARD, COIN, SPAWN, BOSS, STAR = ".", "#", "=", "^", "$", "S", "B", ":"
_TERMINAL = (GAP, HAZARD, COIN)

AGENT_RGB = (0, 255, 255)
WALL_RGB = (96, 64, 32)
GAP_RGB = (140, 110, 80)
HAZARD_RGB = (230, 20, 20)
COIN_RGB = (255, 200, 0)
BOSS_RGB = (200, 0, 200)
LASER_RGB = (255, 80, 80)
BULLET_RGB = (255, 255, 255)

# (base, alt) background colours per palette; none may equal a sprite colour
_PALETTES = np.array(
    [
        [(20, 24, 60), (30, 36, 84)],
        [(40, 70, 40), (58, 96, 58)],
        [(70, 40, 40), (96, 56, 56)],
        [(30, 60, 90), (44, 84, 120)],
        [(80, 80, 90), (110, 110, 124)],
        [(60, 30, 80), (84, 44, 110)],
        [(90, 70, 20), (120, 96, 30)],
        [(10, 10, 10), (36, 36, 36)],
    ],
    dtype=np.uint8,
)


@dataclass(frozen=True)
class ArenaSpec:
    """Static parameters of a ``dodge_fight`` level."""

    boss_x: int
    boss_dir: int
    boss_health: int
    laser_pattern: int
    texture_id: int
    spawn_x: int


@dataclass(frozen=True)
class LevelSpec:
    game_id: str
    seed: int
    palette_id: int
    layout: tuple[str, ...]
    arena: ArenaSpec | None = None

    @property
    def height(self) -> int:
        return len(self.layout)

    @property
    def width(self) -> int:
        return len(self.layout[0])

    def find(self, tag: str) -> list[tuple[int, int]]:
        return [(r, c) for r, row in enumerate(self.layout) for c, ch in enumerate(row) if ch == tag]

    def dump(self) -> str:
        """Canonical text form: one header line, then one line per grid row."""
        head = f"game={self.game_id} seed={self.seed} palette={self.palette_id}"
        if self.arena is not None:
            a = self.arena
            head += (
                f" boss_x={a.boss_x} boss_dir={a.boss_dir} boss_health={a.boss_health}"
                f" laser_pattern={a.laser_pattern} texture={a.texture_id} spawn_x={a.spawn_x}"
            )
        return "\n".join((head,) + self.layout) + "\n"


@dataclass(frozen=True)
class EnvState:
    level: LevelSpec
    agent_pos: tuple[int, int]
    tick: int = 0
    entity_states: tuple = ()
    episode_return_so_far: float = 0.0
    done: bool = False
    # dodge_fight only
    boss_health: int = 0
    cooldown: int = 0


@dataclass(frozen=True)
class StepResult:
    obs: np.ndarray
    task_reward: float
    done: bool


def _level_rng(game_id: str, seed: int) -> np.random.Generator:
    return np.random.default_rng([GAMES.index(game_id), int(seed)])


def _coin_move(layout, r: int, c: int, air: int, facing: int, action: int) -> tuple[int, int, int, int]:
    """Gravity platformer movement: vertical sub-step, then horizontal.

    ``air`` counts remaining rise ticks of a jump and ``facing`` is the last
    horizontal direction; while airborne the agent drifts that way unless it
    steers. Returns early if the vertical sub-step lands on a coin, hazard or
    pit cell.
    """
    grounded = layout[r + 1][c] == WALL
    if action == JUMP and grounded:
        air = JUMP_HEIGHT
    elif action == DOWN:
        air = 0
    if air > 0:
        if layout[r - 1][c] != WALL:
            r -= 1
            air -= 1
        else:
            air = 0
    elif not grounded:
        r += 1
    if layout[r][c] in _TERMINAL:
        return r, c, 0, facing
    if action == LEFT:
        facing = dc = -1
    elif action == RIGHT:
        facing = dc = 1
    else:
        airborne = air > 0 or layout[r + 1][c] != WALL
        dc = facing if airborne else 0
    if dc and layout[r][c + dc] != WALL:
        c += dc
    return r, c, air, facing


def reachable(layout: tuple[str, ...] | list[str], start: tuple[int, int]) -> set[tuple[int, int]]:
    """Flood fill over the movement graph ``(row, col, air, facing)``; returns the cells entered.

    Hazard and pit cells are entered but never expanded.
    """
    first = (start[0], start[1], 0, 1)
    seen = {first}
    queue = deque([first])
    cells = {start}
    while queue:
        node = queue.popleft()
        for action in range(N_ACTIONS["coin_seek"]):
            nxt = _coin_move(layout, *node, action)
            if nxt in seen:
                continue
            seen.add(nxt)
            cells.add(nxt[:2])
            if layout[nxt[0]][nxt[1]] not in _TERMINAL:
                queue.append(nxt)
    return cells


def is_solvable(level: LevelSpec) -> bool:
    (spawn,) = level.find(SPAWN)
    (coin,) = level.find(COIN)
    return coin in reachable(level.layout, spawn)


def _draw_coin_seek(rng: np.random.Generator) -> tuple[str, ...]:
    h, w = VIEW, int(rng.integers(10, 15))
    ground = int(rng.integers(10, 14))
    grid = np.full((h, w), EMPTY)
    grid[0, :] = WALL
    grid[ground:, :] = WALL
    grid[:, 0] = grid[:, -1] = WALL

    c = 3
    lethal = False  # at most one pit or hazard per level
    while c < w - 3:
        kind = rng.choice(5, p=[0.40, 0.25, 0.10, 0.10, 0.15])
        if kind in (2, 3):
            if lethal:
                kind = 0
            lethal = True
        if kind == 1:  # wall stack to jump over
            grid[ground - int(rng.integers(1, 3)) : ground, c] = WALL
            c += 2
        elif kind == 2:  # pit down to the bottom row
            width = min(int(rng.integers(1, 3)), w - 3 - c)
            grid[ground:-1, c : c + width] = GAP
            grid[-1, c : c + width] = GAP
            c += width + 2
        elif kind == 3:  # hazard on the floor
            grid[ground - 1, c] = HAZARD
            c += 2
        elif kind == 4:  # floating platform
            row = ground - int(rng.integers(3, 5))
            grid[row, c : min(c + int(rng.integers(2, 4)), w - 1)] = WALL
            c += 1
        else:
            c += 1

    # unreachable sky platforms only vary the picture
    for _ in range(int(rng.integers(0, 4))):
        row, col = int(rng.integers(2, ground - 5)), int(rng.integers(1, w - 2))
        grid[row, col : col + int(rng.integers(1, 4))] = WALL
    grid[:, -1] = WALL

    grid[ground - 1, 1] = SPAWN
    grid[ground - 1, w - 2] = COIN
    return tuple("".join(row) for row in grid)


def _draw_dodge_fight(rng: np.random.Generator) -> tuple[tuple[str, ...], ArenaSpec]:
    arena = ArenaSpec(
        boss_x=int(rng.integers(0, VIEW - 2)),
        boss_dir=int(rng.choice([-1, 1])),
        boss_health=int(rng.integers(6, 13)),
        laser_pattern=int(rng.integers(0, 4)),
        texture_id=int(rng.integers(0, 4)),
        spawn_x=int(rng.integers(2, VIEW - 2)),
    )
    grid = np.full((VIEW, VIEW), EMPTY)
    stars = rng.random((VIEW, VIEW)) < 0.04 * (arena.texture_id + 1)
    grid[stars] = STAR
    grid[1:3, arena.boss_x : arena.boss_x + 3] = BOSS
    grid[VIEW - 2, arena.spawn_x] = SPAWN
    return tuple("".join(row) for row in grid), arena


def generate_level(game_id: str, seed: int) -> LevelSpec:
    """Build the level for ``(game_id, seed)``; coin_seek levels are always solvable."""
    if game_id not in GAMES:
        raise ValueError(f"unknown game {game_id!r}; expected one of {GAMES}")
    rng = _level_rng(game_id, seed)
    palette_id = int(rng.integers(0, N_PALETTES))
    if game_id == "dodge_fight":
        layout, arena = _draw_dodge_fight(rng)
        return LevelSpec(game_id, int(seed), palette_id, layout, arena)
    for _ in range(MAX_GEN_ATTEMPTS):
        level = LevelSpec(game_id, int(seed), palette_id, _draw_coin_seek(rng))
        if is_solvable(level):
            return level
    raise GeneratorDefectError(f"no solvable coin_seek layout for seed {seed} in {MAX_GEN_ATTEMPTS} draws")


# --------------------------------------------------------------------------
# rendering


@functools.lru_cache(maxsize=2048)
def _background(level: LevelSpec) -> np.ndarray:
    base, alt = _PALETTES[level.palette_id]
    h, w = level.height, level.width
    rows, cols = np.mgrid[0:h, 0:w]
    if level.game_id == "coin_seek":
        # world-anchored diagonal stripes so scrolling changes pixels
        img = np.where((((cols + rows) // 2) % 3 == 0)[..., None], alt, base).astype(np.uint8)
        colours = {WALL: WALL_RGB, GAP: GAP_RGB, HAZARD: HAZARD_RGB, COIN: COIN_RGB}
    else:
        img = np.broadcast_to(base, (h, w, 3)).copy()
        colours = {STAR: tuple(int(v) for v in alt)}
    for r, row in enumerate(level.layout):
        for c, ch in enumerate(row):
            if ch in colours:
                img[r, c] = colours[ch]
    if level.game_id == "coin_seek":
        pad = np.broadcast_to(np.array(WALL_RGB, np.uint8), (h, VIEW // 2, 3))
        img = np.concatenate([pad, img, pad], axis=1)
    img.setflags(write=False)
    return img


def _boss_cols(state: EnvState) -> range:
    x = state.entity_states[0]
    return range(x, x + 3)


def render(state: EnvState) -> np.ndarray:
    """RGB observation (16, 16, 3) uint8 for ``state``."""
    level = state.level
    bg = _background(level)
    r, c = state.agent_pos
    if level.game_id == "coin_seek":
        # agent always sits in view column VIEW // 2
        img = bg[:, c : c + VIEW].copy()
        img[r, VIEW // 2] = AGENT_RGB
        return img
    img = bg.copy()
    boss_x, _, lasers, bullets = state.entity_states
    if state.boss_health > 0:
        img[1:3, boss_x : boss_x + 3] = BOSS_RGB
    for lr, lc in lasers:
        img[lr, lc] = LASER_RGB
    for br, bc in bullets:
        img[br, bc] = BULLET_RGB
    img[r, c] = AGENT_RGB
    return img


# --------------------------------------------------------------------------
# dynamics


def reset(level: LevelSpec) -> tuple[EnvState, np.ndarray]:
    (spawn,) = level.find(SPAWN)
    if level.game_id == "coin_seek":
        state = EnvState(level=level, agent_pos=spawn, entity_states=(0, 1))
    else:
        a = level.arena
        state = EnvState(
            level=level,
            agent_pos=spawn,
            entity_states=(a.boss_x, a.boss_dir, (), ()),
            boss_health=a.boss_health,
        )
    return state, render(state)


def step(state: EnvState, action: int) -> tuple[EnvState, StepResult]:
    if state.done:
        raise ContractViolation("step() called on a finished episode; call reset()")
    n = N_ACTIONS[state.level.game_id]
    if not 0 <= int(action) < n:
        raise ContractViolation(f"action {action} outside [0, {n})")
    if state.level.game_id == "coin_seek":
        new, reward = _step_coin_seek(state, int(action))
    else:
        new, reward = _step_dodge_fight(state, int(action))
    done = new.done or new.tick >= MAX_EPISODE_LEN
    new = dataclasses.replace(new, done=done, episode_return_so_far=state.episode_return_so_far + reward)
    return new, StepResult(render(new), reward, done)


def _step_coin_seek(state: EnvState, action: int) -> tuple[EnvState, float]:
    layout = state.level.layout
    r, c, air, facing = _coin_move(layout, *state.agent_pos, *state.entity_states, action)
    cell = layout[r][c]
    reward = COIN_REWARD if cell == COIN else 0.0
    done = cell in _TERMINAL
    return dataclasses.replace(state, agent_pos=(r, c), tick=state.tick + 1, entity_states=(air, facing), done=done), reward


# laser pattern -> (fire period, column offsets relative to boss left edge)
_LASER_PATTERNS = {0: (6, (1,)), 1: (5, (0, 2)), 2: (4, (1,)), 3: (7, (0, 1, 2))}
_DF_MOVES = {UP: (-1, 0), DF_DOWN: (1, 0), DF_LEFT: (0, -1), DF_RIGHT: (0, 1), FIRE: (0, 0)}
AGENT_TOP_ROW = 5
FIRE_COOLDOWN = 3


def _step_dodge_fight(state: EnvState, action: int) -> tuple[EnvState, float]:
    arena = state.level.arena
    boss_x, boss_dir, lasers, bullets = state.entity_states
    tick = state.tick + 1
    reward = 0.0
    health = state.boss_health
    cooldown = max(state.cooldown - 1, 0)

    dr, dc = _DF_MOVES[action]
    r = min(max(state.agent_pos[0] + dr, AGENT_TOP_ROW), VIEW - 1)
    c = min(max(state.agent_pos[1] + dc, 0), VIEW - 1)
    hit = (r, c) in lasers

    if action == FIRE and cooldown == 0:
        bullets = bullets + ((r, c),)
        cooldown = FIRE_COOLDOWN

    # boss patrols one column every other tick, bouncing off the walls
    if tick % 2 == 0:
        nx = boss_x + boss_dir
        if not 0 <= nx <= VIEW - 3:
            boss_dir = -boss_dir
            nx = boss_x + boss_dir
        boss_x = nx

    # player bullets climb two rows per tick
    kept = []
    for br, bc in bullets:
        nbr = br - 2
        if boss_x <= bc < boss_x + 3 and nbr <= 2:
            health -= 1
            reward += 1.0
        elif nbr >= 0:
            kept.append((nbr, bc))
    bullets = tuple(kept)

    lasers = tuple((lr + 1, lc) for lr, lc in lasers if lr + 1 < VIEW)
    period, offsets = _LASER_PATTERNS[arena.laser_pattern]
    if tick % period == 0:
        lasers = lasers + tuple((3, boss_x + o) for o in offsets)
    hit = hit or (r, c) in lasers

    done = hit
    if health <= 0:
        health = 0
        reward += MAX_BOSS_SCORE - arena.boss_health
        done = True
    new = dataclasses.replace(
        state,
        agent_pos=(r, c),
        tick=tick,
        entity_states=(boss_x, boss_dir, lasers, bullets),
        boss_health=health,
        cooldown=cooldown,
        done=done,
    )
    return new, reward


# --------------------------------------------------------------------------
# train / test split


class TestSeedSampler:
    """Reproducible stream of level seeds drawn uniformly from ``[low, 2**32)``."""

    __test__ = False  # not a pytest class

    def __init__(self, low: int, meta_seed: int = 0):
        self.low = int(low)
        self.rng = np.random.default_rng(meta_seed)

    def draw(self, n: int) -> list[int]:
        return [int(s) for s in self.rng.integers(self.low, 2**32, size=n, dtype=np.uint64)]

    def __iter__(self) -> Iterator[int]:
        while True:
            yield self.draw(1)[0]


def seed_split(train_count: int = 200, meta_seed: int = 0) -> tuple[frozenset[int], TestSeedSampler]:
    """Finite training seeds ``0..train_count-1`` and a disjoint test-seed sampler."""
    if train_count < 1:
        raise ValueError("train_count must be >= 1")
    return frozenset(range(train_count)), TestSeedSampler(train_count, meta_seed)


def random_rollout(level: LevelSpec, rng: np.random.Generator) -> float:
    """Return of one uniformly random episode on ``level``."""
    state, _ = reset(level)
    n = N_ACTIONS[level.game_id]
    while not state.done:
        state, _ = step(state, int(rng.integers(n)))
    return state.episode_return_so_far
