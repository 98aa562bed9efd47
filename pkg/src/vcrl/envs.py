"""Toy environments with exactly-known random/optimal reference scores.

Three tasks stand in for large-scale benchmarks:

* ``chain``     -- L-cell corridor, reward only on reaching the far end.
* ``pixelgrid`` -- G x G binary image gridworld with optional action slip.
* ``pointmass`` -- 1-D continuous control with momentum, fixed-length
  episodes that truncate (time limit) rather than terminate.

Reference scores are computed at construction: exact dynamic programming
for the discrete tasks' uniform-random policy, a fixed-seed Monte-Carlo
estimate for the point mass.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np


@dataclass(frozen=True)
class Discrete:
    n: int


@dataclass(frozen=True)
class Continuous:
    dim: int
    low: float
    high: float


@dataclass(frozen=True)
class EnvSpec:
    observation_dim: int
    action_space: Union[Discrete, Continuous]
    max_episode_length: int
    random_score: float
    optimal_score: float

    def __post_init__(self):
        if self.optimal_score <= self.random_score:
            raise ValueError("optimal_score must exceed random_score")
        if self.max_episode_length < 1:
            raise ValueError("max_episode_length must be >= 1")


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    # bootstrap-cut flag: True only for genuine termination. A time-limit
    # truncation on the point mass ends the episode with cut=False so value
    # targets keep bootstrapping (infinite-horizon semantics).
    cut: bool = field(default=False)


class ChainEnv:
    """Corridor of L cells; right moves toward the rewarding terminal cell."""

    LEFT, RIGHT = 0, 1

    def __init__(self, length: int = 8, max_episode_length: int = 50, seed: int = 0):
        if length < 2:
            raise ValueError("chain length must be >= 2")
        self.length = length
        self.spec = EnvSpec(
            observation_dim=length,
            action_space=Discrete(2),
            max_episode_length=max_episode_length,
            random_score=_chain_random_score(length, max_episode_length),
            optimal_score=1.0,
        )
        self._rng = np.random.default_rng(seed)  # unused; kept for a uniform interface
        self._pos = 0
        self._t = 0
        self._done = True

    def reset(self) -> np.ndarray:
        self._pos = 0
        self._t = 0
        self._done = False
        return self._render()

    def step(self, action: int) -> StepResult:
        if self._done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        if action not in (self.LEFT, self.RIGHT):
            raise ValueError(f"invalid chain action {action}")
        self._t += 1
        if action == self.RIGHT:
            self._pos += 1
        else:
            self._pos = max(self._pos - 1, 0)
        reward = 0.0
        cut = False
        if self._pos == self.length - 1:
            reward = 1.0
            self._done = True
            cut = True
        elif self._t >= self.spec.max_episode_length:
            self._done = True
            cut = True
        return StepResult(self._render(), reward, self._done, cut)

    def _render(self) -> np.ndarray:
        obs = np.zeros(self.length)
        obs[self._pos] = 1.0
        return obs


class PixelGridEnv:
    """Gridworld rendered as a flat binary image; agent=1.0, goal=0.5.

    With probability p_slip the chosen action is replaced by a uniformly
    random one, making transitions stochastic.
    """

    MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))  # up, down, left, right

    def __init__(self, size: int = 7, p_slip: float = 0.1,
                 max_episode_length: int = 50, seed: int = 0):
        if size < 2:
            raise ValueError("grid size must be >= 2")
        if not 0.0 <= p_slip <= 1.0:
            raise ValueError("p_slip must lie in [0, 1]")
        self.size = size
        self.p_slip = p_slip
        self.goal = (size - 1, size - 1)
        shortest = 2 * (size - 1)
        self.spec = EnvSpec(
            observation_dim=size * size,
            action_space=Discrete(4),
            max_episode_length=max_episode_length,
            random_score=_grid_random_score(size, max_episode_length),
            optimal_score=1.0 - 0.01 * (shortest - 1),
        )
        self._rng = np.random.default_rng(seed)
        self._pos = (0, 0)
        self._t = 0
        self._done = True

    def reset(self) -> np.ndarray:
        self._pos = (0, 0)
        self._t = 0
        self._done = False
        return self._render()

    def step(self, action: int) -> StepResult:
        if self._done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        if not 0 <= action < 4:
            raise ValueError(f"invalid grid action {action}")
        if self.p_slip > 0.0 and self._rng.random() < self.p_slip:
            action = int(self._rng.integers(4))
        self._t += 1
        dr, dc = self.MOVES[action]
        r = min(max(self._pos[0] + dr, 0), self.size - 1)
        c = min(max(self._pos[1] + dc, 0), self.size - 1)
        self._pos = (r, c)
        cut = False
        if self._pos == self.goal:
            reward = 1.0
            self._done = True
            cut = True
        else:
            reward = -0.01
            if self._t >= self.spec.max_episode_length:
                self._done = True
                cut = True
        return StepResult(self._render(), reward, self._done, cut)

    def _render(self) -> np.ndarray:
        obs = np.zeros(self.size * self.size)
        if self._pos != self.goal:
            obs[self.goal[0] * self.size + self.goal[1]] = 0.5
        obs[self._pos[0] * self.size + self._pos[1]] = 1.0
        return obs


class PointMassEnv:
    """1-D point mass with momentum; reward peaks at the origin.

    Episodes run a fixed number of steps and then truncate: done is set
    but the bootstrap-cut flag stays False.
    """

    def __init__(self, episode_length: int = 200, seed: int = 0):
        self.episode_length = episode_length
        self.spec = EnvSpec(
            observation_dim=2,
            action_space=Continuous(1, -1.0, 1.0),
            max_episode_length=episode_length,
            random_score=_pointmass_random_score(episode_length),
            optimal_score=float(episode_length),
        )
        self._rng = np.random.default_rng(seed)
        self._x = 0.0
        self._v = 0.0
        self._t = 0
        self._done = True

    def reset(self) -> np.ndarray:
        self._x = 0.0
        self._v = 0.0
        self._t = 0
        self._done = False
        return self._render()

    def step(self, action) -> StepResult:
        if self._done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        a = float(np.asarray(action).reshape(-1)[0])
        if not np.isfinite(a):
            raise ValueError(f"non-finite action {a}")
        a = min(max(a, -1.0), 1.0)
        self._t += 1
        self._v = 0.9 * self._v + 0.1 * a
        self._x = self._x + self._v
        reward = float(np.exp(-self._x * self._x))
        self._done = self._t >= self.episode_length
        return StepResult(self._render(), reward, self._done, cut=False)

    def _render(self) -> np.ndarray:
        return np.array([self._x, self._v])


class ActionRepeat:
    """Repeat each chosen action `repeat` times, summing rewards."""

    def __init__(self, env, repeat: int = 1):
        if repeat < 1:
            raise ValueError("repeat must be >= 1")
        self.env = env
        self.repeat = repeat
        self.spec = env.spec

    def reset(self):
        return self.env.reset()

    def step(self, action) -> StepResult:
        total = 0.0
        result = None
        for _ in range(self.repeat):
            result = self.env.step(action)
            total += result.reward
            if result.done:
                break
        return StepResult(result.observation, total, result.done, result.cut)


class FrameStack:
    """Concatenate the last k observations into one flat vector."""

    def __init__(self, env, k: int = 1):
        if k < 1:
            raise ValueError("stack depth must be >= 1")
        self.env = env
        self.k = k
        base = env.spec
        self.spec = EnvSpec(
            observation_dim=base.observation_dim * k,
            action_space=base.action_space,
            max_episode_length=base.max_episode_length,
            random_score=base.random_score,
            optimal_score=base.optimal_score,
        )
        self._frames: list[np.ndarray] = []

    def reset(self):
        obs = self.env.reset()
        self._frames = [obs] * self.k
        return np.concatenate(self._frames)

    def step(self, action) -> StepResult:
        result = self.env.step(action)
        self._frames.pop(0)
        self._frames.append(result.observation)
        return StepResult(np.concatenate(self._frames), result.reward, result.done, result.cut)


ENV_NAMES = ("chain", "pixelgrid", "pointmass")


def make_env(name: str, seed: int = 0, *, chain_length: int = 8, chain_limit: int = 50,
             grid_size: int = 7, p_slip: float = 0.1, grid_limit: int = 50,
             pointmass_length: int = 200, action_repeat: int = 1, frame_stack: int = 1):
    """Build an environment by name with optional wrappers."""
    if name == "chain":
        env = ChainEnv(chain_length, chain_limit, seed)
    elif name == "pixelgrid":
        env = PixelGridEnv(grid_size, p_slip, grid_limit, seed)
    elif name == "pointmass":
        env = PointMassEnv(pointmass_length, seed)
    else:
        raise ValueError(f"unknown environment {name!r}; expected one of {ENV_NAMES}")
    if action_repeat > 1:
        env = ActionRepeat(env, action_repeat)
    if frame_stack > 1:
        env = FrameStack(env, frame_stack)
    return env


def is_discrete(env) -> bool:
    return isinstance(env.spec.action_space, Discrete)


def image_side(env) -> Optional[int]:
    """Side length of the rendered image for grid observations, else None."""
    base = env
    while hasattr(base, "env"):
        base = base.env
    if isinstance(base, PixelGridEnv):
        return base.size
    return None


# --- reference-score oracles -------------------------------------------


def _chain_random_score(length: int, limit: int) -> float:
    """Exact P(reach the terminal cell within `limit` steps) under the
    uniform-random policy, via forward propagation of the state distribution."""
    p = np.zeros(length)
    p[0] = 1.0
    hit = 0.0
    for _ in range(limit):
        q = np.zeros(length)
        for s in range(length - 1):
            if p[s] == 0.0:
                continue
            q[max(s - 1, 0)] += 0.5 * p[s]
            q[s + 1] += 0.5 * p[s]
        hit += q[length - 1]
        q[length - 1] = 0.0
        p = q
    return float(hit)


def _grid_random_score(size: int, limit: int) -> float:
    """Exact expected return of the uniform-random policy by finite-horizon
    dynamic programming.  Slip has no effect under a uniform policy."""
    goal = (size - 1, size - 1)
    values = np.zeros((size, size))
    for _ in range(limit):
        nxt = np.zeros((size, size))
        for r in range(size):
            for c in range(size):
                if (r, c) == goal:
                    continue
                total = 0.0
                for dr, dc in PixelGridEnv.MOVES:
                    nr = min(max(r + dr, 0), size - 1)
                    nc = min(max(c + dc, 0), size - 1)
                    if (nr, nc) == goal:
                        total += 1.0
                    else:
                        total += -0.01 + values[nr, nc]
                nxt[r, c] = total / 4.0
        values = nxt
    return float(values[0, 0])


def _pointmass_random_score(length: int, episodes: int = 2000, seed: int = 12345) -> float:
    """Fixed-seed vectorized Monte-Carlo estimate for uniform actions."""
    rng = np.random.default_rng(seed)
    x = np.zeros(episodes)
    v = np.zeros(episodes)
    total = np.zeros(episodes)
    for _ in range(length):
        a = rng.uniform(-1.0, 1.0, size=episodes)
        v = 0.9 * v + 0.1 * a
        x = x + v
        total += np.exp(-x * x)
    return float(total.mean())
