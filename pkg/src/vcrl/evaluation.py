"""Imagined-state Q-error diagnostic and aggregate score statistics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import models
from .losses import DIAGNOSTICS
from .numcore import tensor as T


@dataclass
class EvalTrajectory:
    """One greedy evaluation episode (or its time-limit-truncated prefix)."""

    observations: np.ndarray  # (T+1, obs_dim)
    actions: np.ndarray       # (T,) ints or (T, action_dim)
    rewards: np.ndarray       # (T,)
    terminal_bootstrap: Optional[float] = None  # set iff truncated, not terminated

    def __post_init__(self):
        T_steps = len(self.actions)
        if len(self.rewards) != T_steps or len(self.observations) != T_steps + 1:
            raise ValueError("trajectory field lengths disagree")

    def __len__(self):
        return len(self.actions)

    @property
    def undiscounted_return(self) -> float:
        return float(np.sum(self.rewards))


@dataclass
class ScoreSet:
    """Per-seed final scores plus the environment's reference anchors."""

    scores: list[float]
    random_score: float
    reference_score: float

    def __post_init__(self):
        if not self.scores:
            raise ValueError("ScoreSet needs at least one score")

    def normalized(self) -> list[float]:
        return [hns(s, self.random_score, self.reference_score) for s in self.scores]


def mc_returns(traj: EvalTrajectory, gamma: float) -> np.ndarray:
    """Discounted Monte-Carlo return from every timestep.

    When the trajectory was truncated by a time limit, the tail is seeded
    with the provided bootstrap value instead of zero.
    """
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must lie in (0, 1]")
    T_steps = len(traj)
    G = np.zeros(T_steps)
    tail = traj.terminal_bootstrap if traj.terminal_bootstrap is not None else 0.0
    for t in range(T_steps - 1, -1, -1):
        tail = traj.rewards[t] + gamma * tail
        G[t] = tail
    return G


def _q_at(bundle: models.ModelBundle, z: T.Tensor, actions) -> np.ndarray:
    """Q(z, a) per row: distribution mean (discrete) or min-twin (continuous)."""
    if bundle.branch == "discrete":
        logp = models.q_discrete_logp(bundle, z)
        means = np.exp(logp.data) @ bundle.atoms  # (N, A)
        return np.take_along_axis(means, np.asarray(actions, dtype=np.int64)[:, None], axis=1)[:, 0]
    a = np.asarray(actions, dtype=np.float64).reshape(z.data.shape[0], -1)
    q1 = models.q_continuous(bundle, z, a, "critic1").data
    q2 = models.q_continuous(bundle, z, a, "critic2").data
    return np.minimum(q1, q2)[:, 0]


def q_error(bundle: models.ModelBundle, traj: EvalTrajectory, K: int, gamma: float) -> float:
    """Masked mean absolute gap between imagined-state values and
    ground-truth returns, normalized by T*K."""
    num, denom = q_error_terms(bundle, traj, K, gamma)
    if denom == 0.0:
        DIAGNOSTICS.bump("q_error_all_masked")
        return 0.0
    return num / denom


def q_error_terms(bundle: models.ModelBundle, traj: EvalTrajectory,
                  K: int, gamma: float) -> tuple[float, float]:
    """(masked absolute-error sum, T*K normalizer) for one trajectory."""
    T_steps = len(traj)
    if T_steps == 0:
        return 0.0, 0.0
    G = mc_returns(traj, gamma)
    actions = np.asarray(traj.actions)
    if T_steps < 2:  # pair (t, k=1) needs t+1 <= T-1, so nothing is unmasked
        return 0.0, 0.0

    with T.no_grad():
        z = models.encode(bundle, traj.observations[:T_steps])
        total = 0.0
        for k in range(1, K + 1):
            # step every start forward; row t uses action a_{t+k-1}
            idx = np.minimum(np.arange(T_steps) + k - 1, T_steps - 1)
            z = models.transit(bundle, z, actions[idx])
            valid = np.arange(T_steps) + k <= T_steps - 1
            if not valid.any():
                break
            q_idx = np.minimum(np.arange(T_steps) + k, T_steps - 1)
            q = _q_at(bundle, z, actions[q_idx])
            total += float(np.abs(q[valid] - G[np.arange(T_steps)[valid] + k]).sum())
    return total, float(T_steps * K)


def q_error_pooled(bundle: models.ModelBundle, trajs: list[EvalTrajectory],
                   K: int, gamma: float) -> float:
    """Pooled probe value over several trajectories (sums share one normalizer)."""
    num = 0.0
    denom = 0.0
    for traj in trajs:
        a, b = q_error_terms(bundle, traj, K, gamma)
        num += a
        denom += b
    if denom == 0.0:
        DIAGNOSTICS.bump("q_error_all_masked")
        return 0.0
    return num / denom


def hns(score: float, random_score: float, reference_score: float) -> float:
    """Score normalized so the random policy maps to 0 and the reference to 1."""
    if reference_score == random_score:
        raise ValueError("degenerate normalization: reference equals random score")
    return (score - random_score) / (reference_score - random_score)


def iqm(scores) -> float:
    """Mean of the middle 50%: floor(N/4) values trimmed from each end."""
    values = sorted(float(s) for s in scores)
    if not values:
        raise ValueError("iqm needs at least one score")
    trim = len(values) // 4
    kept = values[trim : len(values) - trim]
    return float(np.mean(kept))


def optimality_gap(normalized_scores) -> float:
    """Mean shortfall below the normalized target of 1.0."""
    values = [float(s) for s in normalized_scores]
    if not values:
        raise ValueError("optimality_gap needs at least one score")
    return float(np.mean([max(0.0, 1.0 - s) for s in values]))
