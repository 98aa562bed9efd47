"""Uniform replay over whole episodes with contiguous-segment sampling.

Segments are K+n transitions long (K imagination steps plus an n-step
target window) and never cross an episode boundary; positions past the
end of an episode are zero-padded and switched off in valid_mask so no
loss can observe the padding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Transition:
    observation: np.ndarray
    action: object  # int for discrete, ndarray for continuous
    reward: float
    next_observation: np.ndarray
    done: bool  # episode ended after this transition
    cut: bool   # bootstrap-cut flag (termination, not time-limit truncation)


@dataclass
class TrajectorySegment:
    observations: np.ndarray  # (K+n+1, obs_dim)
    actions: np.ndarray       # (K+n,) ints or (K+n, action_dim) floats
    rewards: np.ndarray       # (K+n,)
    done_flags: np.ndarray    # (K+n,) bool, bootstrap-cut per position
    valid_mask: np.ndarray    # (K+n,) bool, transition exists

    def __post_init__(self):
        w = len(self.actions)
        if not (len(self.rewards) == len(self.done_flags) == len(self.valid_mask) == w):
            raise ValueError("segment field lengths disagree")
        if len(self.observations) != w + 1:
            raise ValueError("segment needs one more observation than transitions")


class _Episode:
    __slots__ = ("observations", "actions", "rewards", "cuts", "closed")

    def __init__(self, first_obs: np.ndarray):
        self.observations = [np.asarray(first_obs, dtype=np.float64)]
        self.actions = []
        self.rewards = []
        self.cuts = []
        self.closed = False

    def __len__(self):
        return len(self.actions)


class ReplayBuffer:
    def __init__(self, capacity: int = 20_000, min_fill: int = 500):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.min_fill = min_fill
        self._episodes: list[_Episode] = []
        self._size = 0
        self._starts_dirty = True
        self._cum_starts = np.zeros(1, dtype=np.int64)

    def __len__(self):
        return self._size

    @property
    def num_episodes(self) -> int:
        return len(self._episodes)

    def push(self, transition: Transition):
        ep = self._episodes[-1] if self._episodes and not self._episodes[-1].closed else None
        if ep is None:
            ep = _Episode(transition.observation)
            self._episodes.append(ep)
        ep.actions.append(transition.action)
        ep.rewards.append(float(transition.reward))
        ep.cuts.append(bool(transition.cut))
        ep.observations.append(np.asarray(transition.next_observation, dtype=np.float64))
        if transition.done:
            ep.closed = True
        self._size += 1
        self._starts_dirty = True
        self._evict()

    def _evict(self):
        # drop oldest whole episodes; a lone in-progress episode may overflow
        while self._size > self.capacity and len(self._episodes) > 1:
            oldest = self._episodes.pop(0)
            self._size -= len(oldest)
            self._starts_dirty = True

    def _refresh_starts(self):
        if self._starts_dirty:
            lengths = [len(ep) for ep in self._episodes]
            self._cum_starts = np.concatenate([[0], np.cumsum(lengths, dtype=np.int64)])
            self._starts_dirty = False

    def sample_segments(self, batch: int, K: int, n: int,
                        rng: np.random.Generator) -> list[TrajectorySegment]:
        if self._size < self.min_fill:
            raise RuntimeError(
                f"buffer has {self._size} transitions; sampling requires at least {self.min_fill}"
            )
        self._refresh_starts()
        total = int(self._cum_starts[-1])
        window = K + n
        picks = rng.integers(0, total, size=batch)
        segments = []
        for flat in picks:
            ep_idx = int(np.searchsorted(self._cum_starts, flat, side="right") - 1)
            t = int(flat - self._cum_starts[ep_idx])
            segments.append(self._slice(self._episodes[ep_idx], t, window))
        return segments

    def sample_segment_batch(self, batch: int, K: int, n: int,
                             rng: np.random.Generator):
        """Stacked-array variant of sample_segments for the training hot path.

        Returns (observations, actions, rewards, done_flags, valid_mask) with
        a leading batch axis; field semantics match TrajectorySegment.
        """
        if self._size < self.min_fill:
            raise RuntimeError(
                f"buffer has {self._size} transitions; sampling requires at least {self.min_fill}"
            )
        self._refresh_starts()
        total = int(self._cum_starts[-1])
        window = K + n
        picks = rng.integers(0, total, size=batch)

        first_ep = self._episodes[0]
        obs_dim = first_ep.observations[0].shape[0]
        a0 = np.asarray(first_ep.actions[0])
        discrete = a0.ndim == 0
        obs = np.zeros((batch, window + 1, obs_dim))
        actions = (np.zeros((batch, window), dtype=np.int64) if discrete
                   else np.zeros((batch, window, a0.shape[0])))
        rewards = np.zeros((batch, window))
        dones = np.zeros((batch, window), dtype=bool)
        valid = np.zeros((batch, window), dtype=bool)
        for i, flat in enumerate(picks):
            ep_idx = int(np.searchsorted(self._cum_starts, flat, side="right") - 1)
            ep = self._episodes[ep_idx]
            t = int(flat - self._cum_starts[ep_idx])
            avail = min(window, len(ep) - t)
            obs[i, : avail + 1] = ep.observations[t : t + avail + 1]
            actions[i, :avail] = ep.actions[t : t + avail]
            rewards[i, :avail] = ep.rewards[t : t + avail]
            dones[i, :avail] = ep.cuts[t : t + avail]
            valid[i, :avail] = True
        return obs, actions, rewards, dones, valid

    def _slice(self, ep: _Episode, t: int, window: int) -> TrajectorySegment:
        T = len(ep)
        avail = min(window, T - t)
        obs_dim = ep.observations[0].shape[0]
        obs = np.zeros((window + 1, obs_dim))
        obs[: avail + 1] = ep.observations[t : t + avail + 1]

        first_action = ep.actions[0]
        if np.isscalar(first_action) or np.asarray(first_action).ndim == 0:
            actions = np.zeros(window, dtype=np.int64)
        else:
            actions = np.zeros((window, np.asarray(first_action).shape[0]))
        actions[:avail] = ep.actions[t : t + avail]

        rewards = np.zeros(window)
        rewards[:avail] = ep.rewards[t : t + avail]
        dones = np.zeros(window, dtype=bool)
        dones[:avail] = ep.cuts[t : t + avail]
        valid = np.zeros(window, dtype=bool)
        valid[:avail] = True
        return TrajectorySegment(obs, actions, rewards, dones, valid)
