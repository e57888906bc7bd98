"""Domain types, action-bound projection, and the deterministic rollout engine.

Conventions used throughout the package:

- An action sequence is a float64 array of shape (T, d_a): one row per
  planning step.
- States are float64 vectors of shape (d_s,); batched variants stack them
  along a leading axis.
- Planners maximize reward. The per-step reward pairs each action with the
  *next* state, r(s[t+1], a[t]), and environments must follow that
  convention.
- Cumulative rewards are accumulated in ascending step order so that
  repeated rollouts are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

Array = np.ndarray


class DivergedError(RuntimeError):
    """A rollout or gradient sweep produced a non-finite value.

    ``step`` identifies the offending rollout step (0-based).
    """

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class ActionBounds:
    """Per-dimension box constraints on actions."""

    low: Array
    high: Array

    def __post_init__(self):
        low = np.asarray(self.low, dtype=float)
        high = np.asarray(self.high, dtype=float)
        if low.ndim != 1 or high.shape != low.shape:
            raise ValueError("bounds must be 1-D vectors of equal length")
        if not (np.all(np.isfinite(low)) and np.all(np.isfinite(high))):
            raise ValueError("bounds must be finite")
        if np.any(low > high):
            raise ValueError("lower bound exceeds upper bound")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    @property
    def d_a(self) -> int:
        return self.low.shape[0]

    @classmethod
    def symmetric(cls, limit: float, d_a: int) -> "ActionBounds":
        """Bounds [-limit, limit] in every action dimension."""
        limit = float(limit)
        return cls(np.full(d_a, -limit), np.full(d_a, limit))


def project(seq: Array, bounds: ActionBounds) -> Array:
    """Clamp every action entry into its box constraint.

    Accepts a single sequence (T, d_a) or any batch (..., d_a); entries
    already inside the box are unchanged and the operation is idempotent.
    """
    return np.clip(seq, bounds.low, bounds.high)


@dataclass
class Trajectory:
    """A rolled-out action sequence: states, per-step rewards, and their sum."""

    states: Array        # (T+1, d_s), states[0] is the initial state
    actions: Array       # (T, d_a)
    step_rewards: Array  # (T,), step_rewards[t] = r(states[t+1], actions[t])
    total_reward: float

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]


def total_reward(traj: Trajectory) -> float:
    """Cumulative reward of a trajectory (cached at rollout time)."""
    return traj.total_reward


def _check_finite(x: Array, step: int, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise DivergedError(f"non-finite {what} at rollout step {step}", step=step)


def rollout(model, reward, s0: Array, seq: Array) -> Trajectory:
    """Simulate one action sequence through the dynamics model.

    states[t+1] = model.step(states[t], seq[t]) for t = 0..T-1, with the
    reward model scored on (next state, action) pairs. Deterministic:
    identical inputs produce bit-identical trajectories.

    Raises DivergedError naming the first step at which the model produced
    a non-finite state or reward.
    """
    s0 = np.asarray(s0, dtype=float)
    seq = np.asarray(seq, dtype=float)
    T = seq.shape[0]
    states = np.empty((T + 1, s0.shape[0]))
    step_rewards = np.empty(T)
    states[0] = s0
    total = 0.0
    for t in range(T):
        s_next = model.step(states[t], seq[t])
        _check_finite(s_next, t, "state")
        r = float(reward.reward(s_next, seq[t]))
        _check_finite(np.asarray(r), t, "reward")
        states[t + 1] = s_next
        step_rewards[t] = r
        total += r
    return Trajectory(states=states, actions=seq, step_rewards=step_rewards,
                      total_reward=total)


def rollout_batch(model, reward, s0: Array, seqs: Array, return_full: bool = False):
    """Roll out a batch of action sequences (B, T, d_a) from a shared state.

    Returns the (B,) vector of cumulative rewards; with ``return_full``
    also the (B, T+1, d_s) state array and (B, T) step rewards. Rewards
    accumulate in ascending step order, so each row is bit-identical to the
    corresponding single-sequence ``rollout``.
    """
    seqs = np.asarray(seqs, dtype=float)
    B, T, _ = seqs.shape
    s = np.broadcast_to(np.asarray(s0, dtype=float), (B, s0.shape[0])).copy()
    totals = np.zeros(B)
    states = rewards = None
    if return_full:
        states = np.empty((B, T + 1, s0.shape[0]))
        states[:, 0] = s
        rewards = np.empty((B, T))
    for t in range(T):
        s = model.step(s, seqs[:, t])
        _check_finite(s, t, "state")
        r = reward.reward(s, seqs[:, t])
        _check_finite(r, t, "reward")
        totals += r
        if return_full:
            states[:, t + 1] = s
            rewards[:, t] = r
    if return_full:
        return totals, states, rewards
    return totals


def split_budget(total: int) -> tuple[int, int]:
    """Factor a CEM sample budget N into (samples per iteration, iterations).

    Follows the published baseline convention: budgets of 500 and above run
    100 samples per iteration (500 -> (100, 5), 5000 -> (100, 50)); smaller
    budgets run 5 iterations (50 -> (10, 5)). Budgets that do not factor
    cleanly fall back to a single iteration.
    """
    total = int(total)
    if total < 1:
        raise ValueError("budget must be positive")
    if total >= 500 and total % 100 == 0:
        return 100, total // 100
    if total % 5 == 0 and total >= 5:
        return total // 5, 5
    return total, 1


@dataclass
class PlannerConfig:
    """All scalar planner hyperparameters, with the published defaults.

    Sample budgets are recorded as explicit factorizations: the first-step
    budget is n_init * m_init (15000 by default) and the per-replan budget
    is n_r * m_r (50 by default).
    """

    horizon: int = 45          # T, planning horizon length
    n_init: int = 1000         # samples per CEM iteration at t = 0
    m_init: int = 15           # CEM iterations at t = 0
    n_r: int = 10              # samples per CEM iteration at t > 0
    m_r: int = 5               # CEM iterations at t > 0
    alpha: float = 0.3         # distribution update smoothing
    k_elite: int | None = None  # per-iteration elites; None -> max(ceil(0.1 n), 1)
    k: int = 1                 # sequences refined by gradient updates
    G: int = 10                # gradient updates per sequence
    J: int = 8                 # line search trials per update
    eta_init: float = 0.01     # initial line search step size
    rho: float = 0.67          # line search step decay

    def __post_init__(self):
        for name in ("horizon", "n_init", "m_init", "n_r", "m_r", "k", "G", "J"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        if self.eta_init <= 0.0:
            raise ValueError("eta_init must be positive")
        if self.k_elite is not None:
            if self.k_elite < 1 or self.k_elite > min(self.n_init, self.n_r):
                raise ValueError("k_elite must satisfy 1 <= k_elite <= samples per iteration")
            if self.k > self.k_elite:
                raise ValueError("k must not exceed k_elite")

    @property
    def total_init_samples(self) -> int:
        return self.n_init * self.m_init

    @property
    def total_replan_samples(self) -> int:
        return self.n_r * self.m_r
