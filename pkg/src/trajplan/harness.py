"""MPC experiment harness: episode runner, planner baselines, sweeps, CSV output.

An episode plans with a (possibly learned) model, executes the first
action in the true environment, observes the next true state and replans.
Episode rewards are computed exclusively from true-environment rewards;
planner-internal model rewards appear only in diagnostics columns.

All runs are seeded and deterministic: rerunning any experiment with the
same config, seeds and model file reproduces the raw CSV byte for byte
(wall-time columns aside, which live in their own column).
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .cem import SamplingDistribution, default_elite_count, run_cem
from .cemgd import PlanDiagnostics, PlannerState, PlanOutput, plan, warm_start_mean
from .core import (ActionBounds, Array, DivergedError, PlannerConfig,
                   project, rollout, split_budget)
from .dynamics import (ENVIRONMENTS, Environment, MlpModel, QuadraticGoalReward,
                       make_environment)
from .gradplanner import baseline_gradient_plan, reward_gradient

GOAL_EPS = 0.1          # barrier success: final distance to goal below this
DEFAULT_STEPS = 100     # episode length H

RAW_COLUMNS = ["env", "planner", "seed", "step", "true_reward", "model_reward",
               "samples_used", "gradient_evals", "memory_proxy", "success",
               "plan_time_s"]
SUMMARY_COLUMNS = ["env", "planner", "episodes", "mean_reward", "std_reward",
                   "mean_plan_time_s", "mean_samples_per_step",
                   "mean_memory_proxy", "success_rate"]


class EpisodeError(RuntimeError):
    """A planner failed mid-episode; ``step`` records where."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


# ---------------------------------------------------------------------------
# Planner policies (adapters sharing one plan-step interface)


class CemGdPolicy:
    """Receding-horizon wrapper around the hybrid planner."""

    def __init__(self, model, reward, cfg: PlannerConfig, bounds: ActionBounds,
                 planner_id: str = "cemgd"):
        self.model = model
        self.reward = reward
        self.cfg = cfg
        self.bounds = bounds
        self.planner_id = planner_id

    def reset(self, rng):
        self._rng = rng
        self._state = PlannerState()

    def plan_step(self, s) -> tuple[PlanOutput, int]:
        n = self.cfg.n_init if self._state.timestep == 0 else self.cfg.n_r
        out, self._state = plan(self._state, s, self.model, self.reward,
                                self.cfg, self.bounds, self._rng)
        return out, n + self.cfg.k


class CemPolicy:
    """Pure CEM planner; the sampling mean is warm-started between steps."""

    def __init__(self, model, reward, horizon: int, n: int, m: int,
                 bounds: ActionBounds, alpha: float = 0.3,
                 k_elite: int | None = None, planner_id: str | None = None):
        self.model = model
        self.reward = reward
        self.horizon = horizon
        self.n = n
        self.m = m
        self.alpha = alpha
        self.k_elite = k_elite if k_elite is not None else default_elite_count(n)
        self.bounds = bounds
        self.planner_id = planner_id or f"cem-{n * m}"

    def reset(self, rng):
        self._rng = rng
        self._previous = None

    def plan_step(self, s) -> tuple[PlanOutput, int]:
        mean = None if self._previous is None else warm_start_mean(self._previous)
        dist = SamplingDistribution.initial(self.horizon, self.bounds.d_a, mean)
        result = run_cem(self.model, self.reward, s, dist, self.n, self.m,
                         self.k_elite, self.alpha, self.bounds, self._rng, top_k=1)
        self._previous = result.best_sequence
        diag = PlanDiagnostics(cem_best_reward=result.best_reward,
                               post_gradient_rewards=[], samples_used=result.samples_used,
                               gradient_evals=0)
        out = PlanOutput(action=result.best_sequence[0].copy(),
                         optimal_sequence=result.best_sequence,
                         model_reward=result.best_reward, diagnostics=diag)
        return out, self.n


class GradientPolicy:
    """Pure first-order planner: fresh random initialization every step."""

    planner_id = "gradient"

    def __init__(self, model, reward, cfg: PlannerConfig, bounds: ActionBounds):
        self.model = model
        self.reward = reward
        self.cfg = cfg
        self.bounds = bounds

    def reset(self, rng):
        self._rng = rng

    def plan_step(self, s) -> tuple[PlanOutput, int]:
        seq, trace = baseline_gradient_plan(self.model, self.reward, s, self.cfg,
                                            self.bounds, self._rng)
        diag = PlanDiagnostics(cem_best_reward=trace.initial_reward,
                               post_gradient_rewards=[trace.final_reward],
                               samples_used=0,
                               gradient_evals=1 + trace.rollout_evaluations,
                               traces=[trace])
        out = PlanOutput(action=seq[0].copy(), optimal_sequence=seq,
                         model_reward=trace.final_reward, diagnostics=diag)
        return out, 1


def make_policy(name: str, model, reward, cfg: PlannerConfig, bounds: ActionBounds):
    """Build a planner policy by id: cemgd, gradient, or cem-<budget>."""
    if name == "cemgd":
        return CemGdPolicy(model, reward, cfg, bounds)
    if name == "gradient":
        return GradientPolicy(model, reward, cfg, bounds)
    if name.startswith("cem-"):
        budget = int(name.split("-", 1)[1])
        n, m = split_budget(budget)
        return CemPolicy(model, reward, cfg.horizon, n, m, bounds,
                         alpha=cfg.alpha, planner_id=name)
    raise ValueError(f"unknown planner {name!r}; valid planners: "
                     f"cemgd, gradient, cem-<budget>")


PLANNER_NAMES = ["cemgd", "gradient", "cem-50", "cem-500", "cem-5000"]


# ---------------------------------------------------------------------------
# Episodes


@dataclass
class BarrierOutcome:
    """Geometric verdict on a barrier-world trajectory.

    went_below holds when the agent stays under the barrier center line at
    every time its x coordinate lies within the barrier band; went_above
    holds when it was at or over the line inside the band at least once.
    """

    reached_goal: bool
    went_below: bool
    went_above: bool

    @property
    def success(self) -> bool:
        return self.reached_goal and self.went_below


def classify_barrier(states: Array, world, goal_eps: float = GOAL_EPS) -> BarrierOutcome:
    goal = np.asarray(world.goal, dtype=float)
    cx, cy = world.center
    reached = bool(np.linalg.norm(states[-1] - goal) < goal_eps)
    in_band = np.abs(states[:, 0] - cx) <= world.radius
    ys = states[in_band, 1]
    below = bool(np.all(ys < cy)) if ys.size else True
    above = bool(np.any(ys >= cy))
    return BarrierOutcome(reached_goal=reached, went_below=below, went_above=above)


@dataclass
class EpisodeResult:
    env_id: str
    planner_id: str
    seed: int
    episode_reward: float
    true_rewards: Array       # (H,)
    model_rewards: Array      # (H,) planner-internal, diagnostics only
    plan_times: Array         # (H,) wall seconds per plan call
    samples_used: Array       # (H,) int
    gradient_evals: Array     # (H,) int
    memory_proxy: Array       # (H,) int, sequences resident per plan call
    states: Array             # (H+1, d_s) true states
    actions: Array            # (H, d_a) executed actions
    outcome: BarrierOutcome | None = None

    @property
    def success(self) -> bool | None:
        return self.outcome.success if self.outcome is not None else None


def run_episode(env: Environment, policy, steps: int, seed: int) -> EpisodeResult:
    """Run one seeded MPC episode of `steps` true-environment steps."""
    rng = np.random.default_rng(seed)
    policy.reset(rng)
    d_s = env.start_state.shape[0]
    d_a = env.bounds.d_a
    states = np.empty((steps + 1, d_s))
    actions = np.empty((steps, d_a))
    true_rewards = np.empty(steps)
    model_rewards = np.empty(steps)
    plan_times = np.empty(steps)
    samples = np.empty(steps, dtype=int)
    gevals = np.empty(steps, dtype=int)
    proxy = np.empty(steps, dtype=int)

    s = env.start_state.copy()
    states[0] = s
    total = 0.0
    for t in range(steps):
        t0 = time.perf_counter()
        try:
            out, mem = policy.plan_step(s)
        except DivergedError as err:
            raise EpisodeError(f"planner {policy.planner_id} failed at episode "
                               f"step {t}: {err}", step=t) from err
        plan_times[t] = time.perf_counter() - t0
        a = np.asarray(out.action, dtype=float)
        s_next = env.dynamics.step(s, a)
        r = float(env.reward.reward(s_next, a))
        states[t + 1] = s_next
        actions[t] = a
        true_rewards[t] = r
        model_rewards[t] = out.model_reward
        samples[t] = out.diagnostics.samples_used
        gevals[t] = out.diagnostics.gradient_evals
        proxy[t] = mem
        total += r
        s = s_next

    outcome = None
    if env.name == "barrier" and env.world is not None:
        outcome = classify_barrier(states, env.world)
    return EpisodeResult(env_id=env.name, planner_id=policy.planner_id, seed=seed,
                         episode_reward=total, true_rewards=true_rewards,
                         model_rewards=model_rewards, plan_times=plan_times,
                         samples_used=samples, gradient_evals=gevals,
                         memory_proxy=proxy, states=states, actions=actions,
                         outcome=outcome)


# ---------------------------------------------------------------------------
# CSV output


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def episode_rows(result: EpisodeResult) -> list[dict]:
    success = "" if result.success is None else str(int(result.success))
    rows = []
    for t in range(result.true_rewards.shape[0]):
        rows.append({
            "env": result.env_id,
            "planner": result.planner_id,
            "seed": result.seed,
            "step": t,
            "true_reward": float(result.true_rewards[t]),
            "model_reward": float(result.model_rewards[t]),
            "samples_used": int(result.samples_used[t]),
            "gradient_evals": int(result.gradient_evals[t]),
            "memory_proxy": int(result.memory_proxy[t]),
            "success": success,
            "plan_time_s": float(result.plan_times[t]),
        })
    return rows


def write_raw_csv(results: list[EpisodeResult], path) -> None:
    """Raw per-step rows, sorted by (env, planner, seed, step)."""
    rows = [row for res in results for row in episode_rows(res)]
    rows.sort(key=lambda r: (r["env"], r["planner"], r["seed"], r["step"]))
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(RAW_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row[col]) for col in RAW_COLUMNS])


def summarize(results: list[EpisodeResult]) -> list[dict]:
    """Per (env, planner) aggregates; every statistic is recomputable from raw rows."""
    groups: dict[tuple[str, str], list[EpisodeResult]] = {}
    for res in results:
        groups.setdefault((res.env_id, res.planner_id), []).append(res)
    out = []
    for (env, planner) in sorted(groups):
        members = groups[(env, planner)]
        rewards = np.array([m.episode_reward for m in members])
        successes = [m.success for m in members if m.success is not None]
        out.append({
            "env": env,
            "planner": planner,
            "episodes": len(members),
            "mean_reward": float(rewards.mean()),
            "std_reward": float(rewards.std()),
            "mean_plan_time_s": float(np.mean([m.plan_times.mean() for m in members])),
            "mean_samples_per_step": float(np.mean([m.samples_used.mean() for m in members])),
            "mean_memory_proxy": float(np.mean([m.memory_proxy.mean() for m in members])),
            "success_rate": float(np.mean(successes)) if successes else "",
        })
    return out


def write_summary_csv(summary: list[dict], path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for row in summary:
            writer.writerow([_fmt(row[col]) for col in SUMMARY_COLUMNS])


def write_failures_csv(failures: list[dict], path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["env", "planner", "seed", "step", "error"])
        for row in failures:
            writer.writerow([row["env"], row["planner"], row["seed"],
                             row["step"], row["error"]])


# ---------------------------------------------------------------------------
# Experiments


@dataclass
class NinitSweepResult:
    results: list[EpisodeResult]
    table: dict[int, float]   # first-step budget -> success fraction


def ninit_sweep(values, trials: int, cfg: PlannerConfig | None = None,
                steps: int = DEFAULT_STEPS, base_seed: int = 0,
                env_overrides: dict | None = None) -> NinitSweepResult:
    """Barrier-world success fraction as the first-step sample budget varies.

    The replan budget stays at its default (50) throughout; `trials` seeded
    episodes run per budget value.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    cfg = cfg or PlannerConfig()
    env = make_environment("barrier", **(env_overrides or {}))
    results = []
    table = {}
    for value in values:
        n_init, m_init = split_budget(value)
        run_cfg = replace(cfg, n_init=n_init, m_init=m_init)
        policy = CemGdPolicy(env.dynamics, env.reward, run_cfg, env.bounds,
                             planner_id=f"cemgd-ninit{value}")
        episodes = [run_episode(env, policy, steps, base_seed + i)
                    for i in range(trials)]
        results.extend(episodes)
        table[int(value)] = float(np.mean([ep.success for ep in episodes]))
    return NinitSweepResult(results=results, table=table)


@dataclass
class SampleEfficiencyResult:
    results: list[EpisodeResult]
    table: dict[tuple[str, int], tuple[float, float]]  # (planner, budget) -> (mean, std)


def sample_efficiency_sweep(planners, budgets, trials: int,
                            env_name: str = "cartpole",
                            cfg: PlannerConfig | None = None,
                            steps: int = DEFAULT_STEPS,
                            base_seed: int = 0) -> SampleEfficiencyResult:
    """Episode reward vs per-step sample budget.

    For pure CEM the budget is the total samples per step; for the hybrid
    planner it is the replan budget, with the first-step budget held at
    its configured value.
    """
    cfg = cfg or PlannerConfig()
    env = make_environment(env_name)
    results = []
    table = {}
    for planner in planners:
        for budget in budgets:
            n, m = split_budget(budget)
            if planner == "cem":
                policy = CemPolicy(env.dynamics, env.reward, cfg.horizon, n, m,
                                   env.bounds, alpha=cfg.alpha,
                                   planner_id=f"cem-{budget}")
            elif planner == "cemgd":
                run_cfg = replace(cfg, n_r=n, m_r=m)
                policy = CemGdPolicy(env.dynamics, env.reward, run_cfg, env.bounds,
                                     planner_id=f"cemgd-nr{budget}")
            else:
                raise ValueError(f"unknown planner {planner!r}; valid: cem, cemgd")
            episodes = [run_episode(env, policy, steps, base_seed + i)
                        for i in range(trials)]
            results.extend(episodes)
            rewards = np.array([ep.episode_reward for ep in episodes])
            table[(planner, int(budget))] = (float(rewards.mean()), float(rewards.std()))
    return SampleEfficiencyResult(results=results, table=table)


@dataclass
class CompareResult:
    results: list[EpisodeResult]
    summary: list[dict]
    failures: list[dict] = field(default_factory=list)


def compare_planners(envs, seeds, steps: int = DEFAULT_STEPS,
                     cfg: PlannerConfig | None = None,
                     planners=None, planning_models: dict | None = None) -> CompareResult:
    """Run the planner lineup on each environment over the given seeds.

    `planning_models` optionally maps an environment name to a dynamics
    model the planners should use instead of the ground-truth one (the
    true environment still scores and advances the episode). Failed
    episodes are recorded and the grid continues.
    """
    cfg = cfg or PlannerConfig()
    planners = planners if planners is not None else list(PLANNER_NAMES)
    results, failures = [], []
    for env_name in envs:
        env = make_environment(env_name)
        model = (planning_models or {}).get(env_name, env.dynamics)
        for planner_name in planners:
            for seed in seeds:
                policy = make_policy(planner_name, model, env.reward, cfg, env.bounds)
                try:
                    results.append(run_episode(env, policy, steps, seed))
                except EpisodeError as err:
                    failures.append({"env": env_name, "planner": planner_name,
                                     "seed": seed, "step": err.step, "error": str(err)})
    return CompareResult(results=results, summary=summarize(results), failures=failures)


# ---------------------------------------------------------------------------
# Gradient checking


GRADCHECK_TOLERANCES = {"barrier": 1e-5, "cartpole": 1e-5, "mlp": 1e-4}


def _gradcheck_setup(kind: str, rng):
    if kind == "barrier":
        env = make_environment("barrier")
        sampler = lambda: rng.uniform(-1.2, 1.2, size=2)
        return env.dynamics, env.reward, env.bounds, sampler
    if kind == "cartpole":
        env = make_environment("cartpole")
        sampler = lambda: np.array([rng.uniform(-1, 1), rng.uniform(-1, 1),
                                    rng.uniform(-np.pi, np.pi), rng.uniform(-2, 2)])
        return env.dynamics, env.reward, env.bounds, sampler
    if kind == "mlp":
        model = MlpModel.initialize(3, 2, hidden=(16, 16, 16), rng=rng)
        reward = QuadraticGoalReward(np.zeros(3), action_cost=0.01)
        bounds = ActionBounds.symmetric(1.0, 2)
        sampler = lambda: rng.normal(0.0, 1.0, size=3)
        return model, reward, bounds, sampler
    valid = ", ".join(sorted(GRADCHECK_TOLERANCES))
    raise ValueError(f"unknown gradcheck target {kind!r}; valid targets: {valid}")


def gradient_check(kind: str, probes: int = 50, seed: int = 0,
                   horizon: int = 12, h: float = 1e-5) -> float:
    """Max relative error of the rollout reward gradient vs central differences.

    Each probe draws a random state and in-bounds action sequence; every
    action entry is perturbed by +-h and the two rollouts differenced.
    The error is normalized by max(1, |analytic|, |numeric|).
    """
    rng = np.random.default_rng(seed)
    model, reward, bounds, sampler = _gradcheck_setup(kind, rng)
    worst = 0.0
    for _ in range(probes):
        s0 = sampler()
        seq = project(rng.normal(0.0, 0.5, size=(horizon, bounds.d_a)), bounds)
        grad = reward_gradient(model, reward, s0, seq)
        for t in range(horizon):
            for j in range(bounds.d_a):
                bumped = seq.copy()
                bumped[t, j] += h
                plus = rollout(model, reward, s0, bumped).total_reward
                bumped[t, j] -= 2 * h
                minus = rollout(model, reward, s0, bumped).total_reward
                numeric = (plus - minus) / (2 * h)
                denom = max(1.0, abs(numeric), abs(grad[t, j]))
                worst = max(worst, abs(numeric - grad[t, j]) / denom)
    return worst
