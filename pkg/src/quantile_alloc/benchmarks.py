"""Hindsight and relaxation benchmarks, and regret statistics against them."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from . import _numeric as nx
from .estimation import count_types
from .exceptions import ConfigError, DataError, SizeError
from .fluid import FluidProblem, solve_dual
from .model import REWARD_OBSERVED, TYPE_ONLY, expected_counts, sample_history, sample_path
from .policies import PolicyConfig, run_policy

EXACT_MAX_T = 24
BENCHMARK_KINDS = ("offline_exact", "offline_lp", "fluid", "semi_fluid")

# independent random streams drawn from each replication's seed
PATH_STREAM = 0
HISTORY_STREAM = 1


@dataclass(frozen=True)
class BenchmarkValue:
    kind: str
    value: float
    gap_certificate: float | None = None


@dataclass
class RegretReport:
    policy: str
    T: int
    R: int
    benchmark_kind: str
    mean_reward: float
    benchmark: float
    regret: float
    stderr: float
    rewards: np.ndarray = field(default=None, repr=False)
    benchmarks: np.ndarray = field(default=None, repr=False)

    def as_row(self):
        return {
            "policy": self.policy, "T": self.T, "R": self.R, "benchmark_kind": self.benchmark_kind,
            "mean_reward": self.mean_reward, "benchmark": self.benchmark,
            "regret": self.regret, "stderr": self.stderr,
        }


# ---------------------------------------------------------------------------
# offline optimum


def _fractional_knapsack(r, a, cap):
    order = np.argsort(-r / a, kind="stable")
    left = cap
    val = 0.0
    for t in order:
        if left <= 0.0:
            break
        take = min(1.0, left / a[t])
        val += take * r[t]
        left -= take * a[t]
    return val


def offline_optimum(instance, path, mode="exact"):
    """Best total reward in hindsight on ``path``.

    ``exact`` uses a greedy top-k when one resource is consumed equally by every
    type and Gray-code enumeration for T <= 24, and raises SizeError beyond that.
    ``lp`` returns an upper bound from the LP relaxation together with a
    certificate bounding its gap to the exact value.
    """
    A = instance.consumption
    C = instance.capacities
    r = np.asarray(path.rewards, dtype=float)
    used = A[path.types]
    m = instance.n_resources
    if mode == "exact":
        if m == 1 and np.all(A[:, 0] == A[0, 0]):
            k = int(np.floor(C[0] / A[0, 0] + 1e-12))
            top = np.sort(r)[::-1][:k]
            return BenchmarkValue("offline_exact", float(top.sum()), 0.0)
        if len(path) > EXACT_MAX_T:
            raise SizeError(f"exact offline optimum limited to T <= {EXACT_MAX_T}; use mode='lp'")
        val = nx.exhaustive_knapsack(r, np.ascontiguousarray(used), C.astype(float))
        return BenchmarkValue("offline_exact", float(val), 0.0)
    if mode != "lp":
        raise ConfigError(f"unknown offline mode {mode!r}")
    rbar = float(r.max(initial=0.0))
    if m == 1:
        val = _fractional_knapsack(r, used[:, 0], float(C[0]))
        return BenchmarkValue("offline_lp", float(val), rbar)
    # general m: the path LP over T items is small; HiGHS solves it exactly
    res = linprog(-r, A_ub=np.ascontiguousarray(used.T), b_ub=C, bounds=(0.0, 1.0), method="highs")
    if res.status != 0:
        raise DataError(f"offline LP failed: {res.message}")
    return BenchmarkValue("offline_lp", float(-res.fun), m * rbar)


# ---------------------------------------------------------------------------
# relaxations


def fluid_value(instance, method="auto"):
    """Fluid relaxation with expected counts and the true reward laws."""
    prob = FluidProblem(expected_counts(instance), instance.consumption, instance.capacities,
                        instance.packed)
    return BenchmarkValue("fluid", solve_dual(prob, method=method).objective)


def fluid_solution(instance, method="auto"):
    prob = FluidProblem(expected_counts(instance), instance.consumption, instance.capacities,
                        instance.packed)
    return solve_dual(prob, method=method)


def semi_fluid_value(instance, path, t, remaining=None, method="auto"):
    """Relaxation over periods t..T using the path's realised counts (1-based t)."""
    T = instance.horizon
    if not 1 <= t <= T + 1:
        raise DataError("t must lie in [1, T + 1]")
    if t == T + 1:
        return BenchmarkValue("semi_fluid", 0.0)
    rem = instance.capacities if remaining is None else np.asarray(remaining, dtype=float)
    counts = count_types(path, instance.n_types).b_hat(t)
    prob = FluidProblem(counts, instance.consumption, rem, instance.packed)
    return BenchmarkValue("semi_fluid", solve_dual(prob, method=method).objective)


# ---------------------------------------------------------------------------
# Monte Carlo regret


def replication_seed(master, T, rep, stream):
    """Counter-based seed: adding replications never perturbs earlier ones."""
    return np.random.SeedSequence(entropy=int(master), spawn_key=(int(T), int(rep), int(stream)))


def draw_replication(instance, master, rep):
    """(path, reward-observed history, type-only history) for one replication.

    Both histories come from the same seed, so they share their type sequence.
    """
    T = instance.horizon
    path = sample_path(instance, replication_seed(master, T, rep, PATH_STREAM))
    hist_r = sample_history(instance, REWARD_OBSERVED, replication_seed(master, T, rep, HISTORY_STREAM))
    hist_t = sample_history(instance, TYPE_ONLY, replication_seed(master, T, rep, HISTORY_STREAM))
    return path, hist_r, hist_t


def simulate_replication(instance, configs, master, rep, offline=None):
    """Run every policy in ``configs`` on one common (path, history) draw.

    Returns a dict with per-policy rewards (keyed by label), the offline
    benchmark (if requested) and the feasibility flag of every trajectory.
    """
    path, hist_r, hist_t = draw_replication(instance, master, rep)
    rewards = {}
    for cfg in configs:
        hist = hist_r if cfg.kind == "static" else hist_t
        traj = run_policy(instance, path, hist, cfg.kind, cfg)
        if not traj.is_feasible(instance.consumption):
            raise AssertionError(f"{cfg.label} violated a capacity constraint")
        rewards[cfg.label] = traj.total_reward
    out = {"rewards": rewards}
    if offline is not None:
        out["offline"] = offline_optimum(instance, path, offline).value
    return out


def report(policy, T, rewards, benchmark_kind, benchmark):
    """Regret = mean benchmark - mean reward, with the stderr over replications."""
    rewards = np.asarray(rewards, dtype=float)
    bench = np.broadcast_to(np.asarray(benchmark, dtype=float), rewards.shape)
    R = rewards.size
    diff = bench - rewards
    se = float(diff.std(ddof=1) / np.sqrt(R)) if R > 1 else float("nan")
    return RegretReport(policy, int(T), R, benchmark_kind, float(rewards.mean()), float(bench.mean()),
                        float(diff.mean()), se, rewards, np.array(bench))


def regret_experiment(instance, policy_kind, config=None, R=100, seed=0, benchmark="fluid"):
    """Monte Carlo regret of one policy against the fluid or exact offline benchmark."""
    if R < 2:
        raise ConfigError("need at least two replications")
    config = config or PolicyConfig(policy_kind)
    if config.kind != policy_kind:
        config = PolicyConfig(policy_kind, config.kappa, config.resolve_every, config.bandwidth,
                              config.true_cdfs, config.method, config.tol)
    offline = "exact" if benchmark == "offline_exact" else None
    runs = [simulate_replication(instance, [config], seed, rep, offline) for rep in range(R)]
    rewards = [r["rewards"][config.label] for r in runs]
    if benchmark == "fluid":
        bench = fluid_value(instance).value
    elif benchmark == "offline_exact":
        bench = [r["offline"] for r in runs]
    else:
        raise ConfigError(f"unsupported benchmark {benchmark!r}")
    return report(config.label, instance.horizon, rewards, benchmark, bench)
