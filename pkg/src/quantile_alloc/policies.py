"""Quantile-threshold admission policies.

All policies share one acceptance rule: a type-j query with reward r is
accepted iff r >= M_j and every resource still has at least a_j left. They
differ in how the thresholds M_j are produced:

* static: one fluid solve on the history (weights d_hat, kernel CDFs from the
  historical rewards), thresholds fixed for the whole horizon;
* partially adaptive: reward CDFs are learned online from the arriving
  rewards, starting from a uniform prior on the known bounds, and the fluid
  problem (weights d_hat, full capacities) is re-solved each period;
* fully adaptive: as above but with suffix-count weights and the current
  remaining capacities, plus rounding bands that snap near-0 / near-1 service
  probabilities to reject-all / accept-all.

Type ids are 0-based throughout; periods in exported CSVs are 1-based.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import _numeric as nx
from .estimation import count_types, estimators_from_history
from .exceptions import ConfigError, DataError, InvalidHistoryError
from .fluid import DEFAULT_TOL, FluidProblem, solve_dual
from .model import REWARD_OBSERVED, expected_counts

POLICY_KINDS = ("static", "partial", "full", "clairvoyant", "accept_all", "reject_all")
ADAPTIVE_MAXIT = 500


@dataclass(frozen=True)
class PolicyConfig:
    """Knobs shared by the policy runners.

    ``resolve_every`` > 1 re-solves the adaptive fluid problem only every k
    periods (a runtime shortcut; reported in experiment metadata).
    ``true_cdfs`` makes the partially adaptive policy use the true reward laws
    with no learning.
    """

    kind: str = "static"
    kappa: float = 0.05
    resolve_every: int = 1
    bandwidth: float | None = None
    true_cdfs: bool = False
    method: str = "auto"
    tol: float = 1e-9

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ConfigError(f"unknown policy kind {self.kind!r}")
        if self.kind == "full" and not self.kappa > 0:
            raise ConfigError("the fully adaptive policy needs kappa > 0")
        if int(self.resolve_every) < 1:
            raise ConfigError("resolve_every must be >= 1")

    @property
    def label(self):
        if self.kind == "full":
            return f"full[kappa={self.kappa:g}]"
        return self.kind

    @property
    def deviates(self):
        return self.resolve_every != 1


@dataclass(frozen=True)
class ThresholdRule:
    thresholds: np.ndarray

    @classmethod
    def accept_all(cls, instance):
        return cls(instance.learner_bounds[0].copy())

    @classmethod
    def reject_all(cls, instance):
        return cls(instance.learner_bounds[1] + 1.0)


@dataclass
class PolicyState:
    remaining: np.ndarray
    t: int = 1
    packed: object = None
    lam: np.ndarray | None = None


@dataclass
class PolicyTrajectory:
    types: np.ndarray
    rewards: np.ndarray
    thresholds: np.ndarray
    decisions: np.ndarray
    remaining: np.ndarray
    capacities: np.ndarray
    q: np.ndarray | None = None
    branch: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def total_reward(self):
        return float(np.sum(self.rewards[self.decisions]))

    @property
    def n_accepted(self):
        return int(np.count_nonzero(self.decisions))

    def consumption_used(self, consumption):
        return consumption[self.types[self.decisions]].sum(axis=0)

    def is_feasible(self, consumption):
        used = self.consumption_used(consumption)
        return bool(np.all(used <= self.capacities + 1e-9 * np.maximum(1.0, self.capacities)))

    def to_csv(self, path):
        m = self.remaining.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "type", "reward", "threshold", "decision"] + [f"remaining_{i + 1}" for i in range(m)])
            for t in range(self.types.size):
                w.writerow([t + 1, int(self.types[t]), repr(float(self.rewards[t])),
                            repr(float(self.thresholds[t])), int(self.decisions[t])]
                           + [repr(float(v)) for v in self.remaining[t]])


# ---------------------------------------------------------------------------
# single steps


def meta_step(state, consumption_j, reward, threshold):
    """Apply the shared acceptance rule; returns (accepted, new state)."""
    a = np.asarray(consumption_j, dtype=float)
    rem = np.asarray(state.remaining, dtype=float)
    acc = bool(nx.meta_accept(rem, a, float(reward), float(threshold)))
    new_rem = rem - a if acc else rem.copy()
    return acc, replace(state, remaining=new_rem, t=state.t + 1)


def rounding_band(t, T, kappa):
    """Half-width 2 kappa (ln T / sqrt(T - t + 1) + ln T / sqrt(t)) for 1-based t."""
    return float(nx.rounding_band(float(t), float(T), float(kappa)))


def _method_code(method, m):
    if method == "auto":
        return 0 if m == 1 else 1
    return {"bisection": 0, "newton": 1, "gradient": 2}[method]


def _adaptive_packed(instance, capacity, bandwidth=None):
    lo, hi = instance.learner_bounds
    rows = [(np.array([a, b]), np.array([1.0 / (b - a)]), np.array([1.0 / (b - a)])) for a, b in zip(lo, hi)]
    kfix = None if bandwidth is None else np.full(instance.n_types, float(bandwidth))
    return nx.pack(rows, [nx.KERNEL] * instance.n_types, lo, hi, capacity=capacity, kfix=kfix)


def init_adaptive_state(instance, config=None):
    config = config or PolicyConfig("partial")
    if config.true_cdfs:
        P = nx.copy_packed(instance.packed)
    else:
        P = _adaptive_packed(instance, instance.horizon, config.bandwidth)
    return PolicyState(instance.capacities.astype(float).copy(), 1, P, np.zeros(instance.n_resources))


def _adaptive_step(instance, state, weights, capacities, j, r, kappa, config):
    A = np.ascontiguousarray(instance.consumption)
    n, m = A.shape
    qbuf = np.empty(n)
    tmp = np.empty(m)
    trace = np.empty((0, m + 2))
    remaining = state.remaining.astype(float).copy()
    acc, thr, qj, br = nx.adaptive_step(
        state.packed, A, np.asarray(weights, dtype=float), np.asarray(capacities, dtype=float),
        remaining, state.lam, int(j), float(r), float(state.t), float(instance.horizon), float(kappa),
        not config.true_cdfs, True, _method_code(config.method, m), config.tol, ADAPTIVE_MAXIT,
        qbuf, tmp, trace,
    )
    return bool(acc), float(thr), float(qj), int(br), remaining


def partial_adaptive_step(instance, state, counts, j, r, config=None):
    """Update type j's estimate with r, re-solve (d_hat, full C) and decide.

    Mutates ``state`` in place (estimates, dual warm start, remaining, t) and
    returns (accepted, threshold).
    """
    config = config or PolicyConfig("partial")
    acc, thr, _, _, rem = _adaptive_step(instance, state, counts.d_hat, instance.capacities, j, r, 0.0, config)
    state.remaining = rem
    state.t += 1
    return acc, thr


def fully_adaptive_step(instance, state, counts, j, r, kappa, config=None):
    """Algorithm with suffix weights, current capacities and rounding bands.

    Returns (accepted, threshold, branch) where branch is 0 for the quantile
    threshold, 1 for accept-all rounding and 2 for reject-all rounding.
    """
    config = config or PolicyConfig("full", kappa=kappa)
    if not kappa > 0:
        raise ConfigError("kappa must be positive")
    acc, thr, _, br, rem = _adaptive_step(
        instance, state, counts.b_hat(state.t), state.remaining.copy(), j, r, kappa, config
    )
    state.remaining = rem
    state.t += 1
    return acc, thr, br


# ---------------------------------------------------------------------------
# whole-horizon runners


def _check_lengths(instance, path, history=None):
    if len(path) != instance.horizon:
        raise DataError("path length must equal the horizon")
    if history is not None and len(history) != instance.horizon:
        raise DataError("history length must equal the horizon")


def build_static(instance, history, bandwidth=None, method="auto", tol=DEFAULT_TOL):
    """Thresholds from one fluid solve on the reward-observed history.

    Returns (ThresholdRule, QuantileSolution).
    """
    if history.mode != REWARD_OBSERVED:
        raise ConfigError("the static policy needs a reward-observed history")
    counts = count_types(history, instance.n_types)
    missing = np.flatnonzero(counts.d_hat == 0)
    if missing.size:
        raise InvalidHistoryError(f"no historical sample for type(s) {missing.tolist()}")
    ests = estimators_from_history(history, instance.n_types, instance.learner_bounds, bandwidth)
    prob = FluidProblem(counts.d_hat, instance.consumption, instance.capacities, ests)
    sol = solve_dual(prob, tol=tol, method=method)
    thr = np.array([ests[j].inverse(1.0 - sol.q[j]) for j in range(instance.n_types)])
    return ThresholdRule(thr), sol


def clairvoyant_rule(instance, method="auto", tol=DEFAULT_TOL):
    """Thresholds of the true fluid optimum (true laws, expected counts)."""
    prob = FluidProblem(expected_counts(instance), instance.consumption, instance.capacities,
                        instance.packed)
    sol = solve_dual(prob, tol=tol, method=method)
    thr = np.array([t.reward.inv_cdf(1.0 - sol.q[j]) for j, t in enumerate(instance.types)])
    return ThresholdRule(thr), sol


def run_fixed(instance, path, rule, metadata=None):
    _check_lengths(instance, path)
    T, m = instance.horizon, instance.n_resources
    x = np.zeros(T, dtype=np.bool_)
    rem = np.empty((T, m))
    thr = np.asarray(rule.thresholds, dtype=float)
    nx.run_fixed(np.ascontiguousarray(instance.consumption), instance.capacities.astype(float),
                 path.types, path.rewards, thr, x, rem)
    return PolicyTrajectory(path.types, path.rewards, thr[path.types], x, rem,
                            instance.capacities.copy(), metadata=dict(metadata or {}))


def run_adaptive(instance, path, counts, config):
    _check_lengths(instance, path)
    T, m = instance.horizon, instance.n_resources
    state = init_adaptive_state(instance, config)
    if config.kind == "full":
        weights = np.ascontiguousarray(counts.suffix[:T])
        kappa = float(config.kappa)
    else:
        weights = counts.d_hat[None, :].copy()
        kappa = 0.0
    thr = np.empty(T)
    x = np.zeros(T, dtype=np.bool_)
    rem = np.empty((T, m))
    q = np.empty(T)
    br = np.zeros(T, dtype=np.int64)
    nx.run_adaptive(
        state.packed, np.ascontiguousarray(instance.consumption), instance.capacities.astype(float),
        path.types, path.rewards, weights, kappa, not config.true_cdfs, int(config.resolve_every),
        _method_code(config.method, m), float(config.tol), ADAPTIVE_MAXIT, thr, x, rem, q, br,
    )
    meta = {"policy": config.label, "resolve_every": int(config.resolve_every)}
    return PolicyTrajectory(path.types, path.rewards, thr, x, rem, instance.capacities.copy(), q, br, meta)


def run_policy(instance, path, history, policy_kind, config=None):
    """Run one policy over one sample path; the trajectory is always feasible."""
    config = config or PolicyConfig(policy_kind)
    if config.kind != policy_kind:
        config = replace(config, kind=policy_kind)
    _check_lengths(instance, path, history)
    if policy_kind == "static":
        rule, _ = build_static(instance, history, config.bandwidth, config.method)
        traj = run_fixed(instance, path, rule, {"policy": "static"})
    elif policy_kind == "clairvoyant":
        rule, _ = clairvoyant_rule(instance, config.method)
        traj = run_fixed(instance, path, rule, {"policy": "clairvoyant"})
    elif policy_kind == "accept_all":
        traj = run_fixed(instance, path, ThresholdRule.accept_all(instance), {"policy": "accept_all"})
    elif policy_kind == "reject_all":
        traj = run_fixed(instance, path, ThresholdRule.reject_all(instance), {"policy": "reject_all"})
    else:
        counts = count_types(history, instance.n_types)
        traj = run_adaptive(instance, path, counts, config)
    if not traj.is_feasible(instance.consumption):
        raise AssertionError("policy trajectory violates a capacity constraint")
    return traj


# ---------------------------------------------------------------------------
# estimator-style wrappers


class _PolicyBase(BaseEstimator):
    def run(self, path):
        raise NotImplementedError

    def predict(self, path):
        """Accept/reject decisions along ``path``."""
        return self.run(path).decisions

    @classmethod
    def from_instance(cls, instance, **params):
        return cls(instance=instance, **params)


class StaticThresholdPolicy(_PolicyBase):
    """Fixed thresholds learned from a reward-observed history."""

    def __init__(self, instance=None, bandwidth=None, method="auto", tol=DEFAULT_TOL):
        self.instance = instance
        self.bandwidth = bandwidth
        self.method = method
        self.tol = tol

    def fit(self, history, y=None):
        rule, sol = build_static(self.instance, history, self.bandwidth, self.method, self.tol)
        self.rule_ = rule
        self.thresholds_ = rule.thresholds
        self.solution_ = sol
        self.q_ = sol.q
        return self

    def run(self, path):
        check_is_fitted(self, "rule_")
        return run_fixed(self.instance, path, self.rule_, {"policy": "static"})


class PartialAdaptivePolicy(_PolicyBase):
    """Online-learned reward CDFs, d_hat weights, full capacities, re-solved each period."""

    def __init__(self, instance=None, resolve_every=1, bandwidth=None, true_cdfs=False,
                 method="auto", tol=1e-9):
        self.instance = instance
        self.resolve_every = resolve_every
        self.bandwidth = bandwidth
        self.true_cdfs = true_cdfs
        self.method = method
        self.tol = tol

    def _config(self):
        return PolicyConfig("partial", resolve_every=self.resolve_every, bandwidth=self.bandwidth,
                            true_cdfs=self.true_cdfs, method=self.method, tol=self.tol)

    def fit(self, history, y=None):
        self.counts_ = count_types(history, self.instance.n_types)
        return self

    def run(self, path):
        check_is_fitted(self, "counts_")
        return run_adaptive(self.instance, path, self.counts_, self._config())


class FullyAdaptivePolicy(PartialAdaptivePolicy):
    """Suffix-count weights, remaining capacities and rounding bands of width set by ``kappa``."""

    def __init__(self, instance=None, kappa=0.05, resolve_every=1, bandwidth=None,
                 true_cdfs=False, method="auto", tol=1e-9):
        super().__init__(instance, resolve_every, bandwidth, true_cdfs, method, tol)
        self.kappa = kappa

    def _config(self):
        return PolicyConfig("full", kappa=self.kappa, resolve_every=self.resolve_every,
                            bandwidth=self.bandwidth, true_cdfs=self.true_cdfs,
                            method=self.method, tol=self.tol)
