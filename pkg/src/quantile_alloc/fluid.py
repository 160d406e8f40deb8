"""Quantile form of the fluid relaxation and its Lagrangian dual.

The relaxation is

    max_q  sum_j w_j G_j(q_j)   s.t.  sum_j w_j a_j q_j <= c,  0 <= q <= 1,

where G_j(q) integrates the inverse reward CDF of type j over [1 - q, 1].
Its dual is the convex function

    D(lam) = sum_j w_j E[(R_j - <lam, a_j>)^+] + <lam, c>,   lam >= 0,

and any dual point gives the primal q_j = 1 - F_j(<lam, a_j>).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
import warnings

import numpy as np
from scipy.optimize import linprog

from . import _numeric as nx
from .estimation import KernelCDF, UniformPrior
from .exceptions import ConvergenceWarning, DataError
from .model import RewardDist
from .validation import check_finite_vector

MAX_ITER = 100_000
DEFAULT_TOL = 1e-10
_METHODS = {"bisection": 0, "newton": 1, "gradient": 2}


@dataclass(frozen=True)
class DiscreteRewards:
    """Finite reward law: ``values`` with probabilities ``probs``."""

    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        p = np.asarray(self.probs, dtype=float)
        if v.shape != p.shape or v.ndim != 1 or v.size == 0:
            raise DataError("values and probs must be equal-length vectors")
        if np.any(p < 0.0) or abs(p.sum() - 1.0) > 1e-9:
            raise DataError("probs must be a probability vector")
        order = np.argsort(v, kind="stable")
        v, p = v[order], p[order]
        # merge repeated values
        uv, inv = np.unique(v, return_inverse=True)
        up = np.zeros(uv.size)
        np.add.at(up, inv, p)
        object.__setattr__(self, "values", uv)
        object.__setattr__(self, "probs", up)

    @classmethod
    def empirical(cls, samples):
        s = np.asarray(samples, dtype=float)
        return cls(s, np.full(s.size, 1.0 / s.size))


def pack_providers(providers):
    """Pack a list of per-type CDF providers for the compiled routines."""
    rows, kinds, lo, hi, kfix = [], [], [], [], []
    cap = 0
    for prov in providers:
        if isinstance(prov, RewardDist):
            rows.append(prov.pieces)
            kinds.append(nx.PL)
            lo.append(prov.r_lo)
            hi.append(prov.r_hi)
            kfix.append(0.0)
        elif isinstance(prov, (KernelCDF, UniformPrior)):
            a, b = (prov.support if isinstance(prov, KernelCDF) else (prov.lo, prov.hi))
            rows.append(RewardDist.uniform(a, b).pieces)
            kinds.append(nx.KERNEL)
            lo.append(a)
            hi.append(b)
            bw = getattr(prov, "bandwidth", None)
            kfix.append(float(bw) if bw is not None else 0.0)
            if isinstance(prov, KernelCDF) and hasattr(prov, "samples_"):
                cap = max(cap, prov.n_samples_)
        elif isinstance(prov, DiscreteRewards):
            rows.append((prov.values, prov.probs))
            kinds.append(nx.ATOMS)
            lo.append(prov.values[0])
            hi.append(prov.values[-1])
            kfix.append(0.0)
        else:
            raise DataError(f"unsupported CDF provider {type(prov).__name__}")
    P = nx.pack(rows, kinds, lo, hi, capacity=cap, kfix=kfix)
    for j, prov in enumerate(providers):
        if isinstance(prov, KernelCDF) and hasattr(prov, "samples_"):
            nx.fill_kernel(P, j, prov.samples_)
    return P


class FluidProblem:
    """Weights, consumption matrix, capacities and per-type CDF providers.

    ``providers`` is either a list (RewardDist, KernelCDF, UniformPrior or
    DiscreteRewards per type) or an already packed tuple.
    """

    def __init__(self, weights, consumption, capacities, providers):
        w = check_finite_vector(weights, "weights", nonneg=True)
        A = check_finite_vector(consumption, "consumption", ndim=2, nonneg=True)
        c = check_finite_vector(capacities, "capacities", nonneg=True)
        if A.shape != (w.size, c.size):
            raise DataError(f"consumption must have shape ({w.size}, {c.size}), got {A.shape}")
        self.weights = w
        self.consumption = np.ascontiguousarray(A)
        self.capacities = c
        self.packed = providers if isinstance(providers, nx.Packed) else pack_providers(list(providers))
        if self.packed.kind.shape[0] != w.size:
            raise DataError("one CDF provider per type is required")

    @property
    def n_types(self):
        return self.weights.size

    @property
    def n_resources(self):
        return self.capacities.size

    def with_capacities(self, capacities):
        return FluidProblem(self.weights, self.consumption, capacities, self.packed)

    def usage(self, q):
        return (self.weights * np.asarray(q, dtype=float)) @ self.consumption


@dataclass
class QuantileSolution:
    q: np.ndarray
    dual: np.ndarray
    objective: float
    violation: float
    converged: bool
    iterations: int
    degenerate: bool = False
    trace: np.ndarray = field(default=None, repr=False)


def primal_from_dual(problem, lam):
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0.0):
        raise DataError("dual variables must be nonnegative")
    q = np.empty(problem.n_types)
    nx.primal_q(problem.packed, problem.consumption, lam, q)
    return q


def dual_objective(problem, lam):
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0.0):
        raise DataError("dual variables must be nonnegative")
    return float(nx.dual_value(problem.packed, problem.weights, problem.consumption, problem.capacities, lam))


def objective_value(problem, q, return_violation=False):
    """sum_j w_j G_j(q_j); optionally also the worst constraint violation."""
    q = np.asarray(q, dtype=float)
    if q.shape != (problem.n_types,) or np.any(q < -1e-12) or np.any(q > 1 + 1e-12):
        raise DataError("q must be a vector in [0, 1]^n")
    q = np.clip(q, 0.0, 1.0)
    P, w = problem.packed, problem.weights
    val = float(sum(w[j] * nx.prov_qint(P, j, q[j]) for j in range(problem.n_types) if w[j] > 0.0))
    if return_violation:
        viol = float(np.max(problem.usage(q) - problem.capacities, initial=0.0))
        return val, max(viol, 0.0)
    return val


def _tie_fill(problem, lam, q):
    """Spread leftover capacity over atoms sitting exactly at their price.

    Only relevant for discrete providers; returns (q, filled).
    """
    P = problem.packed
    atoms = np.flatnonzero(P.kind == nx.ATOMS)
    if atoms.size == 0:
        return q, False
    price = problem.consumption @ lam
    eps = 1e-9 * max(1.0, float(np.max(np.abs(P.hi))))
    mass = np.zeros(problem.n_types)
    for j in atoms:
        mass[j] = nx.atom_mass_near(price[j], P.px[j], P.pa[j], P.pk[j], eps)
    tie = np.flatnonzero(mass > 0.0)
    tie = tie[problem.weights[tie] > 0.0]
    if tie.size == 0:
        return q, False
    slack = problem.capacities - problem.usage(q)
    w = problem.weights[tie]
    A_ub = (problem.consumption[tie] * w[:, None]).T
    res = linprog(-w * price[tie], A_ub=A_ub, b_ub=np.maximum(slack, 0.0),
                  bounds=list(zip(np.zeros(tie.size), mass[tie])), method="highs")
    if res.status != 0:
        return q, False
    q = q.copy()
    q[tie] += res.x
    return np.clip(q, 0.0, 1.0), True


def solve_dual(problem, tol=DEFAULT_TOL, method="auto", lam0=None, maxit=MAX_ITER, trace=False):
    """Minimise the dual and map the minimiser back to service probabilities.

    ``method`` is ``bisection`` (single resource only), ``newton`` (projected
    Newton with gradient and subgradient fallbacks), ``gradient`` or ``auto``
    (bisection for one resource, Newton otherwise). ``tol`` bounds the
    projected-gradient residual relative to the problem scale.
    """
    if not (np.isfinite(tol) and tol > 0):
        raise DataError("tol must be positive")
    m = problem.n_resources
    if method == "auto":
        method = "bisection" if m == 1 else "newton"
    if method not in _METHODS:
        raise DataError(f"unknown solver method {method!r}")
    if method == "bisection" and m != 1:
        raise DataError("bisection needs a single resource")
    lam_init = np.zeros(m) if lam0 is None else np.maximum(np.asarray(lam0, dtype=float), 0.0)
    buf = np.empty((min(maxit, 10_000) + 1 if trace else 0, m + 2))
    lam, iters, conv, nt = nx.solve(
        problem.packed, problem.weights, problem.consumption, problem.capacities,
        lam_init, _METHODS[method], float(tol), int(maxit), buf,
    )
    if not conv and iters >= maxit:
        warnings.warn(f"dual solver hit the iteration cap ({maxit}); returning the best iterate",
                      ConvergenceWarning, stacklevel=2)
    q = primal_from_dual(problem, lam)
    q, filled = _tie_fill(problem, lam, q)
    tmp = np.empty(m)
    violation = float(nx.scale_to_capacity(problem.weights, problem.consumption, problem.capacities, q, tmp))
    objective = objective_value(problem, q)
    binding = lam > 0.0
    degenerate = bool(filled) or bool(np.any(binding & (np.abs(problem.usage(q) - problem.capacities) > 1e-6 * np.maximum(1.0, problem.capacities))))
    return QuantileSolution(q, lam, objective, max(violation, 0.0), bool(conv), int(iters),
                            degenerate, buf[:nt] if trace else None)


def write_trace(solution, path):
    """Dump (iteration, lambda_1..m, dual objective) rows as CSV."""
    if solution.trace is None:
        raise DataError("solution was computed without trace=True")
    m = solution.dual.size
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration"] + [f"lambda_{i + 1}" for i in range(m)] + ["value"])
        for row in solution.trace:
            w.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])
