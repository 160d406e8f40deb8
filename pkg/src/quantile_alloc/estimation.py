"""Estimators built from the one-sample-per-period history.

Two pieces live here: arrival-count estimates (total and suffix counts of
each type in the historical stream) and a kernel-smoothed CDF estimate of a
type's reward law that can be grown one observation at a time.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import _numeric as nx
from .exceptions import DataError, EstimatorEmptyError
from .validation import check_probability

SUPPORT_TOL = 1e-12


@dataclass(frozen=True)
class ArrivalCounts:
    """``d_hat[j]`` counts type j in the history; ``suffix[t-1, j]`` counts it over periods t..T.

    ``suffix`` has ``T + 1`` rows; the last one is all zeros.
    """

    d_hat: np.ndarray
    suffix: np.ndarray

    def b_hat(self, t):
        """Suffix counts for 1-based period ``t`` (``t = T + 1`` gives zeros)."""
        return self.suffix[t - 1]


def count_types(history, n_types):
    types = np.asarray(history.types if hasattr(history, "types") else history, dtype=np.int64)
    if types.size == 0:
        raise DataError("history must be nonempty")
    if np.any((types < 0) | (types >= n_types)):
        raise DataError("history contains unknown type ids")
    onehot = np.zeros((types.size + 1, n_types))
    onehot[np.arange(types.size), types] = 1.0
    suffix = np.cumsum(onehot[::-1], axis=0)[::-1]
    return ArrivalCounts(suffix[0].copy(), suffix)


class KernelCDF(BaseEstimator):
    """Epanechnikov-smoothed empirical CDF.

    F(x) = (1/N) sum_i K((x - X_i)/h) with K the integrated Epanechnikov kernel
    and h = N^(-1/2) unless ``bandwidth`` is given. ``support`` is the clamp
    interval [a, b] used for bisection and for checking new samples.

    Parameters
    ----------
    support : tuple of float
        Known reward bounds of the type.
    bandwidth : float or None
        Fixed bandwidth overriding the N^(-1/2) rule.
    """

    def __init__(self, support=(0.0, 1.0), bandwidth=None):
        self.support = support
        self.bandwidth = bandwidth

    def _check_support(self, x):
        a, b = self.support
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise DataError("samples must be finite")
        if np.any(x < a - SUPPORT_TOL * max(1.0, abs(a))) or np.any(x > b + SUPPORT_TOL * max(1.0, abs(b))):
            raise DataError(f"sample outside the support [{a}, {b}]")
        return x

    def fit(self, X, y=None):
        x = self._check_support(np.ravel(X))
        self.samples_ = np.sort(x)
        self._refresh()
        return self

    def partial_fit(self, X, y=None):
        x = self._check_support(np.ravel(X))
        prev = getattr(self, "samples_", np.empty(0))
        self.samples_ = np.sort(np.concatenate([prev, x]))
        self._refresh()
        return self

    def _refresh(self):
        n = self.samples_.size
        self.n_samples_ = n
        if self.bandwidth is not None:
            self.bandwidth_ = float(self.bandwidth)
        else:
            self.bandwidth_ = 1.0 / np.sqrt(n) if n else np.inf
        self._cum = np.concatenate([[0.0], np.cumsum(self.samples_)])

    def _require(self):
        check_is_fitted(self, "samples_")
        if self.n_samples_ == 0:
            raise EstimatorEmptyError("kernel CDF has no samples")

    def cdf(self, x):
        self._require()
        x = np.asarray(x, dtype=float)
        s, n, h = self.samples_, self.n_samples_, self.bandwidth_
        out = np.array([nx.kern_cdf(v, s, n, h) for v in np.atleast_1d(x).ravel()])
        return out.reshape(x.shape) if x.ndim else float(out[0])

    def pdf(self, x):
        self._require()
        x = np.asarray(x, dtype=float)
        s, n, h = self.samples_, self.n_samples_, self.bandwidth_
        out = np.array([nx.kern_pdf(v, s, n, h) for v in np.atleast_1d(x).ravel()])
        return out.reshape(x.shape) if x.ndim else float(out[0])

    def inverse(self, p):
        """Smallest x in [a - h, b + h] with F(x) >= p (bisection to 1e-10)."""
        self._require()
        p = check_probability(p)
        a, b = self.support
        s, n, h = self.samples_, self.n_samples_, self.bandwidth_
        out = np.array([nx.kern_inv(v, s, n, h, a, b) for v in np.atleast_1d(p).ravel()])
        return out.reshape(p.shape) if p.ndim else float(out[0])

    def upper_mean(self, x):
        """Integral of t dF(t) over t >= x."""
        self._require()
        return float(nx.kern_upper_mean(float(x), self.samples_, self._cum, self.n_samples_, self.bandwidth_))

    def quantile_integral(self, q):
        """Integral of the inverse CDF over [1 - q, 1], via the exact tail moment."""
        q = float(check_probability(q, "q"))
        if q <= 0.0:
            return 0.0
        return self.upper_mean(self.inverse(1.0 - q))

    def to_rows(self, type_id):
        check_is_fitted(self, "samples_")
        return [(type_id, i, r) for i, r in enumerate(self.samples_)]


def kernel_update(est, new_sample):
    """Return a copy of ``est`` with one more observation."""
    out = KernelCDF(**est.get_params())
    prev = getattr(est, "samples_", np.empty(0))
    out.samples_ = prev
    return out.partial_fit([new_sample])


class UniformPrior:
    """Exact uniform CDF on [r_lo, r_hi], used before a type's first observation."""

    def __init__(self, lo, hi):
        if not lo < hi:
            raise DataError("uniform prior needs lo < hi")
        self.lo = float(lo)
        self.hi = float(hi)

    def cdf(self, x):
        return np.clip((np.asarray(x, dtype=float) - self.lo) / (self.hi - self.lo), 0.0, 1.0)

    def inverse(self, p):
        p = check_probability(p)
        return self.lo + p * (self.hi - self.lo)

    def quantile_integral(self, q):
        q = check_probability(q, "q")
        return q * (self.hi - 0.5 * q * (self.hi - self.lo))


def uniform_prior(bounds):
    return UniformPrior(*bounds)


def export_snapshot(estimators, path):
    """Write per-type samples as CSV rows (type_id, sample_index, reward)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["type_id", "sample_index", "reward"])
        for j, est in enumerate(estimators):
            if est is None or not hasattr(est, "samples_"):
                continue
            for row in est.to_rows(j):
                w.writerow([row[0], row[1], repr(float(row[2]))])


def estimators_from_history(history, n_types, bounds, bandwidth=None):
    """One fitted KernelCDF per type from a reward-observed history."""
    lo, hi = bounds
    out = []
    for j in range(n_types):
        est = KernelCDF(support=(float(lo[j]), float(hi[j])), bandwidth=bandwidth)
        out.append(est.fit(history.rewards[history.types == j]))
    return out
