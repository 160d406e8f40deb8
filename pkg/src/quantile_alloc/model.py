"""Problem instances: reward laws, query types, arrival schedules and sampling.

Reward distributions are restricted to a small closed family whose densities
are piecewise linear on a bounded support (uniform, truncated triangular and
two-component mixtures of those). For that family the CDF, its inverse and
the upper-tail quantile integral all have exact closed forms, which is what
the benchmark code relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
import json
from importlib import resources

import jsonschema
import numpy as np

from . import _numeric as nx
from .exceptions import DataError, DomainError
from .validation import check_finite_vector, check_probability, check_random_state

ROW_SUM_TOL = 1e-12
SCHEMA_VERSION = 1


def _load_schema(name):
    with resources.files("quantile_alloc").joinpath(f"schemas/{name}").open() as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# reward distributions


def _uniform_pieces(lo, hi):
    d = 1.0 / (hi - lo)
    return np.array([lo, hi]), np.array([d]), np.array([d])


def _triangular_pieces(lo, hi, left, mode, right):
    if not (left < lo < hi < right):
        raise DataError("truncated triangular needs left < lo < hi < right")
    if not (left <= mode <= right):
        raise DataError("triangular mode must lie in [left, right]")

    def g(x):
        if x < mode:
            return 2.0 * (x - left) / ((right - left) * (mode - left))
        if x > mode:
            return 2.0 * (right - x) / ((right - left) * (right - mode))
        return 2.0 / (right - left)

    xs = [lo, hi] if not (lo < mode < hi) else [lo, mode, hi]
    fa = np.array([g(xs[i]) for i in range(len(xs) - 1)])
    fb = np.array([g(xs[i + 1]) for i in range(len(xs) - 1)])
    xs = np.array(xs, dtype=float)
    z = float(np.sum(0.5 * (fa + fb) * np.diff(xs)))
    return xs, fa / z, fb / z


def _eval_piece(xs, fa, fb, x0, x1):
    """Density of a PL law just right of ``x0`` and just left of ``x1``.

    Assumes ``[x0, x1]`` lies inside a single piece or outside the support.
    """
    mid = 0.5 * (x0 + x1)
    if mid <= xs[0] or mid >= xs[-1]:
        return 0.0, 0.0
    i = int(np.searchsorted(xs, mid) - 1)
    w = xs[i + 1] - xs[i]
    slope = (fb[i] - fa[i]) / w
    return fa[i] + slope * (x0 - xs[i]), fa[i] + slope * (x1 - xs[i])


def _mixture_pieces(weight, comps):
    knots = np.unique(np.concatenate([c[0] for c in comps]))
    fa = np.zeros(len(knots) - 1)
    fb = np.zeros(len(knots) - 1)
    for wgt, (xs, a, b) in zip((weight, 1.0 - weight), comps):
        for i in range(len(knots) - 1):
            l, r = _eval_piece(xs, a, b, knots[i], knots[i + 1])
            fa[i] += wgt * l
            fb[i] += wgt * r
    return knots, fa, fb


@dataclass(frozen=True, eq=False)
class RewardDist:
    """Bounded reward law with a piecewise-linear density.

    ``kind`` is one of ``uniform`` (params ``lo, hi``), ``triangular``
    (params ``lo, hi, left, mode, right``: a triangular law on
    ``[left, right]`` truncated to ``[lo, hi]``) or ``mixture`` (params
    ``weight`` and ``components``, a list of two uniform/triangular specs).
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        xs, fa, fb = self._build(self.kind, self.params)
        if not (0.0 < xs[0] < xs[-1] < np.inf):
            raise DataError("reward support must satisfy 0 < r_lo < r_hi < inf")
        object.__setattr__(self, "_xs", xs)
        object.__setattr__(self, "_fa", fa)
        object.__setattr__(self, "_fb", fb)
        if self.alpha <= 0.0:
            raise DataError("reward density must be bounded away from zero on its support")

    @staticmethod
    def _build(kind, params):
        try:
            if kind == "uniform":
                lo, hi = float(params["lo"]), float(params["hi"])
                if not lo < hi:
                    raise DataError("uniform needs lo < hi")
                return _uniform_pieces(lo, hi)
            if kind == "triangular":
                return _triangular_pieces(
                    *(float(params[k]) for k in ("lo", "hi", "left", "mode", "right"))
                )
            if kind == "mixture":
                weight = float(params["weight"])
                comps = params["components"]
                if len(comps) != 2 or not 0.0 < weight < 1.0:
                    raise DataError("mixture needs two components and 0 < weight < 1")
                parts = []
                for c in comps:
                    if c["kind"] == "mixture":
                        raise DataError("nested mixtures are not supported")
                    parts.append(RewardDist._build(c["kind"], c["params"]))
                return _mixture_pieces(weight, parts)
        except KeyError as exc:
            raise DataError(f"missing parameter {exc} for {kind} reward") from None
        raise DataError(f"unknown reward kind {kind!r}")

    # construction shortcuts
    @classmethod
    def uniform(cls, lo, hi):
        return cls("uniform", {"lo": lo, "hi": hi})

    @classmethod
    def triangular(cls, lo, hi, left, mode, right):
        return cls("triangular", {"lo": lo, "hi": hi, "left": left, "mode": mode, "right": right})

    @classmethod
    def mixture(cls, weight, first, second):
        return cls(
            "mixture",
            {"weight": weight, "components": [first.to_dict(), second.to_dict()]},
        )

    def to_dict(self):
        return {"kind": self.kind, "params": self.params}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], dict(d.get("params", {})))

    # --- geometry -----------------------------------------------------------
    @property
    def r_lo(self):
        return float(self._xs[0])

    @property
    def r_hi(self):
        return float(self._xs[-1])

    @property
    def pieces(self):
        return self._xs, self._fa, self._fb

    @property
    def alpha(self):
        # a linear piece attains its extremes at the ends
        return float(min(self._fa.min(), self._fb.min()))

    @property
    def beta(self):
        return float(max(self._fa.max(), self._fb.max()))

    @cached_property
    def _packed(self):
        return nx.pack([self.pieces], [nx.PL], [self.r_lo], [self.r_hi])

    @cached_property
    def mean(self):
        return float(nx.pl_upper_mean(self.r_lo, self._xs, self._fa, self._fb, len(self._xs) - 1))

    # --- evaluation ---------------------------------------------------------
    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        out = nx.vec_cdf(self._packed, 0, np.atleast_1d(x).ravel())
        return out.reshape(x.shape) if x.ndim else float(out[0])

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        out = nx.vec_pdf(self._packed, 0, np.atleast_1d(x).ravel())
        return out.reshape(x.shape) if x.ndim else float(out[0])

    def inv_cdf(self, p):
        p = check_probability(p)
        out = nx.vec_inv(self._packed, 0, np.atleast_1d(p).ravel())
        return out.reshape(p.shape) if p.ndim else float(out[0])

    def quantile_integral(self, q):
        """Integral of the inverse CDF over ``[1 - q, 1]``."""
        q = check_probability(q, "q")
        out = nx.vec_qint(self._packed, 0, np.atleast_1d(q).ravel())
        return out.reshape(q.shape) if q.ndim else float(out[0])

    def sample(self, rng, size=None):
        rng = check_random_state(rng)
        u = rng.random(size)
        return self.inv_cdf(u)

    def __repr__(self):
        return f"RewardDist({self.kind!r}, {self.params!r})"


# ---------------------------------------------------------------------------
# query types and schedules


@dataclass(frozen=True, eq=False)
class QueryType:
    """A query type: fixed consumption vector plus reward law.

    ``bounds`` is the reward interval the learner is told about. It defaults
    to the true support and may be wider (never narrower).
    """

    consumption: np.ndarray
    reward: RewardDist
    bounds: tuple | None = None

    def __post_init__(self):
        a = check_finite_vector(self.consumption, "consumption", nonneg=True)
        if not np.any(a > 0.0):
            raise DataError("a query type must consume at least one resource")
        object.__setattr__(self, "consumption", a)
        b = self.bounds
        if b is None:
            b = (self.reward.r_lo, self.reward.r_hi)
        b = (float(b[0]), float(b[1]))
        if not (0.0 < b[0] <= self.reward.r_lo and self.reward.r_hi <= b[1]):
            raise DataError("learner bounds must contain the reward support")
        object.__setattr__(self, "bounds", b)

    def to_dict(self):
        d = {"consumption": self.consumption.tolist(), "reward": self.reward.to_dict()}
        if self.bounds != (self.reward.r_lo, self.reward.r_hi):
            d["bounds"] = list(self.bounds)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["consumption"], dtype=float), RewardDist.from_dict(d["reward"]),
                   tuple(d["bounds"]) if "bounds" in d else None)


def _sinusoidal(T, n, amplitude=0.5, cycles=1.0):
    if not 0.0 <= amplitude < 1.0:
        raise DataError("sinusoidal amplitude must lie in [0, 1)")
    t = np.arange(T)[:, None]
    j = np.arange(n)[None, :]
    raw = 1.0 + amplitude * np.sin(2.0 * np.pi * cycles * t / T + 2.0 * np.pi * j / n)
    return raw / raw.sum(axis=1, keepdims=True)


def _piecewise(T, n, breaks, probs):
    probs = np.asarray(probs, dtype=float)
    if probs.shape != (len(breaks) + 1, n):
        raise DataError("piecewise schedule needs len(breaks) + 1 probability rows")
    edges = [0] + [int(np.floor(b * T)) for b in breaks] + [T]
    if np.any(np.diff(edges) < 0):
        raise DataError("piecewise breaks must be nondecreasing fractions of the horizon")
    out = np.empty((T, n))
    for k in range(len(edges) - 1):
        out[edges[k]: edges[k + 1]] = probs[k]
    return out


def _random_map(T, n, gamma, segments=4, seed=0):
    if not 0.0 < gamma * n <= 1.0:
        raise DataError("random MAP schedule needs 0 < n * gamma <= 1")
    rng = np.random.default_rng(seed)
    rows = gamma + (1.0 - n * gamma) * rng.dirichlet(np.ones(n), size=segments)
    breaks = [k / segments for k in range(1, segments)]
    return _piecewise(T, n, breaks, rows)


def _example1(T, n=2):
    if n != 2:
        raise DataError("the two-phase counterexample schedule has two types")
    out = np.zeros((T, 2))
    half = T // 2
    out[:half, 0] = 1.0
    out[half:, 1] = 1.0
    return out


_GENERATORS = {
    "stationary": lambda T, n, probs: np.tile(np.asarray(probs, dtype=float), (T, 1)),
    "piecewise": _piecewise,
    "sinusoidal": _sinusoidal,
    "random_map": _random_map,
    "example1": _example1,
}


@dataclass(frozen=True, eq=False)
class ArrivalSchedule:
    """Dense ``T x n`` matrix of per-period arrival probabilities.

    When built from a generator the recipe is kept so the same schedule shape
    can be re-materialised for another horizon with :meth:`with_horizon`.
    """

    probs: np.ndarray
    generator: str | None = None
    params: dict | None = None

    def __post_init__(self):
        P = check_finite_vector(self.probs, "schedule", ndim=2)
        if np.any(P < 0.0):
            raise DataError("arrival probabilities must be nonnegative")
        if P.shape[0] < 1 or P.shape[1] < 1:
            raise DataError("schedule must have at least one period and one type")
        if np.any(np.abs(P.sum(axis=1) - 1.0) > ROW_SUM_TOL):
            raise DataError("every schedule row must sum to 1")
        P.setflags(write=False)
        object.__setattr__(self, "probs", P)

    @classmethod
    def generate(cls, generator, T, n, **params):
        if generator not in _GENERATORS:
            raise DataError(f"unknown schedule generator {generator!r}")
        mat = _GENERATORS[generator](int(T), int(n), **params)
        return cls(mat, generator, dict(params))

    @classmethod
    def stationary(cls, T, probs):
        return cls.generate("stationary", T, len(probs), probs=list(map(float, probs)))

    @classmethod
    def example1(cls, T):
        return cls.generate("example1", T, 2)

    @property
    def horizon(self):
        return self.probs.shape[0]

    @property
    def n_types(self):
        return self.probs.shape[1]

    def map_gamma(self):
        """Smallest arrival probability over all periods and types."""
        return float(self.probs.min())

    def with_horizon(self, T):
        if self.generator is None:
            if T == self.horizon:
                return self
            raise DataError("a literal matrix schedule cannot be re-materialised for another horizon")
        return ArrivalSchedule.generate(self.generator, T, self.n_types, **(self.params or {}))

    def to_dict(self):
        if self.generator is not None:
            return {"generator": self.generator, "params": self.params or {}}
        return {"matrix": self.probs.tolist()}

    @classmethod
    def from_dict(cls, d, T, n):
        if "matrix" in d:
            return cls(np.asarray(d["matrix"], dtype=float))
        return cls.generate(d["generator"], T, n, **d.get("params", {}))


# ---------------------------------------------------------------------------
# instances


@dataclass(frozen=True, eq=False)
class Instance:
    types: tuple
    schedule: ArrivalSchedule
    capacities: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "types", tuple(self.types))
        c = check_finite_vector(self.capacities, "capacities", nonneg=True)
        object.__setattr__(self, "capacities", c)
        if self.schedule.n_types != len(self.types):
            raise DataError("schedule column count must equal the number of types")
        if any(t.consumption.shape != c.shape for t in self.types):
            raise DataError("every consumption vector needs one entry per resource")

    @property
    def horizon(self):
        return self.schedule.horizon

    @property
    def n_types(self):
        return len(self.types)

    @property
    def n_resources(self):
        return self.capacities.shape[0]

    @cached_property
    def consumption(self):
        """``n x m`` consumption matrix."""
        A = np.vstack([t.consumption for t in self.types])
        A.setflags(write=False)
        return A

    @property
    def reward_bounds(self):
        """True supports as two length-n arrays."""
        return (np.array([t.reward.r_lo for t in self.types]),
                np.array([t.reward.r_hi for t in self.types]))

    @property
    def learner_bounds(self):
        return (np.array([t.bounds[0] for t in self.types]),
                np.array([t.bounds[1] for t in self.types]))

    @cached_property
    def packed(self):
        """True reward laws packed for the compiled routines."""
        lo, hi = self.reward_bounds
        return nx.pack([t.reward.pieces for t in self.types], [nx.PL] * self.n_types, lo, hi)

    def with_horizon(self, T, capacities=None):
        cap = self.capacities if capacities is None else capacities
        return Instance(self.types, self.schedule.with_horizon(T), np.asarray(cap, dtype=float))

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "horizon": self.horizon,
            "capacities": self.capacities.tolist(),
            "types": [t.to_dict() for t in self.types],
            "schedule": self.schedule.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        try:
            jsonschema.validate(d, _load_schema("instance.schema.json"))
        except jsonschema.ValidationError as exc:
            raise DataError(f"invalid instance document: {exc.message}") from None
        types = [QueryType.from_dict(t) for t in d["types"]]
        sched = ArrivalSchedule.from_dict(d["schedule"], int(d["horizon"]), len(types))
        if sched.horizon != int(d["horizon"]):
            raise DataError("schedule matrix length does not match the horizon")
        return cls(types, sched, np.asarray(d["capacities"], dtype=float))

    def dump(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def example1_instance(T, scenario):
    """The two-phase counterexample with one unit-consumption resource and C = T/2.

    Scenario 1 pairs U[1,2] with a low second type; scenario 2 pairs it with
    U[2,3]. The low type is U[0.01, 1.01] rather than U[0, 1] so that every
    support stays strictly positive. Both scenarios announce the same learner
    bounds [0.01, 3] for the second type, so the learner cannot tell them apart
    before the second half begins.
    """
    if scenario not in (1, 2):
        raise DataError("scenario must be 1 or 2")
    low = RewardDist.uniform(0.01, 1.01) if scenario == 1 else RewardDist.uniform(2.0, 3.0)
    types = [
        QueryType(np.array([1.0]), RewardDist.uniform(1.0, 2.0)),
        QueryType(np.array([1.0]), low, bounds=(0.01, 3.0)),
    ]
    return Instance(types, ArrivalSchedule.example1(T), np.array([float(T // 2)]))


# ---------------------------------------------------------------------------
# paths and histories


@dataclass(frozen=True, eq=False)
class SamplePath:
    """Realised arrivals: 0-based type ids and rewards, one per period."""

    types: np.ndarray
    rewards: np.ndarray

    def __len__(self):
        return self.types.shape[0]

    def validate(self, instance, tol=1e-12):
        lo, hi = instance.reward_bounds
        j = self.types
        if len(self) != instance.horizon:
            raise DataError("path length must equal the horizon")
        if np.any((j < 0) | (j >= instance.n_types)):
            raise DataError("path contains unknown type ids")
        if np.any(self.rewards < lo[j] - tol) or np.any(self.rewards > hi[j] + tol):
            raise DataError("path reward outside its type's support")
        return self


TYPE_ONLY = "type-only"
REWARD_OBSERVED = "reward-observed"


@dataclass(frozen=True, eq=False)
class HistoryStream:
    """One historical sample per period; ``rewards`` is None in type-only mode."""

    mode: str
    types: np.ndarray
    rewards: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in (TYPE_ONLY, REWARD_OBSERVED):
            raise DataError(f"unknown history mode {self.mode!r}")
        if (self.rewards is None) != (self.mode == TYPE_ONLY):
            raise DataError("rewards must be present exactly in reward-observed mode")

    def __len__(self):
        return self.types.shape[0]


def _draw(instance, rng):
    P = instance.schedule.probs
    u = rng.random(P.shape[0])
    cum = np.cumsum(P, axis=1)
    types = np.minimum((u[:, None] >= cum).sum(axis=1), P.shape[1] - 1)
    # zero-probability types can still be hit when cum has rounding slack
    bad = P[np.arange(P.shape[0]), types] <= 0.0
    if np.any(bad):
        types[bad] = np.argmax(P[bad] > 0.0, axis=1)
    v = rng.random(P.shape[0])
    rewards = np.empty(P.shape[0])
    for j in range(P.shape[1]):
        idx = types == j
        if np.any(idx):
            rewards[idx] = nx.vec_inv(instance.packed, j, v[idx])
    return types.astype(np.int64), rewards


def sample_path(instance, seed):
    """Draw a sample path; types first, then rewards by inverse transform."""
    types, rewards = _draw(instance, check_random_state(seed))
    return SamplePath(types, rewards)


def sample_history(instance, mode, seed):
    """Draw a historical stream. The same seed yields the same types in both modes."""
    types, rewards = _draw(instance, check_random_state(seed))
    return HistoryStream(mode, types, rewards if mode == REWARD_OBSERVED else None)


def expected_counts(instance):
    """Expected number of arrivals of each type over the horizon."""
    return instance.schedule.probs.sum(axis=0)
