"""End-to-end acceptance checks, one test per criterion.

Each test records a single PASS/FAIL line, printed in the terminal summary.
The full drift sweep (R=200, T up to 8000) runs once per session and takes
several minutes on one core.
"""

import json
import time
from importlib import resources

import numpy as np
import pytest
from scipy.optimize import linprog

from quantile_alloc import (
    ArrivalSchedule, DiscreteRewards, FluidProblem, Instance, KernelCDF, QueryType, RewardDist,
    count_types, expected_counts, fit_scaling, fluid_value, offline_optimum, run_scenario, sample_history,
    sample_path, solve_dual,
)
from quantile_alloc.harness import read_summary
from quantile_alloc.model import TYPE_ONLY

from conftest import ACCEPTANCE_LINES, drift_types


def record(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def bundled(name):
    with resources.files("quantile_alloc").joinpath(f"scenarios/{name}").open() as fh:
        return json.load(fh)


@pytest.fixture(scope="module")
def drift_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("drift")
    t0 = time.perf_counter()
    run_scenario(bundled("drift.json"), out)
    return out, time.perf_counter() - t0


@pytest.fixture(scope="module")
def example1_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("example1")
    run_scenario(bundled("example1.json"), out)
    return out


def _fits(out):
    return fit_scaling(out / "summary.csv"), read_summary(out / "summary.csv")


def _best_kappa(rows):
    full = {}
    for r in rows:
        if r["policy"].startswith("full") and r["benchmark_kind"] == "fluid":
            full[r["policy"]] = full.get(r["policy"], 0.0) + r["regret"]
    return min(full, key=full.get)


# --- 1 --------------------------------------------------------------------------------


def test_criterion_1_analytic_oracle():
    prob = FluidProblem([100.0], [[1.0]], [50.0], [RewardDist.uniform(1.0, 2.0)])
    solve_dual(prob)
    t0 = time.perf_counter()
    sol = solve_dual(prob)
    dt = time.perf_counter() - t0
    err = max(abs(sol.q[0] - 0.5), abs(sol.dual[0] - 1.5), abs(sol.objective - 87.5))
    record(1, err <= 1e-6 and dt < 1.0, f"max error {err:.2e}, {dt * 1e3:.2f} ms")


# --- 2 --------------------------------------------------------------------------------


def _atom_instance(rng):
    n = int(rng.integers(1, 4))
    provs, vals, probs = [], [], []
    for _ in range(n):
        x = np.sort(rng.uniform(0.5, 5.0, 20))
        p = rng.dirichlet(np.ones(20))
        provs.append(DiscreteRewards(x, p))
        vals.append(x)
        probs.append(p)
    w = rng.uniform(1.0, 20.0, n)
    a = rng.uniform(0.5, 2.0, n)
    c = rng.uniform(0.05, 1.0) * float(w @ a)
    return FluidProblem(w, a[:, None], [c], provs), w, a, c, vals, probs


def _atom_lp(w, a, c, vals, probs):
    """Best per-atom acceptance masses y_jk in [0, p_jk] under the capacity row."""
    gain = np.concatenate([w[j] * vals[j] for j in range(len(w))])
    use = np.concatenate([np.full(20, w[j] * a[j]) for j in range(len(w))])
    ub = np.concatenate(probs)
    res = linprog(-gain, A_ub=use[None, :], b_ub=[c], bounds=list(zip(np.zeros(ub.size), ub)), method="highs")
    return -res.fun


def test_criterion_2_threshold_optimality():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        prob, w, a, c, vals, probs = _atom_instance(rng)
        ref = _atom_lp(w, a, c, vals, probs)
        sol = solve_dual(prob)
        worst = max(worst, abs(sol.objective - ref) / max(abs(ref), 1e-12))
    dt = time.perf_counter() - t0
    record(2, worst <= 1e-4 and dt < 60, f"worst relative gap {worst:.2e} over 50 instances, {dt:.1f} s")


# --- 3 --------------------------------------------------------------------------------


def _small_instance(rng):
    T = int(rng.integers(8, 21))
    m = int(rng.integers(1, 3))
    types = drift_types()
    A = rng.integers(1, 4, (3, m)).astype(float)
    qt = [QueryType(A[j], types[j].reward) for j in range(3)]
    gen = ["stationary", "sinusoidal", "piecewise"][int(rng.integers(0, 3))]
    if gen == "stationary":
        sched = ArrivalSchedule.stationary(T, rng.dirichlet(np.ones(3)))
    elif gen == "sinusoidal":
        sched = ArrivalSchedule.generate("sinusoidal", T, 3, amplitude=0.6)
    else:
        sched = ArrivalSchedule.generate("piecewise", T, 3, breaks=[0.5],
                                         probs=[rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(3))])
    need = expected_counts(Instance(qt, sched, np.ones(m))) @ A
    C = np.floor(rng.uniform(0.2, 0.8) * need) + 1
    return Instance(qt, sched, C)


def test_criterion_3_fluid_upper_bound():
    rng = np.random.default_rng(33)
    ok, margins = 0, []
    for k in range(20):
        inst = _small_instance(rng)
        fluid = fluid_value(inst).value
        off = np.array([offline_optimum(inst, sample_path(inst, np.random.SeedSequence([k, s]))).value
                        for s in range(500)])
        se = off.std(ddof=1) / np.sqrt(off.size)
        margins.append((fluid - off.mean()) / se)
        ok += fluid >= off.mean() - 3 * se
    record(3, ok == 20, f"{ok}/20 instances, smallest margin {min(margins):.1f} stderr")


# --- 4 --------------------------------------------------------------------------------


def test_criterion_4_estimators():
    T, n, delta = 2000, 4, 0.1
    types = [QueryType(np.array([1.0]), RewardDist.uniform(1, 2)) for _ in range(n)]
    inst = Instance(types, ArrivalSchedule.generate("sinusoidal", T, n, amplitude=0.6), np.array([T / 4]))
    mu = expected_counts(inst)
    bound = np.sqrt(2 * n * T * np.log(2 / delta))
    counts_ok = sum(
        np.abs(count_types(sample_history(inst, TYPE_ONLY, np.random.SeedSequence([4, s])), n).d_hat - mu).sum()
        <= bound for s in range(200))
    grid = np.linspace(1, 2, 1000)
    kern_ok = 0
    for s in range(100):
        x = np.random.default_rng(np.random.SeedSequence([44, s])).uniform(1, 2, 10_000)
        kern_ok += np.max(np.abs(KernelCDF(support=(1, 2)).fit(x).cdf(grid) - (grid - 1))) <= 0.05
    ok = counts_ok >= (1 - delta) * 200 and kern_ok >= 95
    record(4, ok, f"count bound {counts_ok}/200, kernel sup-error {kern_ok}/100")


# --- 5-7 ------------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_5_static_rate(drift_run):
    out, dt = drift_run
    fits, rows = _fits(out)
    f = fits["static"]
    positive = all(r["regret"] > 0 for r in rows if r["policy"] == "static")
    record(5, f.exponent <= 0.65 and positive,
           f"static exponent {f.exponent:.3f}, R^2 {f.r2:.3f}, sweep runtime {dt / 60:.1f} min")


@pytest.mark.slow
def test_criterion_6_partial_rate(drift_run):
    fits, _ = _fits(drift_run[0])
    f = fits["partial"]
    record(6, f.exponent <= 0.65, f"partial exponent {f.exponent:.3f}, R^2 {f.r2:.3f}")


@pytest.mark.slow
def test_criterion_7_full_rate(drift_run):
    fits, rows = _fits(drift_run[0])
    best = _best_kappa(rows)
    gap = fits["static"].exponent - fits[best].exponent
    sel = sorted((r for r in rows if r["policy"] == best and r["benchmark_kind"] == "fluid"),
                 key=lambda r: r["T"])[-3:]
    ratio = [r["regret"] / np.sqrt(r["T"]) for r in sel]
    decreasing = all(b < a for a, b in zip(ratio, ratio[1:]))
    record(7, gap >= 0.15 and decreasing,
           f"best {best}: exponent {fits[best].exponent:.3f}, gap to static {gap:.3f}, "
           f"regret/sqrt(T) " + " ".join(f"{v:.3f}" for v in ratio))


# --- 8 --------------------------------------------------------------------------------


def test_criterion_8_example1(example1_run):
    T = 2000
    regrets, z = [], []
    for k, target in ((1, 0.75 * T), (2, 1.25 * T)):
        sub = example1_run / f"example1-scenario{k}"
        rows = read_summary(sub / "summary.csv")
        regrets.append(next(r["regret"] for r in rows if r["benchmark_kind"] == "fluid"))
        off = np.loadtxt(sub / "replications.csv", delimiter=",", skiprows=1, usecols=4)
        se = off.std(ddof=1) / np.sqrt(off.size)
        z.append((off.mean() - target) / se)
    ok = max(regrets) >= 0.2 * T and all(abs(v) <= 3 for v in z)
    record(8, ok, f"regrets {regrets[0]:.1f}, {regrets[1]:.1f} (0.2T = {0.2 * T:.0f}); "
                  f"benchmark z-scores {z[0]:+.2f}, {z[1]:+.2f}")


# --- 9 --------------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_9_feasibility(drift_run, example1_run):
    total, expected = 0, 0
    for meta_path in [drift_run[0] / "metadata.json",
                      example1_run / "example1-scenario1" / "metadata.json",
                      example1_run / "example1-scenario2" / "metadata.json"]:
        meta = json.loads(meta_path.read_text())
        total += meta["feasible_trajectories"]
        expected += len(meta["horizons"]) * meta["replications"] * len(meta["policies"])
    record(9, total == expected, f"{total} trajectories checked, 0 capacity violations")


# --- 10 -------------------------------------------------------------------------------


def test_criterion_10_determinism(tmp_path):
    doc = bundled("drift.json")
    doc["horizons"] = [100, 200]
    doc["replications"] = 5
    run_scenario(doc, tmp_path / "a")
    run_scenario(json.loads(json.dumps(doc)), tmp_path / "b")
    names = ("summary.csv", "replications.csv", "metadata.json")
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in names)
    record(10, same, "two runs with one master seed produced byte-identical CSV and metadata")
