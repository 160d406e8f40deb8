"""Scenario files, Monte Carlo sweeps over the horizon and regret-scaling fits."""

from __future__ import annotations

import csv
import json
import logging
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources

import jsonschema
import numpy as np
from scipy import stats

from .benchmarks import fluid_solution, report, simulate_replication
from .exceptions import DataError, ScenarioError
from .fluid import FluidProblem, solve_dual, write_trace
from .model import Instance, example1_instance, expected_counts
from .policies import PolicyConfig

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = ["policy", "T", "R", "benchmark_kind", "mean_reward", "benchmark", "regret", "stderr"]
REPLICATION_COLUMNS = ["policy", "T", "replication", "reward", "offline"]
MIN_FIT_POINTS = 4


# ---------------------------------------------------------------------------
# scenarios


@dataclass
class Scenario:
    name: str
    base: Instance | None
    horizons: list
    replications: int
    seed: int
    policies: list
    rho: np.ndarray | None = None
    benchmarks: list = field(default_factory=lambda: ["fluid"])
    preset: str | None = None
    example_case: int | None = None

    def instance_for(self, T):
        if self.preset == "example1":
            return example1_instance(T, self.example_case)
        cap = None if self.rho is None else np.floor(self.rho * T + 1e-9)
        return self.base.with_horizon(T, cap)


def _schema():
    with resources.files("quantile_alloc").joinpath("schemas/scenario.schema.json").open() as fh:
        return json.load(fh)


def _expand_policies(entries):
    out = []
    for entry in entries:
        kind = entry["kind"]
        kw = {k: entry[k] for k in ("resolve_every", "bandwidth", "true_cdfs", "method") if k in entry}
        kappas = entry.get("kappa", 0.05)
        for kappa in (kappas if isinstance(kappas, list) else [kappas]):
            out.append(PolicyConfig(kind, kappa=float(kappa), **kw))
            if kind != "full":
                break
    labels = [c.label for c in out]
    if len(set(labels)) != len(labels):
        raise ScenarioError("policy labels must be unique")
    return out


def load_scenarios(doc):
    """Validate a scenario document and expand it into runnable sub-scenarios."""
    if isinstance(doc, (str, os.PathLike)):
        with open(doc) as fh:
            doc = json.load(fh)
    try:
        jsonschema.validate(doc, _schema())
    except jsonschema.ValidationError as exc:
        raise ScenarioError(f"invalid scenario: {exc.message}") from None
    horizons = [int(T) for T in doc["horizons"]]
    if len(set(horizons)) != len(horizons):
        raise ScenarioError("horizons must be distinct")
    common = dict(
        horizons=horizons,
        replications=int(doc["replications"]),
        seed=int(doc.get("seed", 0)),
        policies=_expand_policies(doc["policies"]),
        benchmarks=list(doc.get("benchmarks", ["fluid"])),
    )
    if doc.get("preset") == "example1":
        return [Scenario(f"{doc['name']}-scenario{k}", None, preset="example1", example_case=k, **common)
                for k in (1, 2)]
    if "instance" not in doc:
        raise ScenarioError("scenario needs an instance or a preset")
    try:
        base = Instance.from_dict(doc["instance"])
    except DataError as exc:
        raise ScenarioError(str(exc)) from None
    rho = None
    if "capacity_rule" in doc:
        rho = np.asarray(doc["capacity_rule"]["rho"], dtype=float)
        if rho.shape != (base.n_resources,):
            raise ScenarioError("capacity_rule.rho needs one entry per resource")
    for T in horizons:
        try:
            base.schedule.with_horizon(T)
        except DataError as exc:
            raise ScenarioError(str(exc)) from None
    return [Scenario(doc["name"], base, rho=rho, **common)]


def validate_scenario(doc):
    """Schema plus invariant checks; returns a list of human-readable findings."""
    findings = []
    for sc in load_scenarios(doc):
        for T in sc.horizons:
            inst = sc.instance_for(T)
            mu = expected_counts(inst)
            gamma = inst.schedule.map_gamma()
            need = mu @ inst.consumption
            binding = bool(np.any(inst.capacities < need - 1e-9))
            findings.append(f"{sc.name} T={T}: n={inst.n_types} m={inst.n_resources} "
                            f"min arrival prob={gamma:.4g} binding={binding}")
    return findings


# ---------------------------------------------------------------------------
# running


def _replication_job(args):
    sc, T, rep = args
    inst = sc.instance_for(T)
    offline = "exact" if "offline_exact" in sc.benchmarks else None
    return simulate_replication(inst, sc.policies, sc.seed, rep, offline)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(row[k]) for k in header])


def run_single(sc, out_dir, workers=1, solver_trace=False):
    os.makedirs(out_dir, exist_ok=True)
    summary, reps = [], []
    checked = 0
    for T in sc.horizons:
        inst = sc.instance_for(T)
        jobs = [(sc, T, rep) for rep in range(sc.replications)]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as ex:
                runs = list(ex.map(_replication_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
        else:
            runs = [_replication_job(j) for j in jobs]
        if solver_trace:
            prob = FluidProblem(expected_counts(inst), inst.consumption, inst.capacities, inst.packed)
            write_trace(solve_dual(prob, trace=True), os.path.join(out_dir, f"solver_trace_T{T}.csv"))
        # simulate_replication raises on any capacity violation, so every counted run was feasible
        checked += sum(len(r["rewards"]) for r in runs)
        fluid = fluid_solution(inst).objective
        offline = [r.get("offline", float("nan")) for r in runs]
        for cfg in sc.policies:
            rewards = [r["rewards"][cfg.label] for r in runs]
            for rep, (rw, off) in enumerate(zip(rewards, offline)):
                reps.append({"policy": cfg.label, "T": T, "replication": rep, "reward": rw, "offline": off})
            if "fluid" in sc.benchmarks:
                summary.append(report(cfg.label, T, rewards, "fluid", fluid).as_row())
            if "offline_exact" in sc.benchmarks:
                summary.append(report(cfg.label, T, rewards, "offline_exact", offline).as_row())
        log.info("%s: T=%d done", sc.name, T)
    order = {c.label: i for i, c in enumerate(sc.policies)}
    summary.sort(key=lambda r: (order[r["policy"]], r["T"], r["benchmark_kind"]))
    reps.sort(key=lambda r: (order[r["policy"]], r["T"], r["replication"]))
    _write_csv(os.path.join(out_dir, "summary.csv"), SUMMARY_COLUMNS, summary)
    _write_csv(os.path.join(out_dir, "replications.csv"), REPLICATION_COLUMNS, reps)
    meta = {
        "scenario": sc.name,
        "seed": sc.seed,
        "horizons": sc.horizons,
        "replications": sc.replications,
        "policies": [c.label for c in sc.policies],
        "benchmarks": sc.benchmarks,
        "feasible_trajectories": checked,
        "deviations": [f"{c.label}: re-solves every {c.resolve_every} periods"
                       for c in sc.policies if c.deviates],
    }
    with open(os.path.join(out_dir, "metadata.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def run_scenario(scenario, out_path, seed=None, workers=1, solver_trace=False):
    """Run every sub-scenario; one output directory per sub-scenario.

    Returns {sub-scenario name: summary rows}.
    """
    scenarios = load_scenarios(scenario) if not isinstance(scenario, list) else scenario
    try:
        os.makedirs(out_path, exist_ok=True)
    except OSError as exc:
        raise ScenarioError(f"cannot write to {out_path}: {exc}") from None
    if not os.access(out_path, os.W_OK):
        raise ScenarioError(f"cannot write to {out_path}")
    results = {}
    for sc in scenarios:
        if seed is not None:
            sc.seed = int(seed)
        sub = out_path if len(scenarios) == 1 else os.path.join(out_path, sc.name)
        results[sc.name] = run_single(sc, sub, workers, solver_trace)
    return results


# ---------------------------------------------------------------------------
# scaling fits


@dataclass
class ScalingFit:
    policy: str
    exponent: float
    intercept: float
    r2: float
    residuals: np.ndarray
    T: np.ndarray
    regret: np.ndarray
    polylog_ratio: np.ndarray


def read_summary(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("T", "R"):
            r[k] = int(r[k])
        for k in ("mean_reward", "benchmark", "regret", "stderr"):
            r[k] = float(r[k])
    return rows


def fit_power_law(T, regret, policy=""):
    """OLS of log regret on log T; nonpositive regrets are dropped with a warning."""
    T = np.asarray(T, dtype=float)
    y = np.asarray(regret, dtype=float)
    keep = y > 0.0
    if not np.all(keep):
        warnings.warn(f"{policy}: dropping {int((~keep).sum())} nonpositive regret value(s) from the fit",
                      RuntimeWarning, stacklevel=2)
    T, y = T[keep], y[keep]
    if T.size < MIN_FIT_POINTS:
        raise DataError(f"{policy}: need at least {MIN_FIT_POINTS} positive regret points, got {T.size}")
    lx, ly = np.log(T), np.log(y)
    res = stats.linregress(lx, ly)
    resid = ly - (res.intercept + res.slope * lx)
    return ScalingFit(policy, float(res.slope), float(res.intercept), float(res.rvalue ** 2), resid,
                      T, y, y / np.log(T) ** 3)


def fit_scaling(summary, benchmark_kind="fluid"):
    """Per-policy power-law fits from a summary CSV path or its rows."""
    rows = read_summary(summary) if isinstance(summary, (str, os.PathLike)) else summary
    rows = [r for r in rows if r["benchmark_kind"] == benchmark_kind]
    out = {}
    for pol in dict.fromkeys(r["policy"] for r in rows):
        sel = sorted((r for r in rows if r["policy"] == pol), key=lambda r: r["T"])
        out[pol] = fit_power_law([r["T"] for r in sel], [r["regret"] for r in sel], pol)
    return out
