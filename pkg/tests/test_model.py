import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from quantile_alloc import (
    ArrivalSchedule, Instance, QueryType, RewardDist, example1_instance, expected_counts,
    sample_history, sample_path,
)
from quantile_alloc.exceptions import DataError, DomainError
from quantile_alloc.model import REWARD_OBSERVED, TYPE_ONLY, HistoryStream

from conftest import drift_instance

DISTS = {
    "uniform": RewardDist.uniform(1.0, 2.0),
    "triangular": RewardDist.triangular(1.0, 3.0, 0.5, 2.0, 3.5),
    "tri_edge_mode": RewardDist.triangular(2.0, 3.0, 1.0, 1.5, 4.0),
    "mixture": RewardDist.mixture(0.3, RewardDist.uniform(1.0, 2.0), RewardDist.triangular(1.0, 3.0, 0.5, 2.0, 3.5)),
    "mixture_disjoint_knots": RewardDist.mixture(0.6, RewardDist.uniform(1.0, 2.5), RewardDist.uniform(2.0, 4.0)),
}


def scipy_truncated_triangular(lo, hi, left, mode, right):
    base = stats.triang(c=(mode - left) / (right - left), loc=left, scale=right - left)
    z = base.cdf(hi) - base.cdf(lo)
    return lambda x: np.clip((base.cdf(x) - base.cdf(lo)) / z, 0.0, 1.0)


# --- closed forms --------------------------------------------------------------


def test_uniform_closed_forms():
    d = DISTS["uniform"]
    assert d.quantile_integral(0.5) == pytest.approx(0.875, abs=1e-12)
    assert d.quantile_integral(0.0) == 0.0
    assert d.inv_cdf(0.5) == pytest.approx(1.5, abs=1e-12)
    assert d.mean == pytest.approx(1.5)
    assert (d.alpha, d.beta) == (1.0, 1.0)


@pytest.mark.parametrize("name", list(DISTS))
def test_quantile_integral_endpoints(name):
    d = DISTS[name]
    assert d.quantile_integral(0.0) == 0.0
    mean = integrate.quad(lambda x: x * d.pdf(x), d.r_lo, d.r_hi, limit=200)[0]
    assert d.quantile_integral(1.0) == pytest.approx(mean, abs=1e-10)
    assert d.mean == pytest.approx(mean, abs=1e-10)


def test_triangular_matches_scipy():
    d = DISTS["triangular"]
    ref = scipy_truncated_triangular(1.0, 3.0, 0.5, 2.0, 3.5)
    xs = np.linspace(0.5, 3.5, 301)
    np.testing.assert_allclose(d.cdf(xs), ref(xs), atol=1e-12)


def test_mixture_is_weighted_sum():
    u = RewardDist.uniform(1.0, 2.0)
    t = DISTS["triangular"]
    mix = DISTS["mixture"]
    xs = np.linspace(0.9, 3.1, 221)
    np.testing.assert_allclose(mix.cdf(xs), 0.3 * u.cdf(xs) + 0.7 * t.cdf(xs), atol=1e-12)


@pytest.mark.parametrize("name", list(DISTS))
def test_quantile_integral_matches_quadrature(name):
    d = DISTS[name]
    for q in (0.1, 0.37, 0.8):
        ref = integrate.quad(lambda u: d.inv_cdf(u), 1.0 - q, 1.0, limit=200)[0]
        assert d.quantile_integral(q) == pytest.approx(ref, abs=1e-8)


def test_domain_errors():
    d = DISTS["uniform"]
    with pytest.raises(DomainError):
        d.inv_cdf(1.2)
    with pytest.raises(DomainError):
        d.quantile_integral(-0.1)


@pytest.mark.parametrize("params", [
    ("uniform", {"lo": 0.0, "hi": 1.0}),
    ("uniform", {"lo": 2.0, "hi": 1.0}),
    ("triangular", {"lo": 1.0, "hi": 2.0, "left": 1.0, "mode": 1.5, "right": 3.0}),
    ("mixture", {"weight": 0.5, "components": [
        {"kind": "uniform", "params": {"lo": 1.0, "hi": 2.0}},
        {"kind": "uniform", "params": {"lo": 3.0, "hi": 4.0}}]}),
    ("beta", {}),
])
def test_invalid_distributions(params):
    with pytest.raises(DataError):
        RewardDist(*params)


# --- invariants -----------------------------------------------------------------


@pytest.mark.parametrize("name", list(DISTS))
def test_density_bounds_and_cdf_shape(name):
    d = DISTS[name]
    xs = np.linspace(d.r_lo, d.r_hi, 5001)
    f = d.pdf(xs)
    assert np.all(f >= d.alpha - 1e-12) and np.all(f <= d.beta + 1e-12)
    assert d.alpha > 0
    F = d.cdf(xs)
    assert F[0] == 0.0 and F[-1] == 1.0
    assert np.all(np.diff(F) >= 0.0)


@pytest.mark.parametrize("name", list(DISTS))
def test_inverse_roundtrip_grid(name):
    d = DISTS[name]
    p = np.linspace(0.0, 1.0, 1000)
    np.testing.assert_allclose(d.cdf(d.inv_cdf(p)), p, atol=1e-9)


@pytest.mark.parametrize("name", list(DISTS))
def test_quantile_integral_concave(name):
    d = DISTS[name]
    q = np.linspace(0.0, 1.0, 401)
    g = d.quantile_integral(q)
    assert np.max(np.diff(g, 2)) <= 1e-9


@pytest.mark.parametrize("name", list(DISTS))
def test_samples_pass_ks(name):
    d = DISTS[name]
    x = d.sample(np.random.default_rng(5), 100_000)
    res = stats.kstest(x, d.cdf)
    assert res.pvalue > 0.01


@given(
    lo=st.floats(0.5, 5.0),
    width=st.floats(0.1, 5.0),
    left_gap=st.floats(0.01, 2.0),
    right_gap=st.floats(0.01, 2.0),
    mode_frac=st.floats(0.0, 1.0),
    p=st.floats(0.0, 1.0),
)
def test_triangular_roundtrip_property(lo, width, left_gap, right_gap, mode_frac, p):
    hi = lo + width
    left, right = lo - left_gap, hi + right_gap
    mode = left + mode_frac * (right - left)
    d = RewardDist.triangular(lo, hi, left, mode, right)
    assert abs(d.cdf(d.inv_cdf(p)) - p) <= 1e-9
    ref = scipy_truncated_triangular(lo, hi, left, mode, right)
    x = lo + p * width
    assert d.cdf(x) == pytest.approx(float(ref(x)), abs=1e-9)
    q = np.linspace(0, 1, 51)
    assert np.max(np.diff(d.quantile_integral(q), 2)) <= 1e-9


# --- schedules, instances ---------------------------------------------------------


def test_schedule_validation_and_gamma():
    with pytest.raises(DataError):
        ArrivalSchedule(np.array([[0.5, 0.4]]))
    with pytest.raises(DataError):
        ArrivalSchedule(np.array([[1.2, -0.2]]))
    s = ArrivalSchedule.generate("sinusoidal", 100, 3, amplitude=0.5)
    assert s.map_gamma() == pytest.approx(0.5 / 3, rel=1e-2)
    r = ArrivalSchedule.generate("random_map", 100, 4, gamma=0.1, segments=3, seed=1)
    assert r.map_gamma() >= 0.1 - 1e-12
    np.testing.assert_allclose(r.probs.sum(axis=1), 1.0, atol=1e-12)


def test_piecewise_schedule():
    s = ArrivalSchedule.generate("piecewise", 10, 2, breaks=[0.3], probs=[[1, 0], [0.2, 0.8]])
    assert np.all(s.probs[:3] == [1, 0]) and np.allclose(s.probs[3:], [0.2, 0.8])


def test_query_type_validation():
    with pytest.raises(DataError):
        QueryType(np.array([0.0, 0.0]), DISTS["uniform"])
    with pytest.raises(DataError):
        QueryType(np.array([-1.0]), DISTS["uniform"])
    with pytest.raises(DataError):
        QueryType(np.array([1.0]), DISTS["uniform"], bounds=(1.2, 2.0))


def test_expected_counts():
    assert np.allclose(expected_counts(example1_instance(100, 1)), [50, 50])
    single = Instance([QueryType(np.array([1.0]), DISTS["uniform"])], ArrivalSchedule.stationary(37, [1.0]),
                      np.array([5.0]))
    assert expected_counts(single)[0] == 37
    p = [0.2, 0.5, 0.3]
    inst = Instance(drift_instance().types, ArrivalSchedule.stationary(40, p), np.array([1.0, 1.0]))
    np.testing.assert_allclose(expected_counts(inst), 40 * np.array(p))


# --- sampling ---------------------------------------------------------------------


def test_degenerate_row_always_first_type():
    sched = ArrivalSchedule(np.tile([1.0, 0.0], (50, 1)))
    inst = Instance([QueryType(np.array([1.0]), DISTS["uniform"])] * 2, sched, np.array([1.0]))
    assert np.all(sample_path(inst, 3).types == 0)


def test_example1_path_types():
    path = sample_path(example1_instance(4, 1), 0)
    assert path.types.tolist() == [0, 0, 1, 1]


def test_uniform_law_of_large_numbers():
    inst = Instance([QueryType(np.array([1.0]), DISTS["uniform"])], ArrivalSchedule.stationary(100_000, [1.0]),
                    np.array([1.0]))
    assert abs(sample_path(inst, 11).rewards.mean() - 1.5) <= 0.01


def test_history_modes_share_types():
    inst = drift_instance(300)
    h1 = sample_history(inst, TYPE_ONLY, 4)
    h2 = sample_history(inst, REWARD_OBSERVED, 4)
    assert h1.rewards is None
    assert np.array_equal(h1.types, h2.types)
    lo, hi = inst.reward_bounds
    assert np.all(h2.rewards >= lo[h2.types]) and np.all(h2.rewards <= hi[h2.types])
    with pytest.raises(DataError):
        HistoryStream(TYPE_ONLY, h1.types, h2.rewards)


def test_two_history_seeds_same_marginals():
    inst = drift_instance(3000)
    a = sample_history(inst, TYPE_ONLY, 1).types
    b = sample_history(inst, TYPE_ONLY, 2).types
    assert not np.array_equal(a, b)
    mu = expected_counts(inst)
    for types in (a, b):
        obs = np.bincount(types, minlength=3)
        assert stats.chisquare(obs, mu).pvalue > 0.01
    # per-period marginals: pool periods in 10 blocks against the block sums of the schedule
    blocks = np.array_split(np.arange(inst.horizon), 10)
    obs = np.array([np.bincount(a[blk], minlength=3) for blk in blocks]).ravel()
    exp = np.array([inst.schedule.probs[blk].sum(axis=0) for blk in blocks]).ravel()
    assert stats.chisquare(obs, exp, ddof=0).pvalue > 0.01


def test_deterministic_rows_history_equals_path():
    inst = example1_instance(20, 2)
    assert np.array_equal(sample_path(inst, 1).types, sample_history(inst, TYPE_ONLY, 99).types)


def test_sampling_reproducible():
    inst = drift_instance(200)
    p1, p2 = sample_path(inst, 7), sample_path(inst, 7)
    assert np.array_equal(p1.types, p2.types) and np.array_equal(p1.rewards, p2.rewards)
    h1 = sample_history(inst, REWARD_OBSERVED, np.random.SeedSequence(3))
    h2 = sample_history(inst, REWARD_OBSERVED, np.random.SeedSequence(3))
    assert np.array_equal(h1.rewards, h2.rewards)
    p1.validate(inst)


# --- serialization ----------------------------------------------------------------


def test_json_roundtrip(tmp_path):
    inst = drift_instance(120)
    path = tmp_path / "inst.json"
    inst.dump(path)
    back = Instance.load(path)
    np.testing.assert_array_equal(back.schedule.probs, inst.schedule.probs)
    np.testing.assert_array_equal(back.consumption, inst.consumption)
    assert back.types[2].reward.cdf(2.7) == inst.types[2].reward.cdf(2.7)
    ex = example1_instance(10, 1)
    assert Instance.from_dict(json.loads(json.dumps(ex.to_dict()))).types[1].bounds == (0.01, 3.0)


def test_json_schema_rejects_bad_documents():
    doc = drift_instance(10).to_dict()
    doc["types"][0]["reward"]["kind"] = "normal"
    with pytest.raises(DataError):
        Instance.from_dict(doc)
    doc = drift_instance(10).to_dict()
    del doc["capacities"]
    with pytest.raises(DataError):
        Instance.from_dict(doc)
