import json
import math

import numpy as np
import pytest
from scipy import stats

from lorentzgas.analysis import (
    EmpiricalMeasure,
    EstimateWithError,
    _covariance,
    bump_observable,
    chaos_covariance,
    exponential_cdf,
    free_path_samples,
    ks_statistic,
    loop_probability,
    marginal_measure,
    measure_window,
    report_json,
    skorokhod_distance,
    sup_distance,
    tv_distance,
)
from lorentzgas.dynamics import (
    PhaseState,
    Trajectory,
    advance_boltzmann,
    advance_markovian,
    path_seeds,
    run_ensemble,
    start_states,
)
from lorentzgas.errors import Empty, GridMismatch, HorizonMismatch
from lorentzgas.geometry import validate_params
from lorentzgas.rng import ObstacleDensity

BUMP = ObstacleDensity()
P2 = validate_params(1e-2, 0.75)
WIN = (-1.0, -1.0, 1.0, 1.0)


def _path(jumps, velocities, horizon, x0=(0.0, 0.0)):
    """Hand-built macroscopic path: velocity[i] holds after jumps[i-1]."""
    t = np.concatenate([[0.0], jumps, [horizon]])
    v = np.array(list(velocities) + [velocities[-1]], dtype=float)
    x = [np.asarray(x0, dtype=float)]
    for i in range(1, len(t)):
        x.append(x[-1] + (t[i] - t[i - 1]) * v[i - 1])
    kind = np.array([0] + [1] * len(jumps) + [2], dtype=np.int8)
    n = len(t)
    return Trajectory(t, np.array(x), v, kind, np.zeros((n, 2), dtype=np.int64), np.zeros(n), horizon, "macro",
                      1.0, "boltzmann", PhaseState(x0, v[0]))


# free paths and KS


def test_free_path_examples():
    tr = _path([0.2, 0.7], [(1, 0), (0, 1), (-1, 0)], 1.0)
    fp = free_path_samples(tr)
    np.testing.assert_allclose(fp.interior, [0.5])
    np.testing.assert_allclose(sorted(fp.censored), [0.2, 0.3])
    free = free_path_samples([_path([], [(1, 0)], 2.0)])
    assert free.interior.size == 0 and free.censored.tolist() == [2.0]


def test_free_paths_from_ensemble_match_trajectories():
    res = run_ensemble("markovian", 20, 1.0, 6, params=P2, density=BUMP)
    seeds = path_seeds(6, 20)
    trs = [advance_markovian(PhaseState(s[:2], s[2:]), P2, int(k), BUMP, 1.0) for s, k in zip(res.starts, seeds)]
    a, b = free_path_samples(res), free_path_samples(trs)
    np.testing.assert_allclose(np.sort(a.interior), np.sort(b.interior), atol=1e-12)
    np.testing.assert_allclose(np.sort(a.censored), np.sort(b.censored), atol=1e-12)


def test_boltzmann_free_paths_are_exponential():
    res = run_ensemble("boltzmann", 100, 1000.0, 42)
    fp = free_path_samples(res)
    assert fp.interior.size >= 100_000
    assert ks_statistic(fp.interior, exponential_cdf(2.0)) < 0.005


def test_ks_examples():
    rng = np.random.default_rng(0)
    x = rng.exponential(0.5, 1_000_000)
    assert ks_statistic(x, exponential_cdf(2.0)) < 0.002
    assert ks_statistic([math.log(2) / 2], exponential_cdf(2.0)) == pytest.approx(0.5)
    assert ks_statistic([-3.0, -1.0], exponential_cdf(2.0)) == 1.0
    with pytest.raises(Empty):
        ks_statistic([], exponential_cdf(2.0))
    ref = stats.kstest(x[:1000], "expon", args=(0, 0.5)).statistic
    assert ks_statistic(x[:1000], exponential_cdf(2.0)) == pytest.approx(ref, abs=1e-12)


# total variation


def _states(rng, n):
    pos = rng.normal(0.0, 0.15, (n, 2))
    ang = rng.normal(math.pi, 0.25, n)
    return np.column_stack([pos, np.cos(ang), np.sin(ang)])


def test_tv_examples():
    rng = np.random.default_rng(1)
    s = _states(rng, 1000)
    a = EmpiricalMeasure.from_states(s, WIN, (8, 8, 8))
    assert tv_distance(a, a) == 0.0
    far = s.copy()
    far[:, 2:] *= -1  # opposite angles
    assert tv_distance(a, EmpiricalMeasure.from_states(far, WIN, (8, 8, 8))) == pytest.approx(1.0)
    with pytest.raises(GridMismatch):
        tv_distance(a, EmpiricalMeasure.from_states(s, WIN, (8, 8, 4)))


def test_tv_sampling_noise_floor():
    rng = np.random.default_rng(2)
    a = EmpiricalMeasure.from_states(_states(rng, 1_000_000), WIN, (32, 32, 32))
    b = EmpiricalMeasure.from_states(_states(rng, 1_000_000), WIN, (32, 32, 32))
    assert tv_distance(a, b) < 0.03


def test_tv_is_a_metric():
    rng = np.random.default_rng(3)
    grid = (4, 4, 4)
    for _ in range(200):
        ms = [EmpiricalMeasure.from_states(rng.uniform(-1.2, 1.2, (50, 4)), WIN, grid) for _ in range(3)]
        a, b, c = ms
        assert tv_distance(a, b) == tv_distance(b, a)
        assert tv_distance(a, c) <= tv_distance(a, b) + tv_distance(b, c) + 1e-15
        assert 0 <= tv_distance(a, b) <= 1
        assert (tv_distance(a, b) == 0) == (np.array_equal(a.counts, b.counts) and a.outside == b.outside)


def test_measure_bookkeeping():
    rng = np.random.default_rng(4)
    s = rng.uniform(-1.5, 1.5, (1000, 4))
    m = EmpiricalMeasure.from_states(s, WIN, (5, 6, 7))
    assert m.total + m.outside == 1000
    assert m.masses().sum() + m.outside / 1000 == pytest.approx(1.0, abs=1e-12)
    a = EmpiricalMeasure.from_states(s[:400], WIN, (5, 6, 7))
    b = EmpiricalMeasure.from_states(s[400:], WIN, (5, 6, 7))
    ab, ba = a.merge(b), b.merge(a)
    assert np.array_equal(ab.counts, m.counts) and np.array_equal(ba.counts, m.counts)
    assert ab.outside == ba.outside == m.outside
    with pytest.raises(Empty):
        EmpiricalMeasure.empty(WIN, (2, 2, 2)).masses()
    lines = m.to_csv().splitlines()
    assert lines[0] == "i,j,l,x1_center,x2_center,angle_center,count,mass"
    assert len(lines) == 5 * 6 * 7 + 1
    assert measure_window((-0.5, -0.5, 0.5, 0.5), 1.0) == (-1.5, -1.5, 1.5, 1.5)


# path distances


def test_skorokhod_identical_paths():
    tr = advance_boltzmann(PhaseState((0, 0), (1, 0)), 2.0, 3.0, 5)
    assert skorokhod_distance(tr, tr) == 0.0
    assert sup_distance(tr, tr) == 0.0


@pytest.mark.parametrize("delta", [1e-3, 0.02, 0.1])
def test_skorokhod_absorbs_delayed_jump(delta):
    a = _path([0.5], [(1, 0), (0, 1)], 1.0)
    b = _path([0.5 + delta], [(1, 0), (0, 1)], 1.0)
    assert sup_distance(a, b) >= 1.0  # velocities disagree between the jumps
    assert skorokhod_distance(a, b) <= delta * (1 + 1e-9)


def test_skorokhod_without_warp_is_sup_distance():
    rng = np.random.default_rng(6)
    for seed in range(10):
        a = advance_boltzmann(PhaseState((0, 0), (1, 0)), 2.0, 2.0, seed)
        b = advance_boltzmann(PhaseState((0, 0.01), (1, 0)), 2.0, 2.0, seed + 100)
        sup = sup_distance(a, b)
        assert skorokhod_distance(a, b, warp_grid=0) == sup
        assert skorokhod_distance(a, b) <= sup
        # brute-force sup on a dense grid never exceeds the event-grid value
        tt = np.sort(rng.uniform(0, 2.0, 5000))
        xa, va = a.evaluate(tt)
        xb, vb = b.evaluate(tt)
        dense = np.max(np.abs(np.hstack([xa - xb, va - vb])))
        assert dense <= sup + 1e-12


def test_skorokhod_horizon_mismatch():
    a = _path([], [(1, 0)], 1.0)
    b = _path([], [(1, 0)], 1.5)
    with pytest.raises(HorizonMismatch):
        skorokhod_distance(a, b)


# ensemble estimators


def test_estimate_with_error():
    e = EstimateWithError(0.5, 0.1, 100)
    assert e.ci == pytest.approx((0.2, 0.8))
    assert e.as_record("p") == {"name": "p", "value": 0.5, "stderr": 0.1, "n": 100}
    with pytest.raises(ValueError):
        EstimateWithError(0.5, -1.0, 1)


def test_loop_probability_deterministic():
    a = loop_probability(P2, BUMP, "markovian", 1.0, 2000, 7)
    b = loop_probability(P2, BUMP, "markovian", 1.0, 2000, 7, threads=2)
    assert a == b
    assert 0 < a.value < 1
    assert a.standard_error == pytest.approx(math.sqrt(a.value * (1 - a.value) / 2000))


def test_estimators_invariant_under_relabeling():
    res = run_ensemble("markovian", 3000, 1.0, 8, params=P2, density=BUMP)
    perm = np.random.default_rng(0).permutation(3000)
    assert res.has_loop.mean() == res.has_loop[perm].mean()
    g = bump_observable((0.0, 0.0))
    a = g(res.final[:, :2])
    b = g(res.final[::-1, :2])
    c1, c2 = _covariance(a, b), _covariance(a[perm], b[perm])
    assert c1.value == pytest.approx(c2.value, abs=1e-15)
    assert c1.standard_error == pytest.approx(c2.standard_error, rel=1e-12)


def test_constant_observables_have_zero_covariance():
    one = lambda x, v=None: np.ones(len(x))  # noqa: E731
    est = chaos_covariance(one, one, P2, BUMP, 0.5, 500, 3)
    assert est.value == 0.0 and est.standard_error == 0.0


def test_markovian_pairs_are_uncorrelated():
    g1 = bump_observable((-0.3, 0.0))
    g2 = bump_observable((0.3, 0.0))
    est = chaos_covariance(g1, g2, P2, BUMP, 1.0, 10_000, 11, process="markovian")
    assert abs(est.value) < 3 * est.standard_error
    again = chaos_covariance(g1, g2, P2, BUMP, 1.0, 10_000, 11, process="markovian")
    assert again == est


def test_bump_observable():
    g = bump_observable((1.0, 0.0), 0.5)
    np.testing.assert_allclose(g(np.array([[1.0, 0.0], [1.5, 0.0], [3.0, 3.0]])), [1.0, 0.0, 0.0])
    assert 0 < g(np.array([[1.2, 0.1]]))[0] < 1


def test_marginal_at_time_zero_is_start_law():
    m = marginal_measure("markovian", P2, BUMP, 0.0, 5000, 9, grid=(8, 8, 8))
    direct = EmpiricalMeasure.from_states(start_states(9, 5000, (-0.5, -0.5, 0.5, 0.5)), m.window, (8, 8, 8))
    assert np.array_equal(m.counts, direct.counts) and m.outside == 0
    b = marginal_measure("boltzmann", None, None, 0.0, 5000, 9, grid=(8, 8, 8))
    assert tv_distance(m, b) == 0.0


def test_marginal_measure_deterministic():
    a = marginal_measure("boltzmann", None, None, 1.0, 4000, 10, grid=(8, 8, 8))
    b = marginal_measure("boltzmann", None, None, 1.0, 4000, 10, grid=(8, 8, 8), threads=3)
    assert np.array_equal(a.counts, b.counts)
    assert a.window == (-1.5, -1.5, 1.5, 1.5) and a.outside == 0


def test_report_json_is_sorted():
    text = report_json("loops", {"epsilon": 0.01}, 3, [EstimateWithError(0.1, 0.01, 10).as_record("p")])
    doc = json.loads(text)
    assert list(doc) == sorted(doc) == ["estimates", "experiment", "params", "seed"]
    assert text.endswith("\n")
