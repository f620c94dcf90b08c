import math

import numpy as np
import pytest

from pathspace import concentration as conc
from pathspace import get_model


@pytest.fixture(scope="module")
def h1():
    return get_model("heisenberg-1")


def test_cc_special_cases(h1):
    assert conc.cc_distance(h1, [0, 0, 0]) == 0.0
    assert conc.cc_distance(h1, [0.3, -0.4, 0.0]) == pytest.approx(0.5)
    assert conc.cc_distance(h1, [0, 0, 2.0]) == pytest.approx(2 * math.sqrt(2 * math.pi))
    assert conc.cc_distance(h1, [0, 0, -2.0]) == conc.cc_distance(h1, [0, 0, 2.0])


def test_cc_homogeneous(h1):
    p = np.array([0.4, 0.1, 0.7])
    for lam in (0.5, 2.0, 3.0):
        q = np.array([lam * p[0], lam * p[1], lam**2 * p[2]])
        assert conc.cc_distance(h1, q) == pytest.approx(lam * conc.cc_distance(h1, p), rel=1e-9)


def test_cc_continuous_near_axis(h1):
    d0 = conc.cc_distance(h1, [0, 0, 1.0])
    assert conc.cc_distance(h1, [1e-7, 0, 1.0]) == pytest.approx(d0, rel=1e-5)


def test_cc_matches_control_oracle(h1):
    for p in ([0, 0, 1.0], [0.7, 0.2, 0.4]):
        o = conc.control_oracle_distance(h1, p)
        d = conc.cc_distance(h1, p)
        assert d <= o * (1 + 1e-6) and (o - d) / d < 0.01


def test_eps_distance_properties(h1):
    pts = np.random.default_rng(3).uniform(-1.5, 1.5, (20, 3))
    cc = conc.cc_distance(h1, pts)
    r = np.hypot(pts[:, 0], pts[:, 1])
    prev = cc
    for eps in (0.1, 0.25, 0.5, 1, 2, 4):
        d = conc.eps_distance_closed(h1, pts, eps)
        assert np.all(d <= prev + 1e-9) and np.all(d >= r - 1e-12)
        prev = d
    assert np.allclose(conc.eps_distance_closed(h1, pts, 1e-7), cc, rtol=1e-3)


def test_eps_distance_z_axis(h1):
    # short vertical segment or a loop plus a shorter vertical segment
    assert conc.eps_distance_closed(h1, [0, 0, 1.0], 0.5) == pytest.approx(1 / math.sqrt(0.5))
    assert conc.eps_distance_closed(h1, [0, 0, 1.0], 0.1) == pytest.approx(
        math.sqrt(4 * math.pi - 4 * math.pi**2 * 0.1))


def test_shooting_matches_closed_form(h1):
    for p, eps in (([0.7, 0.2, 0.4], 0.25), ([0.1, 0.0, 1.0], 1.0), ([1.0, 0.0, -0.3], 0.5)):
        s = conc.riemannian_eps_distance(h1, p, eps)
        assert s.converged and s.n_converged >= 1
        assert s.distance == pytest.approx(float(conc.eps_distance_closed(h1, p, eps)), abs=1e-7)
    flat = conc.riemannian_eps_distance(h1, [0.3, 0.4, 0.0], 2.0)
    assert flat.distance == pytest.approx(0.5)


def test_shooting_fallback(h1):
    s = conc.riemannian_eps_distance(h1, [0.2, 0.1, 3.0], 0.5, n_starts=1, max_iter=0)
    assert not s.converged and s.flag == "no-shot-converged"
    lo, hi = s.interval
    assert lo <= s.distance <= hi


def test_symmetry_and_triangle(h1):
    rng = np.random.default_rng(0)
    for _ in range(20):
        p, q, w = rng.uniform(-1, 1, (3, 3))
        d = lambda a, b: float(conc.cc_distance(h1, h1.multiply(h1.inverse(a), b)))
        assert d(p, q) == pytest.approx(d(q, p), rel=1e-9)
        assert d(p, w) <= d(p, q) + d(q, w) + 1e-8


def test_koranyi_sandwich(h1):
    lo, hi = conc.estimate_sandwich(h1)
    assert lo == pytest.approx(1.0, abs=1e-6) and hi == pytest.approx(math.sqrt(math.pi), rel=1e-6)
    dm = conc.DistanceModel("cc", sandwich=(lo, hi))
    dm(h1, np.random.default_rng(1).normal(size=(100, 3)))
    tight = conc.DistanceModel("cc", sandwich=(1.0, 1.2))
    with pytest.raises(conc.SandwichViolation):
        tight(h1, [[0, 0, 1.0]])


def test_distance_model_validation():
    with pytest.raises(ValueError):
        conc.DistanceModel("riemannian_eps")
    with pytest.raises(ValueError):
        conc.DistanceModel("taxicab")
    assert conc.DistanceModel("riemannian_eps", 0.5).label == "riemannian_eps(0.5)"


def test_sup_along_pruning_matches_bruteforce(h1):
    from pathspace.sde import TimeGrid, simulate
    p = simulate(h1, TimeGrid.from_dt(1.0, 1e-2), 0, range(30))
    for dm in (conc.DistanceModel("cc"), conc.DistanceModel("riemannian_eps", 0.5)):
        fast = dm.sup_along(h1, p.states)
        slow = np.max(dm(h1, p.states), axis=1)
        assert np.array_equal(fast, slow)


def test_tail_curve_edges():
    sups = np.array([0.1, 0.5, 0.9, 1.3])
    tc = conc.tail_curve(sups, [0.0, 0.4, 10.0], center=0.5)
    assert list(tc.count) == [3, 2, 0]
    assert tc.p_hat[-1] == 0.0 and tc.wilson_hi[-1] > 0
    assert np.all(np.diff(tc.p_hat) <= 0)


def test_herbst_bound_values(h1):
    b = h1.bounds
    assert conc.herbst_bound(b, 1.0, 1.0, 1.0) == pytest.approx(math.exp(-1 / (2 * math.e)))
    assert conc.herbst_bound(b, 1.0, 1.0, 2.0) == pytest.approx(math.exp(-4 / (2 * math.e)))
    assert conc.herbst_bound(b, 1.0, 1.0, 2.0) == pytest.approx(0.479, abs=1e-3)


def test_herbst_vacuous_pass(h1):
    tc = conc.tail_curve(np.zeros(2000), [5.0, 6.0], center=0.0)
    assert np.all(conc.herbst_bound_check(tc, h1.bounds, 1.0, 1.0))


def test_herbst_small_run(tmp_path, h1):
    res = conc.herbst_check(h1, 1.0, 1.0, 3000, dt=1e-2, seed=4)
    assert res.passed and not res.reevaluated
    assert 0 < res.curve.p_hat[0] < 1
    res.curve.to_csv(tmp_path / "t.csv")
    head = (tmp_path / "t.csv").read_text().splitlines()[0]
    assert head == "r,p_hat,wilson_lo,wilson_hi,bound_value,pass"


def test_slope_window(h1):
    (lo, hi), _ = conc.slope_window(h1, 1.0)
    assert (lo, hi) == (-2.0, -0.5)
    (lo2, hi2), _ = conc.slope_window(h1, 2.0)
    assert (lo2, hi2) == (lo / 2, hi / 2)
    assert conc.d_constant(h1) == 8.0
    assert conc.d_constant(get_model("euclidean-1")) == 1.0


def test_slope_inconclusive(h1):
    r = conc.tail_slope_sandwich(h1, 1.0, 0, sups=np.full(50, 0.3))
    assert r.verdict == "INCONCLUSIVE" and not r.passed and r.slope is None


def test_lower_bound_constant(h1):
    assert conc.lower_bound_constant(h1, 1.0, 1.0) == pytest.approx(4 + 48 * math.log(2), rel=1e-12)
    assert conc.lower_bound_constant(h1, 1e-8, 1.0) == pytest.approx(4.0)
    assert conc.lower_bound_constant(h1, 1.0, 1e9) == pytest.approx(4.0)
    with pytest.raises(ValueError):
        conc.lower_bound_constant(get_model("euclidean-1"), 1.0, 1.0)
