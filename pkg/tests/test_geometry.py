import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathspace import geometry as geo


@pytest.fixture(scope="module")
def h1():
    return geo.build_heisenberg(1)


def test_j_matrix_h1(h1):
    J = geo.j_endomorphism(h1, [1.0])
    assert np.array_equal(J, [[0.0, 1.0], [-1.0, 0.0]])
    # J_Z X_1 = -Y_1, J_Z Y_1 = X_1
    assert np.array_equal(J @ [1, 0], [0, -1])
    assert np.array_equal(J @ [0, 1], [1, 0])


def test_j_linear_and_zero(h1):
    assert np.array_equal(geo.j_endomorphism(h1, [2.0]), 2 * geo.j_endomorphism(h1, [1.0]))
    assert not np.any(geo.j_endomorphism(h1, [0.0]))


def test_j_rejects_horizontal(h1):
    with pytest.raises(ValueError):
        geo.j_endomorphism(h1, [1.0, 0.0, 1.0])


def test_j_matches_torsion_definition(h1):
    # <J_Z X_1, Y_1> = <Z, T(X_1, Y_1)> with T(X_1, Y_1) = -Z
    J = geo.j_endomorphism(h1, [1.0])
    assert (J @ [1, 0]) @ [0, 1] == -1.0
    assert np.allclose(geo.torsion_fd(h1, np.array([0.3, -0.2, 0.5]))[0, 1], [-1.0])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2**31))
def test_j_skew(n, seed):
    m = geo.build_heisenberg(n)
    rng = np.random.default_rng(seed)
    J = geo.j_endomorphism(m, rng.standard_normal(1))
    u, v = rng.standard_normal((2, m.dim_h))
    assert abs((J @ u) @ v + u @ (J @ v)) < 1e-12
    assert np.array_equal(J, -J.T)


def test_constants_h1(h1):
    assert (h1.bounds.K, h1.bounds.kappa, h1.bounds.rho2) == (0.0, 1.0, 0.5)
    j2 = h1.j_squared()
    assert np.allclose(j2[:2, :2], -np.eye(2))
    assert not np.any(j2[2:]) and not np.any(j2[:, 2:])
    assert geo.verify_bounds(h1)["ok"]


def test_constants_h2():
    m = geo.build_heisenberg(2)
    assert m.bounds.rho2 == 1.0
    chk = geo.verify_bounds(m)
    assert chk["ok"] and abs(chk["rho2_slack"]) < 1e-9


def test_rejects_bad_dimensions():
    for bad in (0, -1, 1.5):
        with pytest.raises(ValueError):
            geo.build_heisenberg(bad)
        with pytest.raises(ValueError):
            geo.build_euclidean_degenerate(bad)
    with pytest.raises(KeyError):
        geo.get_model("sphere-2")


def test_model_registry():
    assert geo.get_model("heisenberg-2").dim == 5
    assert geo.get_model("euclidean-2").dim_v == 0
    assert geo.get_model("euclidean-1").bounds.kappa == geo.KAPPA_FLOOR


@pytest.mark.parametrize("name", ["heisenberg-1", "heisenberg-2", "euclidean-2"])
def test_yang_mills(name):
    m = geo.get_model(name)
    pts = np.random.default_rng(0).standard_normal((3, m.dim))
    assert geo.yang_mills_check(m, pts) < 1e-10


def test_frames_orthonormal(h1):
    p = np.array([[0.4, -1.2, 0.7], [2.0, 1.0, -3.0]])
    E = h1.frame_matrix(p)
    cof = np.linalg.inv(E)
    # coframe metric diag(1,1,1) pulls back to E^{-T} E^{-1}
    g = np.einsum("pki,pkj->pij", cof, cof)
    assert np.allclose(np.einsum("pki,pkl,plj->pij", E, g, E), np.eye(3))
    assert np.allclose(E[:, :, 0], np.c_[np.ones(2), np.zeros(2), -p[:, 1] / 2])


def test_eps_norm_monotone():
    eta = np.array([0.3, -0.4, 1.2])
    vals = [geo.eps_norm2(eta, e, 2) for e in (0.1, 0.5, 1.0, 4.0)]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    h = np.array([0.3, -0.4, 0.0])
    assert len({geo.eps_norm2(h, e, 2) for e in (0.1, 1.0, 4.0)}) == 1
    assert geo.CovectorEps(eta, 2.0, 2).norm2() == pytest.approx(0.25 + 2.0 * 1.44)


def test_group_law(h1):
    p, q = np.array([1.0, 2.0, 0.5]), np.array([-0.3, 0.1, 2.0])
    pq = h1.multiply(p, q)
    assert np.allclose(pq, [0.7, 2.1, 0.5 + 2.0 + 0.5 * (1.0 * 0.1 - 2.0 * -0.3)])
    assert np.allclose(h1.multiply(p, h1.inverse(p)), 0)


def test_torsion_operator_skew(h1):
    # the vertical case of the torsion operator, read as (1/eps) eta(J_Y V),
    # must be skew with respect to g_eps
    for eps in (0.25, 1.0, 3.0):
        G = np.diag(h1.dual_metric(eps))
        for v in np.random.default_rng(1).standard_normal((4, 2)):
            A = h1.torsion_operator(v, eps)
            assert np.allclose(G @ A + (G @ A).T, 0, atol=1e-12)


def test_to_json(h1):
    doc = json.loads(h1.to_json())
    assert doc["bounds"]["rho2"] == 0.5 and doc["name"] == "heisenberg-1"


class TestWeitzenbock:
    @staticmethod
    def smooth(dim):
        a = np.linspace(0.7, 1.3, dim)

        def value(p):
            return math.sin(a @ p) + math.exp(0.2 * p.sum())

        def grad(p):
            return math.cos(a @ p) * a + 0.2 * math.exp(0.2 * p.sum()) * np.ones(dim)

        return geo.SmoothFunction(value, grad)

    @pytest.mark.parametrize("name,eps", [("heisenberg-1", 1.0), ("heisenberg-1", 0.3), ("heisenberg-2", 2.0)])
    def test_second_order(self, name, eps):
        m = geo.get_model(name)
        r = geo.weitzenbock_residual(m, self.smooth(m.dim), np.full(m.dim, 0.2), eps, h=1e-2)
        assert 3.5 <= r.ratio <= 4.5
        assert r.flag is None

    def test_constant(self, h1):
        f = geo.SmoothFunction(lambda p: 3.0, lambda p: np.zeros(3))
        r = geo.weitzenbock_residual(h1, f, np.zeros(3), 1.0)
        assert not np.any(r.lhs) and not np.any(r.rhs)

    def test_euclidean_square(self):
        m = geo.get_model("euclidean-2")
        f = geo.SmoothFunction(lambda p: float(p @ p), lambda p: 2 * p)
        r = geo.weitzenbock_residual(m, f, np.array([0.4, -1.0]), 1.0)
        assert np.max(r.residual) < 1e-8

    def test_flags_cancellation(self, h1):
        with pytest.warns(UserWarning):
            r = geo.weitzenbock_residual(h1, self.smooth(3), np.full(3, 0.2), 1.0, h=1e-6)
        assert r.flag == "cancellation"
