import math

import numpy as np
import pytest

from pathspace import functional as fn
from pathspace import get_model
from pathspace.functions import CylinderFunction


def test_entropy_constant_and_error():
    e, _ = fn.entropy_from_samples(np.full(100, 3.0))
    assert e.ent == 0.0 and e.stderr == 0.0
    with pytest.raises(ValueError):
        fn.entropy_from_samples(np.zeros(10))


def test_entropy_homogeneity():
    g = np.random.default_rng(0).lognormal(size=5000)
    e1, _ = fn.entropy_from_samples(g)
    e2, _ = fn.entropy_from_samples(3.0 * g)
    assert e2.ent == pytest.approx(9.0 * e1.ent, rel=1e-10)
    assert e1.nonnegative


def test_entropy_clamp():
    g = np.array([0.0, 1.0, 2.0, 1e-20])
    e, _ = fn.entropy_from_samples(g)
    assert e.n_clamped == 2 and math.isfinite(e.ent)


def test_entropy_gaussian_closed_form():
    m = get_model("euclidean-1")
    G = CylinderFunction.from_key("exp:0,1", [1.0])
    e = fn.entropy(G, m, 40_000, dt=0.05, seed=1)
    assert abs(e.ent - 0.5 * math.exp(0.5)) < 4 * e.stderr


def test_lsi_constant():
    b = get_model("heisenberg-1").bounds
    assert fn.lsi_constant(b, 1.0, 1.0) == pytest.approx(2 * math.e**3)
    assert fn.lsi_constant(b, 1.0, 1.0) == pytest.approx(40.171, abs=1e-3)
    vals = [fn.lsi_constant(b, e, 1.0) for e in (0.25, 1.0, 4.0)]
    assert vals == pytest.approx([2 * math.e**12, 2 * math.e**3, 2 * math.e**0.75])
    assert vals[0] > vals[1] > vals[2]


def test_chain_constant_function():
    m = get_model("heisenberg-1")
    G = CylinderFunction.from_key("const:2", [0.5, 1.0])
    r = fn.lsi_chain(G, m, 1.0, 200, dt=1e-2, seed=0)
    for link in (r.lemma42, r.lemma43, r.lemma44, r.theorem41):
        assert link.lhs == 0.0 and link.rhs == 0.0 and link.margin is None and link.passed
    assert r.passed


def test_chain_euclidean_reduction():
    m = get_model("euclidean-1")
    G = CylinderFunction.from_key("poly:0@0*0@1+1.0", [0.5, 1.0])
    r = fn.lsi_chain(G, m, 1.0, 500, dt=1e-2, seed=0)
    # tau = Theta = Id, so the lemma43 and lemma44 sums coincide up to the kappa floor factor
    assert r.lemma43.lhs == pytest.approx(r.lemma43.rhs, rel=1e-9)
    assert r.lemma44.lhs == pytest.approx(r.lemma44.rhs, rel=1e-9)
    assert r.lemma44.extra["abel_gap"] < 1e-12 and r.passed


def test_chain_h1_small():
    m = get_model("heisenberg-1")
    gs = [CylinderFunction.from_key(fn.G_FAMILIES["affine"], [0.5, 1.0]),
          CylinderFunction.from_key(fn.G_FAMILIES["bump"], [1.0])]
    res = fn.lsi_chain(gs, m, [0.5, 1.0], 2000, dt=1e-2, seed=5)
    assert len(res) == 4 and [r.epsilon for r in res] == [0.5, 0.5, 1.0, 1.0]
    for r in res:
        assert r.passed
        assert r.lemma44.extra["m_increment_max_ratio"] <= 1 + r.lemma44.extra["m_increment_tol"]
        assert r.lemma44.extra["abel_gap"] < 1e-10
        rec = r.theorem41.to_record()
        assert set(["check", "model", "epsilon", "T", "n_paths", "lhs", "lhs_se", "rhs", "rhs_se", "margin",
                    "pass"]) <= set(rec)


def test_single_check_wrappers():
    m = get_model("heisenberg-1")
    G = CylinderFunction.from_key("bump:0;0;0.5,1,0.1", [1.0])
    kw = dict(dt=1e-2, seed=1)
    a = fn.lsi_damped_check(G, m, 1.0, 300, **kw)
    b = fn.lsi_full_check(G, m, 1.0, 300, **kw)
    assert a.check == "lemma42" and b.check == "theorem41"
    assert b.constant == pytest.approx(2 * math.e**3)
    assert fn.lemma43_check(G, m, 1.0, 300, **kw).check == "lemma43"
    assert fn.lemma44_check(G, m, 1.0, 300, **kw).check == "lemma44"
