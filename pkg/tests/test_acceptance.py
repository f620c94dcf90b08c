"""Acceptance suite: one test per criterion, at the stated tolerances.

Every test uses the same seed, fixed before any run was made.
"""

import json
import math

import numpy as np
import pytest

from pathspace import concentration as conc
from pathspace import functional as fn
from pathspace import malliavin as mal
from pathspace import sde
from pathspace.functions import CylinderFunction
from pathspace.geometry import get_model
from pathspace.harness import cli
from pathspace.harness.checks import CHECKS
from pathspace.harness.config import ExperimentConfig

SEED = 12345
N = 100_000


def cfg(**kw):
    return ExperimentConfig().update({"seed": SEED, **kw}).validate()


@pytest.fixture(scope="module")
def h1():
    return get_model("heisenberg-1")


def test_criterion_01_geometry():
    for name in ("heisenberg-1", "heisenberg-2"):
        rec = CHECKS["geometry"](cfg(model=name), 1.0).records[0]
        assert rec["j_skew_max"] == 0.0
        assert rec["yang_mills_residual"] < 1e-10
        assert 3.5 <= rec["weitzenbock_ratio"] <= 4.5, rec
        assert rec["pass"]


@pytest.mark.slow
def test_criterion_02_transport_contracts(h1):
    eps = [0.25, 1.0, 4.0]
    coarse = sde.transport_contracts(h1, eps, 1.0, 1e-3, 10_000, SEED)
    fine = sde.transport_contracts(h1, eps, 1.0, 5e-4, 10_000, SEED)
    failures = []
    for c, f in zip(coarse, fine):
        if c.frac_within != 1.0:
            failures.append(f"eps={c.epsilon}: bound held on {c.frac_within:.4%} of paths")
        if c.factorization >= 1e-10:
            failures.append(f"eps={c.epsilon}: |tau - M Theta| = {c.factorization:.2e}")
        if c.isometry >= 5e-3:
            failures.append(f"eps={c.epsilon}: isometry residual {c.isometry:.2e} >= 5e-3")
        ratio = c.isometry / f.isometry if f.isometry > 0 else math.inf
        if not 1.6 <= ratio <= 2.4:
            failures.append(f"eps={c.epsilon}: residual ratio under dt halving {ratio:.2f}")
    assert not failures, "; ".join(failures)


@pytest.mark.slow
def test_criterion_03_ibp(h1):
    e1 = get_model("euclidean-1")
    lin = mal.ibp_check(CylinderFunction.from_key("coord:0", [1.0]), "linear:0", e1, 1.0, N, seed=SEED)
    assert lin.rhs.mean == pytest.approx(1.0)
    assert abs(lin.lhs.mean - 1.0) < 4 * lin.lhs.stderr
    fs = [CylinderFunction.from_key("coord:2", [1.0]), CylinderFunction.from_key("poly:0@0*2@1", [0.5, 1.0])]
    res = mal.ibp_check(fs, "linear:0", h1, [0.5, 1.0], N, seed=SEED)
    assert len(res) == 4
    for r in res:
        assert abs(r.z) < 4, (r.function, r.epsilon, r.z)


@pytest.mark.slow
def test_criterion_04_gradient_of_expectation(h1):
    fs = [CylinderFunction.from_key("poly:0*2", [1.0]), CylinderFunction.from_key("poly:0@0*2@1", [0.5, 1.0])]
    res = mal.gradient_of_expectation_check(fs, h1, (0.3, -0.2, 0.1), 1.0, N, seed=SEED)
    assert [r.n for r in res] == [N, N]
    for r in res:
        assert r.residual < 4, (r.function, r.z)


@pytest.mark.slow
def test_criterion_05_clark_ocone(h1):
    F = CylinderFunction.from_key("coord:2", [1.0])
    a = mal.clark_ocone_residual_n1(F, 1.0, h1, 1.0, 200, 4, dt=0.01, seed=SEED)
    b = mal.clark_ocone_residual_n1(F, 1.0, h1, 1.0, 200, 16, dt=0.01, seed=SEED)
    assert a.residual.mean / b.residual.mean >= 2.0
    e1 = get_model("euclidean-1")
    lin = mal.clark_ocone_residual_n1(CylinderFunction.from_key("coord:0", [1.0]), 1.0, e1, 1.0, 200, 4,
                                      dt=0.01, seed=SEED)
    assert lin.residual.mean < 2 * 0.01


@pytest.mark.slow
def test_criterion_06_lsi_chain(h1):
    out = CHECKS["lsi_chain"](cfg(n_paths=N), 1.0)
    assert len(out.records) == 3
    for rec in out.records:
        for link in ("lemma42", "lemma43", "lemma44", "theorem41"):
            assert rec[link]["pass"], (rec["function"], link, rec[link])
        assert all(c["pass"] for c in rec["chain"])
        assert rec["lsi_constant"] == pytest.approx(40.171, abs=5e-4)
        assert rec["lsi_constant"] == 2 * math.exp(3.0)
    e1 = get_model("euclidean-1")
    r = fn.lsi_chain(CylinderFunction.from_key("exp:0,1", [1.0]), e1, 1.0, N, seed=SEED)
    closed = 0.5 * math.exp(0.5)
    assert closed == pytest.approx(0.8244, abs=1e-4)
    assert abs(r.lemma42.lhs - closed) < 4 * r.lemma42.lhs_se
    assert abs(r.lemma42.rhs - closed) < 4 * r.lemma42.rhs_se
    assert r.lemma42.passed


@pytest.mark.slow
def test_criterion_07_herbst(h1):
    h = conc.herbst_check(h1, 1.0, 1.0, N, (0.5, 1.0, 1.5, 2.0), dt=1e-3, seed=SEED)
    assert h.surrogate == "cc"
    rows = list(h.curve.rows())
    assert [r["r"] for r in rows] == [0.5, 1.0, 1.5, 2.0]
    for row in rows:
        assert row["wilson_hi"] <= row["bound_value"], row
    assert h.passed


@pytest.mark.slow
def test_criterion_08_tail_slope(h1):
    s = conc.tail_slope_sandwich(h1, 1.0, N, dt=1e-3, seed=SEED)
    assert s.window_slack == pytest.approx((-2.3, -0.425))
    assert len(s.r_used) == 3 and "surrogate" in s.label
    assert -2.3 <= s.slope <= -0.425, s
    e = conc.tail_slope_sandwich(get_model("euclidean-1"), 1.0, N, dt=1e-3, seed=SEED)
    assert len(e.r_used) == 3
    assert -0.575 <= e.slope <= -0.425, e.slope


def test_criterion_09_distances(h1):
    rec = CHECKS["distances"](cfg(), 1.0).records[0]
    assert rec["oracle_rel_gap"] < 0.01
    assert rec["z_axis_cc"] == pytest.approx(2 * math.sqrt(math.pi))
    rng = np.random.default_rng(SEED)
    pts = rng.uniform(-1.5, 1.5, (20, 3))
    ladder = np.array([conc.eps_distance_closed(h1, pts, e) for e in (0.1, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0)])
    assert np.all(np.diff(ladder, axis=0) <= 1e-12)
    assert rec["monotone_in_eps"] and rec["sandwich_enforced"]
    lo, hi = rec["sandwich"]
    tight = conc.DistanceModel("cc", sandwich=(lo * 1.5, hi))
    with pytest.raises(conc.SandwichViolation):
        tight(h1, pts)
    assert rec["pass"]


def test_criterion_10_reproducibility(tmp_path, capsys):
    base = ["run", "--check", "ibp", "--model", "heisenberg-1", "--n-paths", "3000", "--dt", "0.01",
            "--block", "500", "--seed", str(SEED)]
    texts = []
    for i, workers in enumerate(("1", "1", "3")):
        prefix = str(tmp_path / f"r{i}")
        assert cli.main(base + ["--workers", workers, "--output", prefix]) == 0
        capsys.readouterr()
        with open(prefix + ".json") as fh:
            d = json.load(fh)
        d.pop("wall_time")
        d["config"].pop("output")
        d["config"].pop("workers")
        texts.append(json.dumps(d, sort_keys=True))
    assert texts[0] == texts[1]
    assert texts[0] == texts[2]
