import numpy as np
import pytest

from pathspace import get_model
from pathspace.functions import CylinderFunction, Gamma, parse_family

KEYS = ["const:2.5", "coord:2", "poly:0*1+0.5*2^2", "poly:0@0*0@1+1.5*1@-1^3", "bump:0;0;0.5,0.8,2",
        "exp:1,0.7"]


@pytest.mark.parametrize("key", KEYS)
def test_exact_gradients(key):
    m = get_model("heisenberg-1")
    F = CylinderFunction.from_key(key, [0.5, 1.0]).bind(m)
    assert F.self_test(m) < 1e-7


def test_poly_values():
    F = CylinderFunction.from_key("poly:0@0*0@1+2.0", [0.5, 1.0])
    pts = np.zeros((1, 2, 3))
    pts[0, 0, 0], pts[0, 1, 0] = 3.0, -2.0
    assert F(pts)[0] == -4.0
    # a bare integer is a coordinate, so "2" means the z coordinate, not a constant
    G = CylinderFunction.from_key("poly:2", [1.0])
    assert G(np.array([[[0.0, 0.0, 7.0]]]))[0] == 7.0


def test_repeated_factor():
    F = CylinderFunction.from_key("poly:0*0*0", [1.0])
    pts = np.array([[[2.0, 0.0, 0.0]]])
    assert F.coord_grad(pts)[0, 0, 0] == pytest.approx(12.0)


@pytest.mark.parametrize("bad", ["nope", "poly:", "poly:x*1", "bump:0;0,-1", "exp:1", "coord:a"])
def test_bad_keys(bad):
    with pytest.raises((KeyError, ValueError)):
        parse_family(bad)


def test_validation():
    m = get_model("heisenberg-1")
    with pytest.raises(ValueError):
        CylinderFunction.from_key("coord:3", [1.0]).bind(m)
    with pytest.raises(ValueError):
        CylinderFunction.from_key("poly:0@2", [0.5, 1.0]).bind(m)
    with pytest.raises(ValueError):
        CylinderFunction.from_key("bump:0;0,1", [1.0]).bind(m)
    with pytest.raises(ValueError):
        CylinderFunction.from_key("coord:0", [1.0, 0.5])
    with pytest.raises(ValueError):
        CylinderFunction.from_key("coord:0", [0.0])


def test_partials_are_coframe_components():
    m = get_model("heisenberg-1")
    F = CylinderFunction.from_key("coord:2", [1.0])
    pts = np.array([[[1.0, 2.0, 0.0]]])
    # d z in the coframe: X z = -y/2, Y z = x/2, Z z = 1
    assert np.allclose(F.partials(m, pts)[0, 0], [-1.0, 0.5, 1.0])


def test_gamma():
    g = Gamma.from_key("linear:1,2")
    assert np.array_equal(g.derivative(np.array([0.1, 0.7]), 2), [[0, 2], [0, 2]])
    assert g.energy(3.0) == 12.0
    r = Gamma.from_key("ramp:0")
    assert np.allclose(r.derivative(np.array([0.5]), 2), [[0.5, 0]])
    assert r.energy(1.0) == pytest.approx(1 / 3)
    with pytest.raises(KeyError):
        Gamma.from_key("adapted:0")
    with pytest.raises(ValueError):
        g.derivative(0.1, 1)
