"""Model foliations with global left-invariant frames.

Every model here is a step-two nilpotent group whose Lie algebra splits as
horizontal ``h`` plus a central vertical ``v``.  The bracket is encoded by a
stack of skew matrices ``omega[a]`` with ``[E_i, E_j] = sum_a omega[a, i, j] V_a``.
Heisenberg groups and flat Euclidean space (no vertical directions) are the
two families shipped.

All tensors are stored in the coframe dual to ``(E_1..E_n, V_1..V_m)``.  In
that coframe the Bott connection is trivial (every frame field is parallel),
so covariant derivatives reduce to frame derivatives of components.
"""

from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

KAPPA_FLOOR = 1e-12


@dataclass(frozen=True)
class CurvatureBounds:
    """Constants ``K`` (Ricci lower bound), ``kappa`` (J^2 bound) and ``rho2``."""

    K: float
    kappa: float
    rho2: Optional[float] = None

    def __post_init__(self):
        if self.K < 0:
            raise ValueError("K must be nonnegative")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.rho2 is not None and self.rho2 <= 0:
            raise ValueError("rho2 must be positive when given")

    def rate(self, eps: float) -> float:
        """Growth exponent ``K + kappa/eps`` shared by all transport bounds."""
        return self.K + self.kappa / eps


@dataclass(frozen=True)
class CovectorEps:
    components: np.ndarray
    epsilon: float
    dim_h: int

    def norm2(self) -> float:
        return float(eps_norm2(self.components, self.epsilon, self.dim_h))

    def norm(self) -> float:
        return float(np.sqrt(self.norm2()))


def eps_norm2(eta, eps, dim_h):
    """Squared dual norm of covectors: horizontal part plus ``eps`` times vertical."""
    eta = np.asarray(eta, dtype=float)
    return np.sum(eta[..., :dim_h] ** 2, axis=-1) + eps * np.sum(eta[..., dim_h:] ** 2, axis=-1)


@dataclass(frozen=True, eq=False)
class ModelFoliation:
    """Immutable description of a model space.

    ``omega`` has shape ``(dim_v, dim_h, dim_h)``; ``ricci_h`` is the
    horizontal Ricci map on covectors, shape ``(dim_h, dim_h)``.
    """

    name: str
    dim_h: int
    dim_v: int
    omega: np.ndarray
    ricci_h: np.ndarray
    bounds: CurvatureBounds
    group: bool = True
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.omega.setflags(write=False)
        self.ricci_h.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.dim_h + self.dim_v

    # -- frames -----------------------------------------------------------
    def frame_matrix(self, p):
        """Coordinates of the frame at ``p``: column ``k`` is the ``k``-th frame field.

        Horizontal fields are ``E_i = d_i + 1/2 sum_{a,j} p_j omega[a,j,i] d_{v_a}``.
        """
        p = np.asarray(p, dtype=float)
        n, D = self.dim_h, self.dim
        E = np.broadcast_to(np.eye(D), p.shape[:-1] + (D, D)).copy()
        if self.dim_v:
            # vertical row a, horizontal column i: 1/2 sum_j p_j omega[a, j, i]
            E[..., n:, :n] = 0.5 * np.einsum("...j,aji->...ai", p[..., :n], self.omega)
        return E

    def horizontal_frame(self, p):
        return self.frame_matrix(p)[..., :, : self.dim_h]

    def vertical_frame(self, p):
        return self.frame_matrix(p)[..., :, self.dim_h :]

    def frame_partials(self, p, grad):
        """Convert coordinate gradients to coframe components ``(E_k f)_k``."""
        E = self.frame_matrix(p)
        return np.einsum("...ik,...i->...k", E, np.asarray(grad, dtype=float))

    @property
    def torsion_coeffs(self):
        """``T(E_i, E_j)`` in the vertical frame, shape ``(dim_h, dim_h, dim_v)``."""
        return -np.transpose(self.omega, (1, 2, 0))

    # -- group structure ---------------------------------------------------
    def multiply(self, p, q):
        """Group law ``p . q`` in exponential coordinates."""
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        n = self.dim_h
        out = p + q
        if self.dim_v:
            out[..., n:] += 0.5 * np.einsum("...i,aij,...j->...a", p[..., :n], self.omega, q[..., :n])
        return out

    def inverse(self, p):
        return -np.asarray(p, dtype=float)

    def translation_pullback(self, g):
        """Matrix ``J_g`` with ``d/dx f(x . g) = J_g df(x . g)`` in the coframe.

        Differentiating along left-invariant fields at ``x`` gives
        ``E_k -> E_k + sum_a (omega[a] g_h)_k V_a``, i.e. ``Ad(g^{-1})``.
        """
        g = np.asarray(g, dtype=float)
        n, D = self.dim_h, self.dim
        J = np.broadcast_to(np.eye(D), g.shape[:-1] + (D, D)).copy()
        if self.dim_v:
            J[..., :n, n:] = np.einsum("aij,...j->...ia", self.omega, g[..., :n])
        return J

    # -- metric and transport data ------------------------------------------
    def dual_metric(self, eps: float) -> np.ndarray:
        """Diagonal of ``G_eps`` acting on coframe components of covectors."""
        return np.concatenate([np.ones(self.dim_h), np.full(self.dim_v, float(eps))])

    def j_squared(self) -> np.ndarray:
        """``sum_a J_{V_a} J_{V_a}`` extended by zero on the vertical block."""
        D, n = self.dim, self.dim_h
        out = np.zeros((D, D))
        if self.dim_v:
            out[:n, :n] = np.einsum("aij,ajk->ik", self.omega, self.omega)
        return out

    def ricci_matrix(self) -> np.ndarray:
        D, n = self.dim, self.dim_h
        out = np.zeros((D, D))
        out[:n, :n] = self.ricci_h
        return out

    def damping_matrix(self, eps: float) -> np.ndarray:
        """``(1/eps) J^2 + Ric_H`` on covectors."""
        return self.j_squared() / eps + self.ricci_matrix()

    def torsion_operator(self, v, eps: float) -> np.ndarray:
        """Matrix of ``eta -> T^eps_V eta`` for a horizontal vector ``v``.

        Horizontal slot: ``-eta(T(V, E_j))``; vertical slot: ``(1/eps) eta(J_{V_a} V)``.
        """
        v = np.asarray(v, dtype=float)
        n, D = self.dim_h, self.dim
        A = np.zeros(v.shape[:-1] + (D, D))
        if self.dim_v:
            A[..., :n, n:] = np.einsum("...i,aij->...ja", v, self.omega)
            A[..., n:, :n] = np.einsum("aji,...i->...aj", self.omega, v) / eps
        return A

    def transport_generators(self, eps: float) -> np.ndarray:
        """``T^eps_{E_i}`` for each horizontal frame vector, shape ``(dim_h, D, D)``."""
        key = ("gen", float(eps))
        if key not in self._cache:
            gens = self.torsion_operator(np.eye(self.dim_h), eps)
            gens.setflags(write=False)
            self._cache[key] = gens
        return self._cache[key]

    def to_json(self) -> str:
        doc = {
            "name": self.name,
            "dim_h": self.dim_h,
            "dim_v": self.dim_v,
            "structure_constants": self.omega.tolist(),
            "torsion": self.torsion_coeffs.tolist(),
            "ricci_h": self.ricci_h.tolist(),
            "j_squared": self.j_squared().tolist(),
            "bounds": {"K": self.bounds.K, "kappa": self.bounds.kappa, "rho2": self.bounds.rho2},
            "frame_at_origin": self.frame_matrix(np.zeros(self.dim)).tolist(),
        }
        return json.dumps(doc, indent=2)


def build_heisenberg(n: int) -> ModelFoliation:
    """Heisenberg group ``H^n`` on ``R^{2n+1}`` with coordinates ``(x_1..x_n, y_1..y_n, z)``.

    Frames ``X_i = d_{x_i} - (y_i/2) d_z``, ``Y_i = d_{y_i} + (x_i/2) d_z``,
    ``Z = d_z``; ``[X_i, Y_i] = Z`` so ``T(X_i, Y_i) = -Z``.
    """
    if int(n) != n or n < 1:
        raise ValueError(f"Heisenberg dimension must be a positive integer, got {n!r}")
    n = int(n)
    omega = np.zeros((1, 2 * n, 2 * n))
    for i in range(n):
        omega[0, i, n + i] = 1.0
        omega[0, n + i, i] = -1.0
    return ModelFoliation(
        name=f"heisenberg-{n}",
        dim_h=2 * n,
        dim_v=1,
        omega=omega,
        ricci_h=np.zeros((2 * n, 2 * n)),
        bounds=CurvatureBounds(K=0.0, kappa=1.0, rho2=n / 2.0),
    )


def build_euclidean_degenerate(d: int) -> ModelFoliation:
    """Flat ``R^d`` with no vertical directions; every transport is the identity."""
    if int(d) != d or d < 1:
        raise ValueError(f"Euclidean dimension must be a positive integer, got {d!r}")
    d = int(d)
    return ModelFoliation(
        name=f"euclidean-{d}",
        dim_h=d,
        dim_v=0,
        omega=np.zeros((0, d, d)),
        ricci_h=np.zeros((d, d)),
        bounds=CurvatureBounds(K=0.0, kappa=KAPPA_FLOOR, rho2=None),
    )


_MODEL_RE = re.compile(r"^(heisenberg|euclidean)-(\d+)$")


def get_model(name: str) -> ModelFoliation:
    """Resolve ``"heisenberg-<n>"`` or ``"euclidean-<d>"``."""
    m = _MODEL_RE.match(name.strip())
    if not m:
        raise KeyError(f"unknown model {name!r}; expected heisenberg-<n> or euclidean-<d>")
    kind, k = m.group(1), int(m.group(2))
    return build_heisenberg(k) if kind == "heisenberg" else build_euclidean_degenerate(k)


def list_models() -> list[str]:
    return ["heisenberg-1", "heisenberg-2", "heisenberg-<n>", "euclidean-1", "euclidean-2", "euclidean-<d>"]


# ---------------------------------------------------------------------------
# validation of the geometric hypotheses
# ---------------------------------------------------------------------------


def j_endomorphism(model: ModelFoliation, Z) -> np.ndarray:
    """Matrix of ``J_Z`` on horizontal vectors, defined by ``<J_Z X, Y> = <Z, T(X, Y)>``.

    ``Z`` may be given by its ``dim_v`` vertical components or as a full
    vector whose horizontal part must vanish.
    """
    Z = np.asarray(Z, dtype=float)
    if Z.shape[-1] == model.dim and model.dim != model.dim_v:
        if np.any(Z[..., : model.dim_h] != 0):
            raise ValueError("J_Z is defined for vertical Z only")
        Z = Z[..., model.dim_h :]
    if Z.shape[-1] != model.dim_v:
        raise ValueError(f"expected {model.dim_v} vertical components, got shape {Z.shape}")
    # <J_Z e_i, e_j> = sum_a Z_a T^a(e_i, e_j) = -sum_a Z_a omega[a, i, j]
    # so (J_Z)_{ji} = -(Z.omega)_{ij}, i.e. J_Z = Z.omega (skew).
    return np.einsum("...a,aij->...ij", Z, model.omega)


def verify_bounds(model: ModelFoliation, n_samples: int = 1000, seed: int = 0, tol: float = 1e-12) -> dict:
    """Check the curvature constants on random covectors; returns worst slacks."""
    rng = np.random.default_rng(seed)
    n = model.dim_h
    eta = rng.standard_normal((n_samples, n))
    nrm = np.sum(eta**2, axis=1)
    ric = np.einsum("si,ij,sj->s", eta, model.ricci_h, eta)
    j2 = model.j_squared()[:n, :n]
    jq = -np.einsum("si,ij,sj->s", eta, j2, eta)
    out = {
        "ricci_slack": float(np.min(ric + model.bounds.K * nrm)),
        "j2_slack": float(np.min(model.bounds.kappa * nrm - jq)),
        "j2_symmetric": bool(np.allclose(j2, j2.T)),
        "j2_nsd": bool(np.all(np.linalg.eigvalsh(j2) <= tol)) if n else True,
    }
    if model.dim_v:
        # the J^*J form, checked separately from -J^2 (they agree when J is skew)
        Jb = j_endomorphism(model, np.eye(model.dim_v))[:, :n, :n]
        jstar = np.einsum("kji,kjl->il", Jb, Jb)
        out["jstar_slack"] = float(np.min(model.bounds.kappa * nrm - np.einsum("si,ij,sj->s", eta, jstar, eta)))
    if model.bounds.rho2 is not None and model.dim_v:
        Z = rng.standard_normal((n_samples, model.dim_v))
        J = j_endomorphism(model, Z)
        tr = -0.25 * np.trace(J @ J, axis1=-2, axis2=-1)
        out["rho2_slack"] = float(np.min(tr - model.bounds.rho2 * np.sum(Z**2, axis=1)))
    out["ok"] = (
        out["ricci_slack"] >= -tol
        and out["j2_slack"] >= -tol * max(1.0, model.bounds.kappa)
        and out["j2_symmetric"]
        and out["j2_nsd"]
        and out.get("rho2_slack", 0.0) >= -tol
        and out.get("jstar_slack", 0.0) >= -tol * max(1.0, model.bounds.kappa)
    )
    return out


def _directional(fn, p, v, h):
    return (fn(p + h * v) - fn(p - h * v)) / (2 * h)


def _bracket_fd(model, p, i, j, h):
    """Numerical Lie bracket ``[E_i, E_j](p)`` from frame Jacobians."""
    D = model.dim
    Ei = model.frame_matrix(p)[:, i]
    Ej = model.frame_matrix(p)[:, j]
    col = lambda k: (lambda q: model.frame_matrix(q)[:, k])
    dEj = np.stack([_directional(col(j), p, e, h) for e in np.eye(D)], axis=1)
    dEi = np.stack([_directional(col(i), p, e, h) for e in np.eye(D)], axis=1)
    return dEj @ Ei - dEi @ Ej


def torsion_fd(model: ModelFoliation, p, h: float = 1e-3) -> np.ndarray:
    """Horizontal torsion ``T(E_i, E_j) = -[E_i, E_j]_V`` recomputed from the frame fields."""
    n = model.dim_h
    out = np.zeros((n, n, model.dim_v))
    if not model.dim_v:
        return out
    E = model.frame_matrix(p)
    for i in range(n):
        for j in range(n):
            comps = np.linalg.solve(E, _bracket_fd(model, p, i, j, h))
            out[i, j] = -comps[n:]
    return out


def yang_mills_check(model: ModelFoliation, points, h: float = 1e-3) -> float:
    """Max over points and directions of ``|sum_j (nabla_{E_j} T)(E_j, E_k)|``.

    Torsion is rebuilt from brackets of the frame fields and differentiated
    along ``E_j`` by central differences (frames are parallel, so no
    connection terms appear).
    """
    worst = 0.0
    n = model.dim_h
    for p in np.atleast_2d(np.asarray(points, dtype=float)):
        E = model.frame_matrix(p)
        div = np.zeros((n, model.dim_v))
        for j in range(n):
            dT = _directional(lambda q: torsion_fd(model, q, h), p, E[:, j], h)
            div += dT[j]
        if div.size:
            worst = max(worst, float(np.max(np.abs(div))))
    return worst


# ---------------------------------------------------------------------------
# Weitzenbock identity dLf = box_eps df
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SmoothFunction:
    """A point function with its exact coordinate gradient."""

    value: Callable
    grad: Callable


@dataclass(frozen=True)
class WeitzenbockResult:
    residual: np.ndarray
    residual_half: np.ndarray
    ratio: float
    flag: Optional[str]
    lhs: np.ndarray
    rhs: np.ndarray


def _frame_fn(model, f, k):
    """``q -> (E_k f)(q)`` from the exact gradient."""
    return lambda q: model.frame_matrix(q)[:, k] @ f.grad(q)


def _along(model, g, k, h):
    """Central-difference derivative of ``g`` along the frame field ``E_k``."""
    return lambda q: _directional(g, q, model.frame_matrix(q)[:, k], h)


def _weitzenbock_sides(model, f, x, eps, h):
    n, D = model.dim_h, model.dim
    x = np.asarray(x, dtype=float)

    def lap(q):
        return sum(_along(model, _frame_fn(model, f, i), i, h)(q) for i in range(n))

    lhs = np.array([_along(model, lap, a, h)(x) for a in range(D)])

    eta = [_frame_fn(model, f, a) for a in range(D)]
    gens = model.transport_generators(eps)
    eta_x = np.array([e(x) for e in eta])
    second = np.zeros(D)
    first = np.zeros(D)
    for i in range(n):
        for a in range(D):
            second[a] += _along(model, _along(model, eta[a], i, h), i, h)(x)
        d_i_eta = np.array([_along(model, eta[a], i, h)(x) for a in range(D)])
        first += gens[i] @ d_i_eta
    zeroth = sum(gens[i] @ gens[i] for i in range(n)) - model.damping_matrix(eps)
    rhs = second - 2.0 * first + zeroth @ eta_x
    return lhs, rhs


def weitzenbock_residual(model: ModelFoliation, f: SmoothFunction, x, eps: float, h: float = 1e-3) -> WeitzenbockResult:
    """Componentwise ``|dLf - box_eps df|(x)`` at steps ``h`` and ``h/2``.

    ``box_eps = sum_i (E_i - T_i)^2 - (1/eps) J^2 - Ric_H`` in the parallel
    coframe.  Both sides use nested central differences of the exact
    gradient, so the residual is ``O(h^2)`` and the ratio should be near 4.
    """
    lhs, rhs = _weitzenbock_sides(model, f, x, eps, h)
    lhs2, rhs2 = _weitzenbock_sides(model, f, x, eps, h / 2)
    r1, r2 = np.abs(lhs - rhs), np.abs(lhs2 - rhs2)
    n1, n2 = float(np.max(r1)), float(np.max(r2))
    scale = max(1.0, float(np.max(np.abs(lhs))))
    flag = None
    if n2 <= 1e-12 * scale:
        ratio = float("nan") if n1 <= 1e-12 * scale else float("inf")
    else:
        ratio = n1 / n2
        if ratio < 3.5:
            flag = "cancellation"
        elif ratio > 4.5:
            flag = "truncation"
    if flag:
        warnings.warn(f"Weitzenbock residual ratio {ratio:.3g} at h={h:g} suggests {flag} error")
    return WeitzenbockResult(r1, r2, ratio, flag, lhs, rhs)
