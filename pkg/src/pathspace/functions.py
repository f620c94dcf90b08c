"""Cylinder functions and deterministic Cameron-Martin directions.

A cylinder function is ``F = f(X_{t_1}, ..., X_{t_n})``.  Families work on
batched points of shape ``(P, n, D)`` and return exact coordinate gradients of
the same shape; :class:`CylinderFunction` converts them to coframe partials
``d_i f``.

Registry keys::

    const:c                    f = c
    coord:i                    f = sum_t p_t[i]
    poly:TERM+TERM+...         TERM = FACTOR*FACTOR*...,
                               FACTOR = i[@t][^k] (coordinate i at time index t,
                               default last) or a float literal such as 0.5
    bump:c1;c2;...,w[,amp]     f = 1 + amp sum_t exp(-|p_t - c|^2 / (2 w^2))
    exp:i,lam                  f = exp(lam * sum_t p_t[i] / 2)

A bare integer factor in ``poly`` is always a coordinate; numeric factors
need a decimal point or exponent.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import ModelFoliation


class Family:
    """Smooth function of ``n`` points with an exact gradient."""

    key: str = ""

    def value(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def validate(self, dim: int, n_times: int) -> None:
        pass

    def __repr__(self):
        return f"{type(self).__name__}({self.key!r})"


class Const(Family):
    def __init__(self, c: float):
        self.c = float(c)
        self.key = f"const:{c}"

    def value(self, pts):
        return np.full(pts.shape[0], self.c)

    def grad(self, pts):
        return np.zeros_like(pts)


class Coord(Family):
    def __init__(self, i: int):
        self.i = int(i)
        self.key = f"coord:{i}"

    def validate(self, dim, n_times):
        if not 0 <= self.i < dim:
            raise ValueError(f"coordinate {self.i} out of range for dimension {dim}")

    def value(self, pts):
        return pts[..., self.i].sum(axis=-1)

    def grad(self, pts):
        g = np.zeros_like(pts)
        g[..., self.i] = 1.0
        return g


_FACTOR = re.compile(r"^(\d+)(?:@(-?\d+))?(?:\^(\d+))?$")


class Poly(Family):
    """Sum of monomials; each monomial is ``coef * prod p_{t}[i]^k``."""

    def __init__(self, expr: str):
        self.key = f"poly:{expr}"
        self.terms = []
        for raw in expr.replace(" ", "").split("+"):
            if not raw:
                raise ValueError(f"empty term in {expr!r}")
            coef = 1.0
            factors = []
            for fac in raw.split("*"):
                m = _FACTOR.match(fac)
                if m:
                    factors.append((int(m.group(1)), int(m.group(2) or -1), int(m.group(3) or 1)))
                    continue
                try:
                    coef *= float(fac)
                except ValueError:
                    raise ValueError(f"bad factor {fac!r} in {expr!r}") from None
            self.terms.append((coef, tuple(factors)))

    def validate(self, dim, n_times):
        for _, factors in self.terms:
            for i, t, k in factors:
                if not 0 <= i < dim:
                    raise ValueError(f"coordinate {i} out of range for dimension {dim}")
                if not -n_times <= t < n_times:
                    raise ValueError(f"time index {t} out of range for {n_times} times")

    def value(self, pts):
        out = np.zeros(pts.shape[0])
        for coef, factors in self.terms:
            term = np.full(pts.shape[0], coef)
            for i, t, k in factors:
                term = term * pts[:, t, i] ** k
            out += term
        return out

    def grad(self, pts):
        g = np.zeros_like(pts)
        n = pts.shape[1]
        for coef, factors in self.terms:
            # gather powers per (time, coordinate) so repeated factors differentiate correctly
            powers = {}
            for i, t, k in factors:
                key = (t % n, i)
                powers[key] = powers.get(key, 0) + k
            for key, k in powers.items():
                part = np.full(pts.shape[0], coef * k)
                for other, ko in powers.items():
                    base = pts[:, other[0], other[1]]
                    part = part * (base ** (ko - 1) if other == key else base**ko)
                g[:, key[0], key[1]] += part
        return g


class Bump(Family):
    def __init__(self, center: Sequence[float], width: float, amp: float = 1.0):
        if width <= 0:
            raise ValueError("bump width must be positive")
        self.center = np.asarray(center, dtype=float)
        self.width = float(width)
        self.amp = float(amp)
        self.key = "bump:" + ";".join(f"{c:g}" for c in self.center) + f",{width:g},{amp:g}"

    def validate(self, dim, n_times):
        if self.center.size != dim:
            raise ValueError(f"bump center has {self.center.size} coordinates, model needs {dim}")

    def _phi(self, pts):
        d2 = np.sum((pts - self.center) ** 2, axis=-1)
        return np.exp(-d2 / (2 * self.width**2))

    def value(self, pts):
        return 1.0 + self.amp * self._phi(pts).sum(axis=-1)

    def grad(self, pts):
        return -self.amp * self._phi(pts)[..., None] * (pts - self.center) / self.width**2


class Exp(Family):
    def __init__(self, i: int, lam: float):
        self.i = int(i)
        self.lam = float(lam)
        self.key = f"exp:{i},{lam:g}"

    def validate(self, dim, n_times):
        if not 0 <= self.i < dim:
            raise ValueError(f"coordinate {self.i} out of range for dimension {dim}")

    def value(self, pts):
        return np.exp(0.5 * self.lam * pts[..., self.i].sum(axis=-1))

    def grad(self, pts):
        g = np.zeros_like(pts)
        g[..., self.i] = 0.5 * self.lam * self.value(pts)[:, None]
        return g


def parse_family(key: str) -> Family:
    kind, sep, arg = key.strip().partition(":")
    if not sep:
        raise KeyError(f"function key {key!r} must look like kind:args")
    try:
        if kind == "const":
            return Const(float(arg))
        if kind == "coord":
            return Coord(int(arg))
        if kind == "poly":
            return Poly(arg)
        if kind == "bump":
            parts = arg.split(",")
            center = [float(c) for c in parts[0].split(";")]
            return Bump(center, float(parts[1]), float(parts[2]) if len(parts) > 2 else 1.0)
        if kind == "exp":
            i, lam = arg.split(",")
            return Exp(int(i), float(lam))
    except (ValueError, IndexError) as exc:
        raise ValueError(f"malformed function key {key!r}: {exc}") from None
    raise KeyError(f"unknown function family {kind!r}")


FUNCTION_KINDS = ("const", "coord", "poly", "bump", "exp")


@dataclass(frozen=True)
class CylinderFunction:
    """``F = f(X_{t_1}, ..., X_{t_n})`` with ``times`` strictly increasing."""

    times: tuple
    family: Family

    def __post_init__(self):
        ts = tuple(float(t) for t in self.times)
        if not ts or any(b <= a for a, b in zip(ts, ts[1:])) or ts[0] <= 0:
            raise ValueError(f"times must be positive and strictly increasing, got {self.times}")
        object.__setattr__(self, "times", ts)

    @classmethod
    def from_key(cls, key: str, times) -> "CylinderFunction":
        return cls(tuple(np.atleast_1d(times)), parse_family(key))

    @property
    def n(self) -> int:
        return len(self.times)

    def bind(self, model: ModelFoliation) -> "CylinderFunction":
        self.family.validate(model.dim, self.n)
        return self

    def __call__(self, pts) -> np.ndarray:
        return self.family.value(np.asarray(pts, dtype=float))

    def coord_grad(self, pts) -> np.ndarray:
        return self.family.grad(np.asarray(pts, dtype=float))

    def partials(self, model: ModelFoliation, pts) -> np.ndarray:
        """Coframe components of ``d_i f`` at each ``X_{t_i}``, shape ``(P, n, D)``."""
        return model.frame_partials(pts, self.coord_grad(pts))

    def self_test(self, model: ModelFoliation, n_points: int = 64, h: float = 1e-5, seed: int = 0) -> float:
        """Max relative gap between the exact gradient and central differences."""
        rng = np.random.default_rng(seed)
        pts = rng.standard_normal((n_points, self.n, model.dim))
        g = self.coord_grad(pts)
        fd = np.zeros_like(g)
        for t in range(self.n):
            for k in range(model.dim):
                e = np.zeros_like(pts)
                e[:, t, k] = h
                fd[:, t, k] = (self(pts + e) - self(pts - e)) / (2 * h)
        return float(np.max(np.abs(g - fd)) / max(1.0, float(np.max(np.abs(g)))))


# ---------------------------------------------------------------------------
# Cameron-Martin directions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Gamma:
    """Deterministic ``gamma`` in the horizontal space at the base point, with ``gamma(0) = 0``.

    ``linear:i[,c]``: ``gamma(s) = c s e_i``; ``ramp:i[,c]``: ``gamma(s) = c s^2/2 e_i``.
    """

    kind: str
    i: int
    c: float = 1.0

    @classmethod
    def from_key(cls, key: str) -> "Gamma":
        kind, sep, arg = key.strip().partition(":")
        if kind not in ("linear", "ramp") or not sep:
            raise KeyError(f"unknown gamma {key!r}; expected linear:i or ramp:i")
        parts = arg.split(",")
        return cls(kind, int(parts[0]), float(parts[1]) if len(parts) > 1 else 1.0)

    @property
    def key(self) -> str:
        return f"{self.kind}:{self.i},{self.c:g}"

    def derivative(self, s, dim_h: int) -> np.ndarray:
        if not 0 <= self.i < dim_h:
            raise ValueError(f"gamma direction {self.i} out of range for {dim_h} horizontal dims")
        s = np.asarray(s, dtype=float)
        out = np.zeros(s.shape + (dim_h,))
        out[..., self.i] = self.c if self.kind == "linear" else self.c * s
        return out

    def energy(self, T: float) -> float:
        """``int_0^T |gamma'|^2 ds``."""
        return self.c**2 * (T if self.kind == "linear" else T**3 / 3)
