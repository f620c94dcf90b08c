"""Path-space gradients of cylinder functions and Monte Carlo representation checks.

Conventions.  Covectors live in the coframe at the base point or at
``X_t``; transports act from the left on column covectors, so
``tau_{t_i} d_i f`` is a covector at the base point.  Parallel transport of
the left-invariant frame is trivial, hence ``//_{0,s}`` is the identity in
these coordinates.

For a partition ``t_1 < ... < t_n`` write ``w_l = sum_{i >= l} tau_{t_i} d_i f``
and ``z_l = sum_{i >= l} Theta_{t_i} d_i f``.  On ``(t_{l-1}, t_l]`` the damped
gradient is ``tau_s^{-1} w_l`` and the intrinsic gradient is ``z_l``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .functions import CylinderFunction, Gamma
from .geometry import ModelFoliation, eps_norm2
from .parallel import DEFAULT_BLOCK, map_blocks
from .sde import (HorizontalPath, TimeGrid, TransportState, integrate_horizontal_bm, integrate_transport,
                  model_by_name, path_rng, simulate)
from .stats import SIGMA, EstimatorResult, estimate, paired_z, variance_diverging, z_score

# ---------------------------------------------------------------------------
# single-batch operations
# ---------------------------------------------------------------------------


def eval_cylinder(F: CylinderFunction, path: HorizontalPath) -> np.ndarray:
    """``f(X_{t_1}, ..., X_{t_n})`` for every path of the batch."""
    idx = [path.grid.index_of(t) for t in F.times]
    return F(path.states[:, idx])


@dataclass
class GradientProcess:
    """Gradient values (P, R, D) at grid indices ``at``."""

    values: np.ndarray
    at: np.ndarray
    kind: str
    epsilon: float

    def norm2(self, dim_h: int) -> np.ndarray:
        return eps_norm2(self.values, self.epsilon, dim_h)


def _cyl_data(F, path):
    grid = path.grid
    idx = np.array([grid.index_of(t) for t in F.times], dtype=np.int64)
    pts = path.states[:, idx]
    return idx, F.partials(path.model, pts)


def _check_eps(transport, eps):
    if eps is not None and transport.epsilon != eps:
        raise ValueError(f"transport integrated with eps={transport.epsilon}, requested {eps}")


def _slots(transport, idx):
    try:
        return [transport.slot(int(k)) for k in idx]
    except KeyError as exc:
        raise ValueError(f"transport lacks a recorded time needed here: {exc}") from None


def intrinsic_gradient(F: CylinderFunction, path: HorizontalPath, transport: TransportState, at=None,
                       eps: Optional[float] = None) -> GradientProcess:
    """``D_t F = sum_i 1_{t <= t_i} Theta_{t_i} d_i f`` at grid indices ``at`` (default: all)."""
    _check_eps(transport, eps)
    idx, df = _cyl_data(F, path)
    th = transport.theta[:, _slots(transport, idx)]
    terms = np.einsum("pnij,pnj->pni", th, df)
    at = np.arange(path.grid.n_steps + 1) if at is None else np.asarray(at, dtype=np.int64)
    mask = (at[:, None] <= idx[None, :]).astype(float)
    return GradientProcess(np.einsum("rn,pni->pri", mask, terms), at, "intrinsic", transport.epsilon)


def damped_gradient(F: CylinderFunction, path: HorizontalPath, transport: TransportState, at=None,
                    eps: Optional[float] = None, check: bool = True) -> GradientProcess:
    """``D~_t F = sum_i 1_{t <= t_i} tau_t^{-1} tau_{t_i} d_i f`` at recorded grid indices ``at``.

    With ``check`` the window regrouping ``sum_l 1_{(t_{l-1}, t_l]} tau_t^{-1} w_l`` and the
    factorized form ``Theta_t^{-1} sum_i M_t^{-1} M_{t_i} Theta_{t_i} d_i f`` are recomputed
    and compared (relative tolerance 1e-10); a mismatch raises ``ArithmeticError``.
    """
    _check_eps(transport, eps)
    idx, df = _cyl_data(F, path)
    at = transport.rec_idx if at is None else np.asarray(at, dtype=np.int64)
    s_at = _slots(transport, at)
    s_i = _slots(transport, idx)
    tau = transport.tau
    tau_i = tau[:, s_i]
    terms = np.einsum("pnij,pnj->pni", tau_i, df)
    mask = (at[:, None] <= idx[None, :]).astype(float)
    inv_t = np.linalg.inv(tau[:, s_at])
    vals = np.einsum("prij,prj->pri", inv_t, np.einsum("rn,pni->pri", mask, terms))
    if check:
        w = np.flip(np.cumsum(np.flip(terms, 1), 1), 1)
        win = np.searchsorted(idx, at, side="left")  # t in (t_{l-1}, t_l] -> l
        wz = np.concatenate([w, np.zeros_like(w[:, :1])], axis=1)[:, win]
        regroup = np.einsum("prij,prj->pri", inv_t, wz)
        m, th = transport.m, transport.theta
        minv_t = np.linalg.inv(m[:, s_at])
        thinv_t = np.linalg.inv(th[:, s_at])
        inner = np.einsum("pnij,pnj->pni", m[:, s_i], np.einsum("pnij,pnj->pni", th[:, s_i], df))
        fac = np.einsum("prij,prjk,rn,pnk->pri", thinv_t, minv_t, mask, inner)
        scale = max(1.0, float(np.max(np.abs(vals))) if vals.size else 1.0)
        gap = max(float(np.max(np.abs(regroup - vals), initial=0.0)), float(np.max(np.abs(fac - vals), initial=0.0)))
        if gap > 1e-10 * scale:
            raise ArithmeticError(f"damped gradient representations disagree by {gap:.3g}")
    return GradientProcess(vals, at, "damped", transport.epsilon)


# ---------------------------------------------------------------------------
# block pipeline: many functions, many epsilons, one set of paths
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PathJob:
    """Everything a worker needs to rebuild one block of paths and transports."""

    model: str
    T: float
    n_steps: int
    seed: int
    functions: tuple = ()
    epsilons: tuple = ()
    gamma: Optional[Gamma] = None
    q: bool = False
    purpose: tuple = (0,)
    substeps: int = 1
    x0: Optional[tuple] = None

    @property
    def times(self) -> tuple:
        ts = sorted({t for F in self.functions for t in F.times} | {self.T})
        return tuple(ts)

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.T, self.n_steps, self.times)


@dataclass
class BlockData:
    """Per-path ingredients on the union partition ``times`` (index ``idx``)."""

    idx: np.ndarray
    pts: np.ndarray           # (P, n, D)
    values: list              # per function (P,)
    partials: list            # per function (P, n, D), zero at times the function ignores
    transports: dict          # eps -> TransportState recorded at [0] + idx
    pairing: Optional[np.ndarray] = None  # sum_k <gamma'(s_k), dB_k>


def build_block(job: PathJob, start: int, stop: int) -> BlockData:
    model = model_by_name(job.model)
    grid = job.grid
    path = simulate(model, grid, job.seed, range(start, stop), job.purpose, job.substeps, job.x0)
    idx = grid.partition_indices
    pts = path.states[:, idx]
    values, partials = [], []
    for F in job.functions:
        cols = [job.times.index(t) for t in F.times]
        values.append(F(pts[:, cols]))
        d = np.zeros_like(pts)
        d[:, cols] = F.partials(model, pts[:, cols])
        partials.append(d)
    gdot = None
    pairing = None
    if job.gamma is not None:
        gdot = job.gamma.derivative(grid.times[:-1], model.dim_h)
        pairing = np.einsum("pkj,kj->p", path.increments, gdot)
    transports = {}
    for eps in job.epsilons:
        transports[eps] = integrate_transport(model, path, eps, record=idx, windows=idx, q=job.q, gamma_dot=gdot)
    return BlockData(idx, pts, values, partials, transports, pairing)


def window_sums(terms):
    """Reverse cumulative sums over the partition axis: ``sum_{i >= l}``."""
    return np.flip(np.cumsum(np.flip(terms, 1), 1), 1)


def transported_sums(bd: BlockData, eps, j):
    """``w_l`` (damped) and ``z_l`` (intrinsic) for function ``j``."""
    tr = bd.transports[eps]
    s = [tr.slot(int(k)) for k in bd.idx]
    df = bd.partials[j]
    w = window_sums(np.einsum("pnij,pnj->pni", tr.tau[:, s], df))
    z = window_sums(np.einsum("pnij,pnj->pni", tr.theta[:, s], df))
    return w, z


def window_lengths(job: PathJob) -> np.ndarray:
    return np.diff(np.concatenate([[0.0], job.times]))


def damped_energy_paths(bd: BlockData, eps, j) -> np.ndarray:
    """Pathwise ``int_0^T ||D~_s F||_eps^2 ds = sum_l w_l^T Q_l w_l``."""
    w, _ = transported_sums(bd, eps, j)
    return np.einsum("pli,plij,plj->p", w, bd.transports[eps].qint, w)


def intrinsic_energy_paths(bd: BlockData, eps, j, lengths, dim_h) -> np.ndarray:
    """Pathwise ``int_0^T ||D_s F||_eps^2 ds = sum_l (t_l - t_{l-1}) ||z_l||_eps^2``."""
    _, z = transported_sums(bd, eps, j)
    return eps_norm2(z, eps, dim_h) @ lengths


def _run(job: PathJob, reducer, n_paths: int, block: int, workers) -> dict:
    parts = map_blocks(_block_task, (job, reducer), n_paths, block, workers)
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]} if parts else {}


def _block_task(payload, start, stop):
    job, reducer = payload
    return reducer(job, build_block(job, start, stop))


def _as_list(x):
    return list(x) if isinstance(x, (list, tuple)) else [x]


def _grid_steps(T, dt):
    return TimeGrid.from_dt(T, dt).n_steps


def _horizon(functions, T):
    T = max(F.times[-1] for F in functions) if T is None else float(T)
    if any(F.times[-1] > T + 1e-12 for F in functions):
        raise ValueError("cylinder times exceed the horizon")
    return T


# ---------------------------------------------------------------------------
# integration by parts
# ---------------------------------------------------------------------------


@dataclass
class IBPResult:
    lhs: EstimatorResult
    rhs: EstimatorResult
    z: float
    diverging: bool
    epsilon: float
    function: str

    @property
    def passed(self) -> bool:
        return abs(self.z) < SIGMA and not self.diverging


def _ibp_reducer(job, bd):
    out = {}
    for eps in job.epsilons:
        tr = bd.transports[eps]
        for j in range(len(job.functions)):
            w, _ = transported_sums(bd, eps, j)
            out[f"lhs{eps}_{j}"] = bd.values[j] * bd.pairing
            out[f"rhs{eps}_{j}"] = np.einsum("pli,pli->p", w, tr.gint)
    return out


def ibp_check(F, gamma, model: ModelFoliation, epsilon, n_paths: int, *, T=None, dt: float = 1e-3,
              seed: int = 0, workers=1, block: int = DEFAULT_BLOCK):
    """``E[F int <gamma', dB>]`` vs ``E[int <D~_s F, gamma'(s)> ds]``.

    ``F`` and ``epsilon`` may be lists; then all combinations share the same
    paths and a list of results (epsilon-major) is returned.
    """
    fs, es = _as_list(F), [float(e) for e in _as_list(epsilon)]
    gamma = Gamma.from_key(gamma) if isinstance(gamma, str) else gamma
    for f in fs:
        f.bind(model)
    T = _horizon(fs, T)
    job = PathJob(model.name, T, _grid_steps(T, dt), seed, tuple(fs), tuple(es), gamma)
    t0 = time.perf_counter()
    data = _run(job, _ibp_reducer, n_paths, block, workers)
    wall = time.perf_counter() - t0
    res = []
    for eps in es:
        for j, f in enumerate(fs):
            a, b = data[f"lhs{eps}_{j}"], data[f"rhs{eps}_{j}"]
            _, _, z = paired_z(a, b)
            res.append(IBPResult(estimate(a, seed, wall), estimate(b, seed, wall), z,
                                 variance_diverging(a - b), eps, f.family.key))
    return res if isinstance(F, (list, tuple)) or isinstance(epsilon, (list, tuple)) else res[0]


# ---------------------------------------------------------------------------
# derivative of the expectation in the starting point
# ---------------------------------------------------------------------------


@dataclass
class GradExpResult:
    lhs: np.ndarray
    rhs: np.ndarray
    lhs_se: np.ndarray
    rhs_se: np.ndarray
    z: np.ndarray          # componentwise paired z-scores
    residual: float        # max |z|
    epsilon: float
    function: str
    n: int

    @property
    def passed(self) -> bool:
        return self.residual < SIGMA


def _gradexp_reducer(job, bd):
    model = model_by_name(job.model)
    h = job.fd_step if isinstance(job, _GradJob) else 0.0
    out = {}
    x0 = np.zeros(model.dim) if job.x0 is None else np.asarray(job.x0)
    for j, F in enumerate(job.functions):
        cols = [job.times.index(t) for t in F.times]
        g = bd.pts  # X^{x0}_{t}
        if h > 0:
            lhs = np.zeros((g.shape[0], model.dim))
            rel = model.multiply(model.inverse(x0), g)  # x0^{-1} X_t
            for k in range(model.dim):
                e = np.zeros(model.dim)
                e[k] = h
                plus = model.multiply(model.multiply(x0, e), rel)
                minus = model.multiply(model.multiply(x0, -e), rel)
                lhs[:, k] = (F(plus[:, cols]) - F(minus[:, cols])) / (2 * h)
        else:
            rel = model.multiply(model.inverse(x0), g)
            J = model.translation_pullback(rel)
            lhs = np.einsum("pnij,pnj->pi", J, bd.partials[j])
        for eps in job.epsilons:
            w, _ = transported_sums(bd, eps, j)
            for k in range(model.dim):
                out[f"l{eps}_{j}_{k}"] = lhs[:, k]
                out[f"r{eps}_{j}_{k}"] = w[:, 0, k]
    return out


@dataclass(frozen=True)
class _GradJob(PathJob):
    fd_step: float = 0.0


def gradient_of_expectation_check(F, model: ModelFoliation, x=None, epsilon=1.0, n_paths: int = 10_000, h: float = 0.0,
                                  *, T=None, dt: float = 1e-3, seed: int = 0, workers=1, block: int = DEFAULT_BLOCK):
    """``d E_x F`` by pathwise differentiation vs ``E_x sum_i tau_{t_i} d_i f``.

    The left side uses common random numbers: ``X^x = x . X^0`` on group
    models, differentiated exactly (``h = 0``) or by central differences along
    left-invariant directions (``h > 0``).
    """
    if not model.group:
        raise ValueError("pathwise differentiation in the starting point needs a group model")
    fs, es = _as_list(F), [float(e) for e in _as_list(epsilon)]
    for f in fs:
        f.bind(model)
    T = _horizon(fs, T)
    x0 = None if x is None else tuple(float(v) for v in x)
    job = _GradJob(model.name, T, _grid_steps(T, dt), seed, tuple(fs), tuple(es), x0=x0, fd_step=float(h))
    data = _run(job, _gradexp_reducer, n_paths, block, workers)
    res = []
    for eps in es:
        for j, f in enumerate(fs):
            ls, rs, lse, rse, zs = [], [], [], [], []
            for k in range(model.dim):
                a, b = data[f"l{eps}_{j}_{k}"], data[f"r{eps}_{j}_{k}"]
                ea, eb = estimate(a), estimate(b)
                _, _, z = paired_z(a, b)
                ls.append(ea.mean)
                rs.append(eb.mean)
                lse.append(ea.stderr)
                rse.append(eb.stderr)
                zs.append(z)
            zs = np.array(zs)
            res.append(GradExpResult(np.array(ls), np.array(rs), np.array(lse), np.array(rse), zs,
                                     float(np.max(np.abs(zs))), eps, f.family.key, n_paths))
    return res if isinstance(F, (list, tuple)) or isinstance(epsilon, (list, tuple)) else res[0]


# ---------------------------------------------------------------------------
# Dirichlet energy of the intrinsic gradient
# ---------------------------------------------------------------------------


def _energy_reducer(job, bd):
    model = model_by_name(job.model)
    lengths = window_lengths(job)
    eps = job.epsilons[0]
    _, zf = transported_sums(bd, eps, 0)
    _, zg = transported_sums(bd, eps, 1)
    G = model.dual_metric(eps)
    return {"e": np.einsum("pli,i,pli,l->p", zf, G, zg, lengths)}


def dirichlet_energy(F: CylinderFunction, G: CylinderFunction, model: ModelFoliation, epsilon: float,
                     n_paths: int, *, T=None, dt: float = 1e-3, seed: int = 0, workers=1,
                     block: int = DEFAULT_BLOCK) -> EstimatorResult:
    """``E int_0^T <D_s F, D_s G>_eps ds`` on shared paths."""
    F.bind(model)
    G.bind(model)
    T = _horizon([F, G], T)
    job = PathJob(model.name, T, _grid_steps(T, dt), seed, (F, G), (float(epsilon),))
    t0 = time.perf_counter()
    data = _run(job, _energy_reducer, n_paths, block, workers)
    return estimate(data["e"], seed, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# Clark-Ocone for n = 1 by nested Monte Carlo
# ---------------------------------------------------------------------------


@dataclass
class ClarkOconeResult:
    residual: EstimatorResult
    mean_f: float
    n_outer: int
    n_inner: int
    epsilon: float


def clark_ocone_residual_n1(f, t: float, model: ModelFoliation, epsilon: float, n_outer: int, n_inner: int,
                            *, dt: float = 1e-2, seed: int = 0, max_path_steps: float = 5e8) -> ClarkOconeResult:
    """``E[(F - E F - int_0^t <k_s, dB_s>)^2]`` with ``k_s = E[tau_s^{-1} tau_t df(X_t) | F_s]``.

    ``k_s`` is estimated at every left grid point by ``n_inner`` fresh paths
    restarted from ``X_s`` (left translation), on streams keyed by
    ``(outer path, s index)``.  ``E F`` pools every inner terminal value.
    The stochastic integral is the left-point sum, i.e. the Ito integral.
    """
    F = f if isinstance(f, CylinderFunction) else CylinderFunction((t,), f)
    if F.n != 1 or abs(F.times[0] - t) > 1e-12:
        raise ValueError("Clark-Ocone residual is implemented for one-time cylinder functions at t")
    F.bind(model)
    grid = TimeGrid.from_dt(t, dt, (t,))
    N = grid.n_steps
    budget = n_outer * N * (1 + n_inner * (N + 1) / 2.0)
    if budget > max_path_steps:
        raise ValueError(f"nested Monte Carlo needs {budget:.3g} path-steps, cap is {max_path_steps:.3g}")
    t0 = time.perf_counter()
    outer = simulate(model, grid, seed, range(n_outer), (0,))
    F_out = eval_cylinder(F, outer)
    kernels = np.zeros((n_outer, N, model.dim_h))
    pooled = [F_out]
    for k in range(N):
        steps = N - k
        sub = TimeGrid(t - k * grid.dt, steps)
        inc = np.empty((n_outer * n_inner, steps, model.dim_h))
        for o in range(n_outer):
            # one stream per (outer path, s index); inner paths are consecutive draws
            g = path_rng(seed, o, 2, k)
            inc[o * n_inner:(o + 1) * n_inner] = g.standard_normal((n_inner, steps, model.dim_h)) * math.sqrt(grid.dt)
        start = np.repeat(outer.states[:, k], n_inner, axis=0)
        inner = integrate_horizontal_bm(model, sub, inc, x0=start)
        tr = integrate_transport(model, inner, epsilon, record="end")
        xt = inner.states[:, -1]
        df = F.partials(model, xt[:, None])[:, 0]
        v = np.einsum("pij,pj->pi", tr.tau[:, -1], df)
        kernels[:, k] = v[:, : model.dim_h].reshape(n_outer, n_inner, model.dim_h).mean(axis=1)
        pooled.append(F(xt[:, None]))
    ef = float(np.mean(np.concatenate(pooled)))
    stoch = np.einsum("pki,pki->p", kernels, outer.increments)
    resid = (F_out - ef - stoch) ** 2
    return ClarkOconeResult(estimate(resid, seed, time.perf_counter() - t0), ef, n_outer, n_inner, float(epsilon))
