"""Horizontal Brownian motion and its transport processes on model spaces.

The path is advanced by exact group multiplication with the horizontal
increment, which on step-two groups coincides with the Stratonovich midpoint
rule (the vertical slot picks up the discrete Levy area).  The transports are
constant-coefficient matrix SDEs in the coframe and are integrated in
compiled loops, see ``_kernels``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from ._kernels import transport_kernel
from .geometry import ModelFoliation, get_model
from .parallel import DEFAULT_BLOCK, map_blocks
from .stats import estimate

_TIME_TOL = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on ``[0, T]`` with optional partition times on grid points."""

    T: float
    n_steps: int
    partition_times: tuple = ()

    def __post_init__(self):
        if not (self.T > 0 and np.isfinite(self.T)):
            raise ValueError(f"horizon T must be positive, got {self.T}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")
        object.__setattr__(self, "n_steps", int(self.n_steps))
        pts = tuple(float(t) for t in self.partition_times)
        if any(b <= a for a, b in zip(pts, pts[1:])):
            raise ValueError("partition times must be strictly increasing")
        for t in pts:
            self.index_of(t)
        object.__setattr__(self, "partition_times", pts)

    @classmethod
    def from_dt(cls, T: float, dt: float, partition_times: Sequence[float] = ()):
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt}")
        n = T / dt
        if abs(n - round(n)) > 1e-6 * max(1.0, n):
            raise ValueError(f"T={T} is not a multiple of dt={dt}")
        return cls(float(T), int(round(n)), tuple(partition_times))

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def index_of(self, t: float) -> int:
        k = float(t) / self.dt
        kr = int(round(k))
        if abs(k - kr) > _TIME_TOL * max(1.0, abs(k)) or not 0 <= kr <= self.n_steps:
            raise ValueError(f"time {t} is not a grid point of [0, {self.T}] with dt={self.dt}")
        return kr

    @property
    def partition_indices(self) -> np.ndarray:
        return np.array([self.index_of(t) for t in self.partition_times], dtype=np.int64)


# ---------------------------------------------------------------------------
# random streams
# ---------------------------------------------------------------------------


def path_rng(seed: int, path_index: int, *purpose: int) -> np.random.Generator:
    """Generator keyed by ``(seed, purpose..., path_index)``.

    Streams for distinct keys are statistically independent and do not depend
    on how paths are grouped into blocks.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in purpose) + (int(path_index),))
    return np.random.Generator(np.random.PCG64(ss))


def sample_brownian(grid: TimeGrid, dim_h: int, seed: int, path_indices, purpose=(0,), substeps: int = 1):
    """Gaussian increments of shape ``(P, n_steps * substeps, dim_h)``, variance ``dt/substeps``."""
    idx = np.atleast_1d(np.asarray(path_indices, dtype=np.int64))
    n = grid.n_steps * int(substeps)
    sd = np.sqrt(grid.dt / substeps)
    out = np.empty((idx.size, n, dim_h))
    for r, p in enumerate(idx):
        out[r] = path_rng(seed, p, *purpose).standard_normal((n, dim_h))
    out *= sd
    return out


# ---------------------------------------------------------------------------
# horizontal Brownian motion
# ---------------------------------------------------------------------------


@dataclass
class HorizontalPath:
    """A batch of sampled paths: ``increments (P, N, dim_h)``, ``states (P, N+1, D)``."""

    model: ModelFoliation
    grid: TimeGrid
    increments: np.ndarray
    states: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def frame_log(self) -> np.ndarray:
        # frame coordinates at each state; the transports never need them on
        # left-invariant models but they document the driving geometry
        return self.model.frame_matrix(self.states)

    def at(self, t: float) -> np.ndarray:
        return self.states[:, self.grid.index_of(t)]


def integrate_horizontal_bm(model: ModelFoliation, grid: TimeGrid, increments, x0=None) -> HorizontalPath:
    """Solve ``dX = sum_i E_i(X) o dB^i`` by ``X_{k+1} = X_k . (dB_k, 0)``.

    If ``increments`` has ``s * n_steps`` rows, the path is built on the finer
    grid and reported every ``s`` steps (Levy-area subsampling).
    """
    dB = np.asarray(increments, dtype=float)
    if dB.ndim == 2:
        dB = dB[None]
    P, Nf, dh = dB.shape
    if dh != model.dim_h:
        raise ValueError(f"increments have {dh} columns, model {model.name} needs {model.dim_h}")
    if Nf % grid.n_steps:
        raise ValueError(f"{Nf} increments do not refine a grid of {grid.n_steps} steps")
    sub = Nf // grid.n_steps
    h = np.zeros((P, Nf + 1, dh))
    np.cumsum(dB, axis=1, out=h[:, 1:])
    fine = np.empty((P, Nf + 1, model.dim))
    fine[..., :dh] = h
    if model.dim_v:
        area = 0.5 * np.einsum("pki,aij,pkj->pka", h[:, :-1], model.omega, dB)
        fine[:, 0, dh:] = 0.0
        np.cumsum(area, axis=1, out=fine[:, 1:, dh:])
    states = fine[:, ::sub]
    coarse = dB.reshape(P, grid.n_steps, sub, dh).sum(axis=2) if sub > 1 else dB
    if x0 is not None:
        states = model.multiply(np.asarray(x0, dtype=float)[..., None, :], states)
    return HorizontalPath(model, grid, coarse, np.ascontiguousarray(states))


# ---------------------------------------------------------------------------
# transports
# ---------------------------------------------------------------------------


@dataclass
class TransportState:
    """``Theta``, ``M`` recorded at grid indices ``rec_idx`` for a batch of paths.

    ``qint``/``gint`` hold window integrals of ``(tau^{-1})^T G tau^{-1}`` and
    ``(tau^{-1})^T gamma'``; ``ratio_max``/``iso_max`` are per-path maxima of
    ``||tau_t||_eps / e^{rate t/2}`` and ``||Theta^T G Theta - G||``.
    """

    epsilon: float
    rec_idx: np.ndarray
    theta: np.ndarray
    m: np.ndarray
    tau_direct: Optional[np.ndarray] = None
    qint: Optional[np.ndarray] = None
    gint: Optional[np.ndarray] = None
    ratio_max: Optional[np.ndarray] = None
    iso_max: Optional[np.ndarray] = None
    _tau: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def tau(self) -> np.ndarray:
        if self._tau is None:
            self._tau = self.m @ self.theta
        return self._tau

    def slot(self, k: int) -> int:
        hits = np.nonzero(self.rec_idx == k)[0]
        if not hits.size:
            raise KeyError(f"grid index {k} was not recorded")
        return int(hits[0])


def _is_flat(model: ModelFoliation) -> bool:
    return model.dim_v == 0 and not np.any(model.ricci_h)


def step_windows(grid: TimeGrid, window_idx) -> np.ndarray:
    """Window label of each step ``[s_k, s_{k+1})``: ``l`` if ``t_{l-1} <= s_k < t_l``, else ``-1``."""
    lab = np.full(grid.n_steps, -1, dtype=np.int64)
    lo = 0
    for l, hi in enumerate(window_idx):
        lab[lo:hi] = l
        lo = hi
    return lab


def integrate_transport(model: ModelFoliation, path, eps: float, record="end", direct: bool = False,
                        track: bool = False, windows=None, gamma_dot=None, q: bool = False) -> TransportState:
    """Integrate ``Theta``, ``M`` (and ``tau`` directly if ``direct``) along ``path``.

    ``record`` is ``"end"``, ``"all"``, ``"partition"`` or an index array.
    ``windows`` are grid indices ``t_1 < ... < t_n`` used by the window
    integrals requested through ``q`` and ``gamma_dot`` (``(N, dim_h)``).
    """
    if not eps > 0:
        raise ValueError(f"epsilon must be positive, got {eps}")
    grid = path.grid
    dB = np.ascontiguousarray(path.increments)
    if isinstance(record, str):
        if record == "end":
            rec = np.array([grid.n_steps])
        elif record == "all":
            rec = np.arange(grid.n_steps + 1)
        elif record == "partition":
            rec = grid.partition_indices
        else:
            raise ValueError(f"unknown record mode {record!r}")
    else:
        rec = np.asarray(record, dtype=np.int64)
    rec = np.unique(np.concatenate([[0], rec])).astype(np.int64)
    win = np.asarray(windows if windows is not None else grid.partition_indices, dtype=np.int64)
    lab = step_windows(grid, win)
    do_g = gamma_dot is not None
    gdot = np.zeros((grid.n_steps, model.dim_h)) if not do_g else np.ascontiguousarray(gamma_dot, dtype=float)
    gens = np.ascontiguousarray(model.transport_generators(eps))
    C = np.ascontiguousarray(model.damping_matrix(eps))
    gdiag = model.dual_metric(eps)
    rate = model.bounds.rate(eps)
    P = dB.shape[0]
    D = model.dim

    if _is_flat(model):
        eye = np.broadcast_to(np.eye(D), (P, rec.size, D, D))
        out = TransportState(eps, rec, eye.copy(), eye.copy(), eye.copy() if direct else None)
        lens = np.array([np.sum(lab == l) for l in range(win.size)], dtype=float) * grid.dt
        if q:
            out.qint = np.broadcast_to(lens[:, None, None] * np.diag(gdiag), (P, win.size, D, D)).copy()
        if do_g:
            acc = np.stack([gdot[lab == l].sum(axis=0) * grid.dt for l in range(win.size)]) if win.size else np.zeros((0, D))
            out.gint = np.broadcast_to(acc, (P, win.size, D)).copy()
        if track:
            out.ratio_max = np.ones(P)
            out.iso_max = np.zeros(P)
        return out

    th, m, td, qint, gint, rmax, imax, ok = transport_kernel(
        dB, grid.dt, gens, C, gdiag, rate, rec, lab, int(win.size), gdot, q, do_g, track, direct)
    if not ok.all():
        raise np.linalg.LinAlgError(f"transport matrix became singular on {int((~ok).sum())} path(s)")
    return TransportState(eps, rec, th, m, td if direct else None, qint if q else None,
                          gint if do_g else None, rmax if track else None, imax if track else None)


def transport_bound_check(states: TransportState) -> float:
    """``max ||tau_t||_eps / e^{(K + kappa/eps) t/2} - 1`` over the batch (needs ``track``)."""
    if states.ratio_max is None:
        raise ValueError("transport was integrated without track=True")
    return float(np.max(states.ratio_max) - 1.0)


def isometry_residual(states: TransportState) -> float:
    """``max ||Theta^T G Theta - G||_2`` over paths and grid times (needs ``track``)."""
    if states.iso_max is None:
        raise ValueError("transport was integrated without track=True")
    return float(np.max(states.iso_max))


def factorization_gap(states: TransportState) -> float:
    """``max ||tau - M Theta||`` for the stored product (zero up to rounding)."""
    return float(np.max(np.abs(states.tau - np.einsum("...ij,...jk->...ik", states.m, states.theta))))


def direct_gap(states: TransportState) -> float:
    """``max ||tau_direct - M Theta||`` at recorded times."""
    if states.tau_direct is None:
        raise ValueError("transport was integrated without direct=True")
    return float(np.max(np.abs(states.tau_direct - states.tau)))


@lru_cache(maxsize=None)
def model_by_name(name: str) -> ModelFoliation:
    return get_model(name)


def simulate(model: ModelFoliation, grid: TimeGrid, seed: int, path_indices, purpose=(0,), substeps: int = 1,
             x0=None) -> HorizontalPath:
    """Sample increments for ``path_indices`` and build the paths."""
    inc = sample_brownian(grid, model.dim_h, seed, path_indices, purpose, substeps)
    return integrate_horizontal_bm(model, grid, inc, x0)


def levy_area_second_moment(T: float, n_steps: int) -> float:
    """``E[z_T^2]`` under the scheme on ``H^1``: ``T^2/4 (1 - 1/n_steps)``."""
    return 0.25 * T * T * (1.0 - 1.0 / n_steps)


# ---------------------------------------------------------------------------
# batch contracts and dt ladders
# ---------------------------------------------------------------------------


@dataclass
class TransportContracts:
    """Pathwise transport properties over a batch at one ``epsilon``."""

    model: str
    epsilon: float
    T: float
    dt: float
    n_paths: int
    bound_excess: float      # max ||tau_t||_eps / e^{rate t/2} - 1
    frac_within: float       # share of paths with ratio <= 1 + 10 dt
    isometry: float          # max ||Theta^T G Theta - G||
    factorization: float     # max ||tau - M Theta|| at the horizon
    direct: float            # max ||tau_direct - M Theta|| at the horizon

    @property
    def bound_ok(self) -> bool:
        return self.frac_within == 1.0


@dataclass(frozen=True)
class _ContractJob:
    model: str
    T: float
    n_steps: int
    seed: int
    epsilons: tuple


def _contract_block(job, start, stop):
    model = model_by_name(job.model)
    grid = TimeGrid(job.T, job.n_steps)
    path = simulate(model, grid, job.seed, range(start, stop))
    out = {}
    for eps in job.epsilons:
        tr = integrate_transport(model, path, eps, record="end", direct=True, track=True)
        out[eps] = (tr.ratio_max, tr.iso_max, factorization_gap(tr), direct_gap(tr))
    return out


def transport_contracts(model: ModelFoliation, epsilon, T: float = 1.0, dt: float = 1e-3, n_paths: int = 10_000,
                        seed: int = 0, workers=1, block: int = DEFAULT_BLOCK):
    """Bound, isometry and factorization contracts on shared paths for one or more ``epsilon``."""
    es = [float(e) for e in np.atleast_1d(epsilon)]
    grid = TimeGrid.from_dt(T, dt)
    job = _ContractJob(model.name, float(T), grid.n_steps, int(seed), tuple(es))
    parts = map_blocks(_contract_block, job, n_paths, block, workers)
    res = []
    for eps in es:
        ratio = np.concatenate([p[eps][0] for p in parts])
        iso = np.concatenate([p[eps][1] for p in parts])
        res.append(TransportContracts(
            model.name, eps, float(T), grid.dt, int(n_paths), float(ratio.max() - 1.0),
            float(np.mean(ratio <= 1.0 + 10 * grid.dt)), float(iso.max()),
            max(p[eps][2] for p in parts), max(p[eps][3] for p in parts)))
    return res if np.ndim(epsilon) else res[0]


def coupled_paths(model: ModelFoliation, T: float, fine_steps: int, factors, seed: int, path_indices):
    """Paths on grids with ``fine_steps / f`` steps for each ``f`` in ``factors``, all from one set of increments."""
    grid = TimeGrid(T, fine_steps)
    dB = sample_brownian(grid, model.dim_h, seed, path_indices)
    out = {}
    for f in factors:
        if fine_steps % f:
            raise ValueError(f"factor {f} does not divide {fine_steps}")
        P = dB.shape[0]
        coarse = dB.reshape(P, fine_steps // f, f, model.dim_h).sum(axis=2)
        out[f] = integrate_horizontal_bm(model, TimeGrid(T, fine_steps // f), coarse)
    return out


@dataclass(frozen=True)
class _LadderJob:
    model: str
    T: float
    fine_steps: int
    factors: tuple
    seed: int
    coord: int


def _ladder_block(job, start, stop):
    model = model_by_name(job.model)
    grid = TimeGrid(job.T, job.fine_steps)
    dB = sample_brownian(grid, model.dim_h, job.seed, range(start, stop))
    P, n = dB.shape[0], model.dim_h
    H = np.zeros((P, job.fine_steps + 1, n))
    np.cumsum(dB, axis=1, out=H[:, 1:])
    out = {}
    for f in job.factors:
        if job.coord < n:
            out[f] = H[:, -1, job.coord] ** 2
            continue
        pos = H[:, ::f]
        c = np.diff(pos, axis=1)
        a = job.coord - n
        out[f] = (0.5 * np.sum((pos[:, :-1] @ model.omega[a]) * c, axis=(1, 2))) ** 2
    return out


@dataclass
class ConvergenceStudy:
    model: str
    epsilon: float
    dts: list
    isometry: list
    isometry_slope: Optional[float]
    weak_increments: list          # E[phi_dt - phi_{dt/2}], phi = (last coordinate of X_T)^2
    weak_increment_se: list
    weak_slope: Optional[float]
    exact: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def _loglog_slope(x, y):
    x, y = np.asarray(x, dtype=float), np.abs(np.asarray(y, dtype=float))
    if np.any(y <= 0):
        return None
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def convergence_study(model: ModelFoliation, dts, epsilon: float = 1.0, T: float = 1.0, n_paths: int = 100_000,
                      n_iso: int = 2000, seed: int = 0, workers=1, block: int = DEFAULT_BLOCK) -> ConvergenceStudy:
    """Observed orders of the isometry residual and of the weak error in ``dt``.

    All levels are driven by the same fine increments (``min(dts)/2``).  The
    weak error is measured through coupled successive differences
    ``E[phi_dt - phi_{dt/2}]``, which are proportional to ``dt`` for a first
    order scheme; ``phi`` is the square of the last coordinate at ``T``.
    """
    dts = sorted({float(d) for d in dts}, reverse=True)
    if len(dts) < 3:
        raise ValueError("a convergence study needs at least three dt values")
    fine = min(dts) / 2
    fine_steps = TimeGrid.from_dt(T, fine).n_steps
    factors = []
    for d in dts:
        f = d / fine
        if abs(f - round(f)) > 1e-9:
            raise ValueError(f"dt={d:g} is not a multiple of {fine:g}")
        factors.append(int(round(f)))
    levels = tuple(sorted(set(factors + [f // 2 for f in factors]), reverse=True))

    iso = []
    paths = coupled_paths(model, T, fine_steps, factors, seed, range(n_iso))
    for f in factors:
        tr = integrate_transport(model, paths[f], epsilon, track=True)
        iso.append(isometry_residual(tr))
    exact = all(v == 0.0 for v in iso)

    job = _LadderJob(model.name, float(T), fine_steps, levels, int(seed), model.dim - 1)
    parts = map_blocks(_ladder_block, job, n_paths, block, workers)
    phi = {f: np.concatenate([p[f] for p in parts]) for f in levels}
    inc, se = [], []
    for f in factors:
        e = estimate(phi[f] - phi[f // 2])
        inc.append(e.mean)
        se.append(e.stderr)
    weak_zero = all(abs(v) < 1e-14 for v in inc)
    return ConvergenceStudy(model.name, float(epsilon), dts, iso, None if exact else _loglog_slope(dts, iso),
                            inc, se, None if weak_zero else _loglog_slope(dts, inc), exact and weak_zero)
