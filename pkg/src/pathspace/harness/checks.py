"""Registry of named checks runnable from the CLI.

Each check takes an :class:`ExperimentConfig` and one ``epsilon`` and
returns a :class:`CheckOutcome` with a verdict, JSON-able records and
optional CSV rows.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, is_dataclass
from typing import Callable, Optional

import numpy as np

from .. import concentration as conc
from .. import functional as fn
from .. import geometry as geo
from .. import malliavin as mal
from .. import sde
from ..functions import CylinderFunction
from .config import ConfigError, ExperimentConfig


@dataclass
class CheckOutcome:
    check: str
    passed: Optional[bool]          # None: informational, no verdict
    records: list
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def jsonable(obj):
    """Recursively convert dataclasses, numpy scalars and arrays to plain JSON types."""
    if is_dataclass(obj) and not isinstance(obj, type):
        return jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _model(cfg):
    try:
        return geo.get_model(cfg.model)
    except KeyError as exc:
        raise ConfigError(str(exc)) from None


def _default_function(cfg, model) -> str:
    if cfg.function:
        return cfg.function
    return f"coord:{model.dim - 1}" if model.dim_v else "coord:0"


def _cylinder(cfg, model, key=None, default_times=None) -> CylinderFunction:
    key = key or _default_function(cfg, model)
    times = cfg.times or default_times or [cfg.T]
    try:
        return CylinderFunction.from_key(key, times).bind(model)
    except (KeyError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


# default partition per registered G family
_FAMILY_TIMES = {"affine": (0.5, 1.0)}


def _g_functions(cfg, model) -> list:
    """Named G families (``affine``, ``bump``, ``exp``, ``all``) or a raw registry key."""
    names = [s.strip() for s in (cfg.function or "all").split("|") if s.strip()]
    out = []
    for name in names:
        for fam in (list(fn.G_FAMILIES) if name == "all" else [name]):
            if fam in fn.G_FAMILIES:
                fixed = _FAMILY_TIMES.get(fam)
                times = cfg.times or ([t * cfg.T for t in fixed] if fixed else [cfg.T])
                out.append(_cylinder(cfg, model, fn.G_FAMILIES[fam], times))
            else:
                out.append(_cylinder(cfg, model, fam))
    return out


def _mc(cfg) -> dict:
    return dict(T=cfg.T, dt=cfg.dt, seed=cfg.seed, workers=cfg.workers, block=cfg.block)


def _est(e) -> dict:
    d = asdict(e)
    d.pop("wall_time", None)
    return d


# ---------------------------------------------------------------------------
# checks
# ---------------------------------------------------------------------------


def _weitzenbock_test_function(dim):
    a = np.linspace(0.7, 1.3, dim)
    b = np.linspace(-0.4, 0.5, dim)

    def value(p):
        return math.sin(a @ p) + math.exp(0.3 * (b @ p))

    def grad(p):
        return math.cos(a @ p) * a + 0.3 * math.exp(0.3 * (b @ p)) * b

    return geo.SmoothFunction(value, grad)


def check_geometry(cfg: ExperimentConfig, eps: float) -> CheckOutcome:
    model = _model(cfg)
    rng = np.random.default_rng(cfg.seed)
    Z = rng.standard_normal((64, model.dim_v)) if model.dim_v else np.zeros((1, 0))
    skew = float(np.max(np.abs((lambda J: J + np.swapaxes(J, -1, -2))(geo.j_endomorphism(model, Z))))) \
        if model.dim_v else 0.0
    pts = rng.standard_normal((4, model.dim))
    ym = geo.yang_mills_check(model, pts)
    bounds = geo.verify_bounds(model, seed=cfg.seed)
    f = _weitzenbock_test_function(model.dim)
    x = 0.3 * rng.standard_normal(model.dim)
    w = geo.weitzenbock_residual(model, f, x, eps, h=1e-2)
    ratio_ok = (3.5 <= w.ratio <= 4.5) or (not math.isfinite(w.ratio) and float(np.max(w.residual)) < 1e-9)
    rec = {"model": model.name, "epsilon": eps, "j_skew_max": skew, "yang_mills_residual": ym,
           "weitzenbock_residual": float(np.max(w.residual)), "weitzenbock_residual_half": float(np.max(w.residual_half)),
           "weitzenbock_ratio": w.ratio, "bounds": bounds}
    ok = skew == 0.0 and ym < 1e-10 and ratio_ok and bounds["ok"]
    rec["pass"] = ok
    return CheckOutcome("geometry", ok, [rec])


def _contracts(cfg, eps):
    model = _model(cfg)
    return model, sde.transport_contracts(model, eps, cfg.T, cfg.dt, cfg.n_paths, cfg.seed, cfg.workers, cfg.block)


def check_transport(cfg, eps) -> CheckOutcome:
    """Pointwise bound, isometry (< 5 dt) and factorization on one batch."""
    model, c = _contracts(cfg, eps)
    rec = asdict(c)
    rec["bound_value_T"] = math.exp(model.bounds.rate(eps) * cfg.T / 2)
    rec["isometry_tol"] = 5 * cfg.dt
    ok = c.bound_ok and c.isometry < 5 * cfg.dt and c.factorization < 1e-10
    rec["pass"] = ok
    return CheckOutcome("transport", ok, [rec])


def check_transport_bound(cfg, eps) -> CheckOutcome:
    model, c = _contracts(cfg, eps)
    ok = c.bound_ok
    rec = {"model": model.name, "epsilon": eps, "bound_excess": c.bound_excess, "frac_within": c.frac_within,
           "tol": 10 * cfg.dt, "bound_value_T": math.exp(model.bounds.rate(eps) * cfg.T / 2), "pass": ok}
    return CheckOutcome("transport_bound", ok, [rec])


def check_isometry(cfg, eps) -> CheckOutcome:
    model, c = _contracts(cfg, eps)
    ok = c.isometry < 5 * cfg.dt
    rec = {"model": model.name, "epsilon": eps, "isometry_residual": c.isometry, "tol": 5 * cfg.dt,
           "factorization_gap": c.factorization, "direct_gap": c.direct, "pass": ok}
    return CheckOutcome("isometry", ok, [rec])


def check_ibp(cfg, eps) -> CheckOutcome:
    model = _model(cfg)
    F = _cylinder(cfg, model)
    r = mal.ibp_check(F, cfg.gamma, model, eps, cfg.n_paths, **_mc(cfg))
    rec = {"model": model.name, "epsilon": eps, "function": r.function, "gamma": cfg.gamma, "lhs": _est(r.lhs),
           "rhs": _est(r.rhs), "z": r.z, "diverging": r.diverging, "pass": r.passed}
    return CheckOutcome("ibp", r.passed, [rec])


def check_gradient_expectation(cfg, eps) -> CheckOutcome:
    model = _model(cfg)
    F = _cylinder(cfg, model)
    try:
        r = mal.gradient_of_expectation_check(F, model, cfg.x or None, eps, cfg.n_paths, **_mc(cfg))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    rec = {"model": model.name, "epsilon": eps, "function": r.function, "lhs": r.lhs, "rhs": r.rhs,
           "lhs_se": r.lhs_se, "rhs_se": r.rhs_se, "z": r.z, "residual": r.residual, "pass": r.passed}
    return CheckOutcome("gradient_expectation", r.passed, [rec])


def check_clark_ocone(cfg, eps) -> CheckOutcome:
    """Residual at ``n_inner`` and ``4 n_inner``; PASS iff it drops by at least 2x."""
    model = _model(cfg)
    F = _cylinder(cfg, model, default_times=[cfg.T])
    if F.n != 1:
        raise ConfigError("clark_ocone needs a one-time cylinder function")
    recs = []
    try:
        for k in (cfg.n_inner, 4 * cfg.n_inner):
            r = mal.clark_ocone_residual_n1(F, F.times[0], model, eps, cfg.n_paths, k, dt=cfg.dt, seed=cfg.seed)
            recs.append({"n_inner": k, "residual": _est(r.residual), "mean_f": r.mean_f})
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    a, b = recs[0]["residual"]["mean"], recs[1]["residual"]["mean"]
    ratio = a / b if b > 0 else (math.inf if a > 0 else None)
    ok = ratio is None or ratio >= 2.0 or max(a, b) < 2 * cfg.dt
    out = {"model": model.name, "epsilon": eps, "function": F.family.key, "runs": recs, "ratio": ratio, "pass": ok}
    return CheckOutcome("clark_ocone", ok, [out])


def check_dirichlet_energy(cfg, eps) -> CheckOutcome:
    model = _model(cfg)
    F = _cylinder(cfg, model)
    e = mal.dirichlet_energy(F, F, model, eps, cfg.n_paths, **_mc(cfg))
    return CheckOutcome("dirichlet_energy", None, [{"model": model.name, "epsilon": eps, "function": F.family.key,
                                                    "energy": _est(e)}])


def check_entropy(cfg, eps) -> CheckOutcome:
    model = _model(cfg)
    recs = []
    for G in _g_functions(cfg, model):
        e = fn.entropy(G, model, cfg.n_paths, **_mc(cfg))
        recs.append({"model": model.name, "function": G.family.key, **asdict(e), "pass": e.nonnegative})
    ok = all(r["pass"] for r in recs)
    return CheckOutcome("entropy", ok, recs)


def _lsi_records(cfg, eps):
    model = _model(cfg)
    gs = _g_functions(cfg, model)
    res = fn.lsi_chain(gs, model, eps, cfg.n_paths, **_mc(cfg))
    return model, res


def _strip(rec):
    rec = dict(rec)
    extra = dict(rec.get("extra", {}))
    extra.pop("wall_time", None)
    rec["extra"] = extra
    return rec


def _lsi_single(name, attr):
    def run(cfg, eps) -> CheckOutcome:
        model, res = _lsi_records(cfg, eps)
        recs = [_strip(getattr(r, attr).to_record()) for r in res]
        if attr == "theorem41":
            for rec in recs:
                rec["lsi_constant"] = fn.lsi_constant(model.bounds, eps, cfg.T)
        return CheckOutcome(name, all(r["pass"] for r in recs), recs)

    run.__doc__ = f"One link of the log-Sobolev chain ({attr})."
    return run


def check_lsi_chain(cfg, eps) -> CheckOutcome:
    model, res = _lsi_records(cfg, eps)
    recs = []
    for r in res:
        recs.append({
            "model": model.name, "epsilon": eps, "function": r.function, "entropy": asdict(r.entropy),
            "lemma42": _strip(r.lemma42.to_record()), "lemma43": _strip(r.lemma43.to_record()),
            "lemma44": _strip(r.lemma44.to_record()), "theorem41": _strip(r.theorem41.to_record()),
            "chain": [{"link": n, "pass": ok} for n, ok in r.chain],
            "lsi_constant": fn.lsi_constant(model.bounds, eps, cfg.T), "pass": r.passed,
        })
    return CheckOutcome("lsi_chain", all(r["pass"] for r in recs), recs)


def _r_grid(cfg, default):
    return np.asarray(cfg.r_grid or default, dtype=float)


def check_herbst(cfg, eps) -> CheckOutcome:
    model = _model(cfg)
    try:
        h = conc.herbst_check(model, cfg.T, eps, cfg.n_paths, _r_grid(cfg, (0.5, 1.0, 1.5, 2.0)), dt=cfg.dt,
                              seed=cfg.seed, workers=cfg.workers, block=cfg.block)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    curve = h.curve_eps if h.reevaluated else h.curve
    rows = list(curve.rows())
    rec = {"model": model.name, "epsilon": eps, "T": cfg.T, "n_paths": cfg.n_paths, "surrogate": h.surrogate,
           "center": h.curve.center, "center_se": h.curve.center_se, "reevaluated": h.reevaluated,
           "note": h.note, "tail": list(h.curve.rows()), "pass": h.passed}
    if h.reevaluated:
        rec["tail_eps"] = rows
    return CheckOutcome("herbst", h.passed, [rec], rows)


def check_tail_slope(cfg, eps) -> CheckOutcome:
    model = _model(cfg)
    try:
        s = conc.tail_slope_sandwich(model, cfg.T, cfg.n_paths, cfg.r_grid or None, dt=cfg.dt, seed=cfg.seed,
                                     workers=cfg.workers, block=cfg.block)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    rows = list(s.curve.rows())
    rec = {"model": model.name, "T": cfg.T, "n_paths": cfg.n_paths, "slope": s.slope, "window": s.window,
           "window_with_slack": s.window_slack, "r_used": s.r_used, "verdict": s.verdict,
           "upper_slope_est": s.upper_slope_est, "lower_slope_est": s.lower_slope_est, "label": s.label}
    passed = None if s.verdict == "INCONCLUSIVE" else s.passed
    rec["pass"] = passed
    return CheckOutcome("tail_slope", passed, [rec], rows)


def check_distances(cfg, eps) -> CheckOutcome:
    """Oracle agreement on the z-axis, monotonicity in epsilon, sandwich, shooting cross-check."""
    model = _model(cfg)
    if not model.dim_v:
        raise ConfigError("distance checks need a Heisenberg model")
    rng = np.random.default_rng(cfg.seed)
    D = model.dim
    zaxis = np.zeros(D)
    zaxis[-1] = 1.0
    oracle = conc.control_oracle_distance(model, zaxis, seed=cfg.seed)
    dcc = float(conc.cc_distance(model, zaxis))
    rel = abs(oracle - dcc) / dcc
    grid = rng.uniform(-1.5, 1.5, (20, D))
    eps_ladder = sorted(set(cfg.epsilon) | {0.25, 0.5, 1.0, 2.0, 4.0})
    table = np.array([conc.eps_distance_closed(model, grid, e) for e in eps_ladder])
    cc = conc.cc_distance(model, grid)
    mono = bool(np.all(np.diff(table, axis=0) <= 1e-9) and np.all(table <= cc + 1e-9))
    lo, hi = conc.estimate_sandwich(model)
    dm = conc.DistanceModel("cc", sandwich=(lo, hi))
    try:
        dm(model, grid)
        sandwich_ok = True
    except conc.SandwichViolation:
        sandwich_ok = False
    shots = []
    for p in grid[:5]:
        s = conc.riemannian_eps_distance(model, p, eps)
        shots.append(abs(s.distance - float(conc.eps_distance_closed(model, p, eps))) if s.converged else math.inf)
    shoot_gap = max(shots)
    ok = rel < 0.01 and mono and sandwich_ok and shoot_gap < 1e-6
    rec = {"model": model.name, "epsilon": eps, "z_axis_cc": dcc, "z_axis_oracle": oracle, "oracle_rel_gap": rel,
           "monotone_in_eps": mono, "eps_ladder": eps_ladder, "sandwich": [lo, hi], "sandwich_enforced": sandwich_ok,
           "shooting_max_gap": shoot_gap, "pass": ok}
    return CheckOutcome("distances", ok, [rec])


def check_lower_bound_constant(cfg, eps) -> CheckOutcome:
    model = _model(cfg)
    try:
        c = conc.lower_bound_constant(model, eps, cfg.T)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return CheckOutcome("lower_bound_constant", None, [{"model": model.name, "epsilon": eps, "T": cfg.T,
                                                        "constant": c, "D": conc.d_constant(model)}])


CHECKS: dict[str, Callable[[ExperimentConfig, float], CheckOutcome]] = {
    "geometry": check_geometry,
    "transport": check_transport,
    "transport_bound": check_transport_bound,
    "isometry": check_isometry,
    "ibp": check_ibp,
    "gradient_expectation": check_gradient_expectation,
    "clark_ocone": check_clark_ocone,
    "dirichlet_energy": check_dirichlet_energy,
    "entropy": check_entropy,
    "lsi_damped": _lsi_single("lsi_damped", "lemma42"),
    "lemma43": _lsi_single("lemma43", "lemma43"),
    "lemma44": _lsi_single("lemma44", "lemma44"),
    "lsi_full": _lsi_single("lsi_full", "theorem41"),
    "lsi_chain": check_lsi_chain,
    "herbst": check_herbst,
    "tail_slope": check_tail_slope,
    "distances": check_distances,
    "lower_bound_constant": check_lower_bound_constant,
}

DESCRIPTIONS = {
    "geometry": "J skew-symmetry, Yang-Mills residual, Weitzenbock second-order residual, curvature bounds",
    "transport": "pointwise transport bound, Theta isometry and tau = M Theta on one batch",
    "transport_bound": "||tau_t||_eps <= e^{(K+kappa/eps)t/2}(1+10dt) on every path",
    "isometry": "max ||Theta^T G Theta - G|| below 5 dt",
    "ibp": "integration by parts: E[F int <gamma', dB>] vs E[int <D~F, gamma'>]",
    "gradient_expectation": "d E_x F against E_x sum tau_{t_i} d_i f",
    "clark_ocone": "nested Monte Carlo Clark-Ocone residual at n_inner and 4 n_inner",
    "dirichlet_energy": "E int ||D F||^2 (informational)",
    "entropy": "entropy of G^2 with delta-method error",
    "lsi_damped": "Ent(G^2) <= 2 E int ||D~G||^2",
    "lemma43": "damped energy <= e^{cT} times the partition sum",
    "lemma44": "partition sum <= e^{2cT} intrinsic energy, with the M-increment sub-check",
    "lsi_full": "Ent(G^2) <= 2 e^{3cT} E int ||DG||^2",
    "lsi_chain": "all links of the log-Sobolev chain on shared paths",
    "herbst": "tail of the sup-distance against exp(-r^2/(2T e^{cT}))",
    "tail_slope": "finite-r slope of ln P(sup d_cc >= r) against r^2 inside the window",
    "distances": "cc oracle, d_eps monotonicity, Koranyi sandwich, shooting vs closed form",
    "lower_bound_constant": "heat-kernel lower-bound constant (reporting only)",
}


def monotonicity_summary(check: str, cfg: ExperimentConfig, model) -> dict:
    """Epsilon-dependence of the constants that enter a check."""
    eps = sorted(cfg.epsilon)
    out = {"epsilon": eps}
    if check in ("transport", "transport_bound", "isometry"):
        vals = [math.exp(model.bounds.rate(e) * cfg.T / 2) for e in eps]
        out["bound_value_T"] = vals
        out["bound_decreasing_in_eps"] = bool(all(b < a for a, b in zip(vals, vals[1:])))
    if check in ("lsi_full", "lsi_chain", "lsi_damped", "lemma43", "lemma44"):
        vals = [fn.lsi_constant(model.bounds, e, cfg.T) for e in eps]
        out["lsi_constant"] = vals
        out["lsi_constant_decreasing_in_eps"] = bool(all(b < a for a, b in zip(vals, vals[1:])))
    if check == "herbst":
        vals = [float(conc.herbst_bound(model.bounds, cfg.T, e, 1.0)) for e in eps]
        out["bound_at_r1"] = vals
    return out
