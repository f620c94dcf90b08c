"""Command line entry point: ``pathspace run|sweep|converge|list-checks|list-models``.

Exit codes: 0 pass or complete, 1 statistical failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time

from .. import geometry as geo
from .. import sde
from .checks import CHECKS, DESCRIPTIONS, ConfigError, jsonable, monotonicity_summary
from .config import ExperimentConfig

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _add_config_flags(p, seed_required=False):
    p.add_argument("--config", help="flat key = value file; flags override its entries")
    p.add_argument("--check")
    p.add_argument("--model")
    p.add_argument("--epsilon", help="one value or a comma-separated list")
    p.add_argument("--T", dest="T")
    p.add_argument("--dt")
    p.add_argument("--n-paths", dest="n_paths")
    p.add_argument("--seed", required=seed_required)
    p.add_argument("--function", help="registry key, e.g. coord:2 or poly:0*1; G families: affine|bump|exp|all")
    p.add_argument("--times", help="comma-separated cylinder times")
    p.add_argument("--gamma", help="linear:i[,c] or ramp:i[,c]")
    p.add_argument("--output", help="path prefix for <prefix>.json and <prefix>.csv")
    p.add_argument("--workers")
    p.add_argument("--block")
    p.add_argument("--n-inner", dest="n_inner")
    p.add_argument("--r-grid", dest="r_grid")
    p.add_argument("--dt-ladder", dest="dt_ladder")
    p.add_argument("--x", help="starting point for gradient_expectation")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="pathspace", description="Monte Carlo checks on horizontal path space of Heisenberg groups")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add_config_flags(sub.add_parser("run", help="run one check"), seed_required=True)
    _add_config_flags(sub.add_parser("sweep", help="run one check for each epsilon"), seed_required=True)
    _add_config_flags(sub.add_parser("converge", help="observed orders along a dt ladder"), seed_required=True)
    sub.add_parser("list-checks", help="list check identifiers")
    sub.add_parser("list-models", help="list model names")
    return ap


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    flags = {k: v for k, v in vars(args).items() if k in ExperimentConfig.field_names()}
    return cfg.update(flags).validate()


def _write(cfg, summary, rows):
    text = json.dumps(jsonable(summary), indent=2, sort_keys=True)
    if cfg.output:
        with open(cfg.output + ".json", "w") as fh:
            fh.write(text + "\n")
        if rows:
            keys = list(rows[0].keys())
            if "epsilon" not in keys and any("epsilon" in r for r in rows):
                keys = ["epsilon"] + keys
            with open(cfg.output + ".csv", "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=keys, extrasaction="ignore")
                w.writeheader()
                for r in rows:
                    w.writerow(jsonable(r))
    print(text)


def _verdict(passes) -> int:
    return EXIT_FAIL if any(p is False for p in passes) else EXIT_OK


def _get_check(cfg):
    if not cfg.check:
        raise ConfigError("--check is required (see list-checks)")
    if cfg.check not in CHECKS:
        raise ConfigError(f"unknown check {cfg.check!r}; see list-checks")
    _check_model(cfg)
    return CHECKS[cfg.check]


def _check_model(cfg):
    try:
        geo.get_model(cfg.model)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"unknown model {cfg.model!r} ({exc}); see list-models") from None


def cmd_run(cfg) -> int:
    fn = _get_check(cfg)
    if len(cfg.epsilon) != 1:
        raise ConfigError("run takes a single epsilon; use sweep for a list")
    t0 = time.perf_counter()
    out = fn(cfg, cfg.epsilon[0])
    summary = {"command": "run", "config": cfg.to_dict(), "check": out.check, "pass": out.passed,
               "records": out.records, "wall_time": time.perf_counter() - t0}
    _write(cfg, summary, out.rows)
    return _verdict([out.passed])


def cmd_sweep(cfg) -> int:
    fn = _get_check(cfg)
    if len(cfg.epsilon) < 2:
        raise ConfigError("sweep needs at least two epsilon values")
    t0 = time.perf_counter()
    recs, rows, passes = [], [], []
    for eps in cfg.epsilon:
        out = fn(cfg, eps)
        recs.append({"epsilon": eps, "pass": out.passed, "records": out.records})
        rows.extend({"epsilon": eps, **r} for r in out.rows)
        passes.append(out.passed)
    summary = {"command": "sweep", "config": cfg.to_dict(), "check": cfg.check, "per_epsilon": recs,
               "monotonicity": monotonicity_summary(cfg.check, cfg, geo.get_model(cfg.model)),
               "pass": None if all(p is None for p in passes) else all(p is not False for p in passes),
               "wall_time": time.perf_counter() - t0}
    _write(cfg, summary, rows)
    return _verdict(passes)


ISO_WINDOW = (0.8, 1.2)
WEAK_WINDOW = (0.5, 1.5)


def cmd_converge(cfg) -> int:
    _check_model(cfg)
    if len(cfg.dt_ladder) < 3:
        raise ConfigError("converge needs a dt ladder of at least three values")
    t0 = time.perf_counter()
    try:
        study = sde.convergence_study(geo.get_model(cfg.model), cfg.dt_ladder, cfg.epsilon[0], cfg.T, cfg.n_paths,
                                      seed=cfg.seed, workers=cfg.workers, block=cfg.block)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if study.exact:
        ok = True
    else:
        iso_ok = study.isometry_slope is None or ISO_WINDOW[0] <= study.isometry_slope <= ISO_WINDOW[1]
        weak_ok = study.weak_slope is None or WEAK_WINDOW[0] <= study.weak_slope <= WEAK_WINDOW[1]
        ok = iso_ok and weak_ok
    rows = [{"dt": d, "isometry": i, "weak_increment": w, "weak_increment_se": s}
            for d, i, w, s in zip(study.dts, study.isometry, study.weak_increments, study.weak_increment_se)]
    summary = {"command": "converge", "config": cfg.to_dict(), "study": study.to_dict(),
               "isometry_window": ISO_WINDOW, "weak_window": WEAK_WINDOW, "pass": ok,
               "slopes": "exact (residuals vanish)" if study.exact else None,
               "wall_time": time.perf_counter() - t0}
    _write(cfg, summary, rows)
    return EXIT_OK if ok else EXIT_FAIL


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command == "list-checks":
            for name in CHECKS:
                print(f"{name:22s} {DESCRIPTIONS.get(name, '')}")
            return EXIT_OK
        if args.command == "list-models":
            for name in geo.list_models():
                print(name)
            return EXIT_OK
        cfg = _config(args)
        return {"run": cmd_run, "sweep": cmd_sweep, "converge": cmd_converge}[args.command](cfg)
    except ConfigError as exc:
        print(f"pathspace: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
