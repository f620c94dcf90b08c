"""Monte Carlo summaries with order-independent reductions."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy import stats as sps
from statsmodels.stats.proportion import proportion_confint

Z95 = float(sps.norm.ppf(0.975))
SIGMA = 4.0  # significance convention for every statistical PASS


@dataclass(frozen=True)
class EstimatorResult:
    mean: float
    stderr: float
    ci_lo: float
    ci_hi: float
    n: int
    seed: Optional[int] = None
    wall_time: float = 0.0

    def to_dict(self):
        return asdict(self)


def fsum_mean(x) -> float:
    """Mean via ``math.fsum``: exact-rounded, hence independent of path blocking."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("empty sample")
    return math.fsum(x.tolist()) / x.size


def fsum_var(x, mean: Optional[float] = None) -> float:
    x = np.asarray(x, dtype=float).ravel()
    if x.size < 2:
        return 0.0
    m = fsum_mean(x) if mean is None else mean
    return math.fsum(((x - m) ** 2).tolist()) / (x.size - 1)


def estimate(samples, seed=None, wall_time=0.0) -> EstimatorResult:
    """Sample mean with standard error and a normal 95% interval."""
    x = np.asarray(samples, dtype=float).ravel()
    m = fsum_mean(x)
    se = math.sqrt(fsum_var(x, m) / x.size)
    return EstimatorResult(m, se, m - Z95 * se, m + Z95 * se, int(x.size), seed, wall_time)


def z_score(diff: float, se: float) -> float:
    if se == 0.0:
        return 0.0 if diff == 0.0 else math.copysign(math.inf, diff)
    return diff / se


def paired_z(a, b) -> tuple[float, float, float]:
    """Mean of ``a - b``, its standard error and the z-score (same paths)."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    r = estimate(d)
    return r.mean, r.stderr, z_score(r.mean, r.stderr)


def wilson(k: int, n: int, alpha: float = 0.05, one_sided: bool = False):
    """Wilson score interval; ``one_sided`` puts all of ``alpha`` in each tail."""
    if n <= 0:
        raise ValueError("n must be positive")
    a = 2 * alpha if one_sided else alpha
    lo, hi = proportion_confint(int(k), int(n), alpha=a, method="wilson")
    return float(lo), float(hi)


def variance_diverging(samples, n_splits: int = 4, factor: float = 3.0) -> bool:
    """Heuristic heavy-tail flag.

    Compares the stderr of the full sample with the stderr predicted from its
    first quarter.  For finite variance the ratio is about ``1/sqrt(4)``; if
    the full-sample stderr is ``factor`` times larger than predicted the 1/sqrt(N)
    law is not in force.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 8 * n_splits:
        return False
    head = x[: x.size // n_splits]
    se_head = math.sqrt(fsum_var(head) / x.size)
    se_full = math.sqrt(fsum_var(x) / x.size)
    if se_head == 0.0:
        return se_full > 0.0
    return se_full > factor * se_head
