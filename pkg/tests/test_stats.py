import math

import numpy as np
import pytest

from pathspace import stats
from pathspace.parallel import map_blocks, path_blocks


def test_estimate_interval():
    x = np.random.default_rng(0).normal(2.0, 1.0, 4000)
    r = stats.estimate(x, seed=3)
    assert r.ci_lo <= r.mean <= r.ci_hi and r.n == 4000 and r.seed == 3
    assert r.stderr == pytest.approx(x.std(ddof=1) / math.sqrt(4000), rel=1e-9)


def test_stderr_scaling():
    rng = np.random.default_rng(1)
    a = stats.estimate(rng.normal(size=20_000)).stderr
    b = stats.estimate(rng.normal(size=80_000)).stderr
    assert a / b == pytest.approx(2.0, rel=0.05)


def test_fsum_order_independent():
    x = np.random.default_rng(2).normal(size=10_001) * 1e8
    assert stats.fsum_mean(x) == stats.fsum_mean(x[::-1]) == stats.fsum_mean(np.sort(x))


def test_wilson():
    lo, hi = stats.wilson(0, 1000, 0.05, one_sided=True)
    assert lo == 0.0 and 0 < hi < 0.005
    lo2, hi2 = stats.wilson(500, 1000)
    assert lo2 < 0.5 < hi2
    lo3, hi3 = stats.wilson(500, 1000, one_sided=True)
    assert lo2 < lo3 and hi3 < hi2
    with pytest.raises(ValueError):
        stats.wilson(0, 0)


def test_z_scores():
    assert stats.z_score(0.0, 0.0) == 0.0 and stats.z_score(1.0, 0.0) == math.inf
    m, se, z = stats.paired_z([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert (m, se, z) == (0.0, 0.0, 0.0)


def test_variance_flag():
    rng = np.random.default_rng(0)
    assert not stats.variance_diverging(rng.normal(size=40_000))
    assert stats.variance_diverging(rng.standard_cauchy(size=40_000) ** 3)


def _square(job, s, e):
    return [job * i * i for i in range(s, e)]


def test_blocks_and_workers():
    assert path_blocks(5, 2) == [(0, 2), (2, 4), (4, 5)]
    one = map_blocks(_square, 2, 11, 3, workers=1)
    two = map_blocks(_square, 2, 11, 3, workers=2)
    assert one == two
