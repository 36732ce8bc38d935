import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from wlcasimir.engine import EngineConfig
from wlcasimir.geometry import Plate, SlabPair, Sphere
from wlcasimir.stats import BlockedSamples, SweepTable, discretization_sweep, fsum, jackknife


def test_constant_samples():
    m, e = jackknife(BlockedSamples(np.full(1000, 3.25), 100))
    assert m == 3.25 and e == 0.0


def test_iid_normals():
    rng = np.random.default_rng(17)
    sigma, n = 2.5, 10_000
    x = rng.normal(1.0, sigma, n)
    m, e = jackknife(BlockedSamples(x, 100))
    assert m == pytest.approx(x.mean(), rel=1e-14)
    assert e == pytest.approx(sigma / math.sqrt(n), rel=0.2)


def test_linear_statistic_is_classical_error():
    # one sample per block: delete-one jackknife of the mean is s / sqrt(n)
    rng = np.random.default_rng(3)
    x = rng.exponential(size=257)
    m, e = jackknife(BlockedSamples(x, x.size))
    assert e == pytest.approx(x.std(ddof=1) / math.sqrt(x.size), rel=1e-12)


def test_equal_blocks_match_block_mean_error():
    # equal blocks: error is the standard error of the block means
    rng = np.random.default_rng(4)
    x = rng.normal(size=1000)
    bm = x.reshape(50, 20).mean(axis=1)
    _, e = jackknife(BlockedSamples(x, 50))
    assert e == pytest.approx(bm.std(ddof=1) / math.sqrt(50), rel=1e-12)


@given(hnp.arrays(np.float64, st.integers(2, 40), elements=st.floats(-1e3, 1e3)),
       st.randoms(use_true_random=False))
def test_permutation_invariance(means, rnd):
    perm = list(range(means.size))
    rnd.shuffle(perm)
    a = jackknife(BlockedSamples.from_block_means(means))
    b = jackknife(BlockedSamples.from_block_means(means[perm]))
    assert a[0] == b[0]
    assert a[1] == pytest.approx(b[1], rel=1e-12, abs=1e-300)


@given(st.integers(2, 500), st.integers(2, 60))
def test_block_sizes(n, nb):
    if nb > n:
        with pytest.raises(ValueError):
            BlockedSamples(np.zeros(n), nb)
        return
    b = BlockedSamples(np.arange(n, dtype=float), nb)
    assert b.counts.sum() == n
    assert b.counts.max() - b.counts.min() <= 1
    assert np.all(b.counts >= 1)
    assert np.array_equal(b.edges, np.concatenate([[0], np.cumsum(b.counts)]))


@given(hnp.arrays(np.float64, st.integers(4, 200), elements=st.floats(-1e6, 1e6)),
       st.randoms(use_true_random=False))
def test_order_within_blocks_is_irrelevant(x, rnd):
    # block sums are exactly rounded, so loop scheduling cannot matter
    b = BlockedSamples(x, 2)
    y = x.copy()
    for s, e in zip(b.edges[:-1], b.edges[1:]):
        idx = list(range(s, e))
        rnd.shuffle(idx)
        y[s:e] = x[idx]
    c = BlockedSamples(y, 2)
    assert np.array_equal(b.sums, c.sums)
    assert jackknife(b) == jackknife(c)
    # each block sum is rounded once, so under cancellation the total can
    # differ from the exactly rounded one by ~ulp(sum |x|)
    bound = 4 * np.finfo(float).eps * fsum(np.abs(x)) / x.size
    assert abs(b.mean()[0] - fsum(x) / x.size) <= bound


def test_ratio_statistic():
    rng = np.random.default_rng(8)
    u = rng.normal(5, 1, 4000)
    v = rng.normal(2, 0.5, 4000)
    m, e = jackknife(BlockedSamples(np.stack([u, v], 1), 100), lambda mv: mv[0] / mv[1])
    assert m == pytest.approx(u.mean() / v.mean(), rel=1e-14)
    # delta method
    r = u.mean() / v.mean()
    d = (u - r * v) / v.mean()
    assert e == pytest.approx(d.std(ddof=1) / math.sqrt(u.size), rel=0.2)


def test_errors():
    with pytest.raises(ValueError):
        BlockedSamples(np.zeros(10), 1)
    with pytest.raises(ValueError):
        jackknife(BlockedSamples(np.zeros((10, 2)), 5))
    with pytest.raises(ValueError):
        BlockedSamples.from_block_means([1.0])


FAST = EngineConfig(qtol=1e-2, trunc_tol=1e-3, n_blocks=20)


def test_sweep_single_n_is_degenerate():
    t = discretization_sweep(SlabPair(1.0), 3, [64], 20, FAST)
    assert not t.comparable
    assert t.max_deviation is None and t.max_deviation_sigma is None
    assert t.rows[0].diff == 0.0


def test_sweep_deterministic_and_nested():
    g = (Plate(), Sphere(2.0, 1.0))
    a = discretization_sweep(g, 5, [16, 64, 256], 30, FAST)
    b = discretization_sweep(g, 5, [16, 64, 256], 30, FAST)
    assert a.rows == b.rows
    assert a.meta["nested"]
    assert a.rows[-1].diff == 0.0 and a.rows[-1].diff_error == 0.0
    assert a.max_deviation == max(abs(r.diff) for r in a.rows[:-1])
    c = discretization_sweep(g, 5, [16, 40], 30, FAST)
    assert not c.meta["nested"]


def test_sweep_validation():
    with pytest.raises(ValueError):
        discretization_sweep(SlabPair(1.0), 1, [64, 32], 10)
    with pytest.raises(ValueError):
        discretization_sweep(SlabPair(1.0), 1, [], 10)


def test_slab_sweep_direction():
    # coarse loops under-count intersections, so |E| grows with N
    t = discretization_sweep(SlabPair(1.0), 11, [1000, 10_000, 100_000], 400,
                             EngineConfig(n_blocks=50))
    e = [abs(r.energy) for r in t.rows]
    assert e[0] < e[1] < e[2]
    # paired differences are resolved far better than the energies themselves
    assert t.rows[0].diff_error < t.rows[0].error
    assert t.rows[0].diff > 3 * t.rows[0].diff_error > 0
