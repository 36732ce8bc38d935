import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from wlcasimir import loopgen
from wlcasimir.loopgen import (ChecksumError, Ensemble, EnsembleFormatError, EnsembleMeta,
                               EnsembleTruncatedError, InvalidMetaError, UnitLoop,
                               bridge_diagnostics, generate_ensemble, generate_unit_loop,
                               load_ensemble, loop_from_increments, save_ensemble)

from conftest import naive_bridge


def test_two_point_loop(two_point_loop):
    assert np.array_equal(two_point_loop.points, [[0, 0, 0.25], [0, 0, -0.25]])
    assert two_point_loop.n_points == 2


def test_points_are_read_only(two_point_loop):
    with pytest.raises(ValueError):
        two_point_loop.points[0, 0] = 1.0


@pytest.mark.parametrize("pts, msg", [
    (np.zeros((1, 3)), "at least 2"),
    (np.zeros((4, 2)), "shape"),
    ([[0, 0, 1.0], [0, 0, 0.0]], "center of mass"),
    ([[0, 0, np.nan], [0, 0, 0.0]], "finite"),
])
def test_unit_loop_rejects(pts, msg):
    with pytest.raises(ValueError, match=msg):
        UnitLoop(np.asarray(pts, dtype=float))


@given(st.integers(2, 300), st.integers(0, 2**64 - 1))
def test_closure_and_com(n, seed):
    loop = generate_unit_loop(n, np.random.default_rng(seed % 2**32))
    assert np.all(np.abs(loop.points.sum(axis=0)) < 1e-12 * max(1, n))
    assert np.all(np.abs(np.sum(np.diff(loop.points, axis=0, append=loop.points[:1]), axis=0)) < 1e-12)


def test_generator_draws_from_stream():
    a = generate_unit_loop(16, np.random.default_rng(3))
    b = generate_unit_loop(16, np.random.default_rng(3))
    c = generate_unit_loop(16, np.random.default_rng(4))
    assert np.array_equal(a.points, b.points)
    assert not np.array_equal(a.points, c.points)


def test_bridge_covariance_half_lag():
    n, n_l = 64, 10_000
    ens = generate_ensemble(EnsembleMeta(n_l, n, 2024))
    i, j = 5, 5 + n // 2
    q = np.array([np.sum((y[i] - y[j]) ** 2) for y in (ens.loop(k) for k in range(n_l))])
    se = q.std(ddof=1) / np.sqrt(n_l)
    assert abs(q.mean() - 1.5) < 5 * se

    # the naive sampler obeys the same law and agrees with the library
    rng = np.random.default_rng(99)
    q2 = np.array([np.sum((b[i] - b[j]) ** 2) for b in (naive_bridge(rng, n) for _ in range(n_l))])
    se2 = q2.std(ddof=1) / np.sqrt(n_l)
    assert abs(q2.mean() - 1.5) < 5 * se2
    assert abs(q.mean() - q2.mean()) < 5 * np.hypot(se, se2)


def test_naive_and_library_full_covariance():
    # every pair, averaged over loops: both samplers against 6 t (1 - t)
    n, n_l = 16, 4000
    ens = generate_ensemble(EnsembleMeta(n_l, n, 5))
    rng = np.random.default_rng(6)
    lib = np.stack([ens.loop(k) for k in range(n_l)])
    nai = np.stack([naive_bridge(rng, n) for _ in range(n_l)])
    lag = (np.arange(n)[None, :] - np.arange(n)[:, None]) % n
    target = 6 * (lag / n) * (1 - lag / n)
    for pts in (lib, nai):
        d2 = np.sum((pts[:, :, None, :] - pts[:, None, :, :]) ** 2, axis=-1)
        se = d2.std(axis=0, ddof=1) / np.sqrt(n_l)
        z = np.where(se > 0, (d2.mean(axis=0) - target) / np.where(se > 0, se, 1), 0)
        assert np.abs(z).max() < 5.5


def test_meta_validation():
    with pytest.raises(InvalidMetaError):
        EnsembleMeta(0, 8, 1)
    with pytest.raises(InvalidMetaError):
        EnsembleMeta(3, 1, 1)
    with pytest.raises(InvalidMetaError):
        EnsembleMeta(3, 8, -1)
    with pytest.raises(InvalidMetaError):
        EnsembleMeta(3, 8, 1.5)
    with pytest.raises(InvalidMetaError):
        generate_ensemble(EnsembleMeta(3, 8, 1, "other-sampler"))


def test_determinism_and_seed_dependence():
    a = generate_ensemble(EnsembleMeta(3, 8, 1)).materialize()
    b = generate_ensemble(EnsembleMeta(3, 8, 1)).materialize()
    c = generate_ensemble(EnsembleMeta(3, 8, 2)).materialize()
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_loops_do_not_depend_on_ensemble_size_or_batching():
    small = generate_ensemble(EnsembleMeta(3, 32, 9))
    big = generate_ensemble(EnsembleMeta(50, 32, 9))
    assert np.array_equal(small.materialize(), big.materialize()[:3])
    got = np.concatenate([np.stack(b) for _, b in big.batches(7)])
    assert np.array_equal(got, big.materialize())
    assert np.array_equal(big.head(3).materialize(), small.materialize())


def test_subsample_is_a_valid_nested_ensemble():
    ens = generate_ensemble(EnsembleMeta(5, 64, 4))
    sub = ens.subsample(8)
    assert sub.n_points == 8 and sub.meta.algorithm_tag.endswith("/sub8")
    for k in range(5):
        p = ens.loop(k)[::8]
        assert np.allclose(sub.loop(k), p - p.mean(axis=0), atol=0)
        UnitLoop(sub.loop(k))
    with pytest.raises(ValueError):
        ens.subsample(3)


def test_subsample_covariance():
    # the coarse loops obey the bridge law of their own N
    sub = generate_ensemble(EnsembleMeta(2000, 256, 8)).subsample(32)
    rep = bridge_diagnostics(sub, n_pairs=5)
    assert rep.passed(5.0)


def test_materialize_limit():
    ens = generate_ensemble(EnsembleMeta(10, 100, 1))
    with pytest.raises(loopgen.EnsembleTooLargeError):
        ens.materialize(max_bytes=1000)


def _blob(ens):
    buf = io.BytesIO()
    save_ensemble(ens, buf)
    return buf.getvalue()


def test_round_trip(tmp_path):
    ens = generate_ensemble(EnsembleMeta(3, 17, 12345678901234567890))
    path = tmp_path / "e.wlc"
    save_ensemble(ens, path)
    back = load_ensemble(path)
    assert back.meta == ens.meta
    assert np.array_equal(back.materialize(), ens.materialize())
    assert _blob(back) == path.read_bytes()
    assert load_ensemble(path.read_bytes()).meta == ens.meta


def test_file_layout():
    ens = generate_ensemble(EnsembleMeta(2, 4, 7))
    b = _blob(ens)
    tag = loopgen.ALGORITHM_TAG.encode()
    assert b[:4] == b"WLC1"
    version, n, n_l, seed, tl = loopgen._HEAD.unpack(b[4:4 + loopgen._HEAD.size])
    assert (version, n, n_l, seed, tl) == (1, 4, 2, 7, len(tag))
    assert len(b) == 4 + loopgen._HEAD.size + len(tag) + 2 * 4 * 3 * 8 + 8


def test_bad_magic():
    b = bytearray(_blob(generate_ensemble(EnsembleMeta(3, 8, 1))))
    b[0:4] = b"XXXX"
    with pytest.raises(EnsembleFormatError, match="magic"):
        load_ensemble(bytes(b))


@pytest.mark.parametrize("cut", [3, 10, 30, 100, -1])
def test_truncated(cut):
    b = _blob(generate_ensemble(EnsembleMeta(3, 8, 1)))
    with pytest.raises(EnsembleTruncatedError):
        load_ensemble(b[:cut])


def test_corrupted_and_trailing():
    b = bytearray(_blob(generate_ensemble(EnsembleMeta(3, 8, 1))))
    b[60] ^= 1
    with pytest.raises(ChecksumError):
        load_ensemble(bytes(b))
    with pytest.raises(EnsembleFormatError, match="trailing"):
        load_ensemble(_blob(generate_ensemble(EnsembleMeta(3, 8, 1))) + b"\0")


def test_bad_version():
    b = bytearray(_blob(generate_ensemble(EnsembleMeta(3, 8, 1))))
    b[4] = 9
    with pytest.raises(EnsembleFormatError, match="version"):
        load_ensemble(bytes(b))


def test_bridge_diagnostics_pass():
    rep = bridge_diagnostics(generate_ensemble(EnsembleMeta(10_000, 128, 77)))
    assert rep.t.size <= 20
    assert rep.max_abs_z < 5
    assert np.all(rep.target == 6 * rep.t * (1 - rep.t))


def test_bridge_diagnostics_detects_doubled_variance():
    good = generate_ensemble(EnsembleMeta(2000, 128, 77))
    bad = Ensemble(good.meta, source=lambda k: np.sqrt(2.0) * good.loop(k))
    rep = bridge_diagnostics(bad)
    inner = rep.t > 0
    assert not rep.passed()
    assert np.all(rep.z[inner] > 5)


def test_bridge_diagnostics_two_points():
    rep = bridge_diagnostics(generate_ensemble(EnsembleMeta(200, 2, 1)))
    assert set(rep.t) == {0.0, 0.5}
    assert rep.target[rep.t == 0][0] == 0.0
    assert rep.z[rep.t == 0][0] == 0.0
    assert rep.passed()


def test_bridge_diagnostics_needs_loops():
    with pytest.raises(ValueError):
        bridge_diagnostics(generate_ensemble(EnsembleMeta(10, 8, 1)))
