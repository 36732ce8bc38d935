"""Unit-propertime closed worldlines: sampling, ensembles and persistence.

A unit loop is an ordered set of ``N`` points ``y_i`` in three dimensions
with zero center of mass.  Its law is the discretized Brownian bridge
induced by the weight ``exp(-1/4 int_0^1 ydot^2 dtau)``: consecutive
increments are Gaussian with per-coordinate variance ``2/N`` and sum to
zero.  For any index pair the ensemble mean of ``|y_i - y_j|^2`` is
``6 t (1 - t)`` with ``t = |i - j| / N``.

Ensembles are lazy.  Loop ``k`` is regenerated on demand from its own
random substream, so a run never needs to hold ``n_L * N`` points at once
and batch boundaries cannot change any result.

Substream derivation
--------------------
Loop ``k`` of an ensemble with seed ``s`` is drawn from::

    numpy.random.Generator(PCG64(SeedSequence(s, spawn_key=(k,))))

which is the same stream ``SeedSequence(s).spawn(...)`` hands to child
``k``.

File format
-----------
``b"WLC1"`` followed by little-endian ``u32 version (=1)``, ``u32 N``,
``u32 n_L``, ``u64 seed``, ``u32 tag length`` and the UTF-8 tag, then
``n_L * N * 3`` float64 coordinates (loop-major, point-major, xyz), then a
``u64`` checksum.  The checksum is the 8-byte BLAKE2b digest
(``hashlib.blake2b(digest_size=8)``) of every byte between the magic and
the checksum, read as a little-endian integer.
"""
from __future__ import annotations

import hashlib
import io
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator, Optional, Union

import numpy as np

__all__ = [
    "ALGORITHM_TAG",
    "UnitLoop",
    "EnsembleMeta",
    "Ensemble",
    "BridgeReport",
    "InvalidMetaError",
    "EnsembleTooLargeError",
    "EnsembleFormatError",
    "EnsembleTruncatedError",
    "ChecksumError",
    "loop_rng",
    "loop_from_increments",
    "generate_unit_loop",
    "generate_ensemble",
    "save_ensemble",
    "load_ensemble",
    "bridge_diagnostics",
]

ALGORITHM_TAG = "vloop-bridge-1"
MAGIC = b"WLC1"
FORMAT_VERSION = 1
COM_TOL = 1e-12

_HEAD = struct.Struct("<IIIQI")
_SUM = struct.Struct("<Q")

# soft cap for materializing an ensemble in memory
_MAX_MATERIALIZE = 2 * 1024**3


class InvalidMetaError(ValueError):
    """Ensemble metadata violates its invariants."""


class EnsembleTooLargeError(MemoryError):
    """The requested ensemble does not fit in the allowed memory."""


class EnsembleFormatError(ValueError):
    """A persisted ensemble blob is malformed."""


class EnsembleTruncatedError(EnsembleFormatError):
    """A persisted ensemble blob ends before its declared payload."""


class ChecksumError(EnsembleFormatError):
    """Stored and recomputed checksums differ."""


@dataclass(frozen=True)
class UnitLoop:
    """A discretized closed worldline at unit propertime.

    Parameters
    ----------
    points : ndarray, shape (N, 3)
        Offsets from the center of mass.  Stored as C-contiguous float64.
    """

    points: np.ndarray

    def __post_init__(self):
        p = np.ascontiguousarray(self.points, dtype=np.float64)
        if p.ndim != 2 or p.shape[1] != 3:
            raise ValueError(f"loop points must have shape (N, 3), got {p.shape}")
        if p.shape[0] < 2:
            raise ValueError("a loop needs at least 2 points")
        if not np.all(np.isfinite(p)):
            raise ValueError("loop points must be finite")
        com = p.mean(axis=0)
        if np.any(np.abs(com) > COM_TOL):
            raise ValueError(f"loop center of mass {com} is not at the origin")
        # closing increment included, so this is the closure residual
        closure = np.sum(np.diff(p, axis=0, append=p[:1]), axis=0)
        if np.any(np.abs(closure) > COM_TOL):
            raise ValueError("loop increments do not close")
        p.setflags(write=False)
        object.__setattr__(self, "points", p)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    def __len__(self):
        return self.points.shape[0]


@dataclass(frozen=True)
class EnsembleMeta:
    """Everything needed to regenerate an ensemble bit for bit."""

    n_loops: int
    n_points: int
    seed: int
    algorithm_tag: str = ALGORITHM_TAG

    def __post_init__(self):
        for name in ("n_loops", "n_points", "seed"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                raise InvalidMetaError(f"{name} must be an integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if self.n_loops < 1:
            raise InvalidMetaError(f"n_loops must be >= 1, got {self.n_loops}")
        if self.n_points < 2:
            raise InvalidMetaError(f"n_points must be >= 2, got {self.n_points}")
        if self.n_loops >= 2**32 or self.n_points >= 2**32:
            raise InvalidMetaError("n_loops and n_points must fit in 32 bits")
        if not 0 <= self.seed < 2**64:
            raise InvalidMetaError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if not isinstance(self.algorithm_tag, str) or not self.algorithm_tag:
            raise InvalidMetaError("algorithm_tag must be a non-empty string")

    @property
    def nbytes(self) -> int:
        return self.n_loops * self.n_points * 3 * 8


def loop_rng(seed: int, index: int) -> np.random.Generator:
    """Random stream of loop ``index`` in an ensemble seeded with ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.PCG64(ss))


def loop_from_increments(increments) -> UnitLoop:
    """Build a loop from raw increments.

    The increments are projected onto the closed subspace (their mean is
    removed), summed to points and shifted to zero center of mass.

    Parameters
    ----------
    increments : array_like, shape (N, 3)

    Returns
    -------
    UnitLoop
    """
    v = np.array(increments, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] != 3:
        raise ValueError("increments must have shape (N, 3)")
    if v.shape[0] < 2:
        raise ValueError("a loop needs at least 2 points")
    return UnitLoop(_bridge(np.ascontiguousarray(v.T)))


def _bridge(v: np.ndarray) -> np.ndarray:
    # v has shape (3, N) and is overwritten; returns (N, 3) points
    v -= v.mean(axis=1, keepdims=True)
    np.cumsum(v, axis=1, out=v)
    v -= v.mean(axis=1, keepdims=True)
    return np.ascontiguousarray(v.T)


def _draw_points(n: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal((3, n))
    v *= np.sqrt(2.0 / n)
    return _bridge(v)


def generate_unit_loop(n_points: int, rng: np.random.Generator) -> UnitLoop:
    """Sample one unit loop of ``n_points`` points.

    Parameters
    ----------
    n_points : int
        Number of points, at least 2.
    rng : numpy.random.Generator
        Source of the Gaussian increments.

    Returns
    -------
    UnitLoop

    Examples
    --------
    >>> loop = generate_unit_loop(64, loop_rng(7, 0))
    >>> loop.points.shape
    (64, 3)
    """
    n = int(n_points)
    if n < 2:
        raise ValueError(f"n_points must be >= 2, got {n_points}")
    return UnitLoop(_draw_points(n, rng))


class Ensemble:
    """An indexable, lazily realized ensemble of unit loops.

    Parameters
    ----------
    meta : EnsembleMeta
    points : ndarray, shape (n_L, N, 3), optional
        Stored coordinates.  When omitted the loops are regenerated on
        demand from ``meta``.
    source : callable, optional
        ``source(k) -> ndarray (N, 3)``, overrides both of the above.
    """

    def __init__(self, meta: EnsembleMeta, points: Optional[np.ndarray] = None,
                 source: Optional[Callable[[int], np.ndarray]] = None):
        self.meta = meta
        if points is not None:
            points = np.asarray(points, dtype=np.float64)
            want = (meta.n_loops, meta.n_points, 3)
            if points.shape != want:
                raise ValueError(f"points shape {points.shape} does not match meta {want}")
        self._points = points
        self._source = source

    @property
    def n_loops(self) -> int:
        return self.meta.n_loops

    @property
    def n_points(self) -> int:
        return self.meta.n_points

    def __len__(self):
        return self.meta.n_loops

    def loop(self, k: int) -> np.ndarray:
        """Points of loop ``k`` as a C-contiguous (N, 3) array."""
        k = int(k)
        if not 0 <= k < self.meta.n_loops:
            raise IndexError(f"loop index {k} out of range")
        if self._source is not None:
            return self._source(k)
        if self._points is not None:
            return np.ascontiguousarray(self._points[k])
        return _draw_points(self.meta.n_points, loop_rng(self.meta.seed, k))

    def __getitem__(self, k: int) -> UnitLoop:
        return UnitLoop(self.loop(k))

    def __iter__(self) -> Iterator[UnitLoop]:
        for k in range(self.meta.n_loops):
            yield UnitLoop(self.loop(k))

    def batches(self, batch_size: int, start: int = 0, stop: Optional[int] = None):
        """Yield ``(first_index, [loops])`` in loop-index order."""
        stop = self.meta.n_loops if stop is None else min(stop, self.meta.n_loops)
        batch_size = max(1, int(batch_size))
        for s in range(start, stop, batch_size):
            yield s, [self.loop(k) for k in range(s, min(stop, s + batch_size))]

    def materialize(self, max_bytes: int = _MAX_MATERIALIZE) -> np.ndarray:
        """All points as one (n_L, N, 3) array.

        Raises
        ------
        EnsembleTooLargeError
            If the array would exceed ``max_bytes``.
        """
        if self._points is not None and self._source is None:
            return self._points
        if self.meta.nbytes > max_bytes:
            raise EnsembleTooLargeError(
                f"ensemble needs {self.meta.nbytes} bytes, limit is {max_bytes}")
        try:
            out = np.empty((self.meta.n_loops, self.meta.n_points, 3))
        except MemoryError as exc:
            raise EnsembleTooLargeError(str(exc)) from exc
        for k in range(self.meta.n_loops):
            out[k] = self.loop(k)
        return out

    def subsample(self, step: int) -> "Ensemble":
        """Nested coarse ensemble keeping every ``step``-th point.

        A bridge observed at every ``step``-th point, shifted back to zero
        center of mass, is an exact sample of the ``N/step``-point law, so
        the coarse ensemble is a valid ensemble in its own right that
        shares its randomness with the parent.
        """
        step = int(step)
        if step < 1 or self.meta.n_points % step:
            raise ValueError(f"step {step} must divide N={self.meta.n_points}")
        if step == 1:
            return self
        meta = EnsembleMeta(self.meta.n_loops, self.meta.n_points // step,
                            self.meta.seed, f"{self.meta.algorithm_tag}/sub{step}")
        parent = self.loop

        def source(k):
            p = parent(k)[::step]
            return np.ascontiguousarray(p - p.mean(axis=0))

        return Ensemble(meta, source=source)

    def head(self, n_loops: int) -> "Ensemble":
        """The first ``n_loops`` loops as an ensemble of their own."""
        n = int(n_loops)
        if not 1 <= n <= self.meta.n_loops:
            raise ValueError(f"head size {n} out of range")
        meta = EnsembleMeta(n, self.meta.n_points, self.meta.seed, self.meta.algorithm_tag)
        pts = None if self._points is None else self._points[:n]
        return Ensemble(meta, points=pts, source=self._source)


def generate_ensemble(meta: EnsembleMeta) -> Ensemble:
    """Ensemble described by ``meta``, realized lazily.

    Raises
    ------
    InvalidMetaError
        For metadata that cannot be regenerated by this module.
    """
    if not isinstance(meta, EnsembleMeta):
        raise InvalidMetaError("meta must be an EnsembleMeta")
    if meta.algorithm_tag != ALGORITHM_TAG:
        raise InvalidMetaError(
            f"unknown algorithm tag {meta.algorithm_tag!r}, this module generates {ALGORITHM_TAG!r}")
    return Ensemble(meta)


def _header(meta: EnsembleMeta) -> bytes:
    tag = meta.algorithm_tag.encode("utf-8")
    return _HEAD.pack(FORMAT_VERSION, meta.n_points, meta.n_loops, meta.seed, len(tag)) + tag


PathLike = Union[str, os.PathLike]


def save_ensemble(ensemble: Ensemble, destination: Union[PathLike, io.BufferedIOBase]) -> None:
    """Write an ensemble in the WLC1 format, one loop at a time."""
    h = hashlib.blake2b(digest_size=8)

    def emit(f):
        f.write(MAGIC)
        head = _header(ensemble.meta)
        h.update(head)
        f.write(head)
        for k in range(ensemble.n_loops):
            b = np.ascontiguousarray(ensemble.loop(k), dtype="<f8").tobytes()
            h.update(b)
            f.write(b)
        f.write(_SUM.pack(int.from_bytes(h.digest(), "little")))

    if hasattr(destination, "write"):
        emit(destination)
    else:
        with open(destination, "wb") as f:
            emit(f)


def _read_exact(f, n: int, what: str) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise EnsembleTruncatedError(f"blob ends inside the {what}")
    return b


def load_ensemble(source: Union[PathLike, bytes, io.BufferedIOBase]) -> Ensemble:
    """Read a WLC1 blob, verifying version, length and checksum.

    Raises
    ------
    EnsembleFormatError
        Wrong magic, unsupported version, bad tag or trailing bytes.
    EnsembleTruncatedError
        The blob is shorter than its header declares.
    ChecksumError
        The payload does not match the stored checksum.
    """
    if isinstance(source, (bytes, bytearray)):
        f = io.BytesIO(source)
    elif hasattr(source, "read"):
        f = source
    else:
        with open(Path(source), "rb") as fh:
            return load_ensemble(fh)

    magic = f.read(4)
    if len(magic) < 4 and MAGIC.startswith(magic):
        raise EnsembleTruncatedError("blob ends inside the magic bytes")
    if magic != MAGIC:
        raise EnsembleFormatError("not a WLC1 ensemble (bad magic bytes)")
    head = _read_exact(f, _HEAD.size, "header")
    version, n_points, n_loops, seed, tag_len = _HEAD.unpack(head)
    if version != FORMAT_VERSION:
        raise EnsembleFormatError(f"unsupported format version {version}")
    tag_b = _read_exact(f, tag_len, "algorithm tag")
    try:
        tag = tag_b.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise EnsembleFormatError("algorithm tag is not UTF-8") from exc
    try:
        meta = EnsembleMeta(n_loops, n_points, seed, tag)
    except InvalidMetaError as exc:
        raise EnsembleFormatError(f"invalid header: {exc}") from exc

    h = hashlib.blake2b(head, digest_size=8)
    h.update(tag_b)
    body = _read_exact(f, meta.nbytes, "coordinates")
    h.update(body)
    stored = _read_exact(f, _SUM.size, "checksum")
    if f.read(1):
        raise EnsembleFormatError("trailing bytes after checksum")
    if _SUM.unpack(stored)[0] != int.from_bytes(h.digest(), "little"):
        raise ChecksumError("checksum mismatch")
    pts = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return Ensemble(meta, points=pts.reshape(n_loops, n_points, 3))


@dataclass(frozen=True)
class BridgeReport:
    """Measured against target bridge covariance for sampled index pairs.

    Attributes
    ----------
    pairs : ndarray, shape (P, 2)
    t : ndarray
        ``|i - j| / N`` per pair.
    measured, target, stderr, z : ndarray
        Ensemble mean of ``|y_i - y_j|^2``, ``6 t (1 - t)``, its standard
        error and ``(measured - target) / stderr``.
    """

    pairs: np.ndarray
    t: np.ndarray
    measured: np.ndarray
    target: np.ndarray
    stderr: np.ndarray
    z: np.ndarray
    n_loops: int

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z)))

    def passed(self, z_max: float = 5.0) -> bool:
        return self.max_abs_z < z_max


def bridge_diagnostics(ensemble: Ensemble, n_pairs: int = 20, seed: int = 0,
                       min_loops: int = 100) -> BridgeReport:
    """Compare the ensemble's bridge covariance with ``6 t (1 - t)``.

    Pairs have lags spread evenly over ``0..N/2`` and random first
    indices.  For the discrete bridge the target holds exactly at every
    ``N``, so any significant deviation is a sampler defect.

    Raises
    ------
    ValueError
        If the ensemble has fewer than ``min_loops`` loops.
    """
    n_l, n = ensemble.n_loops, ensemble.n_points
    if n_l < min_loops:
        raise ValueError(f"ensemble too small for diagnostics: {n_l} < {min_loops} loops")
    rng = np.random.default_rng(seed)
    lags = np.unique(np.round(np.linspace(0, n // 2, n_pairs)).astype(np.int64))
    first = rng.integers(0, n, size=lags.size)
    pairs = np.stack([first, (first + lags) % n], axis=1)

    acc = np.zeros(lags.size)
    acc2 = np.zeros(lags.size)
    for k in range(n_l):
        y = ensemble.loop(k)
        d = y[pairs[:, 0]] - y[pairs[:, 1]]
        q = np.einsum("ij,ij->i", d, d)
        acc += q
        acc2 += q * q
    mean = acc / n_l
    var = np.maximum(acc2 / n_l - mean**2, 0.0) * n_l / max(n_l - 1, 1)
    se = np.sqrt(var / n_l)
    t = lags / n
    target = 6.0 * t * (1.0 - t)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, (mean - target) / np.where(se > 0, se, 1.0), 0.0)
    return BridgeReport(pairs, t, mean, target, se, z, n_l)
