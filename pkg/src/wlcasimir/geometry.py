"""Dirichlet bodies and the scale supports of a loop against them.

A loop ``y`` placed at ``x_cm`` and scaled by ``lam = sqrt(T)`` occupies the
points ``x_cm + lam * y_i``.  For each body the set of ``lam`` at which at
least one point lies in the closed body is a finite union of intervals,
represented by :class:`LambdaSupport`.  Everything here is exact up to
floating point: intervals come from per-point quadratics and are merged by
sorting.  The integration engine uses a faster culled version of the same
computation (see ``_kernels``), tested against these functions.

Coordinates: the plate is the plane ``z = 0``.  A sphere of radius ``R``
sits at ``(0, 0, a + R)``; a cylinder of radius ``R`` has its axis along
``y`` through ``(0, *, a + R)``.  A slab pair is the two planes ``z = 0`` and
``z = a``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .loopgen import UnitLoop

__all__ = [
    "Plate",
    "Sphere",
    "Cylinder",
    "SlabPair",
    "Body",
    "LambdaSupport",
    "MERGE_RTOL",
    "as_center",
    "plate_support",
    "quadric_support",
    "support_intersection",
    "slab_support",
    "body_support",
]

MERGE_RTOL = 1e-14


def _positive(name, v):
    v = float(v)
    if not (math.isfinite(v) and v > 0):
        raise ValueError(f"{name} must be positive and finite, got {v}")
    return v


@dataclass(frozen=True)
class Plate:
    """The plane ``z = 0`` (body occupying ``z <= 0``)."""

    def describe(self) -> dict:
        return {"body": "plate"}


@dataclass(frozen=True)
class Sphere:
    """Sphere of radius ``R`` whose lowest point is at height ``a``."""

    R: float
    a: float

    def __post_init__(self):
        object.__setattr__(self, "R", _positive("R", self.R))
        object.__setattr__(self, "a", _positive("a", self.a))

    @property
    def center(self) -> np.ndarray:
        return np.array([0.0, 0.0, self.a + self.R])

    def describe(self) -> dict:
        return {"body": "sphere", "R": self.R, "a": self.a}


@dataclass(frozen=True)
class Cylinder:
    """Infinite cylinder of radius ``R`` along ``y``, lowest line at height ``a``."""

    R: float
    a: float

    def __post_init__(self):
        object.__setattr__(self, "R", _positive("R", self.R))
        object.__setattr__(self, "a", _positive("a", self.a))

    @property
    def center(self) -> np.ndarray:
        return np.array([0.0, 0.0, self.a + self.R])

    def describe(self) -> dict:
        return {"body": "cylinder", "R": self.R, "a": self.a}


@dataclass(frozen=True)
class SlabPair:
    """Two parallel planes at ``z = 0`` and ``z = a``."""

    a: float

    def __post_init__(self):
        object.__setattr__(self, "a", _positive("a", self.a))

    def describe(self) -> dict:
        return {"body": "slab", "a": self.a}


Body = Union[Plate, Sphere, Cylinder, SlabPair]


class LambdaSupport:
    """Sorted union of disjoint closed intervals in ``lam >= 0``.

    Parameters
    ----------
    intervals : array_like, shape (k, 2)
        Rows ``[lo, hi]`` with ``0 <= lo < hi <= inf``, sorted, with strictly
        positive gaps between consecutive intervals.

    Notes
    -----
    Instances are immutable.  The constructor validates, it never repairs;
    use :meth:`from_raw` to merge an arbitrary interval list.
    """

    __slots__ = ("_iv",)

    def __init__(self, intervals=()):
        iv = np.array(intervals, dtype=np.float64).reshape(-1, 2)
        if iv.size:
            lo, hi = iv[:, 0], iv[:, 1]
            if np.any(np.isnan(iv)):
                raise ValueError("interval endpoints must not be NaN")
            if np.any(lo < 0) or np.any(np.isinf(lo)):
                raise ValueError("lower endpoints must be finite and >= 0")
            if np.any(hi <= lo):
                raise ValueError("intervals must have hi > lo")
            if np.any(hi[:-1] >= lo[1:]):
                raise ValueError("intervals must be sorted with positive gaps")
        iv.setflags(write=False)
        self._iv = iv

    @classmethod
    def from_raw(cls, lo, hi, rtol: float = MERGE_RTOL) -> "LambdaSupport":
        """Merge arbitrary intervals ``[lo_k, hi_k]`` into a support.

        Intervals are clipped to ``lam >= 0``; empty ones are dropped.
        Endpoints closer than ``rtol * max(1, lam)`` are joined.
        """
        lo = np.maximum(np.asarray(lo, dtype=np.float64).ravel(), 0.0)
        hi = np.asarray(hi, dtype=np.float64).ravel()
        keep = hi > lo
        lo, hi = lo[keep], hi[keep]
        if lo.size == 0:
            return cls()
        order = np.argsort(lo, kind="stable")
        lo, hi = lo[order], hi[order]
        out = []
        cl, ch = lo[0], hi[0]
        for a, b in zip(lo[1:], hi[1:]):
            if a <= ch + rtol * max(1.0, ch):
                if b > ch:
                    ch = b
            else:
                out.append((cl, ch))
                cl, ch = a, b
        out.append((cl, ch))
        return cls(out)

    @property
    def intervals(self) -> np.ndarray:
        return self._iv

    def __len__(self):
        return self._iv.shape[0]

    def __iter__(self):
        return iter(map(tuple, self._iv.tolist()))

    @property
    def empty(self) -> bool:
        return self._iv.shape[0] == 0

    def contains(self, lam) -> np.ndarray:
        """Membership of each ``lam`` (closed intervals)."""
        lam = np.asarray(lam, dtype=np.float64)
        if self.empty:
            return np.zeros(lam.shape, dtype=bool)
        lo, hi = self._iv[:, 0], self._iv[:, 1]
        k = np.searchsorted(lo, lam, side="right") - 1
        ok = k >= 0
        kk = np.where(ok, k, 0)
        return ok & (lam <= hi[kk])

    def scaled(self, kappa: float) -> "LambdaSupport":
        return LambdaSupport(self._iv * float(kappa))

    def __and__(self, other: "LambdaSupport") -> "LambdaSupport":
        return support_intersection(self, other)

    def __eq__(self, other):
        if not isinstance(other, LambdaSupport):
            return NotImplemented
        return self._iv.shape == other._iv.shape and bool(np.all(self._iv == other._iv))

    def __repr__(self):
        body = ", ".join(f"[{lo:.6g}, {hi:.6g}]" for lo, hi in self)
        return f"LambdaSupport({body or 'empty'})"


_FULL = LambdaSupport([(0.0, np.inf)])


def as_center(x_cm) -> np.ndarray:
    x = np.asarray(x_cm, dtype=np.float64).reshape(-1)
    if x.shape != (3,):
        raise ValueError("center point must have 3 coordinates")
    if not np.all(np.isfinite(x)):
        raise ValueError("center point coordinates must be finite")
    return x


def _points(loop) -> np.ndarray:
    if isinstance(loop, UnitLoop):
        return loop.points
    p = np.asarray(loop, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 3:
        raise ValueError("loop points must have shape (N, 3)")
    return p


def _half_line(z: float, zmin: float, zmax: float) -> LambdaSupport:
    if z > 0:
        return LambdaSupport([(z / -zmin, np.inf)]) if zmin < 0 else LambdaSupport()
    if z < 0:
        return LambdaSupport([(-z / zmax, np.inf)]) if zmax > 0 else LambdaSupport()
    return _FULL


def plate_support(x_cm, loop, z0: float = 0.0) -> LambdaSupport:
    """Scales at which the loop touches or crosses the plane ``z = z0``.

    Examples
    --------
    >>> pts = [[0, 0, 0.25], [0, 0, -0.25]]
    >>> plate_support([0, 0, 1.0], pts)
    LambdaSupport([4, inf])
    """
    x = as_center(x_cm)
    yz = _points(loop)[:, 2]
    return _half_line(x[2] - z0, float(yz.min()), float(yz.max()))


def _quadratic_intervals(A, B, C):
    """Per-point ``{lam >= 0 : A lam^2 + 2 B lam + C <= 0}`` as raw bounds."""
    lo = np.full(A.shape, np.inf)
    hi = np.full(A.shape, -np.inf)
    disc = B * B - A * C
    pos = (A > 0) & (disc > 0)
    s = np.sqrt(np.where(pos, disc, 0.0))
    # q = -(B + sign(B) s) avoids cancellation in the small root
    q = -(B + np.where(B >= 0, s, -s))
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        r1 = np.where(pos, q / np.where(pos, A, 1.0), np.inf)
        r2 = np.where(pos & (q != 0), C / np.where(q != 0, q, 1.0), np.inf)
    lo = np.where(pos, np.minimum(r1, r2), lo)
    hi = np.where(pos, np.maximum(r1, r2), hi)
    # a point sitting at the center of mass never moves with lam
    still = (A == 0) & (C <= 0)
    lo = np.where(still, 0.0, lo)
    hi = np.where(still, np.inf, hi)
    return lo, hi


def quadric_support(body: Union[Sphere, Cylinder], x_cm, loop) -> LambdaSupport:
    """Scales at which at least one loop point lies inside ``body``.

    Parameters
    ----------
    body : Sphere or Cylinder
    x_cm : array_like, shape (3,)
    loop : UnitLoop or array_like, shape (N, 3)

    Returns
    -------
    LambdaSupport

    Notes
    -----
    Point ``i`` is inside for ``A_i lam^2 + 2 B_i lam + C <= 0`` with
    ``A_i = |y_i|^2``, ``B_i = y_i . (x_cm - c)`` and ``C = |x_cm - c|^2 - R^2``;
    for a cylinder only the ``(x, z)`` components enter.  Tangent
    quadratics (zero discriminant) contribute nothing.
    """
    if not isinstance(body, (Sphere, Cylinder)):
        raise TypeError(f"quadric_support needs a Sphere or Cylinder, got {type(body).__name__}")
    x = as_center(x_cm)
    y = _points(loop)
    d = x - body.center
    if isinstance(body, Cylinder):
        d = d[[0, 2]]
        y = y[:, [0, 2]]
    A = np.einsum("ij,ij->i", y, y)
    B = y @ d
    C = float(d @ d) - body.R**2
    lo, hi = _quadratic_intervals(A, B, C)
    return LambdaSupport.from_raw(lo, hi)


def support_intersection(A: LambdaSupport, B: LambdaSupport) -> LambdaSupport:
    """Exact intersection of two supports.

    Touching endpoints produce a single point, which has zero measure and
    is dropped.
    """
    a, b = A.intervals, B.intervals
    i = j = 0
    out = []
    while i < len(a) and j < len(b):
        lo = max(a[i, 0], b[j, 0])
        hi = min(a[i, 1], b[j, 1])
        if hi > lo:
            out.append((lo, hi))
        if a[i, 1] < b[j, 1]:
            i += 1
        else:
            j += 1
    return LambdaSupport(out)


def slab_support(pair: SlabPair, x_cm, loop) -> LambdaSupport:
    """Scales at which the loop reaches both planes of a slab pair."""
    return support_intersection(plate_support(x_cm, loop, 0.0),
                                plate_support(x_cm, loop, pair.a))


def body_support(body: Body, x_cm, loop) -> LambdaSupport:
    """Dispatch to the support function of ``body``."""
    if isinstance(body, Plate):
        return plate_support(x_cm, loop)
    if isinstance(body, (Sphere, Cylinder)):
        return quadric_support(body, x_cm, loop)
    if isinstance(body, SlabPair):
        return slab_support(body, x_cm, loop)
    raise TypeError(f"unknown body {body!r}")
