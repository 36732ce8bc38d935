"""Proximity-force references, normalized curves, fits and validity bounds.

Normalized energies are ``E / E0`` with ``E0`` the zeroth-order PFA.  The
PFA error band at curvature ``x = a/R`` is ``[1 - x, 1 - x/3]`` (plate-based
and sphere-based next-to-leading order).  A worldline band ``v(x) +- w(x)``
is compatible with PFA as long as the two bands overlap; the validity
bound is the smallest ``x`` where they separate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy import interpolate, optimize

__all__ = [
    "PfaModel",
    "Curve",
    "CurvePoint",
    "FitResult",
    "BoundResult",
    "FitError",
    "BoundError",
    "SPHERE_ASYMPTOTE",
    "SEMICLASSICAL_SLOPE",
    "OPTICAL_SLOPE",
    "CYLINDER_SHAPE_FACTOR",
    "REFERENCE_FIT",
    "pfa_sphere",
    "pfa_cylinder_zeroth",
    "normalize",
    "fit_constrained_quadratic",
    "pfa_validity_bound",
]

# large a/R limit of E/E0 for sphere-plate (small sphere in the far field)
SPHERE_ASYMPTOTE = 180.0 / math.pi**4
# slopes of p(x) - 1 from other approximations, shown for comparison only
SEMICLASSICAL_SLOPE = -0.17
OPTICAL_SLOPE = 0.05
# int du (1 + u^2)^-3 * sqrt(2), the cylinder PFA shape factor
CYLINDER_SHAPE_FACTOR = 3.0 * math.pi / (4.0 * math.sqrt(2.0))

_NTL = {"zeroth": 0.0, "plate": 1.0, "sphere": 1.0 / 3.0}


class FitError(ValueError):
    """Fit input is underdetermined or degenerate."""


class BoundError(ValueError):
    """Worldline and PFA bands do not admit a validity threshold."""


@dataclass(frozen=True)
class PfaModel:
    """PFA variant.

    Parameters
    ----------
    c_pp : {1, 2}
        Degrees of freedom factor of the parallel-plate energy.
    variant : {"zeroth", "plate", "sphere"}
        Zeroth order, or next-to-leading order in the plate-based
        (coefficient 1) or sphere-based (coefficient 1/3) form.
    """

    c_pp: int = 1
    variant: str = "zeroth"

    def __post_init__(self):
        if self.c_pp not in (1, 2):
            raise ValueError("c_pp must be 1 or 2")
        if self.variant not in _NTL:
            raise ValueError(f"variant must be one of {sorted(_NTL)}")

    @property
    def coefficient(self) -> float:
        return _NTL[self.variant]


def pfa_sphere(a: float, R: float, model: PfaModel = PfaModel()) -> float:
    """Sphere-plate PFA energy in ``1/L0``.

    ``E0 = -c_pp pi^3 R / (1440 a^2)``, times ``1 - k a/R`` at next order.

    Examples
    --------
    >>> round(pfa_sphere(1.0, 1.0), 7)
    -0.0215321
    """
    if not (a > 0 and R > 0):
        raise ValueError("a and R must be positive")
    e0 = -model.c_pp * math.pi**3 / 1440.0 * R / a**2
    return e0 * (1.0 - model.coefficient * a / R)


def pfa_cylinder_zeroth(a: float, R: float, c_pp: int = 1, normalization: str = "pfa") -> float:
    """Cylinder-plate zeroth-order PFA energy per unit length.

    Parameters
    ----------
    normalization : {"pfa", "shape"}
        ``"pfa"`` (default) integrates the parallel-plate energy
        ``-c_pp pi^2 / (1440 d^3)`` over the gap profile, giving
        ``-c_pp (pi^2/1440) (3 pi / (4 sqrt 2)) sqrt(R) / a^(5/2)``.
        ``"shape"`` drops the parallel-plate constant and returns only the
        geometric factor ``-c_pp (3 pi / (4 sqrt 2)) sqrt(R) / a^(5/2)``.
    """
    if not (a > 0 and R > 0):
        raise ValueError("a and R must be positive")
    if c_pp not in (1, 2):
        raise ValueError("c_pp must be 1 or 2")
    e = -c_pp * CYLINDER_SHAPE_FACTOR * math.sqrt(R) / a**2.5
    if normalization == "pfa":
        return e * math.pi**2 / 1440.0
    if normalization == "shape":
        return e
    raise ValueError("normalization must be 'pfa' or 'shape'")


@dataclass(frozen=True)
class CurvePoint:
    x: Optional[float]
    value: float
    err: float


def normalize(E, E0: float, x: Optional[float] = None) -> CurvePoint:
    """``E / E0`` with error ``|stat_error / E0|``.

    ``E`` may be an :class:`~wlcasimir.engine.EnergyResult` or a plain
    number.  ``x`` defaults to ``a/R`` from the result metadata if present.
    """
    if E0 == 0 or not math.isfinite(E0):
        raise ValueError("E0 must be finite and non-zero")
    value = getattr(E, "value", E)
    err = getattr(E, "stat_error", 0.0)
    if x is None:
        meta = getattr(E, "meta", {}) or {}
        if "a" in meta and "R" in meta:
            x = meta["a"] / meta["R"]
    return CurvePoint(x, value / E0, abs(err / E0))


@dataclass
class Curve:
    """Normalized energies against curvature ``x = a/R``."""

    x: np.ndarray
    value: np.ndarray
    err: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64).ravel()
        self.value = np.asarray(self.value, dtype=np.float64).ravel()
        self.err = np.asarray(self.err, dtype=np.float64).ravel()
        if not (self.x.shape == self.value.shape == self.err.shape):
            raise ValueError("x, value and err must have equal length")
        if np.any(self.x <= 0) or np.any(np.diff(self.x) <= 0):
            raise ValueError("x must be positive and strictly increasing")
        if np.any(self.err < 0) or not np.all(np.isfinite(self.value)):
            raise ValueError("errors must be >= 0 and values finite")

    @classmethod
    def from_points(cls, points) -> "Curve":
        pts = sorted(points, key=lambda p: p.x)
        return cls([p.x for p in pts], [p.value for p in pts], [p.err for p in pts])

    def __len__(self):
        return self.x.shape[0]


@dataclass
class FitResult:
    """``p(x) = 1 + c1 x + c2 x^2`` with coefficient covariance.

    Attributes
    ----------
    c1, c2 : float
    cov : ndarray, shape (2, 2)
    chi2 : float
    dof : int
    """

    c1: float
    c2: float
    cov: np.ndarray
    chi2: float = float("nan")
    dof: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.cov = np.asarray(self.cov, dtype=np.float64).reshape(2, 2)
        if not np.allclose(self.cov, self.cov.T, rtol=1e-12, atol=0):
            raise ValueError("covariance must be symmetric")
        if np.min(np.linalg.eigvalsh(self.cov)) < -1e-12 * max(1.0, np.abs(self.cov).max()):
            raise ValueError("covariance must be positive semidefinite")

    def p(self, x):
        x = np.asarray(x, dtype=np.float64)
        return 1.0 + self.c1 * x + self.c2 * x * x

    def band(self, x):
        """One standard deviation of ``p(x)``: ``x sqrt(v11 + 2 x v12 + x^2 v22)``."""
        x = np.asarray(x, dtype=np.float64)
        v = self.cov
        q = v[0, 0] + 2.0 * x * v[0, 1] + x * x * v[1, 1]
        return x * np.sqrt(np.maximum(q, 0.0))


def _band_cov(sigma1: float, k1: float, k2: float) -> np.ndarray:
    # covariance that reproduces the band sigma1 x sqrt(1 + k1 x + k2 x^2)
    v11 = sigma1**2
    return np.array([[v11, 0.5 * k1 * v11], [0.5 * k1 * v11, k2 * v11]])


# reference fit of the normalized sphere-plate energy for a/R < 0.1
REFERENCE_FIT = FitResult(0.35, -1.92, _band_cov(0.19, -137.2, 5125.0),
                          meta={"source": "reference"})


def fit_constrained_quadratic(curve: Curve, x_max: float = 0.1) -> FitResult:
    """Weighted least squares of ``v - 1 = c1 x + c2 x^2`` for ``x < x_max``.

    Weights are inverse variances.  The covariance is the inverse of the
    weighted normal matrix (not rescaled by the reduced chi-square).

    Raises
    ------
    FitError
        Fewer than three usable points, non-positive errors or a singular
        normal matrix.
    """
    sel = curve.x < x_max
    x, v, s = curve.x[sel], curve.value[sel], curve.err[sel]
    if x.size < 3:
        raise FitError(f"need at least 3 points below x_max={x_max}, got {x.size}")
    if np.any(s <= 0):
        raise FitError("fit needs strictly positive errors")
    A = np.stack([x, x * x], axis=1) / s[:, None]
    y = (v - 1.0) / s
    if np.linalg.matrix_rank(A) < 2:
        raise FitError("singular normal matrix")
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    normal = A.T @ A
    if np.linalg.cond(normal) > 1e14:
        raise FitError("normal matrix is numerically singular")
    cov = np.linalg.inv(normal)
    cov = 0.5 * (cov + cov.T)
    r = y - A @ coef
    return FitResult(float(coef[0]), float(coef[1]), cov, float(r @ r), int(x.size - 2),
                     meta={"x_max": x_max, "n_points": int(x.size)})


@dataclass(frozen=True)
class BoundResult:
    """PFA validity threshold in ``a/R``.

    Attributes
    ----------
    threshold : float
        Largest ``x`` with overlapping worldline and PFA bands.
    tolerance : float
        Requested accuracy level ``t``.
    convention : str
        ``"halfwidth"`` or ``"stat"``.
    half_width : float
        Worldline half-width at the threshold.
    non_monotone : bool
        True if the bands overlap again above the threshold.
    """

    threshold: float
    tolerance: float
    convention: str
    base_accuracy: float
    half_width: float
    source: str
    non_monotone: bool = False

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")


def _curve_functions(curve: Curve):
    x, v, e = curve.x, curve.value, curve.err
    if x[0] > 0:
        # anchor the exactly known flat limit
        x = np.concatenate([[0.0], x])
        v = np.concatenate([[1.0], v])
        e = np.concatenate([[0.0], e])
    fv = interpolate.PchipInterpolator(x, v, extrapolate=False)
    fe = interpolate.PchipInterpolator(x, e, extrapolate=False)
    return (lambda q: float(fv(q))), (lambda q: float(fe(q))), float(curve.x[-1])


def pfa_validity_bound(worldline: Union[Curve, FitResult], tolerance: float = 0.001,
                       convention: str = "stat", base_accuracy: float = 0.001,
                       x_hi: Optional[float] = None, n_scan: int = 2000) -> BoundResult:
    """Curvature at which the worldline and PFA bands stop overlapping.

    Parameters
    ----------
    worldline : Curve or FitResult
        Normalized energy, as measured points (monotone interpolation) or a
        fitted polynomial with its covariance band.
    tolerance : float
        Accuracy level ``t``.  Bands narrower than ``t`` are widened to it.
    convention : {"halfwidth", "stat"}
        ``halfwidth``: ``w = max(base_accuracy, t) v / 2``.
        ``stat``: ``w = err(x)`` with ``err`` the curve errors or the fit
        band, widened to ``max(err(x), t v / 2)`` when ``t > base_accuracy``.
    base_accuracy : float
        Accuracy of the worldline data in the ``halfwidth`` convention.
    x_hi : float, optional
        Upper end of the search; defaults to the last curve point or the
        fit range.

    Raises
    ------
    BoundError
        If the bands do not overlap at small ``x`` or never separate.
    """
    if convention not in ("halfwidth", "stat"):
        raise ValueError("convention must be 'halfwidth' or 'stat'")
    if not tolerance > 0:
        raise ValueError("tolerance must be positive")
    if isinstance(worldline, FitResult):
        fv = lambda q: float(worldline.p(q))
        fe = lambda q: float(worldline.band(q))
        top = x_hi or float(worldline.meta.get("x_max", 0.1))
        source = "fit"
    else:
        fv, fe, top = _curve_functions(worldline)
        top = x_hi or top
        source = "curve"

    acc = max(base_accuracy, tolerance)

    def width(q):
        if convention == "halfwidth":
            return 0.5 * acc * fv(q)
        if tolerance > base_accuracy:
            return max(fe(q), 0.5 * tolerance * fv(q))
        return fe(q)

    def gap(q):
        v, w = fv(q), width(q)
        # positive when the bands are disjoint
        return max((v - w) - (1.0 - q / 3.0), (1.0 - q) - (v + w))

    xs = np.geomspace(top * 1e-7, top, n_scan)
    g = np.array([gap(q) for q in xs])
    if g[0] > 0:
        raise BoundError("worldline and PFA bands do not overlap at small a/R")
    out = np.nonzero(g > 0)[0]
    if out.size == 0:
        raise BoundError(f"bands overlap over the whole range up to a/R={top}")
    k = out[0]
    root = optimize.bisect(gap, xs[k - 1], xs[k], xtol=1e-15, rtol=1e-6)
    non_mono = bool(np.any(g[k:] <= 0))
    return BoundResult(root, tolerance, convention, base_accuracy, width(root), source, non_mono)

