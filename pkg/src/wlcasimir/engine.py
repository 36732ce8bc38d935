"""Casimir interaction energies from loop ensembles.

The worldline energy is

    E = -1/(32 pi^2) < int d^3x_cm int_0^inf dT T^-3 exp(-m^2 T) Theta[x] >

With ``T = lam^2`` the propertime integral over the scales at which a loop
touches both bodies is a sum over the intervals of a :class:`LambdaSupport`
and has a closed form when ``m = 0``.  The center-of-mass integral is
reduced by symmetry: sphere-plate uses ``(rho, z)`` with weight
``2 pi rho``; cylinder-plate uses ``(x, z)`` per unit length; a slab pair
uses ``z`` per unit area.  The ensemble mean and its jackknife error come
from :mod:`wlcasimir.stats`.

Units follow the geometry length ``L0``: sphere energies in ``1/L0``,
cylinder energies per length in ``1/L0^2``, slab energies per area in
``1/L0^3``.
"""
from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy import integrate

from . import _kernels as K
from .geometry import (Body, Cylinder, LambdaSupport, Plate, SlabPair, Sphere,
                       body_support, support_intersection)
from .loopgen import Ensemble, UnitLoop
from .stats import BlockedSamples, fsum, jackknife

__all__ = [
    "PREFACTOR",
    "DIST_EXTENT4_MEAN",
    "THREADS_ENV",
    "EngineConfig",
    "EnergyResult",
    "DensityGrid",
    "DivergenceError",
    "Geometry",
    "propertime_integral",
    "com_integrand",
    "integrate_com",
    "loop_values",
    "casimir_energy",
    "casimir_scan",
    "energy_density",
    "summarize",
    "describe",
    "thread_count",
]

PREFACTOR = -1.0 / (32.0 * math.pi**2)
# mean fourth power of the vertical extent of a continuum unit loop
DIST_EXTENT4_MEAN = 2.0 * math.pi**4 / 15.0
THREADS_ENV = "WLCASIMIR_THREADS"

Geometry = Union[SlabPair, Tuple[Body, Body]]


class DivergenceError(ArithmeticError):
    """The propertime integral diverges (support reaches ``lam = 0``)."""


def thread_count() -> int:
    """Worker threads for loop-parallel work.

    Read from ``WLCASIMIR_THREADS``; defaults to the number of CPUs.
    Results do not depend on it.
    """
    v = os.environ.get(THREADS_ENV)
    if v:
        try:
            n = int(v)
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {v!r}") from None
        if n < 1:
            raise ValueError(f"{THREADS_ENV} must be >= 1")
        return n
    return os.cpu_count() or 1


@dataclass(frozen=True)
class EngineConfig:
    """Numerical settings of the energy engine.

    Attributes
    ----------
    mass : float
        Field mass ``m >= 0`` in ``1/L0``.
    qtol : float
        Relative tolerance of the center-of-mass quadrature per loop.
    max_depth : int
        Maximum number of bisections of a cubature cell.
    trunc_tol : float
        Certified bound on the discarded domain, relative to the value.
    batch_size : int
        Loops realized at a time.
    estimator : {"direct", "ratio"}
        ``direct`` is the plain ensemble mean.  ``ratio`` rescales it by the
        known continuum mean of the fourth power of the loop's vertical
        extent, which tracks the parallel-plate response of each loop and
        removes most of its discretization bias and variance at small
        separations.
    lambda_tol : float
        Relative tail tolerance of the culled scale union.
    n_blocks : int
        Jackknife blocks.
    max_evals : int
        Integrand evaluations allowed per loop and geometry.
    """

    mass: float = 0.0
    qtol: float = 1e-3
    max_depth: int = 40
    trunc_tol: float = 1e-4
    batch_size: int = 16
    estimator: str = "direct"
    lambda_tol: float = 1e-10
    n_blocks: int = 100
    max_evals: int = 2_000_000

    def __post_init__(self):
        if not (math.isfinite(self.mass) and self.mass >= 0):
            raise ValueError("mass must be finite and >= 0")
        for name in ("qtol", "trunc_tol", "lambda_tol"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if self.max_depth < 1 or self.batch_size < 1 or self.max_evals < 1000:
            raise ValueError("max_depth, batch_size must be >= 1 and max_evals >= 1000")
        if self.n_blocks < 2:
            raise ValueError("n_blocks must be >= 2")
        if self.estimator not in ("direct", "ratio"):
            raise ValueError(f"unknown estimator {self.estimator!r}")

    def vector(self) -> np.ndarray:
        return np.array([self.mass, self.qtol, self.trunc_tol, self.lambda_tol,
                         float(self.max_depth), float(self.max_evals)])


@dataclass
class EnergyResult:
    """Interaction energy with its jackknife error.

    Attributes
    ----------
    value : float
        Energy (per area for a slab, per length for a cylinder).
    stat_error : float
        Jackknife standard error.
    meta : dict
        Geometry, ensemble and config descriptions, wall time and
        quadrature diagnostics.
    samples : ndarray
        Per-loop spatial integrals, index ordered.
    controls : ndarray or None
        Per-loop fourth power of the vertical extent.
    """

    value: float
    stat_error: float
    meta: dict = field(default_factory=dict)
    samples: Optional[np.ndarray] = field(default=None, repr=False)
    controls: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.stat_error < 0:
            raise ValueError("stat_error must be non-negative")

    def with_estimator(self, estimator: str, n_blocks: Optional[int] = None) -> "EnergyResult":
        """Re-evaluate the same per-loop samples with another estimator."""
        nb = n_blocks or self.meta.get("n_blocks", 100)
        value, err = _estimate(self.samples, self.controls, estimator, nb)
        meta = dict(self.meta, estimator=estimator)
        return EnergyResult(value, err, meta, self.samples, self.controls)


@dataclass
class DensityGrid:
    """Energy density on a 2D section through the symmetry axis.

    ``values[i, j]`` is the density at horizontal coordinate ``h[i]``
    (``rho`` for a sphere, ``x`` for a cylinder) and height ``z[j]``.
    """

    h: np.ndarray
    z: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)


def propertime_integral(support: LambdaSupport, m: float = 0.0) -> float:
    """``int 2 lam^-5 exp(-m^2 lam^2) dlam`` over the support.

    Parameters
    ----------
    support : LambdaSupport
    m : float
        Mass.  For ``m = 0`` each interval gives ``(lo^-4 - hi^-4) / 2``;
        otherwise every interval is integrated with ``scipy.integrate.quad``
        to relative accuracy 1e-10.

    Raises
    ------
    DivergenceError
        If an interval of positive length starts at ``lam = 0``.
    """
    if m < 0:
        raise ValueError("mass must be >= 0")
    terms = []
    for lo, hi in support:
        if lo <= 0.0:
            raise DivergenceError("support reaches lam = 0; the bodies overlap")
        if m == 0.0:
            terms.append(0.5 * (lo**-4 - (0.0 if math.isinf(hi) else hi**-4)))
            continue
        # substitute s = lam / lo so the integrand is O(1) at the left end
        m2 = (m * lo) ** 2
        f = lambda s: 2.0 * s**-5 * math.exp(-m2 * s * s)
        up = hi / lo
        val, _ = integrate.quad(f, 1.0, up, epsabs=0.0, epsrel=1e-10, limit=200)
        terms.append(val / lo**4)
    return fsum(terms)


def _pair(bodies: Geometry):
    if isinstance(bodies, SlabPair):
        return bodies, None
    try:
        b1, b2 = bodies
    except (TypeError, ValueError):
        raise TypeError("bodies must be a SlabPair or a (Plate, Sphere|Cylinder) pair") from None
    if isinstance(b2, Plate):
        b1, b2 = b2, b1
    if not isinstance(b1, Plate) or not isinstance(b2, (Sphere, Cylinder)):
        raise TypeError("bodies must be a SlabPair or a (Plate, Sphere|Cylinder) pair")
    return b1, b2


def _kind(bodies: Geometry):
    first, body = _pair(bodies)
    if body is None:
        return K.KIND_SLAB, first.a, 0.0
    if isinstance(body, Sphere):
        return K.KIND_SPHERE, body.a, body.R
    return K.KIND_CYLINDER, body.a, body.R


def describe(bodies: Geometry) -> dict:
    kind, a, R = _kind(bodies)
    name = {K.KIND_SLAB: "slab", K.KIND_SPHERE: "sphere", K.KIND_CYLINDER: "cylinder"}[kind]
    d = {"geometry": name, "a": a}
    if kind != K.KIND_SLAB:
        d["R"] = R
    return d


def com_integrand(bodies: Geometry, loop, x_cm, m: float = 0.0) -> float:
    """Propertime integral of one loop at one center point.

    Exact reference path built on :mod:`wlcasimir.geometry`.
    """
    first, body = _pair(bodies)
    if body is None:
        return propertime_integral(body_support(first, x_cm, loop), m)
    s = support_intersection(body_support(first, x_cm, loop), body_support(body, x_cm, loop))
    return propertime_integral(s, m)


def _points(loop) -> np.ndarray:
    if isinstance(loop, UnitLoop):
        return loop.points
    return np.ascontiguousarray(loop, dtype=np.float64)


def _run_loop(Y, kinds, geo, cfgv):
    out = np.zeros((kinds.shape[0], 4))
    flags = np.zeros(kinds.shape[0], np.int64)
    K.loop_integrals(Y, kinds, geo, cfgv, out, flags)
    return out, flags


def integrate_com(bodies: Geometry, loop, config: EngineConfig = EngineConfig()) -> dict:
    """Spatial integral of the propertime integral for one loop.

    Returns
    -------
    dict
        ``value``, ``error`` (quadrature estimate), ``evals``,
        ``tail_bound`` (certified bound on the discarded domain),
        ``converged`` and ``flags``.
    """
    kind, a, R = _kind(bodies)
    out, flags = _run_loop(_points(loop), np.array([kind]), np.array([[a, R]]), config.vector())
    return _record(out[0], int(flags[0]))


def _record(row, flag):
    return {"value": float(row[0]), "error": float(row[1]), "evals": int(row[2]),
            "tail_bound": float(row[3]), "converged": flag == 0, "flags": flag}


def loop_values(geometries: Sequence[Geometry], ensemble: Ensemble,
                config: EngineConfig = EngineConfig(), threads: Optional[int] = None,
                progress=None):
    """Per-loop spatial integrals for several geometries.

    Each loop is realized once and integrated against every geometry.

    Returns
    -------
    values : ndarray, shape (n_L, G)
    info : ndarray, shape (n_L, G, 3)
        Quadrature error, evaluations and tail bound per entry.
    flags : ndarray, shape (n_L, G)
    controls : ndarray, shape (n_L,)
        Fourth power of each loop's vertical extent.
    """
    if len(ensemble) < 1:
        raise ValueError("empty ensemble")
    parsed = [_kind(g) for g in geometries]
    kinds = np.array([s[0] for s in parsed], dtype=np.int64)
    geo = np.array([[s[1], s[2]] for s in parsed], dtype=np.float64).reshape(-1, 2)
    cfgv = config.vector()
    n_l = len(ensemble)
    values = np.zeros((n_l, len(parsed)))
    info = np.zeros((n_l, len(parsed), 3))
    flags = np.zeros((n_l, len(parsed)), np.int64)
    controls = np.zeros(n_l)
    threads = thread_count() if threads is None else int(threads)

    def work(k, Y):
        out, fl = _run_loop(Y, kinds, geo, cfgv)
        values[k] = out[:, 0]
        info[k] = out[:, 1:]
        flags[k] = fl
        controls[k] = np.ptp(Y[:, 2]) ** 4

    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        for start, batch in ensemble.batches(config.batch_size):
            if pool is None:
                for i, Y in enumerate(batch):
                    work(start + i, Y)
            else:
                list(pool.map(lambda iy: work(start + iy[0], iy[1]), enumerate(batch)))
            if progress is not None:
                progress(start + len(batch), n_l)
    finally:
        if pool is not None:
            pool.shutdown()
    return values, info, flags, controls


def _estimate(samples, controls, estimator, n_blocks):
    nb = min(n_blocks, samples.shape[0])
    if nb < 2:
        raise ValueError("at least two loops are needed for an error estimate")
    if estimator == "direct":
        mean, err = jackknife(BlockedSamples(samples, nb))
        return PREFACTOR * mean, abs(PREFACTOR) * err
    if controls is None:
        raise ValueError("the ratio estimator needs per-loop controls")
    data = np.stack([samples, controls], axis=1)
    stat = lambda mv: mv[0] / mv[1] * DIST_EXTENT4_MEAN
    mean, err = jackknife(BlockedSamples(data, nb), stat)
    return PREFACTOR * mean, abs(PREFACTOR) * err


def summarize(bodies: Geometry, ensemble: Ensemble, config: EngineConfig, values, info, flags,
              controls, wall: float = float("nan")) -> EnergyResult:
    """EnergyResult for one geometry from its per-loop columns.

    Raises
    ------
    DivergenceError
        If any loop produced a divergent propertime integral.
    """
    if config.estimator == "ratio" and _kind(bodies)[0] == K.KIND_SLAB:
        raise ValueError("the ratio estimator is exact by construction for a slab; use 'direct'")
    if np.any(flags & K.FLAG_DIVERGENT) or not np.all(np.isfinite(values)):
        raise DivergenceError("divergent propertime integral: the bodies overlap")
    v, e = _estimate(values, controls, config.estimator, config.n_blocks)
    meta = {
        **describe(bodies),
        "estimator": config.estimator,
        "n_blocks": min(config.n_blocks, len(ensemble)),
        "ensemble": asdict(ensemble.meta),
        "config": asdict(config),
        "wall_time_s": wall,
        "quad_rel_error": float(np.sum(info[:, 0]) / max(np.sum(values), 1e-300)),
        "evals": int(np.sum(info[:, 1])),
        "max_tail_rel": float(np.max(info[:, 2] / np.maximum(values, 1e-300))),
        "n_unconverged": int(np.count_nonzero(flags & K.FLAG_QTOL)),
        "n_uncertified": int(np.count_nonzero(flags & K.FLAG_TRUNC)),
    }
    return EnergyResult(v, e, meta, np.array(values, dtype=np.float64), np.array(controls, dtype=np.float64))


def casimir_scan(geometries: Sequence[Geometry], ensemble: Ensemble,
                 config: EngineConfig = EngineConfig(), threads: Optional[int] = None,
                 progress=None):
    """Energies of several geometries from one pass over the ensemble."""
    t0 = time.perf_counter()
    values, info, flags, controls = loop_values(geometries, ensemble, config, threads, progress)
    wall = time.perf_counter() - t0
    return [summarize(g, ensemble, config, values[:, i], info[:, i], flags[:, i], controls, wall)
            for i, g in enumerate(geometries)]


def casimir_energy(bodies: Geometry, ensemble: Ensemble,
                   config: EngineConfig = EngineConfig(), threads: Optional[int] = None) -> EnergyResult:
    """Casimir interaction energy of ``bodies`` over ``ensemble``.

    Parameters
    ----------
    bodies : SlabPair or (Plate, Sphere) or (Plate, Cylinder)
    ensemble : Ensemble
    config : EngineConfig

    Returns
    -------
    EnergyResult
        ``value = -1/(32 pi^2)`` times the ensemble mean of the per-loop
        spatial integrals (or its ratio-adjusted version).

    Examples
    --------
    >>> from wlcasimir.loopgen import EnsembleMeta, generate_ensemble
    >>> ens = generate_ensemble(EnsembleMeta(n_loops=4, n_points=64, seed=1))
    >>> casimir_energy(SlabPair(1.0), ens).value < 0
    True
    """
    return casimir_scan([bodies], ensemble, config, threads)[0]


def energy_density(bodies: Geometry, ensemble: Ensemble, h, z,
                   config: EngineConfig = EngineConfig()) -> DensityGrid:
    """Energy density per volume on the section ``(h, z)``.

    ``h`` is the horizontal coordinate (``rho`` for a sphere, ``x`` for a
    cylinder); negative ``rho`` is mirrored, so ``(rho, z)`` and
    ``(-rho, z)`` agree exactly.  For a slab only ``z`` matters.
    """
    kind, a, R = _kind(bodies)
    h = np.asarray(h, dtype=np.float64).ravel()
    z = np.asarray(z, dtype=np.float64).ravel()
    if not (np.all(np.isfinite(h)) and np.all(np.isfinite(z))):
        raise ValueError("grid nodes must be finite")
    if len(ensemble) < 1:
        raise ValueError("empty ensemble")
    hh, zz = np.meshgrid(np.abs(h) if kind == K.KIND_SPHERE else h, z, indexing="ij")
    X = np.ascontiguousarray(hh.ravel())
    Z = np.ascontiguousarray(zz.ravel())
    per_loop = np.zeros((len(ensemble), X.size))
    t0 = time.perf_counter()
    for start, batch in ensemble.batches(config.batch_size):
        for i, Y in enumerate(batch):
            K.point_values(Y, kind, a, R, config.mass, config.lambda_tol, X, Z, per_loop[start + i])
    if not np.all(np.isfinite(per_loop)):
        raise DivergenceError("divergent propertime integral on the grid")
    mean = np.array([fsum(per_loop[:, j]) for j in range(X.size)]) / len(ensemble)
    vals = PREFACTOR * mean.reshape(hh.shape)
    meta = {**describe(bodies), "ensemble": asdict(ensemble.meta), "config": asdict(config),
            "wall_time_s": time.perf_counter() - t0}
    return DensityGrid(h, z, vals, meta)
