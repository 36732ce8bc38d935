"""Worldline Monte Carlo Casimir energies.

Scalar (Dirichlet) Casimir interaction energies of a plate facing a sphere or
a cylinder, and of two parallel plates, from ensembles of closed unit loops.

Modules
-------
loopgen
    Unit loop ensembles and their binary file format.
geometry
    Bodies and the propertime supports on which a loop touches them.
engine
    Per-loop spatial integrals and ensemble energies.
stats
    Blocked jackknife errors and discretization sweeps.
analysis
    PFA references, normalized curves, fits and validity thresholds.
cli
    Command line entry point.
"""
from .analysis import (REFERENCE_FIT, BoundError, BoundResult, Curve, FitError, FitResult,
                       PfaModel, fit_constrained_quadratic, normalize, pfa_cylinder_zeroth,
                       pfa_sphere, pfa_validity_bound)
from .engine import (PREFACTOR, DivergenceError, EnergyResult, EngineConfig, casimir_energy,
                     casimir_scan, energy_density, integrate_com, propertime_integral)
from .geometry import Cylinder, LambdaSupport, Plate, SlabPair, Sphere
from .loopgen import (Ensemble, EnsembleMeta, UnitLoop, generate_ensemble, generate_unit_loop,
                      load_ensemble, save_ensemble)
from .stats import BlockedSamples, discretization_sweep, jackknife

__version__ = "0.1.0"
