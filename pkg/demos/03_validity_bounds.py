"""How small must a/R be for PFA to hold at a given accuracy?

Uses the reference fit p(x) = 1 + 0.35 x - 1.92 x^2 with its
covariance band, then a fit to a fresh (small) worldline scan.
"""
import numpy as np

from wlcasimir import (REFERENCE_FIT, BoundError, Curve, EngineConfig, EnsembleMeta, Plate, Sphere,
                       casimir_scan, fit_constrained_quadratic, generate_ensemble, normalize,
                       pfa_sphere, pfa_validity_bound)

for conv in ("halfwidth", "stat"):
    for t in (0.001, 0.01):
        try:
            b = pfa_validity_bound(REFERENCE_FIT, t, convention=conv)
            print(f"{conv:9s} t={t:<6g} a/R < {b.threshold:.3e}" + (" (non-monotone)" if b.non_monotone else ""))
        except BoundError as exc:
            print(f"{conv:9s} t={t:<6g} no threshold: {exc}")

xs = np.round(np.arange(1, 11) * 0.01, 2)
ens = generate_ensemble(EnsembleMeta(n_loops=300, n_points=10_000, seed=5))
res = casimir_scan([(Plate(), Sphere(1.0 / x, 1.0)) for x in xs], ens,
                   EngineConfig(qtol=1e-2, trunc_tol=1e-3, estimator="ratio"))
curve = Curve.from_points([normalize(r, pfa_sphere(1.0, 1.0 / x), x) for x, r in zip(xs, res)])
fit = fit_constrained_quadratic(curve)
# 300 loops pin c1 only loosely, and the points share loops, so chi2 is small
print(f"\nfresh fit: c1={fit.c1:.3f} c2={fit.c2:.2f} chi2/dof={fit.chi2:.1f}/{fit.dof}")
b = pfa_validity_bound(fit, 0.01, convention="halfwidth")
print(f"1% threshold from the fresh fit: a/R < {b.threshold:.3e}")
