import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from wlcasimir.analysis import (OPTICAL_SLOPE, REFERENCE_FIT, SEMICLASSICAL_SLOPE, SPHERE_ASYMPTOTE,
                                BoundError, Curve, CurvePoint, FitError, FitResult, PfaModel,
                                fit_constrained_quadratic, normalize, pfa_cylinder_zeroth,
                                pfa_sphere, pfa_validity_bound)
from wlcasimir.engine import EnergyResult


def test_pfa_sphere_examples():
    assert pfa_sphere(1.0, 1.0) == pytest.approx(-math.pi**3 / 1440, rel=1e-15)
    assert pfa_sphere(1.0, 1.0) == pytest.approx(-0.0215321, abs=5e-8)
    e0 = pfa_sphere(0.1, 1.0)
    assert pfa_sphere(0.1, 1.0, PfaModel(variant="plate")) == pytest.approx(0.9 * e0, rel=1e-15)
    assert pfa_sphere(0.1, 1.0, PfaModel(variant="sphere")) == pytest.approx((1 - 1 / 30) * e0, rel=1e-15)
    assert pfa_sphere(1.0, 1.0, PfaModel(c_pp=2)) == 2 * pfa_sphere(1.0, 1.0)


@given(st.floats(1e-4, 0.99))
def test_pfa_ordering(x):
    z = abs(pfa_sphere(x, 1.0))
    p = abs(pfa_sphere(x, 1.0, PfaModel(variant="plate")))
    s = abs(pfa_sphere(x, 1.0, PfaModel(variant="sphere")))
    assert p < s < z


def test_pfa_cylinder():
    shape = pfa_cylinder_zeroth(1.0, 1.0, normalization="shape")
    assert shape == pytest.approx(-3 * math.pi / (4 * math.sqrt(2)), rel=1e-15)
    # the commonly quoted -1.666078 is this value rounded loosely
    assert shape == pytest.approx(-1.666078, abs=5e-6)
    full = pfa_cylinder_zeroth(1.0, 1.0)
    assert full == pytest.approx(shape * math.pi**2 / 1440, rel=1e-15)
    assert pfa_cylinder_zeroth(4.0, 1.0) == pytest.approx(full / 32, rel=1e-15)
    assert pfa_cylinder_zeroth(1.0, 1.0, c_pp=2) == 2 * full


def test_cylinder_pfa_is_integrated_plate_energy():
    # int dx of -pi^2/(1440 d(x)^3) with the parabolic gap d = a + x^2/(2R)
    from scipy import integrate

    a, R = 0.3, 2.0
    val, _ = integrate.quad(lambda x: -math.pi**2 / 1440 / (a + x * x / (2 * R)) ** 3, -np.inf, np.inf,
                            epsrel=1e-12)
    assert pfa_cylinder_zeroth(a, R) == pytest.approx(val, rel=1e-10)


def test_sphere_pfa_is_integrated_plate_energy():
    from scipy import integrate

    a, R = 0.3, 2.0
    val, _ = integrate.quad(lambda r: -2 * math.pi * r * math.pi**2 / 1440 / (a + r * r / (2 * R)) ** 3,
                            0, np.inf, epsrel=1e-12)
    assert pfa_sphere(a, R) == pytest.approx(val, rel=1e-10)


def test_pfa_validation():
    with pytest.raises(ValueError):
        pfa_sphere(0.0, 1.0)
    with pytest.raises(ValueError):
        PfaModel(c_pp=3)
    with pytest.raises(ValueError):
        PfaModel(variant="second")
    with pytest.raises(ValueError):
        pfa_cylinder_zeroth(1.0, 1.0, normalization="other")


def test_constants():
    assert SPHERE_ASYMPTOTE == pytest.approx(1.84788, abs=5e-6)
    assert SEMICLASSICAL_SLOPE < 0 < OPTICAL_SLOPE


def test_normalize():
    assert normalize(-2.0, -2.0).value == 1.0
    assert normalize(-4.0, -2.0).value == 2.0
    r = EnergyResult(-0.3, 0.01, {"a": 1.0, "R": 20.0})
    p = normalize(r, -0.15)
    assert p == CurvePoint(0.05, 2.0, pytest.approx(0.01 / 0.15)) or (
        p.x == 0.05 and p.value == 2.0 and p.err == pytest.approx(0.01 / 0.15))
    with pytest.raises(ValueError):
        normalize(1.0, 0.0)


def test_curve_validation():
    with pytest.raises(ValueError):
        Curve([0.2, 0.1], [1, 1], [0, 0])
    with pytest.raises(ValueError):
        Curve([0.1, 0.2], [1, 1], [0, -1])
    c = Curve.from_points([CurvePoint(0.2, 1.1, 0.1), CurvePoint(0.1, 1.0, 0.1)])
    assert list(c.x) == [0.1, 0.2]


def _synthetic(c1=0.35, c2=-1.92, err=1e-9):
    x = np.array([0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.08, 0.1, 0.2])
    return Curve(x, 1 + c1 * x + c2 * x * x, np.full(x.size, err))


def test_fit_exact_recovery():
    f = fit_constrained_quadratic(_synthetic())
    assert f.c1 == pytest.approx(0.35, abs=1e-10)
    assert f.c2 == pytest.approx(-1.92, abs=1e-10)
    assert f.dof == 5 and f.chi2 < 1e-6
    assert f.p(0.0) == 1.0 and f.band(0.0) == 0.0
    assert np.allclose(f.cov, f.cov.T)
    assert np.all(np.linalg.eigvalsh(f.cov) >= 0)


def test_fit_covariance_is_weighted_inverse():
    # unit-weight design: cov = (A^T W A)^-1 with W = 1/err^2
    c = _synthetic(err=0.01)
    f = fit_constrained_quadratic(c)
    sel = c.x < 0.1
    A = np.stack([c.x[sel], c.x[sel] ** 2], axis=1)
    want = np.linalg.inv(A.T @ A / 0.01**2)
    assert np.allclose(f.cov, want, rtol=1e-8)


def test_fit_statistics():
    # noisy data: coefficients within their errors, chi2 ~ dof
    rng = np.random.default_rng(1)
    x = np.linspace(0.002, 0.098, 40)
    err = np.full(x.size, 0.002)
    hits, chis = 0, []
    for _ in range(200):
        v = 1 + 0.35 * x - 1.92 * x * x + rng.normal(0, err)
        f = fit_constrained_quadratic(Curve(x, v, err))
        hits += abs(f.c1 - 0.35) < 2 * math.sqrt(f.cov[0, 0])
        chis.append(f.chi2)
    assert 0.9 < hits / 200 <= 1
    assert np.mean(chis) == pytest.approx(38, rel=0.1)


def test_fit_underdetermined():
    with pytest.raises(FitError):
        fit_constrained_quadratic(Curve([0.01, 0.02], [1.0, 1.0], [0.1, 0.1]))
    with pytest.raises(FitError):
        fit_constrained_quadratic(Curve([0.01, 0.02, 0.03], [1.0, 1.0, 1.0], [0.1, 0.0, 0.1]))
    with pytest.raises(FitError):
        fit_constrained_quadratic(_synthetic(), x_max=0.0015)


def test_reference_band():
    x = np.geomspace(1e-6, 0.1, 50)
    want = 0.19 * x * np.sqrt(1 - 137.2 * x + 5125 * x * x)
    assert np.allclose(REFERENCE_FIT.band(x), want, rtol=1e-12)
    assert REFERENCE_FIT.band(1e-9) / 1e-9 == pytest.approx(0.19, rel=1e-6)
    assert REFERENCE_FIT.cov[0, 0] == pytest.approx(0.19**2)
    assert REFERENCE_FIT.p(0.05) == pytest.approx(1.0127, abs=1e-4)


def test_fit_result_validation():
    with pytest.raises(ValueError):
        FitResult(0, 0, [[1, 0.5], [0.4, 1]])
    with pytest.raises(ValueError):
        FitResult(0, 0, [[1, 2], [2, 1]])


def test_linear_bound_oracle():
    # worldline 1 + 0.35 x against 1 - x/3 with half-width (0.001/2) v:
    # 1 + 0.35 x - 0.0005 (1 + 0.35 x) = 1 - x/3
    lin = FitResult(0.35, 0.0, np.zeros((2, 2)))
    b = pfa_validity_bound(lin, 0.001, "halfwidth")
    want = 0.0005 / (0.35 + 1 / 3 - 0.0005 * 0.35)
    assert b.threshold == pytest.approx(want, rel=2e-6)
    assert b.threshold == pytest.approx(0.000732, rel=2e-3)
    assert b.convention == "halfwidth" and b.half_width == pytest.approx(0.0005, rel=1e-3)
    b2 = pfa_validity_bound(lin, 0.002, "halfwidth")
    assert b2.threshold / b.threshold == pytest.approx(2.0, rel=1e-3)


def test_stat_convention_uses_curve_errors():
    # constant error 0.0005 away from the exactly known x = 0 anchor
    x = np.geomspace(1e-4, 0.1, 60)
    c = Curve(x, 1 + 0.35 * x, np.where(x < 2e-4, 0.0005 * x / 2e-4, 0.0005))
    b = pfa_validity_bound(c, 0.001, "stat")
    assert b.threshold == pytest.approx(0.0005 / (0.35 + 1 / 3), rel=1e-5)
    assert b.source == "curve"


def test_reference_fit_bounds():
    b1 = pfa_validity_bound(REFERENCE_FIT, 0.001, "halfwidth")
    assert b1.threshold == pytest.approx(7.3e-4, rel=0.02)
    b2 = pfa_validity_bound(REFERENCE_FIT, 0.01, "halfwidth")
    assert 5.7e-3 <= b2.threshold <= 9.4e-3
    b3 = pfa_validity_bound(REFERENCE_FIT, 0.01, "stat")
    assert 5.7e-3 <= b3.threshold <= 9.4e-3
    assert b3.convention == "stat"


def test_stat_bound_without_overlap():
    # the reference band is narrower than 0.1% near x = 0
    with pytest.raises(BoundError):
        pfa_validity_bound(REFERENCE_FIT, 0.001, "stat")


def test_bound_never_separates():
    flat = FitResult(-1 / 3, 0.0, np.zeros((2, 2)))
    with pytest.raises(BoundError):
        pfa_validity_bound(flat, 0.01, "halfwidth")


def test_bound_validation():
    with pytest.raises(ValueError):
        pfa_validity_bound(REFERENCE_FIT, 0.01, "full")
    with pytest.raises(ValueError):
        pfa_validity_bound(REFERENCE_FIT, -0.01)


@given(st.lists(st.floats(0.0005, 0.05), min_size=2, max_size=5, unique=True),
       st.sampled_from(["halfwidth", "stat"]))
def test_bound_monotone_in_tolerance(ts, conv):
    prev = 0.0
    for t in sorted(ts):
        try:
            b = pfa_validity_bound(REFERENCE_FIT, t, conv)
        except BoundError:
            assert prev == 0.0
            continue
        assert b.threshold >= prev * (1 - 2e-6)
        prev = b.threshold
