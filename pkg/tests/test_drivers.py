import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qexp_bsde.drivers import (DRIVER_PRESETS, DriverSpec, RegularizationIndex, check_agamma, check_structure,
                               driver_from_config, driver_partials, exp_utility_driver, inf_convolve, j_gamma,
                               lipschitz_driver, linear_driver, qexp_saturating_driver, regularize, sample_points,
                               sup_convolve, truncate_phi)
from qexp_bsde.errors import ConfigError, DomainError, SaturationError
from qexp_bsde.levy import MarkSpec

MARKS = MarkSpec([0.5, -0.3], [1.0, 0.5])


def _pts(n=300, n_marks=2, radius=3.0, seed=0):
    p = sample_points(n, n_marks=n_marks, radius=radius, seed=seed)
    return p["t"], p["x"], p["y"], p["z"], p["psi"]


def test_j_gamma_values():
    assert j_gamma(1.0, 0.0) == 0.0
    # series (γu^2)/2 + γ^2 u^3/6 near zero
    u = 1e-6
    assert j_gamma(2.0, u) == pytest.approx(u**2 + (4 / 6) * u**3, rel=1e-12)
    assert j_gamma(1.0, 1.0) == pytest.approx(math.e - 2, rel=1e-15)
    with pytest.raises(SaturationError):
        j_gamma(1.0, 1e4)


@settings(max_examples=100, deadline=None)
@given(g=st.floats(0.1, 3), a=st.floats(-4, 4), b=st.floats(-4, 4))
def test_j_gamma_nonnegative_and_convex(g, a, b):
    ja, jb, jm = j_gamma(g, a), j_gamma(g, b), j_gamma(g, 0.5 * (a + b))
    assert ja >= 0 and jb >= 0
    assert jm <= 0.5 * (ja + jb) + 1e-12 * (1 + ja + jb)


def test_truncation_examples():
    assert truncate_phi(2, 1.0) == 1.0
    assert truncate_phi(2, 5.0) == 3.0
    assert truncate_phi(2, -5.0) == -3.0
    with pytest.raises(DomainError):
        truncate_phi(0, 1.0)


@settings(max_examples=100, deadline=None)
@given(m=st.integers(1, 10), a=st.floats(-30, 30), b=st.floats(-30, 30))
def test_truncation_odd_monotone_bounded(m, a, b):
    fa, fb = truncate_phi(m, a), truncate_phi(m, b)
    assert truncate_phi(m, -a) == -fa
    assert abs(fa) <= m + 1
    if a <= b:
        assert fa <= fb
    assert abs(fa - fb) <= abs(a - b) * (1 + 1e-12)


@pytest.mark.parametrize("drv", [qexp_saturating_driver(1.0, 0.5, 0.2, MARKS), exp_utility_driver(1.0, 0.5, MARKS),
                                 lipschitz_driver(3.0, marks=MARKS), linear_driver(0.5, 0.3, [0.2], MARKS)],
                         ids=lambda d: d.name)
def test_presets_satisfy_structure(drv):
    t, x, y, z, psi = _pts()
    assert check_structure(drv, t, x, y, z, psi).ok


def test_structure_detects_undeclared_growth():
    bad = DriverSpec(lambda t, x, y, z, p: 2.0 * np.sum(np.atleast_2d(z) ** 2, axis=-1), 0.0, 1.0, 0.0)
    t, x, y, z, psi = _pts(n_marks=0)
    assert not check_structure(bad, t, x, y, z, psi).ok


def test_agamma_certificates():
    t, x, y, z, psi = _pts()
    psi2 = _pts(seed=1)[4]
    unit = MarkSpec([1.0, -1.5], [1.0, 0.5])
    rep = check_agamma(exp_utility_driver(1.0, 0.5, unit), t, x, y, z, psi, psi2)
    assert rep.ok and -1 < rep.c1 < 0 < rep.c2
    # small marks with a wide psi range push C1 below -1: the certificate is range dependent
    assert not check_agamma(exp_utility_driver(1.0, 0.5, MARKS), t, x, y, z, psi, psi2).ok
    assert check_agamma(exp_utility_driver(1.0, 0.5, MARKS), t, x, y, z, 0.1 * psi, 0.1 * psi2).ok
    assert check_agamma(lipschitz_driver(3.0, marks=unit), t, x, y, z, psi, psi2).ok
    with pytest.raises(DomainError):
        check_agamma(DriverSpec(lambda *a: 0.0, 0.0, 1.0, 0.0), t, x, y, z, psi, psi2)


def test_inf_convolution_closed_form_oracle():
    drv = qexp_saturating_driver(gamma=1.0)
    z = np.array([[0.5], [2.0], [-3.0]])
    psi = np.zeros((3, 0))
    # Huber function: z^2/2 below n, n|z| - n^2/2 beyond
    out = inf_convolve(drv, 1, 0.0, np.zeros((3, 1)), np.zeros(3), z, psi)
    np.testing.assert_allclose(out, [0.125, 1.5, 2.5], atol=1e-14)
    assert np.all(sup_convolve(drv, 1, 0.0, np.zeros((3, 1)), np.zeros(3), z, psi) == 0.0)


def test_regularized_driver_cascade_order():
    t, x, y, z, psi = _pts()
    base = exp_utility_driver(1.0, 0.5, MARKS)
    f = {nm: regularize(base, RegularizationIndex(*nm, 5))(t, x, y, z, psi) for nm in [(1, 1), (4, 1), (1, 4)]}
    assert np.all(f[(4, 1)] >= f[(1, 1)] - 1e-12)  # increasing in n
    assert np.all(f[(1, 4)] <= f[(1, 1)] + 1e-12)  # decreasing in m


def test_regularized_lipschitz_driver_is_unchanged():
    t, x, y, z, psi = _pts(radius=1.0)
    base = lipschitz_driver(3.0, marks=MARKS)
    reg = regularize(base, RegularizationIndex(3, 3, 10))
    np.testing.assert_allclose(reg(t, x, y, z, psi), base(t, x, y, z, psi), atol=1e-9)


def test_partials_fd_fallback_matches_analytic():
    t, x, y, z, psi = _pts(radius=1.0)
    drv = qexp_saturating_driver(1.0, 0.5, 0.2, MARKS)
    exact = driver_partials(drv, 0.3, x, y, z, psi)
    fd = driver_partials(replace(drv, grad=None), 0.3, x, y, z, psi)
    for key in ("z", "psi"):
        np.testing.assert_allclose(fd[key], exact[key], atol=1e-6)


def test_driver_from_config():
    drv = driver_from_config({"preset": "lipschitz", "params": {"L": 2.0, "marks": {"sizes": [0.5], "rates": [1.0]}}})
    assert drv.z_lipschitz == 2.0 and drv.marks.n_marks == 1
    with pytest.raises(ConfigError, match=r"driver\.preset"):
        driver_from_config({"preset": "nope"})
    with pytest.raises(ConfigError, match=r"driver\.params"):
        driver_from_config({"preset": "zero", "params": {"bogus": 1}})
    assert set(DRIVER_PRESETS) >= {"zero", "cole_hopf", "exp_utility"}
