import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pde_residuals import residuals
from seqestim.exceptions import NoConvergence, OutOfSupport, WidderOverflow
from seqestim.prior import Discrete, Gaussian, GridDensity, TwoPoint
from seqestim.widder import (
    WidderPoint,
    invert_G,
    log_transform_F,
    mean_and_var,
    posterior_mean_G,
    posterior_measure,
    posterior_summary,
    posterior_var_H,
    psi,
    transform_F,
)


def _direct(mu, theta, zeta):
    b, w = mu.atoms()
    e = w * np.exp(b * zeta - 0.5 * b * b * theta)
    f = e.sum()
    g = (e * b).sum() / f
    return f, g, (e * (b - g) ** 2).sum() / f


def test_gaussian_golden_values(gauss):
    assert transform_F(gauss, 1.0, 0.0) == pytest.approx(1 / math.sqrt(2), rel=1e-14)
    assert transform_F(gauss, 1.0, 2.0) == pytest.approx(math.e / math.sqrt(2), rel=1e-14)
    assert posterior_mean_G(gauss, 1.0, 2.0) == pytest.approx(1.0)
    assert posterior_var_H(gauss, 1.0, 2.0) == pytest.approx(0.5)
    assert psi(gauss, 1.0, 0.3) == pytest.approx(0.5)


def test_gaussian_transform_matches_quadrature():
    mu = Gaussian(0.5, 2.0)
    b = np.linspace(-30, 30, 200_001)
    dens = np.exp(-((b - 0.5) ** 2) / 4) / math.sqrt(4 * math.pi)
    for th, ze in [(1.0, 2.0), (0.3, -1.0), (0.0, 1.5)]:
        ref = np.trapezoid(dens * np.exp(b * ze - b * b * th / 2), b)
        assert transform_F(mu, th, ze) == pytest.approx(ref, rel=1e-10)


def test_two_point_closed_forms(coin):
    z = np.linspace(-3, 3, 13)
    np.testing.assert_allclose(transform_F(coin, 0.7, z), np.cosh(z) * math.exp(-0.35), rtol=1e-13)
    np.testing.assert_allclose(posterior_mean_G(coin, 0.7, z), np.tanh(z), atol=1e-15)
    np.testing.assert_allclose(posterior_var_H(coin, 0.7, z), 1 / np.cosh(z) ** 2, rtol=1e-12)
    x = np.linspace(-0.9, 0.9, 7)
    np.testing.assert_allclose(psi(coin, 2.0, x), 1 - x**2, rtol=1e-14)


@pytest.mark.parametrize("th,ze", [(0.0, 0.0), (0.5, 1.3), (2.0, -0.7), (0.1, 3.0)])
def test_atomic_matches_direct_sum(five_atoms, th, ze):
    s = posterior_summary(five_atoms, th, ze)
    f, g, h = _direct(five_atoms, th, ze)
    assert s.f == pytest.approx(f, rel=1e-13)
    assert s.g == pytest.approx(g, rel=1e-12, abs=1e-14)
    assert s.h == pytest.approx(h, rel=1e-12)


def test_two_point_shortcut_agrees_with_atomic_route():
    tp = TwoPoint(0.3, 1.7)
    disc = Discrete(*tp.atoms())
    th, ze = np.meshgrid(np.linspace(0, 3, 7), np.linspace(-4, 4, 9))
    for a, b in zip(mean_and_var(tp, th, ze), mean_and_var(disc, th, ze)):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-13)
    np.testing.assert_allclose(log_transform_F(tp, th, ze), log_transform_F(disc, th, ze), rtol=1e-12, atol=1e-13)


def test_saturated_tilt_is_stable(coin, five_atoms):
    assert posterior_mean_G(coin, 1.0, 1e3) == 1.0
    assert posterior_var_H(coin, 1.0, 1e3) >= 0.0
    g = posterior_mean_G(five_atoms, 0.1, 1e4)
    assert g == pytest.approx(1.8, abs=1e-15)


def test_overflow_is_reported(gauss):
    with pytest.raises(WidderOverflow):
        transform_F(gauss, 0.0, 40.0)
    assert np.isfinite(log_transform_F(gauss, 0.0, 40.0))


def test_negative_theta_rejected(gauss):
    with pytest.raises(ValueError):
        transform_F(gauss, -0.1, 0.0)
    with pytest.raises(ValueError):
        WidderPoint(-1.0, 0.0)


def test_invert_g_two_point(coin):
    assert invert_G(coin, 1.0, 0.5) == pytest.approx(math.atanh(0.5), rel=1e-12)


def test_invert_g_out_of_support(coin):
    with pytest.raises(OutOfSupport):
        invert_G(coin, 1.0, 1.5)


def test_invert_g_at_endpoint_saturates(coin):
    # tanh reaches 1.0 in floating point, so the endpoint has a finite preimage
    z = invert_G(coin, 1.0, 1.0)
    assert np.isfinite(z) and posterior_mean_G(coin, 1.0, z) == 1.0


def test_invert_g_gaussian_far_tail(gauss):
    with pytest.raises(NoConvergence):
        invert_G(gauss, 0.0, 1e300)


@settings(max_examples=80, deadline=None)
@given(st.floats(0.0, 5.0), st.floats(-0.98, 0.98))
def test_invert_g_roundtrip(theta, frac):
    mu = Discrete([-1.5, -0.5, 0.0, 0.7, 1.8], [0.1, 0.25, 0.3, 0.2, 0.15])
    lo, hi = mu.support_interval()
    x = 0.5 * (lo + hi) + frac * 0.5 * (hi - lo)
    z = invert_G(mu, theta, x)
    assert posterior_mean_G(mu, theta, z) == pytest.approx(x, abs=1e-10)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 4.0), st.floats(-3.0, 3.0))
def test_posterior_mean_monotone_in_zeta(theta, zeta):
    mu = Discrete([-1.0, 0.2, 2.0], [0.3, 0.3, 0.4])
    g0, h0 = mean_and_var(mu, theta, zeta)
    g1, _ = mean_and_var(mu, theta, zeta + 1e-3)
    assert g1 > g0
    assert h0 > 0


def test_psi_is_h_at_inverse(five_atoms):
    z = np.linspace(-2, 2, 9)
    x = posterior_mean_G(five_atoms, 0.8, z)
    np.testing.assert_allclose(psi(five_atoms, 0.8, x), posterior_var_H(five_atoms, 0.8, z), rtol=1e-8)


def test_psi_at_zero_clock_is_prior_variance(five_atoms):
    assert psi(five_atoms, 0.0, five_atoms.mean()) == pytest.approx(five_atoms.variance(), rel=1e-10)


def test_posterior_measure_families(gauss, coin):
    post = posterior_measure(gauss, 1.0, 2.0)
    assert isinstance(post, Gaussian)
    assert (post.m, post.var) == pytest.approx((1.0, 0.5))
    tilted = posterior_measure(coin, 3.0, math.atanh(0.5))
    assert isinstance(tilted, TwoPoint)
    assert tilted.p == pytest.approx(0.75)
    grid = GridDensity(np.linspace(-1, 1, 41), np.ones(41))
    pg = posterior_measure(grid, 0.5, 1.0)
    assert isinstance(pg, GridDensity)
    assert pg.mean() == pytest.approx(posterior_mean_G(grid, 0.5, 1.0), rel=1e-12)


def test_pde_residuals_gaussian():
    r = residuals(Gaussian(0.5, 2.0))
    for key in ("heat", "burgers", "variance", "psi"):
        assert r[key] < 1e-4, key
    assert r["max_ds_psi"] <= 1e-6
    assert r["min_dxx_psi"] >= -2 - 1e-6


def test_pde_residuals_discrete(five_atoms):
    r = residuals(five_atoms)
    for key in ("heat", "burgers", "variance", "psi"):
        assert r[key] < 1e-3, key
    assert r["max_ds_psi"] <= 1e-6
    assert r["min_dxx_psi"] >= -2 - 1e-6
