"""Finite-difference residuals of the backward equations satisfied by F, G, H and psi."""

import numpy as np

from seqestim.widder import posterior_mean_G, posterior_var_H, psi, transform_F

THETA = np.linspace(0.1, 3.0, 30)
ZETA = np.linspace(-2.0, 2.0, 41)


def _rel(terms):
    r = sum(terms)
    scale = sum(np.abs(t) for t in terms) + 1e-300
    return float(np.max(np.abs(r) / scale))


def _derivs(f, th, ze, h):
    v = f(th, ze)
    d_th = (f(th + h, ze) - f(th - h, ze)) / (2 * h)
    d_ze = (f(th, ze + h) - f(th, ze - h)) / (2 * h)
    d_zz = (f(th, ze + h) - 2 * v + f(th, ze - h)) / h**2
    return v, d_th, d_ze, d_zz


def residuals(mu, h=1e-3):
    """Max relative residuals on the (theta, zeta) grid and the sign-condition extremes."""
    th, ze = np.meshgrid(THETA, ZETA, indexing="ij")
    g = posterior_mean_G(mu, th, ze)
    hh = posterior_var_H(mu, th, ze)
    out = {}

    _, ft, _, fzz = _derivs(lambda t, z: transform_F(mu, t, z), th, ze, h)
    out["heat"] = _rel([ft, 0.5 * fzz])

    _, gt, gz, gzz = _derivs(lambda t, z: posterior_mean_G(mu, t, z), th, ze, h)
    out["burgers"] = _rel([gt, 0.5 * gzz, g * gz])

    _, ht, hz, hzz = _derivs(lambda t, z: posterior_var_H(mu, t, z), th, ze, h)
    out["variance"] = _rel([ht, 0.5 * hzz, hh**2, g * hz])

    # psi on (s, x) with x = G(s, zeta), i.e. at points inside the support
    p = lambda s, x: psi(mu, s, x)  # noqa: E731
    v, ps, _, pxx = _derivs(p, th, g, h)
    out["psi"] = _rel([ps, v**2, 0.5 * v**2 * pxx])
    out["max_ds_psi"] = float(ps.max())
    out["min_dxx_psi"] = float(pxx.min())
    return out
