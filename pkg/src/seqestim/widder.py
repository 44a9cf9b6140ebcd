"""Exponential tilting of the prior and the posterior fields derived from it.

For an accumulated clock ``theta >= 0`` and weighted observation ``zeta`` the
prior is tilted by ``exp(b * zeta - b**2 * theta / 2)``. The normalizer ``F`` of
that tilt is the Widder transform; the tilted mean ``G`` and variance ``H`` are
the posterior mean and variance of X, and ``psi(theta, x)`` re-expresses ``H``
in terms of the posterior mean ``x`` instead of ``zeta``.

All functions broadcast over ``theta`` / ``zeta`` (or ``x``) arrays. Atomic priors
are handled in log space with max-exponent subtraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import NoConvergence, OutOfSupport, WidderOverflow
from .prior import Discrete, Gaussian, GridDensity, PriorMeasure, TwoPoint

LOG_FLOAT_MAX = math.log(np.finfo(float).max)
BRACKET_DOUBLINGS = 200
NEWTON_ITERS = 200
# cap on (points x atoms) per vectorized block
_BLOCK = 4_000_000


@dataclass(frozen=True)
class WidderPoint:
    theta: float
    zeta: float

    def __post_init__(self):
        if not (np.isfinite(self.theta) and np.isfinite(self.zeta)):
            raise ValueError("WidderPoint coordinates must be finite")
        if self.theta < 0:
            raise ValueError("theta must be nonnegative")


@dataclass(frozen=True)
class PosteriorSummary:
    f: np.ndarray | float
    g: np.ndarray | float
    h: np.ndarray | float


def _prep(theta, zeta):
    th, ze = np.broadcast_arrays(np.asarray(theta, dtype=float), np.asarray(zeta, dtype=float))
    if np.any(th < 0):
        raise ValueError("theta must be nonnegative")
    return th, ze


def _out(arr, shape):
    arr = arr.reshape(shape)
    return float(arr) if arr.ndim == 0 else arr


def _atomic_fields(mu, th, ze):
    """Return (log F, G, H) for an atomic prior on flattened inputs."""
    b, w = mu.atoms()
    logw = np.log(w)
    th = th.ravel()
    ze = ze.ravel()
    n = th.size
    logf = np.empty(n)
    g = np.empty(n)
    h = np.empty(n)
    step = max(1, _BLOCK // b.size)
    for lo in range(0, n, step):
        sl = slice(lo, min(n, lo + step))
        e = logw + np.multiply.outer(ze[sl], b) - 0.5 * np.multiply.outer(th[sl], b * b)
        k = np.argmax(e, axis=1)
        emax = e[np.arange(e.shape[0]), k]
        p = np.exp(e - emax[:, None])
        s = p.sum(axis=1)
        p /= s[:, None]
        logf[sl] = emax + np.log(s)
        # centre on the dominant atom so saturated tilts keep their precision
        bref = b[k]
        d = b[None, :] - bref[:, None]
        mshift = np.einsum("ij,ij->i", p, d)
        g[sl] = bref + mshift
        h[sl] = np.einsum("ij,ij->i", p, (d - mshift[:, None]) ** 2)
    return logf, g, h


def _gaussian_fields(mu: Gaussian, th, ze):
    s2 = mu.var
    den = 1.0 + s2 * th
    num = mu.m + s2 * ze
    logf = -0.5 * np.log(den) + ((num**2) / den - mu.m**2) / (2.0 * s2)
    return logf, num / den, np.broadcast_to(s2 / den, th.shape).copy()


def _two_point_fields(mu: TwoPoint, th, ze):
    beta, p = mu.beta, mu.p
    # both atoms share b^2, so theta only enters the normalizer
    y = beta * ze + 0.5 * math.log(p / (1.0 - p))
    g = beta * np.tanh(y)
    logf = (np.logaddexp(math.log(p) + beta * ze, math.log1p(-p) - beta * ze)
            - 0.5 * beta * beta * th)
    e = np.exp(-2.0 * np.abs(y))
    h = beta * beta * 4.0 * e / (1.0 + e) ** 2
    return logf, g, h


def _fields(mu, theta, zeta):
    th, ze = _prep(theta, zeta)
    if isinstance(mu, Gaussian):
        logf, g, h = _gaussian_fields(mu, th, ze)
    elif isinstance(mu, TwoPoint):
        logf, g, h = _two_point_fields(mu, th, ze)
    elif mu.is_atomic:
        logf, g, h = _atomic_fields(mu, th, ze)
    else:
        raise TypeError(f"unsupported prior {type(mu).__name__}")
    return np.asarray(logf), np.asarray(g), np.asarray(h), th.shape


def log_transform_F(mu: PriorMeasure, theta, zeta):
    """Natural log of the Widder transform."""
    logf, _, _, shape = _fields(mu, theta, zeta)
    return _out(logf, shape)


def transform_F(mu: PriorMeasure, theta, zeta):
    """Widder transform ``F(theta, zeta) = E[exp(X zeta - X**2 theta / 2)]`` under the prior."""
    logf, _, _, shape = _fields(mu, theta, zeta)
    if np.any(logf > LOG_FLOAT_MAX):
        raise WidderOverflow(f"log F = {np.max(logf):.3g} exceeds the float range")
    return _out(np.exp(logf), shape)


def posterior_mean_G(mu: PriorMeasure, theta, zeta):
    _, g, _, shape = _fields(mu, theta, zeta)
    return _out(g, shape)


def posterior_var_H(mu: PriorMeasure, theta, zeta):
    _, _, h, shape = _fields(mu, theta, zeta)
    return _out(h, shape)


def posterior_summary(mu: PriorMeasure, theta, zeta) -> PosteriorSummary:
    """``F``, ``G`` and ``H`` from a single pass over the tilted prior."""
    logf, g, h, shape = _fields(mu, theta, zeta)
    if np.any(logf > LOG_FLOAT_MAX):
        raise WidderOverflow(f"log F = {np.max(logf):.3g} exceeds the float range")
    return PosteriorSummary(_out(np.exp(logf), shape), _out(g, shape), _out(h, shape))


def mean_and_var(mu: PriorMeasure, theta, zeta):
    """``(G, H)`` as arrays; used on the filter's hot path."""
    _, g, h, shape = _fields(mu, theta, zeta)
    return g.reshape(shape), h.reshape(shape)


def _check_in_support(mu, x):
    lo, hi = mu.support_interval()
    if np.any(x < lo) or np.any(x > hi) or np.any(~np.isfinite(x)):
        raise OutOfSupport(f"posterior mean outside [{lo}, {hi}]")


def invert_G(mu: PriorMeasure, theta, x):
    """Solve ``G(theta, zeta) = x`` for ``zeta``.

    ``zeta -> G(theta, zeta)`` is a strictly increasing bijection onto the open
    support interval, so a bracket is grown from ``[-1, 1]`` by doubling and then
    tightened by Newton steps (slope ``H``) with a bisection fallback.
    """
    th, xx = _prep(theta, x)
    shape = th.shape
    th = th.ravel().copy()
    xx = xx.ravel().copy()
    _check_in_support(mu, xx)
    tol = 1e-10 * np.maximum(1.0, np.abs(xx))

    lo = np.full(xx.size, -1.0)
    hi = np.full(xx.size, 1.0)
    for _ in range(BRACKET_DOUBLINGS):
        glo, _ = mean_and_var(mu, th, lo)
        ghi, _ = mean_and_var(mu, th, hi)
        low_bad = glo > xx
        high_bad = ghi < xx
        if not (low_bad.any() or high_bad.any()):
            break
        width = hi - lo
        lo = np.where(low_bad, lo - width, lo)
        hi = np.where(high_bad, hi + width, hi)
    else:
        raise NoConvergence("could not bracket G^{-1}(x); x is too close to a support endpoint")

    z = 0.5 * (lo + hi)
    active = np.arange(xx.size)
    resid = np.full(xx.size, np.inf)
    for _ in range(NEWTON_ITERS):
        g, h = mean_and_var(mu, th[active], z[active])
        r = g - xx[active]
        resid[active] = np.abs(r)
        za, la, ha = z[active], lo[active], hi[active]
        la = np.where(r < 0, za, la)
        ha = np.where(r > 0, za, ha)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = za - r / h
        use_bisect = ~((newton > la) & (newton < ha)) | ~np.isfinite(newton)
        znew = np.where(use_bisect, 0.5 * (la + ha), newton)
        lo[active], hi[active], z[active] = la, ha, znew
        stalled = np.abs(znew - za) <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(za))
        done = (r == 0) | stalled | (ha - la <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(za)))
        if r.size and np.all(done):
            active = active[:0]
            break
        active = active[~done]
    g, _ = mean_and_var(mu, th, z)
    resid = np.abs(g - xx)
    if np.any(resid > tol):
        raise NoConvergence(f"G^{{-1}} residual {resid.max():.3g} above tolerance")
    return _out(z, shape)


def psi(mu: PriorMeasure, s, x):
    """Posterior variance as a function of the clock ``s`` and posterior mean ``x``."""
    ss, xx = _prep(s, x)
    if isinstance(mu, Gaussian):
        _check_in_support(mu, xx)
        return _out(mu.var / (1.0 + mu.var * ss), ss.shape)
    if isinstance(mu, TwoPoint):
        _check_in_support(mu, xx)
        return _out(mu.beta**2 - xx**2, ss.shape)
    zeta = invert_G(mu, ss, xx)
    return posterior_var_H(mu, ss, zeta)


def posterior_measure(mu: PriorMeasure, theta: float, zeta: float) -> PriorMeasure:
    """The tilted prior, returned in the same family as ``mu``."""
    pt = WidderPoint(float(theta), float(zeta))
    if isinstance(mu, Gaussian):
        s = posterior_summary(mu, pt.theta, pt.zeta)
        return Gaussian(s.g, s.h)
    b, w = mu.atoms()
    e = np.log(w) + b * pt.zeta - 0.5 * b * b * pt.theta
    wt = np.exp(e - e.max())
    wt /= wt.sum()
    if isinstance(mu, TwoPoint):
        return TwoPoint(float(wt[1]), mu.beta)
    if isinstance(mu, Discrete):
        return Discrete(b, wt)
    if isinstance(mu, GridDensity):
        x = mu.nodes
        dens = np.zeros_like(x)
        pos = mu.density > 0
        ep = np.log(mu.density[pos]) + x[pos] * pt.zeta - 0.5 * x[pos] ** 2 * pt.theta
        dens[pos] = np.exp(ep - ep.max())
        return GridDensity(x, dens)
    raise TypeError(f"unsupported prior {type(mu).__name__}")
