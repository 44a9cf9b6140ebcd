"""Optimal stopping of the posterior-mean diffusion.

On the intensity clock ``s`` the posterior mean moves as ``dQ = psi(s, Q) dB``
and stopping at ``(s, x)`` forgoes the running reward ``psi^2 - c``. The value

    v(s, x) = inf_tau E[ int_0^tau (c - psi^2(s + r, Q_r)) dr ]

solves the obstacle problem ``max(-(d_s v + psi^2/2 d_xx v + c - psi^2), v) = 0``.
It is computed backward in ``s`` with implicit steps whose obstacle constraint
is enforced exactly at every step (policy iteration on the tridiagonal system).
When ``psi`` does not depend on ``s`` the stationary problem is solved directly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import solve_banded

from .exceptions import GridUnstable, HorizonTooShort, NeverStops, NoRoot
from .prior import PriorMeasure, TwoPoint, prior_from_dict
from .widder import psi

log = logging.getLogger(__name__)

EPS_STOP = 1e-9
HOMOGENEITY_TOL = 1e-12
EDGE_SIGMAS = 8.0
EDGE_INSET = 1e-6
MAX_POLICY_ITERS = 500


@dataclass
class StoppingSolution:
    """Grid value function and stopping region.

    For a stationary solution ``values`` has a single row valid for every ``s``.
    ``boundary[k] = (a_minus, a_plus)`` are the outer edges of the continuation
    set on row ``k`` (NaN when that row is entirely stopping).
    """

    s_grid: np.ndarray
    x_grid: np.ndarray
    values: np.ndarray
    stop_mask: np.ndarray
    boundary: np.ndarray
    c: float
    v0: float
    prior: dict
    stationary: bool = False
    eps_stop: float = EPS_STOP
    meta: dict = field(default_factory=dict)

    @property
    def s_max(self) -> float:
        return float(self.s_grid[-1])

    @property
    def dx(self) -> float:
        return float(self.x_grid[1] - self.x_grid[0])

    def value_at(self, s, x):
        """Bilinear interpolation of ``v``; points off the x-grid count as stopped."""
        s = np.asarray(s, dtype=float)
        x = np.asarray(x, dtype=float)
        s, x = np.broadcast_arrays(s, x)
        xg = self.x_grid
        fx = (x - xg[0]) / (xg[1] - xg[0])
        inside = (fx >= 0) & (fx <= xg.size - 1)
        fxc = np.clip(fx, 0, xg.size - 1)
        ix = np.minimum(np.floor(fxc).astype(int), xg.size - 2)
        wx = fxc - ix
        if self.stationary:
            row = self.values[0]
            val = (1 - wx) * row[ix] + wx * row[ix + 1]
        else:
            sg = self.s_grid
            fs = np.clip(s / (sg[1] - sg[0]), 0, sg.size - 1)
            js = np.minimum(np.floor(fs).astype(int), sg.size - 2)
            ws = fs - js
            V = self.values
            val = ((1 - ws) * ((1 - wx) * V[js, ix] + wx * V[js, ix + 1])
                   + ws * ((1 - wx) * V[js + 1, ix] + wx * V[js + 1, ix + 1]))
        val = np.where(inside, val, 0.0)
        return float(val) if val.ndim == 0 else val

    def in_stop_region(self, s, x):
        return np.asarray(self.value_at(s, x)) >= -self.eps_stop

    def entry_s(self, x: float) -> float:
        """Smallest grid ``s`` at which ``(s, x)`` is in the stopping region."""
        if self.stationary:
            return 0.0 if self.in_stop_region(0.0, x) else math.inf
        hit = np.flatnonzero(self.in_stop_region(self.s_grid, np.full(self.s_grid.size, x)))
        return float(self.s_grid[hit[0]]) if hit.size else math.inf

    def boundary_table(self) -> np.ndarray:
        """Rows ``(s, a_minus, a_plus)``."""
        s = self.s_grid[:1] if self.stationary else self.s_grid
        return np.column_stack((s, self.boundary[:, 0], self.boundary[:, 1]))

    def to_dict(self) -> dict:
        return {
            "prior": self.prior,
            "c": self.c,
            "stationary": self.stationary,
            "eps_stop": self.eps_stop,
            "s_grid": self.s_grid.tolist(),
            "x_grid": self.x_grid.tolist(),
            "shape": list(self.values.shape),
            "values": self.values.ravel().tolist(),
            "boundary": [[_nan_to_none(a), _nan_to_none(b)] for a, b in self.boundary],
            "v0": self.v0,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StoppingSolution":
        values = np.asarray(d["values"], dtype=float).reshape(d["shape"])
        eps = float(d.get("eps_stop", EPS_STOP))
        bnd = np.array([[np.nan if a is None else a, np.nan if b is None else b]
                        for a, b in d["boundary"]], dtype=float).reshape(-1, 2)
        return cls(np.asarray(d["s_grid"], dtype=float), np.asarray(d["x_grid"], dtype=float),
                   values, values >= -eps, bnd, float(d["c"]), float(d["v0"]), d["prior"],
                   bool(d["stationary"]), eps, d.get("meta", {}))

    def prior_measure(self) -> PriorMeasure:
        return prior_from_dict(self.prior)


def _nan_to_none(v):
    return None if not np.isfinite(v) else float(v)


def default_x_grid(mu: PriorMeasure, nx: int) -> np.ndarray:
    lo, hi = mu.support_interval()
    if math.isfinite(lo) and math.isfinite(hi):
        inset = EDGE_INSET * 0.5 * (hi - lo)
        return np.linspace(lo + inset, hi - inset, nx)
    half = EDGE_SIGMAS * mu.std()
    m = mu.mean()
    lo = max(lo, m - half)
    hi = min(hi, m + half)
    return np.linspace(lo, hi, nx)


def _solve_obstacle(diffusion, b, v_init, dx, shift):
    """Solve ``max(A v - b, v) = 0`` on interior nodes, zero Dirichlet edges.

    ``A = shift * I - diag(diffusion) * D2`` with ``D2`` the 3-point Laplacian.
    Policy iteration: each node either obeys its continuation row or sits on
    the obstacle ``v = 0``; the choice is updated until it repeats.
    """
    n = b.size
    k = diffusion / (dx * dx)
    lower = -k
    diag = shift + 2.0 * k
    upper = -k

    def residual(v):
        av = diag * v
        av[1:] += lower[1:] * v[:-1]
        av[:-1] += upper[:-1] * v[1:]
        return av - b

    v = v_init.copy()
    cont = residual(v) > v
    for _ in range(MAX_POLICY_ITERS):
        ab = np.zeros((3, n))
        ab[1] = np.where(cont, diag, 1.0)
        up = np.where(cont[:-1], upper[:-1], 0.0)
        lo = np.where(cont[1:], lower[1:], 0.0)
        ab[0, 1:] = up
        ab[2, :-1] = lo
        rhs = np.where(cont, b, 0.0)
        v = solve_banded((1, 1), ab, rhs, check_finite=False)
        if not np.all(np.isfinite(v)):
            raise GridUnstable("non-finite values in the obstacle solve")
        new = residual(v) > v
        if np.array_equal(new, cont):
            return np.minimum(v, 0.0)
        cont = new
    raise GridUnstable("policy iteration did not settle")


def _row_boundary(x, v, eps):
    """Outer edges of the continuation set, refined by extrapolating sqrt(-v) to zero."""
    cont = np.flatnonzero(v < -eps)
    if cont.size == 0:
        return (np.nan, np.nan)
    r = np.sqrt(np.maximum(-v, 0.0))
    dx = x[1] - x[0]

    def edge(i, step):
        j = i - step  # neighbour further inside the continuation set
        out = x[i] + step * 0.5 * dx
        if 0 <= j < x.size and r[j] > r[i]:
            out = x[i] + step * r[i] * dx / (r[j] - r[i])
        lo, hi = sorted((x[i], x[min(max(i + step, 0), x.size - 1)]))
        return float(np.clip(out, lo, hi))

    return (edge(cont[0], -1), edge(cont[-1], +1))


def solve_value_function(mu: PriorMeasure, c: float, s_max: float, nx: int, ns: int,
                         x_grid: np.ndarray | None = None) -> StoppingSolution:
    """Solve the stopping problem for prior ``mu`` and observation cost rate ``c``.

    ``ns`` is the number of implicit steps on ``[0, s_max]``. Raises
    HorizonTooShort when stopping is not yet optimal everywhere at ``s_max``.
    """
    if not c > 0:
        raise ValueError("c must be positive")
    if nx < 5 or ns < 1 or not s_max > 0:
        raise ValueError("need nx >= 5, ns >= 1 and s_max > 0")
    x = default_x_grid(mu, nx) if x_grid is None else np.asarray(x_grid, dtype=float)
    dx = x[1] - x[0]
    s = np.linspace(0.0, float(s_max), ns + 1)
    inner = slice(1, x.size - 1)
    m = mu.mean()

    psi_first = np.asarray(psi(mu, np.zeros(x.size), x))
    psi_last = np.asarray(psi(mu, np.full(x.size, s[-1]), x))
    stationary = bool(np.max(np.abs(psi_first - psi_last)) < HOMOGENEITY_TOL)

    if stationary:
        p2 = psi_first[inner] ** 2
        v_in = _solve_obstacle(0.5 * p2, c - p2, np.zeros(p2.size), dx, 0.0)
        # one more pseudo-time step as a stationarity check
        again = _solve_obstacle(0.5 * p2, v_in + (c - p2), v_in, dx, 1.0)
        change = float(np.max(np.abs(again - v_in))) if v_in.size else 0.0
        if change >= 1e-9:
            raise GridUnstable(f"stationary solution moved by {change:.3g} under a further step")
        values = np.zeros((1, x.size))
        values[0, inner] = v_in
        meta = {"stationary_change": change}
    else:
        if np.any(psi_last[inner] ** 2 > c):
            raise HorizonTooShort(
                f"psi^2(s_max, x) reaches {np.max(psi_last[inner] ** 2):.4g} > c={c}; increase s_max")
        psi_grid = np.asarray(psi(mu, np.repeat(s[:, None], x.size, axis=1),
                                  np.broadcast_to(x, (s.size, x.size))))
        values = np.zeros((s.size, x.size))
        ds = s[1] - s[0]
        for k in range(ns - 1, -1, -1):
            p2 = psi_grid[k, inner] ** 2
            b = values[k + 1, inner] + ds * (c - p2)
            # divide through by ds so the obstacle test is scale-free
            values[k, inner] = _solve_obstacle(0.5 * p2, b / ds, values[k + 1, inner], dx, 1.0 / ds)
        meta = {}

    stop = values >= -EPS_STOP
    bnd = np.array([_row_boundary(x, row, EPS_STOP) for row in values]).reshape(-1, 2)
    v0 = float(np.interp(m, x, values[0])) if x[0] <= m <= x[-1] else 0.0
    if bool(np.all(stop)):
        log.warning("immediate stopping is optimal everywhere (c=%g); boundary is empty", c)
    return StoppingSolution(s, x, values, stop, bnd, float(c), v0, mu.to_dict(), stationary,
                            EPS_STOP, meta)


def first_entry_indices(a, xhat, sol: StoppingSolution) -> np.ndarray:
    """First grid index at which ``(a, xhat)`` lies in the stopping region; -1 if never.

    ``a`` and ``xhat`` have shape ``(n_paths, n_times)``.
    """
    a = np.atleast_2d(a)
    xhat = np.atleast_2d(xhat)
    inside = sol.in_stop_region(np.minimum(a, sol.s_max), xhat)
    hit = inside.any(axis=1)
    return np.where(hit, np.argmax(inside, axis=1), -1)


def first_entry_time(path, sol: StoppingSolution) -> int:
    """Stop index of the first entry of ``(a(t), xhat(t))`` into the stopping region."""
    idx = int(first_entry_indices(path.a[None, :], path.xhat[None, :], sol)[0])
    if idx < 0:
        raise NeverStops("path ended before entering the stopping region")
    return idx


def gaussian_tau_star(sigma2: float, c: float, u0: float | None = None):
    """Deterministic optimal time ``(1/sqrt(c) - 1/sigma2)^+`` for a Gaussian prior.

    With ``u0`` given, returns ``(tau_star, tau_star / u0**2)``, the second entry
    being the stopping time in the original clock under the constant control ``u0``.
    """
    if not (sigma2 > 0 and c > 0):
        raise ValueError("sigma2 and c must be positive")
    tau = max(0.0, 1.0 / math.sqrt(c) - 1.0 / sigma2)
    if u0 is None:
        return tau
    if not 0 < u0 <= 1:
        raise ValueError("u0 must lie in (0, 1]")
    return tau, tau / u0**2


def bernoulli_boundaries(p: float, beta: float, c: float, nx: int = 4000) -> tuple[float, float]:
    """``(a_minus, a_plus)`` of the stationary continuation interval for a two-point prior."""
    mu = TwoPoint(p, beta)
    if c >= beta**4:
        return (0.0, 0.0)
    sol = solve_value_function(mu, c, 1.0, nx, 1)
    a_lo, a_hi = sol.boundary[0]
    if not np.isfinite(a_lo):
        return (0.0, 0.0)
    if abs(a_lo + a_hi) > sol.dx:
        log.warning("asymmetric continuation interval (%g, %g) for p=%g", a_lo, a_hi, p)
    return float(a_lo), float(a_hi)


def bernoulli_threshold(p: float, beta: float, c: float, nx: int = 4000) -> float:
    """Half-width ``a`` of the continuation interval ``(-a, a)``; 0 means stop at once."""
    a_lo, a_hi = bernoulli_boundaries(p, beta, c, nx)
    return 0.5 * (a_hi - a_lo)


def _shoot(a, beta, c):
    """Integrate ``v'' = 2 (1 - c / psi^2)`` from ``x = a`` (v = v' = 0) back to 0."""

    def rhs(x, y):
        p2 = (beta * beta - x * x) ** 2
        return [y[1], 2.0 * (1.0 - c / p2)]

    sol = solve_ivp(rhs, (a, 0.0), [0.0, 0.0], method="DOP853", rtol=1e-12, atol=1e-14)
    return sol.y[0, -1], sol.y[1, -1]


def smooth_fit_shoot(beta: float, c: float, tol: float = 1e-12, return_value: bool = False):
    """Symmetric free boundary ``a`` of the two-point stationary problem by shooting.

    Starting from smooth fit ``v(a) = v'(a) = 0`` the ODE is integrated to the
    centre, and ``a`` is bisected until the symmetry condition ``v'(0) = 0`` holds.
    With ``return_value`` also returns ``v(0)``.
    """
    if not (beta > 0 and c > 0):
        raise ValueError("beta and c must be positive")
    if c >= beta**4:
        return (0.0, 0.0) if return_value else 0.0
    lo = math.sqrt(beta * beta - math.sqrt(c))  # running cost changes sign here
    if _shoot(lo, beta, c)[1] >= 0:
        raise NoRoot("shooting residual is not negative at the sign change of the running cost")
    gap = beta - lo
    hi = None
    for _ in range(60):
        gap *= 0.5
        if _shoot(beta - gap, beta, c)[1] > 0:
            hi = beta - gap
            break
        lo = beta - gap
    if hi is None:
        raise NoRoot("no sign change of the shooting residual below beta")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _shoot(mid, beta, c)[1] > 0:
            hi = mid
        else:
            lo = mid
    a = 0.5 * (lo + hi)
    return (a, _shoot(a, beta, c)[0]) if return_value else a
