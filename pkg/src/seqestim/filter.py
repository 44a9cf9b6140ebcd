"""Simulation of the controlled observation model and its exact Bayesian filter.

Observations follow ``dY = X u dt + dW``. Controls are frozen over each
``dt`` cell, so the sufficient statistic ``a = int u^2 dt``, ``z = int u dY`` is
updated exactly and the posterior mean/variance are read off the tilted prior
(no Euler step of the filter SDE is involved).

Each path index ``p`` draws X and its Brownian increments from its own stream
derived from ``(seed, p)``, so results do not depend on batching and different
policies see common random numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .exceptions import ClockStall, PolicyRange
from .prior import Gaussian, PriorMeasure
from .widder import mean_and_var


# --------------------------------------------------------------------------- policies


class ControlPolicy:
    """A rule producing observation intensities in ``[u_min, 1]``."""

    name = "policy"
    open_loop = True

    @property
    def u_min(self) -> float:
        raise NotImplementedError

    def schedule(self, t_left: np.ndarray) -> np.ndarray:
        """Intensities on cells starting at ``t_left`` (open-loop policies only)."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


def _check_u(u, u_min, who):
    u = np.asarray(u, dtype=float)
    if np.any(~np.isfinite(u)) or np.any(u > 1.0) or np.any(u < u_min) or np.any(u <= 0):
        bad = u[(u > 1.0) | (u < u_min) | (u <= 0) | ~np.isfinite(u)]
        raise PolicyRange(f"{who} emitted u={bad.flat[0]!r} outside [{u_min}, 1]")
    return u


@dataclass(frozen=True)
class Constant(ControlPolicy):
    u0: float = 1.0
    open_loop = True

    def __post_init__(self):
        _check_u(self.u0, 0.0, "Constant")

    @property
    def name(self):
        return "full_bang" if self.u0 == 1.0 else f"const_{self.u0:g}"

    @property
    def u_min(self):
        return float(self.u0)

    def schedule(self, t_left):
        return np.full(np.shape(t_left), float(self.u0))

    def to_dict(self):
        return {"kind": "constant", "u0": float(self.u0)}


def FullBang() -> Constant:
    """The policy ``u = 1`` at all times."""
    return Constant(1.0)


@dataclass(frozen=True, eq=False)
class TimeFunction(ControlPolicy):
    """Piecewise-constant ``u(t) = values[i]`` on ``[times[i], times[i+1])``; ``times[0] == 0``."""

    times: Sequence[float]
    values: Sequence[float]
    open_loop = True

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or t.size == 0:
            raise ValueError("times and values must be 1-d and of equal length")
        if t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ValueError("times must start at 0 and increase strictly")
        _check_u(v, 0.0, "TimeFunction")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @property
    def name(self):
        return "time_function"

    @property
    def u_min(self):
        return float(np.min(self.values))

    def schedule(self, t_left):
        t_left = np.asarray(t_left, dtype=float)
        # nudge so cell starts that land on a breakpoint up to rounding pick the new piece
        idx = np.searchsorted(self.times, t_left * (1 + 1e-12) + 1e-12, side="right") - 1
        return self.values[np.clip(idx, 0, self.values.size - 1)]

    def to_dict(self):
        return {"kind": "time_function", "times": self.times.tolist(), "values": self.values.tolist()}


@dataclass(frozen=True, eq=False)
class Feedback(ControlPolicy):
    """Markov feedback ``u = rule(state)``; ``rule`` maps a vectorized FilterState to intensities.

    Only ``u >= u_min > 0`` is accepted, which implies the positive long-run
    average intensity that admissible controls require.
    """

    rule: Callable[["FilterState"], np.ndarray]
    u_min: float = 0.01
    label: str = "feedback"
    open_loop = False

    def __post_init__(self):
        if not 0.0 < self.u_min <= 1.0:
            raise ValueError("u_min must lie in (0, 1]")

    @property
    def name(self):
        return self.label

    def __call__(self, state):
        u = np.broadcast_to(np.asarray(self.rule(state), dtype=float), np.shape(state.a))
        return _check_u(u, self.u_min, self.label)

    def to_dict(self):
        return {"kind": "feedback", "label": self.label, "u_min": float(self.u_min)}


# --------------------------------------------------------------------------- records


@dataclass(frozen=True)
class FilterState:
    t: float | np.ndarray
    a: float | np.ndarray
    z: float | np.ndarray
    xhat: float | np.ndarray
    v: float | np.ndarray


@dataclass
class PathRecord:
    """One trajectory. ``u``/``innovations`` are per cell, the rest per grid time."""

    x_true: float
    dt: float
    t: np.ndarray
    u: np.ndarray
    a: np.ndarray
    z: np.ndarray
    xhat: np.ndarray
    v: np.ndarray
    innovations: np.ndarray
    m_series: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.u.size

    def state(self, k: int) -> FilterState:
        return FilterState(float(self.t[k]), float(self.a[k]), float(self.z[k]),
                           float(self.xhat[k]), float(self.v[k]))

    @property
    def states(self) -> list[FilterState]:
        return [self.state(k) for k in range(self.t.size)]


@dataclass
class TimeChangedPath:
    s: np.ndarray
    T: np.ndarray
    q: np.ndarray
    b: np.ndarray


# --------------------------------------------------------------------------- simulation


def path_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for path ``index``; identical for identical ``(seed, index)``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


def n_cells(horizon: float, dt: float) -> int:
    if not (dt > 0 and horizon > 0):
        raise ValueError("dt and horizon must be positive")
    if dt > horizon * (1 + 1e-12):
        raise ValueError("dt must not exceed the horizon")
    return int(math.ceil(horizon / dt - 1e-9))


def run_filter(mu: PriorMeasure, policy: ControlPolicy, dt: float, x, dW,
               start: FilterState | None = None) -> dict[str, np.ndarray]:
    """Advance the filter for a batch of paths.

    ``x`` has shape ``(n,)`` and ``dW`` shape ``(n, k)``. Returns per-path arrays
    ``u, dy`` of shape ``(n, k)`` and ``t, a, z, xhat, v`` of shape ``(n, k + 1)``,
    where column 0 repeats ``start``.
    """
    x = np.asarray(x, dtype=float)
    dW = np.atleast_2d(np.asarray(dW, dtype=float))
    n, k = dW.shape
    if start is None:
        t0 = 0.0
        a0 = np.zeros(n)
        z0 = np.zeros(n)
        g0, h0 = mean_and_var(mu, a0, z0)
    else:
        t0 = float(np.max(start.t))
        a0 = np.broadcast_to(np.asarray(start.a, dtype=float), (n,)).copy()
        z0 = np.broadcast_to(np.asarray(start.z, dtype=float), (n,)).copy()
        g0 = np.broadcast_to(np.asarray(start.xhat, dtype=float), (n,)).copy()
        h0 = np.broadcast_to(np.asarray(start.v, dtype=float), (n,)).copy()
    t = t0 + dt * np.arange(k + 1)

    if policy.open_loop:
        useq = _check_u(policy.schedule(t[:-1]), policy.u_min, policy.name)
        u = np.broadcast_to(useq, (n, k))
        dy = x[:, None] * u * dt + dW
        a = np.empty((n, k + 1))
        z = np.empty((n, k + 1))
        a[:, 0] = a0
        z[:, 0] = z0
        a[:, 1:] = a0[:, None] + np.cumsum(useq * useq * dt)[None, :]
        z[:, 1:] = z0[:, None] + np.cumsum(u * dy, axis=1)
        xhat, v = mean_and_var(mu, a, z)
        xhat[:, 0] = g0
        v[:, 0] = h0
        u = np.ascontiguousarray(u)
    else:
        u = np.empty((n, k))
        dy = np.empty((n, k))
        a = np.empty((n, k + 1))
        z = np.empty((n, k + 1))
        xhat = np.empty((n, k + 1))
        v = np.empty((n, k + 1))
        a[:, 0], z[:, 0], xhat[:, 0], v[:, 0] = a0, z0, g0, h0
        for j in range(k):
            uj = policy(FilterState(t[j], a[:, j], z[:, j], xhat[:, j], v[:, j]))
            u[:, j] = uj
            dy[:, j] = x * uj * dt + dW[:, j]
            a[:, j + 1] = a[:, j] + uj * uj * dt
            z[:, j + 1] = z[:, j] + uj * dy[:, j]
            xhat[:, j + 1], v[:, j + 1] = mean_and_var(mu, a[:, j + 1], z[:, j + 1])
    return {"t": np.broadcast_to(t, (n, k + 1)), "u": u, "dy": dy, "a": a, "z": z,
            "xhat": xhat, "v": v}


def draw_inputs(mu: PriorMeasure, rng: np.random.Generator, n_steps: int, dt: float):
    """Hidden value first, then the Brownian increments, from one stream."""
    x = float(mu.sample(rng))
    dW = rng.standard_normal(n_steps) * math.sqrt(dt)
    return x, dW


def _record(x, dt, res, row=0) -> PathRecord:
    u = res["u"][row]
    dN = res["dy"][row] - res["xhat"][row, :-1] * u * dt
    m_series = np.concatenate(([0.0], np.cumsum(u * dN)))
    return PathRecord(float(x), float(dt), res["t"][row].copy(), u.copy(), res["a"][row].copy(),
                      res["z"][row].copy(), res["xhat"][row].copy(), res["v"][row].copy(),
                      dN, m_series)


def simulate_path(mu: PriorMeasure, policy: ControlPolicy, dt: float, horizon: float,
                  rng: np.random.Generator, x_true: float | None = None,
                  dW: np.ndarray | None = None) -> PathRecord:
    """Simulate one path of the observation model and its filter.

    ``x_true`` and ``dW`` override the random draws (debugging and golden tests);
    when they are given the stream is not consumed for that part.
    """
    k = n_cells(horizon, dt)
    if x_true is None:
        x_true = float(mu.sample(rng))
    if dW is None:
        dW = rng.standard_normal(k) * math.sqrt(dt)
    dW = np.asarray(dW, dtype=float)
    if dW.shape != (k,):
        raise ValueError(f"dW must have {k} increments")
    res = run_filter(mu, policy, dt, np.array([x_true]), dW[None, :])
    return _record(x_true, dt, res)


def simulate_indexed_path(mu, policy, dt, horizon, seed, index) -> PathRecord:
    """Path ``index`` of the ensemble generated from ``seed``."""
    return simulate_path(mu, policy, dt, horizon, path_rng(seed, index))


def ensemble_chunks(mu, policy, dt, horizon, n_paths, seed, chunk=256):
    """Yield ``(indices, x, result)`` batches; ``result`` is the ``run_filter`` dict."""
    k = n_cells(horizon, dt)
    for lo in range(0, n_paths, chunk):
        idx = np.arange(lo, min(n_paths, lo + chunk))
        xs = np.empty(idx.size)
        dW = np.empty((idx.size, k))
        for r, p in enumerate(idx):
            xs[r], dW[r] = draw_inputs(mu, path_rng(seed, p), k, dt)
        yield idx, xs, run_filter(mu, policy, dt, xs, dW)


def simulate_ensemble(mu, policy, dt, horizon, n_paths, seed, chunk=256) -> list[PathRecord]:
    out = []
    for _, xs, res in ensemble_chunks(mu, policy, dt, horizon, n_paths, seed, chunk):
        out.extend(_record(xs[r], dt, res, r) for r in range(xs.size))
    return out


# --------------------------------------------------------------------------- time change


def time_change(path: PathRecord, ds: float | None = None, s_max: float | None = None) -> TimeChangedPath:
    """Re-sample the path on the clock ``s = a(t)``.

    ``T(s)`` inverts the piecewise-linear clock; ``q(s) = xhat(T(s))`` and
    ``b(s) = M(T(s))`` are read off by linear interpolation in ``t``.
    """
    a = path.a
    if np.any(np.diff(a) <= 0):
        raise ClockStall("the intensity clock a(t) is not strictly increasing")
    ds = path.dt if ds is None else float(ds)
    top = a[-1] if s_max is None else min(float(s_max), a[-1])
    s = ds * np.arange(int(math.floor(top / ds * (1 + 1e-12))) + 1)
    s = s[s <= a[-1] * (1 + 1e-12)]
    T = np.interp(s, a, path.t)
    return TimeChangedPath(s, T, np.interp(T, path.t, path.xhat), np.interp(T, path.t, path.m_series))


# --------------------------------------------------------------------------- costs


def _h(cost):
    return cost.h if hasattr(cost, "h") else cost


def evaluate_cost(path: PathRecord, tau: int, cost) -> float:
    """Realized ``(X - xhat(tau))**2 + sum h(u) dt`` up to grid index ``tau``."""
    if not 0 <= tau <= path.n_steps:
        raise ValueError("stop index outside the path")
    running = float(np.sum(_h(cost)(path.u[:tau])) * path.dt)
    return (path.x_true - path.xhat[tau]) ** 2 + running


def psi_sq_cell_integrals(mu: PriorMeasure, a: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Per-cell ``int v^2 da``.

    Exact when the posterior variance depends on the clock only (Gaussian prior,
    where ``d v / d a = -v^2``); trapezoid rule otherwise.
    """
    if isinstance(mu, Gaussian):
        return v[..., :-1] - v[..., 1:]
    return 0.5 * (v[..., :-1] ** 2 + v[..., 1:] ** 2) * np.diff(a, axis=-1)


@dataclass
class IdentityEstimate:
    estimate: float
    se: float
    target: float
    n_paths: int
    values: np.ndarray = field(repr=False)

    @property
    def z_score(self) -> float:
        if self.se == 0:
            return 0.0 if self.estimate == self.target else math.inf
        return (self.estimate - self.target) / self.se


def variance_identity_check(mu: PriorMeasure, policy: ControlPolicy, tau_rule, n_paths: int,
                            dt: float, seed: int, horizon: float | None = None,
                            chunk: int = 256) -> IdentityEstimate:
    """Monte Carlo estimate of ``E[V(tau) + int_0^tau V^2 dA]``, to be compared with Var(X).

    ``tau_rule`` is a fixed time or a callable mapping a ``run_filter`` batch to
    stop indices.
    """
    if callable(tau_rule):
        if horizon is None:
            raise ValueError("a horizon is required for a random stop rule")
        rule = tau_rule
    else:
        tau_time = float(tau_rule)
        if tau_time == 0.0:
            vals = np.full(n_paths, mu.variance())
            return IdentityEstimate(mu.variance(), 0.0, mu.variance(), n_paths, vals)
        horizon = tau_time if horizon is None else horizon
        k = int(round(tau_time / dt))
        rule = lambda res: np.full(res["a"].shape[0], k)  # noqa: E731
    vals = np.empty(n_paths)
    for idx, _, res in ensemble_chunks(mu, policy, dt, horizon, n_paths, seed, chunk):
        tau = np.asarray(rule(res))
        cells = psi_sq_cell_integrals(mu, res["a"], res["v"])
        cum = np.concatenate((np.zeros((idx.size, 1)), np.cumsum(cells, axis=1)), axis=1)
        r = np.arange(idx.size)
        vals[idx] = res["v"][r, tau] + cum[r, tau]
    se = float(vals.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
    return IdentityEstimate(float(vals.mean()), se, mu.variance(), n_paths, vals)
