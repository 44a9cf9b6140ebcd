"""Control costs, the reduction to a constant intensity, and policy comparisons.

A running cost ``h`` on ``(0, 1]`` is reduced to the constant intensity ``u0``
minimizing ``h(u) / u**2``; the stopping problem is then solved on the
intensity clock with ``c = h(u0) / u0**2``. ``compare_policies`` estimates the
expected total cost of (policy, stop rule) pairs by Monte Carlo with common
random numbers: path ``p`` sees the same hidden X and Brownian increments under
every policy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .exceptions import AssumptionFailed, ConfigMismatch, MonotonicityViolation
from .filter import (
    Constant,
    ControlPolicy,
    Feedback,
    FilterState,
    FullBang,
    TimeFunction,
    n_cells,
    path_rng,
    psi_sq_cell_integrals,
    run_filter,
)
from .prior import Gaussian, PriorMeasure, same_prior
from .stopping import StoppingSolution, first_entry_indices, gaussian_tau_star, solve_value_function

ADVERSARIAL_SUITE_VERSION = 1
GRID_TOL = 1e-12


# --------------------------------------------------------------------------- costs


def _u_grid(n=10_001):
    return np.linspace(1.0 / (n - 1), 1.0, n - 1)


def _check_monotone(h, u):
    hv = np.asarray(h(u), dtype=float)
    if np.any(hv <= 0) or not np.all(np.isfinite(hv)):
        raise ValueError("h must be positive and finite on (0, 1]")
    if np.any(np.diff(hv) < -GRID_TOL * np.maximum(1.0, np.abs(hv[1:]))):
        raise MonotonicityViolation("h decreases on the verification grid")
    return hv


def find_u0(h: Callable, resolution: float = 1e-6) -> tuple[float, float]:
    """Minimize ``h(u) / u**2`` over ``(0, 1]``; returns ``(u0, h(u0) / u0**2)``.

    A coarse grid of step 1e-4 is refined around its argmin down to
    ``resolution``. Near-ties (relative 1e-12) go to the largest ``u``.
    """
    u = _u_grid()
    hv = _check_monotone(h, u)
    ratio = hv / u**2

    def pick(uu, rr):
        best = rr.min()
        ties = np.flatnonzero(rr <= best + GRID_TOL * abs(best))
        return int(ties[-1])

    i = pick(u, ratio)
    if i == 0:
        raise AssumptionFailed("h(u)/u^2 keeps decreasing toward u = 0; no minimizer u0 exists")
    step = u[1] - u[0]
    u0 = u[i]
    while step > resolution:
        fine = np.linspace(max(u0 - step, u[0]), min(u0 + step, 1.0), 201)
        step = fine[1] - fine[0]
        hf = np.asarray(h(fine), dtype=float)
        u0 = fine[pick(fine, hf / fine**2)]
    c_red = float(h(np.array([u0]))[0] / u0**2)
    # the condition h(u)/u^2 >= c_red on the full grid
    if np.any(ratio < c_red - GRID_TOL * max(1.0, c_red)):
        raise AssumptionFailed("grid point below the reduced cost rate; refine h")
    return float(u0), c_red


def check_superquadratic(h: Callable, c: float) -> bool:
    """True iff ``h(u) >= c u^2`` (up to 1e-12) on the verification grid."""
    u = _u_grid()
    hv = np.asarray(h(u), dtype=float)
    return bool(np.all(hv >= c * u**2 - GRID_TOL))


@dataclass(frozen=True, eq=False)
class CostSpec:
    """Running cost ``h`` with its reduction ``(u0, c_reduced)``."""

    h: Callable
    name: str
    params: dict = field(default_factory=dict)
    u0: float = field(init=False)
    c_reduced: float = field(init=False)

    def __post_init__(self):
        u0, c_red = find_u0(self.h)
        object.__setattr__(self, "u0", u0)
        object.__setattr__(self, "c_reduced", c_red)

    def __call__(self, u):
        return self.h(u)

    @property
    def is_quadratic(self) -> bool:
        return self.name == "quadratic"

    def to_dict(self) -> dict:
        return {"form": self.name, **self.params, "u0": self.u0, "c_reduced": self.c_reduced}

    @classmethod
    def quadratic(cls, c):
        return cls(lambda u: c * np.asarray(u, dtype=float) ** 2, "quadratic", {"c": c})

    @classmethod
    def linear(cls, c):
        return cls(lambda u: c * np.asarray(u, dtype=float), "linear", {"c": c})

    @classmethod
    def power(cls, c, p):
        if not 0 < p < 2:
            raise ValueError("power cost needs 0 < p < 2")
        return cls(lambda u: c * np.asarray(u, dtype=float) ** p, "power", {"c": c, "p": p})

    @classmethod
    def constant(cls, c):
        return cls(lambda u: np.full(np.shape(u), float(c)), "constant", {"c": c})

    @classmethod
    def tabulated(cls, u_nodes, h_values):
        un = np.asarray(u_nodes, dtype=float)
        hv = np.asarray(h_values, dtype=float)
        if un.ndim != 1 or un.shape != hv.shape or un.size < 2 or np.any(np.diff(un) <= 0):
            raise ValueError("tabulated cost needs increasing nodes with matching values")
        if un[0] <= 0 or un[-1] != 1.0:
            raise ValueError("tabulated nodes must lie in (0, 1] and end at 1")
        if np.any(np.diff(hv) < -GRID_TOL):
            raise MonotonicityViolation("tabulated h decreases")
        return cls(lambda u: np.interp(u, un, hv), "tabulated",
                   {"u": un.tolist(), "h": hv.tolist()})

    @classmethod
    def from_dict(cls, d: dict) -> "CostSpec":
        form = d.get("form")
        if form == "quadratic":
            return cls.quadratic(float(d["c"]))
        if form == "linear":
            return cls.linear(float(d["c"]))
        if form == "power":
            return cls.power(float(d["c"]), float(d["p"]))
        if form == "constant":
            return cls.constant(float(d["c"]))
        if form == "tabulated":
            return cls.tabulated(d["u"], d["h"])
        raise ValueError(f"unknown cost form {form!r}")


# --------------------------------------------------------------------------- stop rules


class StopRule:
    name = "stop"

    def indices(self, res: dict, offset: int, dt: float) -> np.ndarray:
        """First column of the batch ``res`` at which to stop, or -1.

        ``offset`` is the global grid index of column 0.
        """
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class FirstEntry(StopRule):
    """Stop on first entry of ``(a(t), xhat(t))`` into the solved stopping region."""

    solution: StoppingSolution
    label: str = "first_entry"

    @property
    def name(self):
        return self.label

    def indices(self, res, offset, dt):
        return first_entry_indices(res["a"], res["xhat"], self.solution)


@dataclass(frozen=True)
class FixedTime(StopRule):
    t: float

    @property
    def name(self):
        return f"fixed_{self.t:g}"

    def indices(self, res, offset, dt):
        k = int(round(self.t / dt)) - offset
        width = res["a"].shape[1]
        return np.full(res["a"].shape[0], k if 0 <= k < width else -1)


@dataclass(frozen=True)
class Threshold(StopRule):
    """Stop when ``|xhat| >= a``."""

    a: float

    @property
    def name(self):
        return f"threshold_{self.a:g}"

    def indices(self, res, offset, dt):
        hit = np.abs(res["xhat"]) >= self.a
        return np.where(hit.any(axis=1), np.argmax(hit, axis=1), -1)


@dataclass(frozen=True, eq=False)
class PolicySpec:
    id: str
    policy: ControlPolicy
    stop: StopRule


# --------------------------------------------------------------------------- Monte Carlo


@dataclass
class PairResult:
    """Per-path outcomes of one (policy, stop rule) pair."""

    id: str
    tau: np.ndarray  # stop time, inf if the horizon was reached first
    cost: np.ndarray
    running_cost: np.ndarray
    a_tau: np.ndarray
    v_tau: np.ndarray
    reward: np.ndarray  # int_0^tau (c - V^2) dA

    @property
    def never(self) -> int:
        return int(np.sum(~np.isfinite(self.tau)))


def run_pair(mu: PriorMeasure, spec: PolicySpec, cost: CostSpec, n_paths: int, dt: float,
             horizon: float, seed: int, chunk: int = 2048, block: int = 1000) -> PairResult:
    """Simulate ``n_paths`` paths of one pair, streaming in time until every path stops.

    Stopped paths are dropped from the working set; each path owns its stream,
    so this does not disturb the common random numbers of the survivors.
    """
    k_total = n_cells(horizon, dt)
    c_red = cost.c_reduced
    tau = np.full(n_paths, np.inf)
    running = np.zeros(n_paths)
    reward = np.zeros(n_paths)
    a_tau = np.zeros(n_paths)
    v_tau = np.zeros(n_paths)
    err = np.zeros(n_paths)
    sqdt = math.sqrt(dt)
    for lo in range(0, n_paths, chunk):
        live = np.arange(lo, min(n_paths, lo + chunk))
        gens = [path_rng(seed, p) for p in live]
        xs = np.array([float(mu.sample(g)) for g in gens])
        state = None
        offset = 0
        while offset < k_total and live.size:
            width = min(block, k_total - offset)
            dW = np.stack([g.standard_normal(width) for g in gens]) * sqdt
            res = run_filter(mu, spec.policy, dt, xs, dW, start=state)
            hit = np.asarray(spec.stop.indices(res, offset, dt))
            stop_now = hit >= 0
            ncell = np.where(stop_now, hit, width)
            mask = np.arange(width)[None, :] < ncell[:, None]
            running[live] += np.sum(np.where(mask, cost.h(res["u"]), 0.0), axis=1) * dt
            cells = c_red * np.diff(res["a"], axis=1) - psi_sq_cell_integrals(mu, res["a"], res["v"])
            reward[live] += np.sum(np.where(mask, cells, 0.0), axis=1)
            r = np.flatnonzero(stop_now)
            col = hit[r]
            p = live[r]
            tau[p] = (offset + col) * dt
            a_tau[p] = res["a"][r, col]
            v_tau[p] = res["v"][r, col]
            err[p] = xs[r] - res["xhat"][r, col]
            keep = ~stop_now
            offset += width
            live = live[keep]
            xs = xs[keep]
            gens = [g for g, k in zip(gens, keep) if k]
            state = FilterState(res["t"][0, -1], res["a"][keep, -1], res["z"][keep, -1],
                                res["xhat"][keep, -1], res["v"][keep, -1])
        if live.size:
            a_tau[live] = state.a
            v_tau[live] = state.v
            err[live] = xs - state.xhat
    cost_total = err**2 + running
    return PairResult(spec.id, tau, cost_total, running, a_tau, v_tau, reward)


@dataclass
class ComparisonReport:
    rows: list[dict]
    checkpoints: np.ndarray
    survival: dict[str, np.ndarray]
    n_paths: int
    results: dict[str, PairResult] = field(default_factory=dict, repr=False)
    meta: dict = field(default_factory=dict)

    def row(self, pid: str) -> dict:
        for r in self.rows:
            if r["id"] == pid:
                return r
        raise KeyError(pid)

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "n_paths": self.n_paths,
            "survival": {"t": self.checkpoints.tolist(),
                         "curves": {k: v.tolist() for k, v in self.survival.items()}},
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ComparisonReport":
        surv = d["survival"]
        return cls(d["rows"], np.asarray(surv["t"], dtype=float),
                   {k: np.asarray(v, dtype=float) for k, v in surv["curves"].items()},
                   int(d["n_paths"]), meta=d.get("meta", {}))


def _mean_se(x):
    n = x.size
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0


def reference_pair(mu: PriorMeasure, cost: CostSpec, solution: StoppingSolution) -> PolicySpec:
    """Constant intensity ``u0`` stopped on first entry into the reduced problem's region."""
    return PolicySpec("reference", Constant(cost.u0), FirstEntry(solution, "optimal"))


def default_solution(mu: PriorMeasure, c: float, solver: dict | None = None) -> StoppingSolution:
    solver = dict(solver or {})
    if "s_max" not in solver:
        if isinstance(mu, Gaussian):
            solver["s_max"] = gaussian_tau_star(mu.var, c) + 1.0
        else:
            solver["s_max"] = 1.0
    return solve_value_function(mu, c, solver["s_max"], solver.get("nx", 801), solver.get("ns", 1000))


def _check_rule(spec: PolicySpec, mu, cost):
    if isinstance(spec.stop, FirstEntry):
        sol = spec.stop.solution
        if not same_prior(sol.prior_measure(), mu):
            raise ConfigMismatch(f"{spec.id}: stopping solution was built for another prior")
        if not math.isclose(sol.c, cost.c_reduced, rel_tol=1e-9):
            raise ConfigMismatch(f"{spec.id}: solution c={sol.c} but reduced cost is {cost.c_reduced}")


def compare_policies(mu: PriorMeasure, cost: CostSpec, policies: Sequence[PolicySpec], n_paths: int,
                     dt: float, horizon: float, seed: int, reference: StoppingSolution | None = None,
                     include_reference: bool = True, checkpoints=None, solver: dict | None = None,
                     chunk: int = 2048, block: int = 1000) -> ComparisonReport:
    """Monte Carlo comparison of (policy, stop rule) pairs under common random numbers.

    Unless ``include_reference`` is false, the optimal pair (constant ``u0`` with
    first entry into the reduced stopping region) is prepended as ``"reference"``.
    Paths that reach ``horizon`` without stopping are counted in ``n_never``.
    """
    specs = list(policies)
    if include_reference and not any(s.id == "reference" for s in specs):
        sol = reference if reference is not None else default_solution(mu, cost.c_reduced, solver)
        specs.insert(0, reference_pair(mu, cost, sol))
    ids = [s.id for s in specs]
    if len(set(ids)) != len(ids):
        raise ValueError("policy ids must be unique")
    for s in specs:
        _check_rule(s, mu, cost)
    if checkpoints is None:
        checkpoints = np.linspace(0.0, horizon, 51)
    checkpoints = np.asarray(checkpoints, dtype=float)

    rows, survival, results = [], {}, {}
    for s in specs:
        res = run_pair(mu, s, cost, n_paths, dt, horizon, seed, chunk, block)
        m, se = _mean_se(res.cost)
        finite = res.tau[np.isfinite(res.tau)]
        rows.append({
            "id": s.id,
            "policy": s.policy.name,
            "stop_rule": s.stop.name,
            "mean_cost": m,
            "se": se,
            "n_paths": n_paths,
            "n_never": res.never,
            "mean_tau": float(finite.mean()) if finite.size else math.inf,
        })
        survival[s.id] = (res.tau[None, :] > checkpoints[:, None]).mean(axis=1)
        results[s.id] = res
    meta = {"prior": mu.to_dict(), "cost": cost.to_dict(), "dt": dt, "horizon": horizon,
            "seed": seed, "suite_version": ADVERSARIAL_SUITE_VERSION}
    return ComparisonReport(rows, checkpoints, survival, n_paths, results, meta)


def paired_difference(report: ComparisonReport, ref: str, other: str) -> tuple[float, float]:
    """Mean and standard error of the per-path cost difference ``other - ref``."""
    d = report.results[other].cost - report.results[ref].cost
    return _mean_se(d)


@dataclass
class DominanceResult:
    table: list[dict]
    passed: bool
    strict: dict[str, bool]


def dominance_check(report: ComparisonReport, ref: str = "reference", n_se: float = 3.0) -> DominanceResult:
    """Check ``P(tau_ref > t) <= P(tau_comp > t) + n_se * SE`` at every checkpoint.

    SE is the binomial standard error of the difference of the two survival
    estimates. ``strict[comp]`` records whether the reference is faster by more
    than ``n_se`` SE at some checkpoint.
    """
    if ref not in report.survival:
        raise KeyError(f"report has no row {ref!r}")
    n = report.n_paths
    p_ref = report.survival[ref]
    table, strict, ok = [], {}, True
    for comp, p_c in report.survival.items():
        if comp == ref:
            continue
        se = np.sqrt((p_ref * (1 - p_ref) + p_c * (1 - p_c)) / n)
        good = p_ref <= p_c + n_se * se
        strict[comp] = bool(np.any(p_ref < p_c - n_se * se))
        ok &= bool(good.all())
        for t, a, b, g in zip(report.checkpoints, p_ref, p_c, good):
            table.append({"competitor": comp, "t": float(t), "surv_ref": float(a),
                          "surv_comp": float(b), "verdict": "pass" if g else "fail"})
    return DominanceResult(table, ok, strict)


# --------------------------------------------------------------------------- suites


def _uncertainty_feedback(var0: float):
    # observe harder while the posterior is still wide
    return lambda st: np.clip(np.asarray(st.v) / var0, 0.25, 1.0)


def adversarial_suite(mu: PriorMeasure, solution: StoppingSolution, tau_ref: float) -> list[PolicySpec]:
    """The pinned competitor set used to probe optimality of the reference pair.

    ``tau_ref`` scales the fixed-time rules (the deterministic optimal time for
    a Gaussian prior, a typical reference stop time otherwise).
    """
    fe = FirstEntry(solution)
    return [
        PolicySpec("fixed_0", FullBang(), FixedTime(0.0)),
        PolicySpec("fixed_half", FullBang(), FixedTime(0.5 * tau_ref)),
        PolicySpec("fixed_1x", FullBang(), FixedTime(tau_ref)),
        PolicySpec("fixed_2x", FullBang(), FixedTime(2.0 * tau_ref)),
        PolicySpec("const_0.5", Constant(0.5), fe),
        PolicySpec("const_0.25", Constant(0.25), fe),
        PolicySpec("time_varying", TimeFunction([0.0, 1.0], [0.5, 1.0]), fe),
        PolicySpec("feedback", Feedback(_uncertainty_feedback(mu.variance()), 0.25, "feedback"), fe),
    ]
