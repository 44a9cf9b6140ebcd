"""Command-line entry points.

Every artifact is a JSON document or a CSV table. Each one carries the SHA-256
hash of the canonical JSON of the inputs that produced it. Nothing time-dependent
is written, so reruns with the same inputs give byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .control import (
    CostSpec,
    FirstEntry,
    FixedTime,
    PolicySpec,
    Threshold,
    ComparisonReport,
    adversarial_suite,
    compare_policies,
    default_solution,
    dominance_check,
)
from .exceptions import ConfigError, SeqEstimError
from .filter import (
    Constant,
    Feedback,
    TimeFunction,
    ensemble_chunks,
    simulate_indexed_path,
    time_change,
    variance_identity_check,
)
from .prior import Gaussian, TwoPoint, prior_from_dict
from .stopping import (
    StoppingSolution,
    bernoulli_threshold,
    first_entry_time,
    gaussian_tau_star,
    smooth_fit_shoot,
    solve_value_function,
)
from .widder import posterior_summary, psi

log = logging.getLogger("seqestim")

VERIFY_SEED = 0


# --------------------------------------------------------------------------- artifact helpers


def config_hash(obj) -> str:
    canon = json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)
    return hashlib.sha256(canon.encode()).hexdigest()


def _clean(obj):
    # JSON has no inf/nan; write them as null
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def dump_json(obj: dict, chash: str) -> str:
    doc = dict(_clean(obj))
    doc["config_hash"] = chash
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def dump_csv(header, rows, chash: str) -> str:
    buf = io.StringIO()
    buf.write(f"# config_hash={chash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _emit(text: str, out: str | None):
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _load_json(path: str, what: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(what, f"file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(what, f"invalid JSON: {e}") from None


# --------------------------------------------------------------------------- config validation


def _get(d: dict, path: str, kind=float, positive=False, default=None, required=True):
    cur = d
    for part in path.split("."):
        if not isinstance(cur, dict) or part not in cur:
            if required:
                raise ConfigError(path, "missing")
            return default
        cur = cur[part]
    try:
        val = kind(cur)
    except (TypeError, ValueError):
        raise ConfigError(path, f"expected {kind.__name__}, got {cur!r}") from None
    if kind is int and val != cur:
        raise ConfigError(path, f"expected an integer, got {cur!r}")
    if positive and not val > 0:
        raise ConfigError(path, f"must be positive, got {cur!r}")
    return val


def parse_prior(d, path="prior"):
    if not isinstance(d, dict):
        raise ConfigError(path, "expected an object")
    try:
        return prior_from_dict(d)
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(path, str(e)) from None


def parse_cost(d, path="cost"):
    if not isinstance(d, dict):
        raise ConfigError(path, "expected an object")
    try:
        return CostSpec.from_dict(d)
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(path, str(e)) from None


def parse_sim(cfg: dict) -> dict:
    if "sim" not in cfg:
        raise ConfigError("sim", "missing")
    return {
        "dt": _get(cfg, "sim.dt", float, positive=True),
        "horizon": _get(cfg, "sim.horizon", float, positive=True),
        "n_paths": _get(cfg, "sim.n_paths", int, positive=True),
        "seed": _get(cfg, "sim.seed", int),
    }


def parse_solver(cfg: dict) -> dict | None:
    if "solver" not in cfg:
        return None
    out = {}
    for key, kind in (("s_max", float), ("nx", int), ("ns", int)):
        v = _get(cfg, f"solver.{key}", kind, positive=True, required=False)
        if v is not None:
            out[key] = v
    return out


def parse_policy(d, path):
    if not isinstance(d, dict) or "kind" not in d:
        raise ConfigError(f"{path}.kind", "missing")
    kind = d["kind"]
    try:
        if kind in ("constant", "full_bang"):
            return Constant(float(d.get("u0", 1.0)))
        if kind == "time_function":
            return TimeFunction(d["times"], d["values"])
        if kind == "uncertainty_feedback":
            lo = float(d.get("u_min", 0.25))
            var0 = float(d["var0"])
            return Feedback(lambda st: np.clip(np.asarray(st.v) / var0, lo, 1.0), lo,
                            d.get("label", "feedback"))
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(path, str(e)) from None
    raise ConfigError(f"{path}.kind", f"unknown policy kind {kind!r}")


def parse_stop(d, path, solution_factory):
    if not isinstance(d, dict) or "kind" not in d:
        raise ConfigError(f"{path}.kind", "missing")
    kind = d["kind"]
    if kind == "first_entry":
        return FirstEntry(solution_factory(), d.get("label", "first_entry"))
    if kind == "fixed":
        return FixedTime(_get(d, "t", float))
    if kind == "threshold":
        return Threshold(_get(d, "a", float, positive=True))
    raise ConfigError(f"{path}.kind", f"unknown stop rule {kind!r}")


# --------------------------------------------------------------------------- subcommands


def cmd_widder_eval(args) -> int:
    spec = _load_json(args.prior, "prior")
    mu = parse_prior(spec)
    s = posterior_summary(mu, args.theta, args.zeta)
    inputs = {"prior": spec, "theta": args.theta, "zeta": args.zeta}
    _emit(dump_json({"F": s.f, "G": s.g, "H": s.h}, config_hash(inputs)), args.out)
    return 0


def _grid_arg(text: str, name: str) -> np.ndarray:
    """``lo:hi:n`` for an evenly spaced grid, or a comma separated list."""
    try:
        if ":" in text:
            lo, hi, n = text.split(":")
            return np.linspace(float(lo), float(hi), int(n))
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise ConfigError(name, f"cannot parse grid {text!r}") from None


def cmd_psi_grid(args) -> int:
    spec = _load_json(args.prior, "prior")
    mu = parse_prior(spec)
    s = _grid_arg(args.s_grid, "s_grid")
    x = _grid_arg(args.x_grid, "x_grid")
    S, X = np.meshgrid(s, x, indexing="ij")
    P = psi(mu, S, X)
    inputs = {"prior": spec, "s_grid": s.tolist(), "x_grid": x.tolist()}
    rows = zip(S.ravel(), X.ravel(), np.ravel(P))
    _emit(dump_csv(["s", "x", "psi"], rows, config_hash(inputs)), args.out)
    return 0


def simulate_table(cfg: dict):
    """Rows of the ``simulate`` CSV (and the time-changed table, if requested)."""
    mu = parse_prior(cfg.get("prior"), "prior") if "prior" in cfg else None
    if mu is None:
        raise ConfigError("prior", "missing")
    sim = parse_sim(cfg)
    policy = parse_policy(cfg.get("policy", {"kind": "full_bang"}), "policy")
    stride = _get(cfg, "sim.record_every", int, positive=True, default=1, required=False)
    s_grid = cfg["sim"].get("s_checkpoints")
    rows, tc_rows = [], []
    for idx, xs, res in ensemble_chunks(mu, policy, sim["dt"], sim["horizon"], sim["n_paths"], sim["seed"]):
        k = res["t"].shape[-1]
        cols = np.arange(0, k, stride)
        if cols[-1] != k - 1:
            cols = np.append(cols, k - 1)
        u_full = np.concatenate((res["u"], res["u"][:, -1:]), axis=1)
        t = np.broadcast_to(res["t"], res["a"].shape)
        for r, p in enumerate(idx):
            for j in cols:
                rows.append((int(p), t[r, j], u_full[r, j], res["a"][r, j], res["z"][r, j],
                             res["xhat"][r, j], res["v"][r, j]))
    if s_grid is not None:
        s_pts = np.asarray(s_grid, dtype=float)
        for p in range(sim["n_paths"]):
            path = simulate_indexed_path(mu, policy, sim["dt"], sim["horizon"], sim["seed"], p)
            tc = time_change(path)
            q = np.interp(s_pts, tc.s, tc.q, right=np.nan)
            b = np.interp(s_pts, tc.s, tc.b, right=np.nan)
            tc_rows.extend((p, s, qq, bb) for s, qq, bb in zip(s_pts, q, b))
    return rows, tc_rows


def cmd_simulate(args) -> int:
    cfg = _load_json(args.config, "config")
    rows, tc_rows = simulate_table(cfg)
    chash = config_hash(cfg)
    _emit(dump_csv(["path", "t", "u", "a", "z", "xhat", "v"], rows, chash), args.out)
    if tc_rows:
        out = args.out_time_change or (str(Path(args.out).with_suffix("")) + "_time_change.csv")
        _emit(dump_csv(["path", "s", "q_s", "b_s"], tc_rows, chash), out)
    return 0


def cmd_solve(args) -> int:
    spec = _load_json(args.prior, "prior")
    mu = parse_prior(spec)
    sol = solve_value_function(mu, args.c, args.s_max, args.nx, args.ns)
    inputs = {"prior": spec, "c": args.c, "s_max": args.s_max, "nx": args.nx, "ns": args.ns}
    _emit(dump_json(sol.to_dict(), config_hash(inputs)), args.out)
    return 0


def load_solution(path: str) -> StoppingSolution:
    d = _load_json(path, "sol")
    try:
        return StoppingSolution.from_dict(d)
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError("sol", f"malformed solution: {e}") from None


def cmd_boundary(args) -> int:
    d = _load_json(args.sol, "sol")
    sol = load_solution(args.sol)
    rows = [(s, a, b) for s, a, b in sol.boundary_table()]
    _emit(dump_csv(["s", "a_minus", "a_plus"], rows, d.get("config_hash", config_hash(d))), args.out)
    return 0


def build_comparison(cfg: dict) -> ComparisonReport:
    mu = parse_prior(cfg.get("prior"), "prior") if "prior" in cfg else None
    if mu is None:
        raise ConfigError("prior", "missing")
    if "cost" not in cfg:
        raise ConfigError("cost", "missing")
    cost = parse_cost(cfg["cost"])
    sim = parse_sim(cfg)
    solver = parse_solver(cfg)
    sol_cache = []

    def solution():
        if not sol_cache:
            sol_cache.append(default_solution(mu, cost.c_reduced, solver))
        return sol_cache[0]

    specs = []
    for i, p in enumerate(cfg.get("policies", [])):
        path = f"policies[{i}]"
        if not isinstance(p, dict) or "id" not in p:
            raise ConfigError(f"{path}.id", "missing")
        specs.append(PolicySpec(str(p["id"]), parse_policy(p.get("policy"), f"{path}.policy"),
                                parse_stop(p.get("stop"), f"{path}.stop", solution)))
    suite = cfg.get("suite")
    if suite is not None:
        if suite.get("name") != "adversarial":
            raise ConfigError("suite.name", f"unknown suite {suite.get('name')!r}")
        tau_ref = _get(cfg, "suite.tau_ref", float, required=False)
        if tau_ref is None:
            if isinstance(mu, Gaussian):
                tau_ref = gaussian_tau_star(mu.var, cost.c_reduced)
            else:
                pilot = compare_policies(mu, cost, [], sim["n_paths"], sim["dt"], sim["horizon"],
                                         sim["seed"], reference=solution())
                tau_ref = pilot.rows[0]["mean_tau"]
        specs.extend(adversarial_suite(mu, solution(), tau_ref))
    checkpoints = cfg.get("checkpoints")
    rep = compare_policies(mu, cost, specs, sim["n_paths"], sim["dt"], sim["horizon"], sim["seed"],
                           reference=solution(), checkpoints=checkpoints)
    return rep


def cmd_compare(args) -> int:
    cfg = _load_json(args.config, "config")
    rep = build_comparison(cfg)
    _emit(dump_json(rep.to_dict(), config_hash(cfg)), args.out)
    return 0


def load_report(path: str) -> tuple[ComparisonReport, str]:
    d = _load_json(path, "report")
    try:
        rep = ComparisonReport.from_dict(d)
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError("report", f"malformed report: {e}") from None
    return rep, d.get("config_hash", config_hash(d))


def cmd_dominance(args) -> int:
    rep, chash = load_report(args.report)
    if args.ref not in rep.survival:
        raise ConfigError("ref", f"no policy {args.ref!r} in report")
    res = dominance_check(rep, args.ref, args.n_se)
    rows = [(r["competitor"], r["t"], r["surv_ref"], r["surv_comp"], r["verdict"]) for r in res.table]
    _emit(dump_csv(["competitor", "t", "surv_ref", "surv_comp", "verdict"], rows, chash), args.out)
    return 0 if res.passed else 1


# --------------------------------------------------------------------------- verify


def gaussian_checks(seed: int = VERIFY_SEED) -> list[dict]:
    """Deterministic checks against the closed forms for a Gaussian prior."""
    checks = []
    mu, c = Gaussian(0.0, 1.0), 0.25
    tau = gaussian_tau_star(1.0, c)
    ns = 2000
    sol = solve_value_function(mu, c, 2.0, 801, ns)
    ds = sol.s_grid[1] - sol.s_grid[0]
    entry = sol.entry_s(0.0)
    checks.append({"name": "gaussian_boundary", "value": entry, "target": tau,
                   "tol": 2 * ds, "passed": abs(entry - tau) <= 2 * ds})
    checks.append({"name": "gaussian_v0", "value": sol.v0, "target": -0.25,
                   "tol": 1e-3, "passed": abs(sol.v0 + 0.25) <= 1e-3})
    dt = 1e-3
    _, red = gaussian_tau_star(1.0, c, u0=0.5)
    path = simulate_indexed_path(mu, Constant(0.5), dt, 2 * red, seed, 0)
    t_hit = path.t[first_entry_time(path, sol)]
    checks.append({"name": "gaussian_scaling", "value": t_hit, "target": 4 * tau,
                   "tol": dt, "passed": abs(t_hit - 4 * tau) <= dt and abs(red - 4 * tau) <= 1e-12})
    est = variance_identity_check(mu, Constant(1.0), 1.0, 200, dt, seed)
    dev = float(np.max(np.abs(est.values - 1.0)))
    checks.append({"name": "gaussian_identity", "value": est.estimate, "target": 1.0,
                   "tol": 1e-9, "passed": dev <= 1e-9})
    return checks


def bernoulli_checks(seed: int = VERIFY_SEED) -> list[dict]:
    """Two-solver threshold agreement and the variance identity for a two-point prior."""
    checks = []
    beta, c, nx = 1.0, 0.1, 4000
    a_vi = bernoulli_threshold(0.5, beta, c, nx)
    a_sh = smooth_fit_shoot(beta, c)
    dx = 2 * beta / (nx - 1)
    checks.append({"name": "bernoulli_threshold", "value": a_vi, "target": a_sh, "tol": 2 * dx,
                   "passed": abs(a_vi - a_sh) <= 2 * dx and 0 <= a_vi < beta})
    est = variance_identity_check(TwoPoint(0.5, beta), Constant(1.0), 2.0, 10_000, 1e-2, seed)
    checks.append({"name": "bernoulli_identity", "value": est.estimate, "target": 1.0,
                   "tol": 3 * est.se, "passed": abs(est.z_score) <= 3})
    return checks


SUITES = {"gaussian": gaussian_checks, "bernoulli": bernoulli_checks}


def run_verify(suite: str, seed: int = VERIFY_SEED) -> dict:
    names = list(SUITES) if suite == "all" else [suite]
    checks = []
    for n in names:
        checks.extend(SUITES[n](seed))
    return {"suite": suite, "seed": seed, "checks": checks, "passed": all(c["passed"] for c in checks)}


def cmd_verify(args) -> int:
    res = run_verify(args.suite, args.seed)
    for c in res["checks"]:
        log.info("%s %s: %.10g vs %.10g (tol %.3g)", "PASS" if c["passed"] else "FAIL",
                 c["name"], c["value"], c["target"], c["tol"])
    _emit(dump_json(res, config_hash({"suite": args.suite, "seed": args.seed})), args.out)
    return 0 if res["passed"] else 1


# --------------------------------------------------------------------------- run


def cmd_run(args) -> int:
    cfg = _load_json(args.config, "config")
    tasks = cfg.get("tasks")
    if not isinstance(tasks, list) or not tasks:
        raise ConfigError("tasks", "expected a non-empty list")
    outputs = cfg.get("outputs", {})
    if not isinstance(outputs, dict) or "dir" not in outputs:
        raise ConfigError("outputs.dir", "missing")
    out_dir = Path(outputs["dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg)
    status = 0
    for i, task in enumerate(tasks):
        if task == "simulate":
            rows, tc_rows = simulate_table(cfg)
            (out_dir / "paths.csv").write_text(
                dump_csv(["path", "t", "u", "a", "z", "xhat", "v"], rows, chash))
            if tc_rows:
                (out_dir / "time_change.csv").write_text(dump_csv(["path", "s", "q_s", "b_s"], tc_rows, chash))
        elif task == "solve":
            mu = parse_prior(cfg.get("prior"), "prior")
            if "cost" not in cfg:
                raise ConfigError("cost", "missing")
            c = parse_cost(cfg["cost"]).c_reduced
            solver = parse_solver(cfg) or {}
            for key in ("s_max", "nx", "ns"):
                if key not in solver:
                    raise ConfigError(f"solver.{key}", "missing")
            sol = solve_value_function(mu, c, solver["s_max"], solver["nx"], solver["ns"])
            (out_dir / "solution.json").write_text(dump_json(sol.to_dict(), chash))
            (out_dir / "boundary.csv").write_text(
                dump_csv(["s", "a_minus", "a_plus"], list(sol.boundary_table()), chash))
        elif task == "compare":
            rep = build_comparison(cfg)
            (out_dir / "report.json").write_text(dump_json(rep.to_dict(), chash))
            dom = dominance_check(rep)
            rows = [(r["competitor"], r["t"], r["surv_ref"], r["surv_comp"], r["verdict"]) for r in dom.table]
            (out_dir / "dominance.csv").write_text(
                dump_csv(["competitor", "t", "surv_ref", "surv_comp", "verdict"], rows, chash))
        elif task == "verify":
            suite = cfg.get("verify", {}).get("suite", "all")
            if suite not in SUITES and suite != "all":
                raise ConfigError("verify.suite", f"unknown suite {suite!r}")
            seed = _get(cfg, "sim.seed", int)
            res = run_verify(suite, seed)
            (out_dir / "verify.json").write_text(dump_json(res, chash))
            if not res["passed"]:
                status = 1
        else:
            raise ConfigError(f"tasks[{i}]", f"unknown task {task!r}")
    return status


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="seqestim", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("widder-eval", help="F, G, H at one point")
    p.add_argument("--prior", required=True)
    p.add_argument("--theta", type=float, required=True)
    p.add_argument("--zeta", type=float, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_widder_eval)

    p = sub.add_parser("psi-grid", help="posterior variance on an (s, x) grid")
    p.add_argument("--prior", required=True)
    p.add_argument("--s-grid", required=True, help="lo:hi:n or comma separated values")
    p.add_argument("--x-grid", required=True, help="lo:hi:n or comma separated values")
    p.add_argument("--out")
    p.set_defaults(func=cmd_psi_grid)

    p = sub.add_parser("simulate", help="simulate filter paths")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--out-time-change")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("solve", help="solve the stopping problem")
    p.add_argument("--prior", required=True)
    p.add_argument("--c", type=float, required=True)
    p.add_argument("--s-max", type=float, required=True)
    p.add_argument("--nx", type=int, required=True)
    p.add_argument("--ns", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("boundary", help="boundary table of a solution")
    p.add_argument("--sol", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_boundary)

    p = sub.add_parser("compare", help="Monte Carlo policy comparison")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("dominance", help="survival-curve dominance table")
    p.add_argument("--report", required=True)
    p.add_argument("--ref", default="reference")
    p.add_argument("--n-se", type=float, default=3.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_dominance)

    p = sub.add_parser("verify", help="golden checks; exit 0 iff all pass")
    p.add_argument("--suite", choices=["gaussian", "bernoulli", "all"], default="all")
    p.add_argument("--seed", type=int, default=VERIFY_SEED)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("run", help="run the tasks listed in a config file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_run)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except SeqEstimError as e:
        print(f"{args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
