"""Command-line driver.

Exit codes: 0 success, 2 validation violations, 3 unreadable or malformed
input, 4 Riccati iteration did not converge, 5 a solution, gain pair or
injection is not stabilizing (including a supplied solution that fails the
residual check), 6 a verification check failed.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, jsonfmt
from .errors import (
    GDTREError,
    NoConvergence,
    NoStabilizingClosedLoopSolution,
    NotAdmissible,
    NotStabilizing,
    NotStabilizingGain,
    SingularRcal,
    StructuralError,
    SynthesisFailed,
    UnstablePair,
)
from .game import (
    StrategyPair,
    full_information_value_identity,
    game_value,
    random_perturbations,
    truncated_cost,
    verify_saddle_point,
)
from .model import load_problem, spec_digest, validate
from .riccati import evaluate_solution, stabilizing_solve
from .sim import SimConfig, empirical_decay, simulate, truncation_horizon
from .synthesis import GainPair, a_sigma_membership, auxiliary_detectability, full_information_gains

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_PARSE = 3
EXIT_NO_CONVERGENCE = 4
EXIT_NOT_STABILIZING = 5
EXIT_VERIFY = 6


class _Exit(Exception):
    def __init__(self, code, status, detail):
        self.code = code
        self.status = status
        self.detail = detail


def _read_json(path, what):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise StructuralError(f"cannot read {what} {path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise StructuralError(f"malformed JSON in {path} at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def _load_spec(path):
    try:
        return load_problem(path)
    except OSError as exc:
        raise StructuralError(f"cannot read problem file {path}: {exc.strerror}") from None


def _require_valid(spec):
    report = validate(spec)
    if not report.ok:
        raise _Exit(EXIT_INVALID, "invalid", report.to_dict())


def _parse_x0(text, n):
    if text is None:
        return np.ones(n)
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise StructuralError(f"--x0 is not a comma-separated vector: {text!r}") from None
    if len(vals) == 1:
        vals = vals * n
    if len(vals) != n:
        raise StructuralError(f"--x0 has {len(vals)} entries, state dimension is {n}")
    return np.array(vals)


def _solve(spec, args):
    try:
        return stabilizing_solve(spec, tol=args.tol, max_sweeps=args.max_sweeps)
    except (NoConvergence, SingularRcal) as exc:
        raise _Exit(EXIT_NO_CONVERGENCE, "no_convergence", {"error": str(exc)}) from None
    except (NotStabilizing, NotAdmissible) as exc:
        detail = {"error": str(exc)}
        if exc.solution is not None:
            detail["limit"] = _solution_payload(exc.solution, with_fi=False)
        raise _Exit(EXIT_NOT_STABILIZING, "not_stabilizing", detail) from None


def _load_solution(spec, path):
    doc = _read_json(path, "solution file")
    if isinstance(doc, dict) and "deterministic" in doc:
        doc = doc["deterministic"].get("result", {})
    X = doc.get("X") if isinstance(doc, dict) else None
    if X is None:
        raise StructuralError(f"solution file {path} has no 'X' entry")
    X = np.array(X, dtype=float)
    try:
        sol = evaluate_solution(spec, X)
    except (ValueError, SingularRcal) as exc:
        raise _Exit(EXIT_NOT_STABILIZING, "bad_solution", {"error": str(exc)}) from None
    tol = spec.tolerances
    limit = 1e-8 * (1.0 + float(np.abs(X).max()))
    problems = []
    if not sol.residual <= limit:
        problems.append(f"residual {sol.residual:.6g} exceeds {limit:.3g}")
    if not sol.rho_closed < 1.0 - tol.stability_margin:
        problems.append(f"closed-loop spectral radius {sol.rho_closed:.6g}")
    if not sol.sign.admissible:
        problems.append(f"sign class {sol.sign.sign_class.value}")
    if problems:
        raise _Exit(EXIT_NOT_STABILIZING, "bad_solution", {"error": "; ".join(problems), "residual": sol.residual})
    return sol


def _solution_payload(sol, with_fi=True):
    out = {
        "X": sol.X,
        "F": sol.F,
        "F1": sol.F1,
        "F2": sol.F2,
        "rho_closed": sol.rho_closed,
        "residual": sol.residual,
        "sweeps": sol.sweeps,
        "sign": sol.sign.to_dict(),
    }
    if sol.sign.strong:
        out["sign"]["mu1"] = sol.sign.delta3
        out["sign"]["mu2"] = sol.sign.delta2
    if with_fi and sol.sign.admissible:
        fi = full_information_gains(sol)
        out["K"] = fi.K
        out["W"] = fi.W
    return out


# --------------------------------------------------------------------------
# commands


def cmd_validate(args):
    spec = _load_spec(args.path)
    report = validate(spec)
    if not report.ok:
        raise _Exit(EXIT_INVALID, "invalid", report.to_dict())
    return spec, report.to_dict()


def cmd_solve(args):
    spec = _load_spec(args.path)
    _require_valid(spec)
    return spec, _solution_payload(_solve(spec, args))


def _get_solution(spec, args):
    if getattr(args, "solution", None):
        return _load_solution(spec, args.solution)
    return _solve(spec, args)


def cmd_membership(args):
    spec = _load_spec(args.path)
    _require_valid(spec)
    if args.gains:
        doc = _read_json(args.gains, "gains file")
        try:
            pair = GainPair(np.array(doc["K"], dtype=float), np.array(doc["W"], dtype=float))
            pair.check(spec)
        except (KeyError, TypeError, ValueError) as exc:
            raise StructuralError(f"gains file {args.gains}: {exc}") from None
    else:
        pair = full_information_gains(_get_solution(spec, args)).pair
    try:
        report = a_sigma_membership(spec, pair, tol=args.tol, max_sweeps=args.max_sweeps)
    except (NotStabilizingGain, NoStabilizingClosedLoopSolution) as exc:
        raise _Exit(EXIT_NOT_STABILIZING, "not_member", {"error": str(exc)}) from None
    if not report.member:
        raise _Exit(EXIT_NOT_STABILIZING, "not_member", report.to_dict())
    return spec, report.to_dict()


def cmd_detect(args):
    spec = _load_spec(args.path)
    _require_valid(spec)
    H = None
    if args.injection:
        doc = _read_json(args.injection, "injection file")
        try:
            H = np.array(doc["H"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise StructuralError(f"injection file {args.injection}: {exc}") from None
    try:
        res = auxiliary_detectability(spec, H)
    except SynthesisFailed as exc:
        raise _Exit(EXIT_NOT_STABILIZING, "not_certified", {"detectable": False, "error": str(exc)}) from None
    except ValueError as exc:
        raise StructuralError(str(exc)) from None
    if not res.detectable:
        raise _Exit(EXIT_NOT_STABILIZING, "not_certified", res.to_dict())
    return spec, res.to_dict()


def _monte_carlo(spec, sol, pair, x0, args, law):
    T = args.horizon or truncation_horizon(sol.rho_closed, spec.period)
    cfg = SimConfig(trajectories=args.trajectories, horizon=T, seed=args.seed, noise_law=law)
    batch = simulate(spec, pair, x0, 0, cfg)
    mean, se = batch.cost_stats()
    exact_T = truncated_cost(spec, pair, x0, T)
    value = game_value(sol, x0)
    slack = 1e-9 * max(1.0, abs(value))
    ok = bool(abs(mean - exact_T) <= 3 * se + slack) and not bool(batch.overflow.any())
    return {
        "noise_law": law,
        "trajectories": args.trajectories,
        "horizon": T,
        "cost_mean": mean,
        "cost_stderr": se,
        "exact_truncated_value": exact_T,
        "game_value": value,
        "overflow": int(batch.overflow.sum()),
        "ok": ok,
    }


def cmd_verify(args):
    spec = _load_spec(args.path)
    _require_valid(spec)
    sol = _get_solution(spec, args)
    x0 = _parse_x0(args.x0, spec.n)
    out = {"game_value": game_value(sol, x0)}
    failures = []

    if sol.sign.strong:
        per = random_perturbations(spec, sol, 1, args.perturbations, seed=args.seed)
        per += random_perturbations(spec, sol, 2, args.perturbations, seed=args.seed)
        saddle = verify_saddle_point(spec, sol, per, x0, raise_on_violation=False)
        out["saddle"] = saddle.to_dict()
        for r in saddle.results:
            if not r.ok:
                failures.append({"check": "saddle", "player": r.player, "perturbation": r.index, "gap": r.gap})
    else:
        out["saddle"] = {"skipped": True, "reason": f"sign class is {sol.sign.sign_class.value}, not Strong"}

    fi = full_information_gains(sol)
    deltas = random_perturbations(spec, sol, 1, args.perturbations, seed=args.seed + 1)
    rows = []
    for k, (_, delta) in enumerate(deltas):
        try:
            rep = full_information_value_identity(spec, sol, delta, x0, fi=fi)
        except UnstablePair as exc:
            rows.append({"index": k, "skipped": True, "rho": exc.rho})
            continue
        row = {"index": k, **rep.to_dict()}
        rows.append(row)
        if not rep.ok or rep.gain_identity_error > 1e-12:
            failures.append({"check": "full_information", "perturbation": k, "agreement": rep.agreement})
    out["full_information"] = rows

    mc = _monte_carlo(spec, sol, StrategyPair.equilibrium(sol), x0, args, args.noise)
    out["monte_carlo"] = mc
    if not mc["ok"]:
        failures.append({"check": "monte_carlo", "cost_mean": mc["cost_mean"], "exact": mc["exact_truncated_value"]})
    out["failures"] = failures
    if failures:
        raise _Exit(EXIT_VERIFY, "verification_failed", out)
    return spec, out


def cmd_simulate(args):
    spec = _load_spec(args.path)
    _require_valid(spec)
    sol = _get_solution(spec, args)
    x0 = _parse_x0(args.x0, spec.n)
    if args.strategy == "full-information":
        fi = full_information_gains(sol)
        pair = StrategyPair.full_information(sol.F1, fi.K, fi.W)
    else:
        pair = StrategyPair.equilibrium(sol)
    T = args.horizon or truncation_horizon(sol.rho_closed, spec.period)
    cfg = SimConfig(trajectories=args.trajectories, horizon=T, seed=args.seed, noise_law=args.noise)
    batch = simulate(spec, pair, x0, 0, cfg)
    if args.format == "csv":
        return spec, batch
    mean, se = batch.cost_stats()
    out = {
        "strategy": args.strategy,
        "noise_law": args.noise,
        "trajectories": args.trajectories,
        "horizon": T,
        "game_value": game_value(sol, x0),
        "cost_mean": mean,
        "cost_stderr": se,
        "overflow": int(batch.overflow.sum()),
        "mean_sq_norm": batch.mean_sq_norm(),
    }
    try:
        d = empirical_decay(batch)
        out["decay"] = {"slope": d.slope, "slope_per_mode": d.slope_per_mode, "window": list(d.window),
                        "exact_log_rho_per_step": float(np.log(sol.rho_closed)) / spec.period
                        if sol.rho_closed > 0 else None}
    except GDTREError as exc:
        out["decay"] = {"error": str(exc)}
    return spec, out


COMMANDS = {
    "validate": cmd_validate,
    "solve": cmd_solve,
    "membership": cmd_membership,
    "detect": cmd_detect,
    "verify": cmd_verify,
    "simulate": cmd_simulate,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="gdtre", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"gdtre {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, solver=True):
        p.add_argument("path", help="problem file (JSON)")
        p.add_argument("--out", help="write the report here instead of stdout")
        if solver:
            p.add_argument("--tol", type=float, default=None)
            p.add_argument("--max-sweeps", type=int, default=None)
        return p

    common(sub.add_parser("validate", help="check the chain and sign hypotheses"), solver=False)
    common(sub.add_parser("solve", help="compute the stabilizing solution and gains"))
    p = common(sub.add_parser("membership", help="test a (K, W) gain pair"))
    p.add_argument("--gains", help="JSON file with K and W (default: full-information gains of the solution)")
    p.add_argument("--solution")
    p = common(sub.add_parser("detect", help="detectability of the auxiliary system"), solver=False)
    p.add_argument("--injection", help="JSON file with an injection gain H to check")
    for name, help_ in (("verify", "saddle point, full-information identity and Monte Carlo"),
                        ("simulate", "Monte Carlo batch under the equilibrium strategies")):
        p = common(sub.add_parser(name, help=help_))
        p.add_argument("--solution")
        p.add_argument("--x0")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--trajectories", type=int, default=20_000)
        p.add_argument("--horizon", type=int, default=None)
        p.add_argument("--noise", choices=("gaussian", "rademacher"), default="gaussian")
    sub.choices["verify"].add_argument("--perturbations", type=int, default=20)
    sub.choices["simulate"].add_argument("--format", choices=("json", "csv"), default="json")
    sub.choices["simulate"].add_argument("--strategy", choices=("state-feedback", "full-information"),
                                         default="state-feedback")
    return ap


def _echo(args):
    opts = {k: v for k, v in sorted(vars(args).items()) if k not in ("command", "path")}
    return {"name": args.command, "path": args.path, "options": opts}


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if getattr(args, "seed", 0) is not None and not 0 <= getattr(args, "seed", 0) < 2**64:
        ap.error("--seed must be an unsigned 64-bit integer")
    start = time.perf_counter()
    digest = None
    code, status, payload = EXIT_OK, "ok", None
    try:
        spec, payload = COMMANDS[args.command](args)
        digest = spec_digest(spec)
    except _Exit as exc:
        code, status, payload = exc.code, exc.status, exc.detail
    except StructuralError as exc:
        code, status, payload = EXIT_PARSE, "parse_error", {"error": str(exc)}
    if code != EXIT_PARSE and digest is None:
        try:
            digest = spec_digest(load_problem(args.path))
        except (StructuralError, OSError):
            digest = None
    elapsed = time.perf_counter() - start

    if getattr(args, "format", "json") == "csv" and code == EXIT_OK:
        text = payload.to_csv()
    else:
        report = {
            "deterministic": {
                "command": _echo(args),
                "tool_version": __version__,
                "spec_digest": digest,
                "status": status,
                "exit_code": code,
                "result": payload,
            },
            "timings": {"seconds": elapsed},
        }
        text = jsonfmt.dumps(report)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if code not in (EXIT_OK,):
        msg = payload.get("error") if isinstance(payload, dict) else None
        print(f"gdtre {args.command}: {status}" + (f": {msg}" if msg else ""), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
