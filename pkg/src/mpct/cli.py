"""Command-line entry point: ``mpct lin|solve|sim|validate``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from mpct.errors import ContractError, MpctError
from mpct.harness import BUILTIN_PREFIX, compute_stats, data_path, load_config, run_closed_loop, write_outputs
from mpct.model import discretize_zoh, linearize_pendulum
from mpct.plant import PendulumParams
from mpct.problem import build_offline, load_problem
from mpct.solver import SolveOptions, solve

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3

DEFAULT_PROBLEM = BUILTIN_PREFIX + "pendulum_problem"


def _resolve(path: str) -> Path:
    if path.startswith(BUILTIN_PREFIX):
        return data_path(path[len(BUILTIN_PREFIX):] + ".json")
    return Path(path)


def parse_vector(text: str) -> np.ndarray:
    """Accept ``"[1, 2]"``, ``"1,2"`` or ``"1 2"``."""
    text = text.strip()
    try:
        if text.startswith("["):
            vals = json.loads(text)
        else:
            vals = [float(t) for t in text.replace(",", " ").split()]
        arr = np.asarray(vals, dtype=float).reshape(-1)
    except (ValueError, TypeError) as exc:
        raise ContractError(f"cannot parse vector {text!r}") from exc
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"non-finite entry in {text!r}")
    return arr


def _load_problem(path: str):
    try:
        return load_problem(_resolve(path))
    except OSError as exc:
        raise ContractError(f"cannot read problem file {path}: {exc}") from exc


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2))


def cmd_lin(args) -> int:
    params = PendulumParams()
    if args.params:
        try:
            data = json.loads(_resolve(args.params).read_text())
        except OSError as exc:
            raise ContractError(f"cannot read params file {args.params}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ContractError(f"{args.params}: invalid JSON ({exc})") from exc
        try:
            params = PendulumParams(**data)
        except TypeError as exc:
            raise ContractError(f"{args.params}: {exc}") from exc
    lin = discretize_zoh(linearize_pendulum(params), args.Ts)
    _emit({"A": lin.A.tolist(), "B": lin.B.tolist(), "Ts": lin.Ts})
    return EXIT_OK


def cmd_solve(args) -> int:
    prob, pen = _load_problem(args.problem)
    off = build_offline(prob, pen)
    x = parse_vector(args.state)
    x_ref = parse_vector(args.xref) if args.xref else np.zeros(prob.n)
    u_ref = parse_vector(args.uref) if args.uref else np.zeros(prob.m)
    sol = solve(off, x, x_ref, u_ref, opts=SolveOptions(tol=args.tol, max_iters=args.max_iters))
    _emit(sol.to_dict())
    return EXIT_OK if sol.converged else EXIT_SOLVER


def cmd_sim(args) -> int:
    cfg = load_config(args.config)
    log = run_closed_loop(cfg)
    csv_path, stats_path = write_outputs(log, args.out)
    summary = {"trajectory": str(csv_path), "stats": str(stats_path), "steps": len(log)}
    if len(log):
        summary["iters"] = compute_stats(log)["iters"].to_dict()
    if log.error:
        summary["error"] = log.error
        _emit(summary)
        return EXIT_SOLVER
    _emit(summary)
    return EXIT_OK


def cmd_validate(args) -> int:
    from mpct.checks import structural_checks

    prob, pen = _load_problem(args.problem)
    checks = structural_checks(prob, pen, seed=args.seed)
    for c in checks:
        print(f"{'ok  ' if c.passed else 'FAIL'} {c.name}: {c.detail}")
    return EXIT_OK if all(c.passed for c in checks) else EXIT_CONFIG


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mpct", description="MPC for tracking with an extended-ADMM solver.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("lin", help="discrete A, B of the upright pendulum linearization")
    p.add_argument("--params", help="JSON file with pendulum parameters (defaults to the bundled robot)")
    p.add_argument("--Ts", type=float, default=0.02, help="sample time in seconds")
    p.set_defaults(func=cmd_lin)

    p = sub.add_parser("solve", help="one MPCT solve, printed as JSON")
    p.add_argument("--problem", default=DEFAULT_PROBLEM, help="problem JSON file or builtin:<name>")
    p.add_argument("--state", required=True, help='current state, e.g. "0.1,0,0"')
    p.add_argument("--xref", help="state reference (default zero)")
    p.add_argument("--uref", help="input reference (default zero)")
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--max-iters", type=int, default=4000)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sim", help="closed-loop experiment; writes trajectory.csv and stats.json")
    p.add_argument("--config", required=True, help="experiment JSON file or builtin:<name>")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("validate", help="structural invariant checks of a problem")
    p.add_argument("--problem", default=DEFAULT_PROBLEM, help="problem JSON file or builtin:<name>")
    p.add_argument("--seed", type=int, default=0, help="seed of the random iterate used for the iteration check")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ContractError as exc:
        print(f"mpct: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MpctError as exc:
        print(f"mpct: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
