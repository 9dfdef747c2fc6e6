"""Command-line experiment runner.

Subcommands: ``solve``, ``sweep``, ``probe`` and ``list-problems``. Exit
status is 0 on success, 1 on solver failure and 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, SolverError
from .experiment import (
    ALGORITHMS,
    OUTPUT_ENV,
    TARGETS,
    atomic_write,
    default_output_dir,
    load_config,
    run_experiment,
    run_sweep,
    write_run,
)
from .iss import probe_solution_map
from .problems import PROBE_REGISTRY, list_problems

EXIT_OK, EXIT_SOLVER, EXIT_CONFIG = 0, 1, 2

PROBE_DEFAULT_PBAR = {"affine": ((0.0,), (0.0,)), "scalar-eq": ((1.0,), (0.0,))}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="INI experiment file")
    p.add_argument("--problem", help="registry name or 'inline'")
    # Validated after parsing so that an unknown name exits with status 2.
    p.add_argument("--algorithm", help=f"one of: {', '.join(ALGORITHMS)}")
    p.add_argument("--disturbance", help="zero | const:C | decay:C[:rate=R] | random:D[:seed=S]")
    p.add_argument("--target", help=f"NLP disturbance channel: {', '.join(TARGETS)}")
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--rho", type=float, help="ALM penalty")
    p.add_argument("--inner", help="inner solve: exact | newton:N | noise:S[:seed=K]")
    p.add_argument("--alpha", type=float, help="projected-gradient step size")
    p.add_argument("--x0", help="comma-separated primal start")
    p.add_argument("--y0", help="comma-separated dual start")
    p.add_argument("--oracle", action="store_const", const="true", default=None,
                   help="certify subproblem uniqueness by enumeration")
    p.add_argument("--label", help="output file stem")
    p.add_argument("--output-dir", dest="output_dir", help=f"defaults to ${OUTPUT_ENV}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="issnewton", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("solve", help="run one experiment")
    _common(sp)

    sw = sub.add_parser("sweep", help="cross product of rho, delta and seed grids")
    _common(sw)
    sw.add_argument("--rho-grid", dest="rho_grid")
    sw.add_argument("--delta-grid", dest="delta_grid")
    sw.add_argument("--seeds")
    sw.add_argument("--workers", type=int)

    pr = sub.add_parser("probe", help="sample the solution map of a parametric family")
    pr.add_argument("--family", default="affine", help=f"one of: {', '.join(PROBE_REGISTRY)}")
    pr.add_argument("--p1", help="base value of the first parameter block")
    pr.add_argument("--p2", help="base value of the second parameter block")
    pr.add_argument("--radius", type=float, default=1e-2)
    pr.add_argument("--samples", type=int, default=100)
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--slack", type=float, default=0.1)
    pr.add_argument("--label", default="probe")
    pr.add_argument("--output-dir", dest="output_dir")

    sub.add_parser("list-problems", help="print registered problems")
    return ap


_OVERRIDE_KEYS = ("problem", "algorithm", "disturbance", "target", "tol", "max_iter", "rho",
                  "inner", "alpha", "x0", "y0", "oracle", "label", "output_dir", "rho_grid",
                  "delta_grid", "seeds", "workers")


def _overrides(args) -> dict:
    return {k: getattr(args, k, None) for k in _OVERRIDE_KEYS}


def cmd_solve(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    try:
        res = run_experiment(cfg)
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    csv_path, json_path = write_run(res)
    s = res.summary
    iss = s["iss"] or {}
    print(f"{cfg.problem} / {cfg.algorithm}: {s['status']} after {s['n_steps']} steps, "
          f"residual {s['final_residual']:.3e}")
    if iss:
        print(f"ISS fit: alpha={iss['alpha']:.2f} gamma={iss['gamma']} feasible={iss['feasible']}")
    print(f"wrote {csv_path} and {json_path}")
    return s["exit_code"]


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    path, rows = run_sweep(cfg)
    failed = [r for r in rows if str(r.get("status", "")).startswith("error")]
    print(f"{len(rows)} runs, {len(failed)} errors; wrote {path}")
    return EXIT_SOLVER if failed else EXIT_OK


def _block(text, default):
    if text is None:
        return np.asarray(default, dtype=float)
    try:
        return np.asarray([float(t) for t in text.split(",") if t.strip()], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"cannot parse parameter {text!r}") from exc


def cmd_probe(args) -> int:
    if args.family not in PROBE_REGISTRY:
        raise ConfigError(f"unknown probe family {args.family!r}; valid: {', '.join(PROBE_REGISTRY)}")
    if args.samples < 1 or args.radius <= 0:
        raise ConfigError("probe needs samples >= 1 and radius > 0")
    fam = PROBE_REGISTRY[args.family]()
    d1, d2 = PROBE_DEFAULT_PBAR[args.family]
    pbar = (_block(args.p1, d1), _block(args.p2, d2))
    try:
        probe = probe_solution_map(fam, pbar, (args.radius, args.radius), args.samples,
                                   seed=args.seed, slack=args.slack)
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    out = Path(args.output_dir) if args.output_dir else default_output_dir()
    path = out / f"{args.label}.json"
    atomic_write(path, json.dumps(probe.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"omega={probe.omega:.4g} lip=({probe.lip_f[0]:.4g}, {probe.lip_f[1]:.4g}) "
          f"bound check {'passed' if probe.passed else 'FAILED'}; wrote {path}")
    return EXIT_OK if probe.passed else EXIT_SOLVER


def cmd_list(args) -> int:
    for name, desc in list_problems():
        print(f"{name:20s} {desc.replace('``', '')}")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "sweep": cmd_sweep, "probe": cmd_probe, "list-problems": cmd_list}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
