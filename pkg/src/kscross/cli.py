"""Command line interface.

Exit codes: 0 success (admissible / completed / pass), 1 not admissible
or a failed check, 2 usage error, 3 blow-up suspected, 4 solver failure.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from fractions import Fraction
from pathlib import Path

from . import experiments as X
from .config import ConfigError, keys_help, load_config, parse_config, format_config
from .model import (
    ModelError, ModelParams, check_admissibility, decay_rate_kappa, derived_exponents,
)
from .mms import convergence_study, default_case, load_case
from .presets import PRESETS, get_preset

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_BLOWUP, EXIT_SOLVER = 0, 1, 2, 3, 4


def _number(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        try:
            return float(Fraction(text))
        except (ValueError, ZeroDivisionError):
            raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def _grid_spec(text: str) -> tuple[str, list[float]]:
    name, sep, values = text.partition("=")
    name = name.strip()
    if not sep or name not in ("m", "n", "delta"):
        raise argparse.ArgumentTypeError(f"expected m=..., n=... or delta=..., got {text!r}")
    return name, [_number(v) for v in values.split(",") if v.strip()]


def _load(args) -> "X.RunConfig":
    # presets go through the text form so environment overrides apply to them too
    if args.config and args.preset:
        raise ConfigError("give either --config or --preset, not both")
    if args.config:
        return load_config(args.config)
    name = args.preset or getattr(args, "default_preset", None)
    if name is None:
        raise ConfigError("need --config or --preset")
    return parse_config(format_config(get_preset(name)))


def cmd_check(args) -> int:
    try:
        params = ModelParams(args.m, args.n, dim=args.d, delta=args.delta or 0.0)
    except ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    report = check_admissibility(params)
    ex = derived_exponents(params)
    print(f"m = {args.m:g}, n = {args.n:g}, d = {args.d}")
    print(report.format())
    print(f"p = {ex.p:.10g}  Q = {ex.Q:.10g}  s1 = {ex.s1:.10g}  s2 = {ex.s2:.10g}  s3 = {ex.s3:.10g}")
    if args.delta is not None and args.cp is not None:
        if (args.m, args.n) != (1.0, 2.0):
            print("kappa: only defined for m = 1, n = 2")
        else:
            try:
                print(f"kappa = {decay_rate_kappa(args.delta, args.cp):.10g}")
            except ModelError as exc:
                print(f"kappa: {exc}")
    return EXIT_OK if report.admissible else EXIT_FAIL


def cmd_run(args) -> int:
    cfg = _load(args)
    out = Path(args.out or cfg.output_dir)
    observers = []
    if args.verbose:
        observers.append(lambda s, rec: print(f"t = {rec.t:.6g}  rho_max = {rec.rho_max:.6g}  "
                                              f"mass = {rec.mass:.12g}", flush=True))
    traj = X.simulate(cfg, observers)
    X.write_outputs(cfg, traj, out)
    print("\n".join(X.summary_lines(traj)))
    print(f"outputs written to {out}")
    return X.EXIT_CODES[traj.status]


def cmd_sweep(args) -> int:
    cfg = _load(args)
    grid = dict(args.param or [])
    out = Path(args.out or cfg.output_dir)
    rows = X.sweep(cfg, grid, out, jobs=args.jobs)
    for row in rows:
        rho = row["rho_max_final"]
        rho = f"{rho:.6g}" if isinstance(rho, float) else rho
        print(f"run {row['run']:>3}  m={row['m']}  n={row['n']}  delta={row['delta']}  "
              f"{row['status']}  rho_max_final={rho}")
    print(f"summary written to {out / 'summary.csv'}")
    return EXIT_OK


def cmd_convergence(args) -> int:
    case = load_case(args.case) if args.case else default_case()
    table = convergence_study(case)
    print(table.format())
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    table.write_csv(out / "order_table.csv")
    print(f"order table written to {out / 'order_table.csv'}")
    return EXIT_FAIL if table.collapsed else EXIT_OK


def cmd_decay(args) -> int:
    cfg = _load(args)
    try:
        cp = args.cp if args.cp is not None else X.poincare_constant(cfg)
        if float(cfg.model.delta) <= cp**2 / 4:
            print(f"refusing: exponential decay is only guaranteed for delta > C_P^2/4 "
                  f"(delta = {float(cfg.model.delta):g}, C_P^2/4 = {cp**2 / 4:.6g})", file=sys.stderr)
            return EXIT_USAGE
        report, traj = X.decay_study(cfg, cp)
    except ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.out:
        X.write_outputs(cfg, traj, Path(args.out))
    print(report.format())
    return EXIT_OK if report.passes else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kscross",
        description="Keller-Segel system with nonlinear and cross diffusion: "
                    "admissibility checks, simulations, sweeps and verification studies.",
        epilog="config keys:\n" + keys_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="admissibility of (m, n, d) and derived exponents")
    p.add_argument("-d", type=int, required=True, choices=(1, 2, 3))
    p.add_argument("-m", type=_number, required=True)
    p.add_argument("-n", type=_number, required=True)
    p.add_argument("--delta", type=_number)
    p.add_argument("--cp", type=_number, help="Poincare constant, for the decay rate kappa")
    p.set_defaults(func=cmd_check)

    def add_source(p, default=None):
        p.add_argument("--config", help="config file (see the key list in kscross --help)")
        p.add_argument("--preset", choices=sorted(PRESETS))
        p.add_argument("--out", help="output directory (overrides [run] output_dir)")
        p.set_defaults(default_preset=default)

    p = sub.add_parser("run", help="run one simulation")
    add_source(p)
    p.add_argument("-v", "--verbose", action="store_true", help="print diagnostics per step")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="one run per point of a parameter grid")
    add_source(p)
    p.add_argument("--param", type=_grid_spec, action="append",
                   help="NAME=v1,v2,... with NAME in m, n, delta; repeat for a product grid")
    p.add_argument("--jobs", type=int, default=1, help="concurrent runs")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("convergence", help="manufactured-solution convergence study")
    p.add_argument("--case", help="case file with [mms] and [model] sections (default: built-in case)")
    p.add_argument("--out", help="directory for order_table.csv")
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("decay", help="fit exponential decay to the homogeneous state")
    add_source(p, default="decay-1d")
    p.add_argument("--cp", type=_number, help="Poincare constant (default L/pi on an interval)")
    p.set_defaults(func=cmd_decay)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING))
    try:
        return args.func(args)
    except (ConfigError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
