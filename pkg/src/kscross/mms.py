"""Manufactured-solution convergence studies in one space dimension.

The forcing terms of a case are closed-form expressions in ``x`` and
``t``; they are evaluated at cell centres and added to the right-hand
sides of both equations.  Errors are discrete L2 norms of
``rho - rho_exact`` at the final time.
"""
from __future__ import annotations

import configparser
import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from . import grid as G
from .config import ConfigError
from .expr import Expression
from .model import ModelParams
from .solver import COMPLETED, State, StepperConfig, run

COLLAPSE_ORDER = 0.5


@dataclass(frozen=True)
class MmsCase:
    exact_rho: str
    exact_c: str
    forcing_rho: str
    forcing_c: str
    params: ModelParams
    levels: tuple[int, ...] = (50, 100, 200, 400)
    length: float = 1.0
    t_end: float = 0.1
    tau0: float = 2e-3       # time step on the coarsest level; scaled like h^2
    drift: str = "central"


def default_case() -> MmsCase:
    """rho = 1 + e^-t cos(pi x)/2, c = 1 + 3 e^-t cos(pi x)/10 with m=1, n=2, delta=0.1.

    Both satisfy the no-flux condition on [0, 1].  The forcings were
    derived symbolically from the exact pair.
    """
    return MmsCase(
        exact_rho="1+0.5*exp(-t)*cos(pi*x)",
        exact_c="1+0.3*exp(-t)*cos(pi*x)",
        forcing_rho="(2*pi^2-5)*exp(-t)*cos(pi*x)/10 - 3*pi^2*exp(-2*t)*cos(2*pi*x)/20",
        forcing_c="(4*pi^2-5)*exp(-t)*cos(pi*x)/10 + pi^2*exp(-2*t)*cos(2*pi*x)/20",
        params=ModelParams(m=1.0, n=2.0, delta=0.1, alpha=1, dim=1),
    )


@dataclass(frozen=True)
class LevelResult:
    cells: int
    h: float
    tau: float
    steps: int
    error: float
    order: float = math.nan


@dataclass(frozen=True)
class ConvergenceTable:
    rows: list[LevelResult]
    collapsed: bool

    def format(self) -> str:
        lines = [f"{'N':>6} {'h':>10} {'tau':>10} {'L2 error':>12} {'order':>7}"]
        for r in self.rows:
            order = "" if math.isnan(r.order) else f"{r.order:7.3f}"
            lines.append(f"{r.cells:6d} {r.h:10.4g} {r.tau:10.4g} {r.error:12.5e} {order:>7}")
        if self.collapsed:
            lines.append(f"WARNING: observed order fell below {COLLAPSE_ORDER}; "
                         "forcing and exact solution may be inconsistent")
        return "\n".join(lines)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["N", "h", "tau", "steps", "l2_error", "order"])
            for r in self.rows:
                writer.writerow([r.cells, f"{r.h:.17g}", f"{r.tau:.17g}", r.steps,
                                 f"{r.error:.17g}", "" if math.isnan(r.order) else f"{r.order:.6f}"])


def solve_level(case: MmsCase, cells: int, tau: float,
                stepper: StepperConfig | None = None) -> LevelResult:
    grid = G.build_grid(G.Box((0.0,), (case.length,)), cells)
    ex_rho, ex_c = Expression(case.exact_rho), Expression(case.exact_c)
    f_rho, f_c = Expression(case.forcing_rho), Expression(case.forcing_c)
    x = grid.centers[:, 0]

    def field(e, t):
        return np.broadcast_to(e(x=x, t=t), x.shape).astype(float)

    def forcing(t):
        return field(f_rho, t), field(f_c, t)

    steps = max(1, round(case.t_end / tau))
    tau = case.t_end / steps
    base = stepper or StepperConfig()
    cfg = replace(base, tau=tau, tau_max=tau, tau_min=min(base.tau_min, tau), adapt=False,
                  drift=case.drift, newton_tol=min(base.newton_tol, 1e-11))
    initial = State(grid, field(ex_rho, 0.0), field(ex_c, 0.0))
    traj = run(initial, case.params, cfg, case.t_end, forcing=forcing, record_every=steps)
    if traj.status != COMPLETED:
        raise RuntimeError(f"MMS run at N={cells} ended with {traj.status}: {traj.message}")
    err = G.lp_norm(grid, traj.state.rho - field(ex_rho, case.t_end), 2)
    return LevelResult(cells, float(grid.spacing[0]), tau, traj.steps, err)


def observed_orders(errors, hs) -> list[float]:
    orders = [math.nan]
    for (e1, h1), (e2, h2) in zip(zip(errors, hs), zip(errors[1:], hs[1:])):
        if e1 > 0 and e2 > 0:
            orders.append(math.log(e1 / e2) / math.log(h1 / h2))
        else:
            orders.append(math.nan)
    return orders


def convergence_study(case: MmsCase, stepper: StepperConfig | None = None) -> ConvergenceTable:
    """Refine h through ``case.levels`` with tau proportional to h^2."""
    if len(case.levels) < 3:
        raise ValueError("a convergence study needs at least 3 refinement levels")
    n0 = case.levels[0]
    results = [solve_level(case, n, case.tau0 * (n0 / n) ** 2, stepper) for n in case.levels]
    orders = observed_orders([r.error for r in results], [r.h for r in results])
    rows = [replace(r, order=o) for r, o in zip(results, orders)]
    collapsed = any(o < COLLAPSE_ORDER for o in orders if not math.isnan(o))
    return ConvergenceTable(rows, collapsed)


def time_study(case: MmsCase, cells: int, taus, stepper: StepperConfig | None = None) -> ConvergenceTable:
    """Fixed grid, shrinking tau; orders are measured against tau."""
    results = [solve_level(case, cells, tau, stepper) for tau in taus]
    orders = observed_orders([r.error for r in results], [r.tau for r in results])
    rows = [replace(r, order=o) for r, o in zip(results, orders)]
    return ConvergenceTable(rows, any(o < COLLAPSE_ORDER for o in orders if not math.isnan(o)))


def load_case(path) -> MmsCase:
    """Read an ``[mms]`` case file; missing keys fall back to the default case."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.ParsingError as exc:
        raise ConfigError(f"cannot parse case file: {exc.message.splitlines()[0]}",
                          exc.errors[0][0] if exc.errors else None) from exc
    except configparser.Error as exc:
        raise ConfigError(str(exc), getattr(exc, "lineno", None)) from exc
    base = default_case()
    sec = parser["mms"] if parser.has_section("mms") else {}
    model = parser["model"] if parser.has_section("model") else {}
    try:
        params = ModelParams(
            m=float(model.get("m", base.params.m)), n=float(model.get("n", base.params.n)),
            delta=float(model.get("delta", base.params.delta)),
            alpha=int(model.get("alpha", base.params.alpha)), dim=1,
        )
        levels = tuple(int(v) for v in sec["levels"].split(",")) if "levels" in sec else base.levels
        case = MmsCase(
            exact_rho=sec.get("exact_rho", base.exact_rho),
            exact_c=sec.get("exact_c", base.exact_c),
            forcing_rho=sec.get("forcing_rho", base.forcing_rho),
            forcing_c=sec.get("forcing_c", base.forcing_c),
            params=params, levels=levels,
            length=float(sec.get("length", base.length)),
            t_end=float(sec.get("t_end", base.t_end)),
            tau0=float(sec.get("tau0", base.tau0)),
            drift=sec.get("drift", base.drift).strip(),
        )
        for text in (case.exact_rho, case.exact_c, case.forcing_rho, case.forcing_c):
            Expression(text)
    except ValueError as exc:
        raise ConfigError(f"invalid MMS case: {exc}") from exc
    return case
