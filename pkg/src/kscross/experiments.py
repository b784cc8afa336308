"""Experiment orchestration shared by the command line and the tests."""
from __future__ import annotations

import csv
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import diagnostics as D
from . import grid as G
from .config import RunConfig, format_config, with_overrides
from .io import write_field_csv, write_vtk
from .model import ModelError, decay_rate_kappa, homogeneous_steady_state
from .solver import BLOW_UP, COMPLETED, FAILURE, State, Trajectory, run

EXIT_CODES = {COMPLETED: 0, BLOW_UP: 3, FAILURE: 4}


def initial_state(cfg: RunConfig) -> State:
    grid = G.build_grid(cfg.region, cfg.resolution)
    rho = grid.evaluate(cfg.initial_rho)
    c = grid.evaluate(cfg.initial_c)
    if np.any(rho < 0):
        raise ValueError("initial density must be nonnegative")
    return State(grid, rho, c)


def steady_state_of(state: State) -> tuple[float, float]:
    return homogeneous_steady_state(G.integrate(state.grid, state.rho), state.grid.volume)


def simulate(cfg: RunConfig, observers=()) -> Trajectory:
    state = initial_state(cfg)
    return run(state, cfg.model, cfg.stepper, cfg.t_end, observers=observers,
               snapshot_times=cfg.snapshot_times, steady=steady_state_of(state),
               record_every=cfg.record_every)


def summary_lines(traj: Trajectory) -> list[str]:
    last = traj.records[-1]
    report = D.blow_up_report(traj)
    return [
        f"status: {traj.status}",
        f"t_final: {traj.state.t:.17g}",
        f"rho_max_final: {last.rho_max:.17g}",
        f"blow_up: {'true' if report.suspected else 'false'}",
        f"trigger: {report.trigger or 'none'}",
        f"mass_final: {last.mass:.17g}",
        f"steps: {traj.steps}",
        f"rejections: {traj.rejections}",
    ]


def write_outputs(cfg: RunConfig, traj: Trajectory, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(format_config(cfg))
    D.write_csv(out / "diagnostics.csv", traj.records)
    if traj.snapshots:
        snap_dir = out / "snapshots"
        snap_dir.mkdir(exist_ok=True)
        for k, s in enumerate(traj.snapshots):
            fields = {"rho": s.rho, "c": s.c}
            stem = f"snapshot_{k:03d}"
            write_vtk(snap_dir / f"{stem}.vtk", s.grid, fields, title=f"t = {s.t:.17g}")
            write_field_csv(snap_dir / f"{stem}.csv", s.grid, fields)
    (out / "summary.txt").write_text("\n".join(summary_lines(traj)) + "\n")


def read_summary(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        key, _, value = line.partition(":")
        out[key.strip()] = value.strip()
    return out


# -- decay ---------------------------------------------------------------------

@dataclass
class DecayReport:
    kappa: float
    rho_fit: D.DecayFit | None
    c_fit: D.DecayFit | None
    already_converged: bool = False
    notes: list[str] = field(default_factory=list)

    @property
    def passes(self) -> bool:
        if self.already_converged:
            return True
        return bool(self.rho_fit and self.c_fit and self.rho_fit.passes and self.c_fit.passes)

    def format(self) -> str:
        lines = [f"kappa = {self.kappa:.6g}, threshold 0.8*kappa = {0.8 * self.kappa:.6g}"]
        if self.already_converged:
            lines.append("already converged: the initial state is at the homogeneous steady state")
        for name, fit in (("||rho - rho*||_L2", self.rho_fit), ("||c - c*||_L1", self.c_fit)):
            if fit is not None:
                verdict = "pass" if fit.passes else "FAIL"
                lines.append(f"{name}: rate {fit.fitted_rate:.6g} over t in "
                             f"[{fit.window[0]:.4g}, {fit.window[1]:.4g}] "
                             f"({fit.samples} samples, r^2 = {fit.r_squared:.4f}) {verdict}")
        lines.extend(self.notes)
        if not self.already_converged:
            lines.append("result: " + ("pass" if self.passes else "FAIL"))
        return "\n".join(lines)


def poincare_constant(cfg: RunConfig) -> float:
    """Configured C_P, else L/pi for a 1-D interval."""
    if cfg.poincare_const is not None:
        return float(cfg.poincare_const)
    if isinstance(cfg.region, G.Box) and cfg.region.dim == 1:
        return (cfg.region.upper[0] - cfg.region.lower[0]) / math.pi
    raise ModelError("no Poincare constant configured for a domain other than a 1-D interval")


def decay_study(cfg: RunConfig, poincare_const: float | None = None) -> tuple[DecayReport, Trajectory]:
    """Run ``cfg`` and fit exponential decay of ||rho - rho*||_L2 and ||c - c*||_L1.

    Raises ModelError when delta <= C_P^2/4 (the decay rate is then not
    guaranteed) or the parameters are not m = 1, n = 2, alpha = 0.
    """
    p = cfg.model
    if (float(p.m), float(p.n), p.alpha) != (1.0, 2.0, 0):
        raise ModelError("decay study needs m = 1, n = 2, alpha = 0")
    cp = poincare_constant(cfg) if poincare_const is None else poincare_const
    kappa = decay_rate_kappa(float(p.delta), cp)

    state = initial_state(cfg)
    steady = steady_state_of(state)
    grid = state.grid
    rho_series, c_series = [], []

    def watch(s, _rec):
        rho_series.append((s.t, G.lp_norm(grid, s.rho - steady[0], 2)))
        c_series.append((s.t, G.lp_norm(grid, s.c - steady[1], 1)))

    traj = run(state, p, cfg.stepper, cfg.t_end, observers=[watch], steady=steady)
    report = DecayReport(kappa, None, None)
    if rho_series[0][1] < D.DECAY_FLOOR:
        report.already_converged = True
        return report, traj
    if cfg.t_end * kappa < 3:
        report.notes.append(f"note: t_end = {cfg.t_end:g} is shorter than 3/kappa = {3 / kappa:.4g}; "
                            "a longer horizon is needed to resolve decay at rate kappa")
    window = cfg.decay_window
    for attr, series in (("rho_fit", rho_series), ("c_fit", c_series)):
        try:
            setattr(report, attr, D.fit_decay_rate(series, window, reference_kappa=kappa))
        except D.DiagnosticsError as exc:
            report.notes.append(f"{attr.split('_')[0]} fit rejected: {exc}")
    return report, traj


# -- sweeps --------------------------------------------------------------------

SWEEP_COLUMNS = ("run", "m", "n", "delta", "status", "t_final", "rho_max_final", "decay_rate")


def sweep_points(grid: dict[str, Sequence[float]]) -> list[dict[str, float]]:
    if not grid or any(len(v) == 0 for v in grid.values()):
        return []
    keys = list(grid)
    return [dict(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]


def _run_point(args) -> dict:
    index, cfg, out_dir = args
    row = {"run": index, "m": float(cfg.model.m), "n": float(cfg.model.n),
           "delta": float(cfg.model.delta), "decay_rate": ""}
    try:
        decay = cfg.decay_window is not None and (float(cfg.model.m), float(cfg.model.n),
                                                  cfg.model.alpha) == (1.0, 2.0, 0)
        if decay:
            report, traj = decay_study(cfg)
            if report.rho_fit is not None:
                row["decay_rate"] = report.rho_fit.fitted_rate
        else:
            traj = simulate(cfg)
        write_outputs(cfg, traj, Path(out_dir))
        row.update(status=traj.status, t_final=traj.state.t, rho_max_final=traj.records[-1].rho_max)
    except Exception as exc:  # one failed point must not stop the sweep
        row.update(status=f"error: {exc}", t_final="", rho_max_final="")
    return row


def sweep(template: RunConfig, grid: dict[str, Sequence[float]], out: Path,
          jobs: int = 1) -> list[dict]:
    """Run one simulation per grid point; write ``summary.csv`` under ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    tasks = []
    for i, point in enumerate(sweep_points(grid)):
        label = "_".join(f"{k}={v:g}" for k, v in point.items())
        try:
            cfg = with_overrides(template, **point)
        except (ValueError, ModelError) as exc:
            tasks.append((i, exc, None))
            continue
        tasks.append((i, cfg, str(out / f"run_{i:03d}_{label}")))

    runnable = [t for t in tasks if t[2] is not None]
    if jobs > 1 and len(runnable) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            done = list(pool.map(_run_point, runnable))
    else:
        done = [_run_point(t) for t in runnable]
    by_index = {row["run"]: row for row in done}
    rows = []
    for i, cfg, _ in tasks:
        if i in by_index:
            rows.append(by_index[i])
        else:
            rows.append({"run": i, "m": "", "n": "", "delta": "", "status": f"error: {cfg}",
                         "t_final": "", "rho_max_final": "", "decay_rate": ""})
    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.17g}" if isinstance(v, float) else v) for k, v in row.items()})
    return rows
