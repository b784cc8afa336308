"""Entropy, norm and blow-up instrumentation.

All quadratures use the same midpoint rule and face-difference gradients
as the solver, so the discrete entropy inequality can be checked step by
step without any mismatch in norms.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from . import grid as G
from .model import ModelError, ModelParams

if TYPE_CHECKING:
    from .solver import State, Trajectory

CSV_COLUMNS = ("t", "mass", "E", "rho_max", "rho_Ln", "c_L2",
               "prod_rho", "prod_c", "coupling", "E_rel")

DECAY_FLOOR = 1e-13


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    mass: float
    entropy_E: float
    rho_max: float
    rho_Ln: float
    c_L2: float
    production_rho: float
    production_c: float
    coupling: float
    relative_entropy: float = math.nan

    def row(self) -> list[str]:
        values = (self.t, self.mass, self.entropy_E, self.rho_max, self.rho_Ln,
                  self.c_L2, self.production_rho, self.production_c, self.coupling,
                  self.relative_entropy)
        return [f"{v:.17g}" for v in values]


@dataclass(frozen=True)
class BlowUpReport:
    suspected: bool
    t_estimate: float
    rho_max_history: list[tuple[float, float]] = field(repr=False)
    trigger: str | None = None   # "tau_underflow" or "hard_cap"


@dataclass(frozen=True)
class DecayFit:
    fitted_rate: float
    window: tuple[float, float]
    r_squared: float
    reference_kappa: float = math.nan
    samples: int = 0

    @property
    def passes(self) -> bool:
        return self.fitted_rate >= 0.8 * self.reference_kappa


class DiagnosticsError(ValueError):
    pass


def _positive_part(rho):
    return np.maximum(rho, 0.0)


def entropy(state: "State", params: ModelParams) -> float:
    """``E = int rho^n/(n-1) + alpha c^2/(2 delta)``."""
    n = float(params.n)
    integrand = _positive_part(state.rho) ** n / (n - 1.0)
    if params.alpha:
        if params.delta <= 0:
            raise ModelError("entropy with alpha=1 needs delta > 0")
        integrand = integrand + state.c**2 / (2.0 * float(params.delta))
    return G.integrate(state.grid, integrand)


def relative_entropy(state: "State", params: ModelParams,
                     steady: tuple[float, float]) -> tuple[float, bool]:
    """Distance to the homogeneous state; returns ``(value, signed)``.

    ``(rho - rho*)^n`` is only sign-definite for even integer ``n``.  For
    other ``n`` the odd extension ``sign(x)|x|^n`` is integrated and
    ``signed`` is True whenever some cell lies below ``rho*``.
    """
    rho_star, c_star = steady
    n = float(params.n)
    dev = state.rho - rho_star
    even = n == int(n) and int(n) % 2 == 0
    if even:
        powered = dev**int(n)
        signed = False
    else:
        powered = np.sign(dev) * np.abs(dev) ** n
        signed = bool(np.any(dev < 0))
    integrand = powered / (n - 1.0)
    if params.alpha:
        if params.delta <= 0:
            raise ModelError("relative entropy with alpha=1 needs delta > 0")
        integrand = integrand + (state.c - c_star) ** 2 / (2.0 * float(params.delta))
    return G.integrate(state.grid, integrand), signed


def production_terms(state: "State", params: ModelParams) -> tuple[float, float, float]:
    """``((mn/p^2)||grad rho^p||^2, (||grad c||^2 + ||c||^2)/delta, int rho c / delta)``."""
    if params.delta <= 0:
        raise ModelError("production terms need delta > 0")
    grid = state.grid
    m, n, delta = float(params.m), float(params.n), float(params.delta)
    p = params.p
    rho_p = _positive_part(state.rho) ** p
    prod_rho = m * n / p**2 * G.gradient_sq_integral(grid, rho_p)
    prod_c = (G.gradient_sq_integral(grid, state.c) + G.lp_norm(grid, state.c, 2) ** 2) / delta
    coupling = G.integrate(grid, state.rho * state.c) / delta
    return prod_rho, prod_c, coupling


def record(state: "State", params: ModelParams,
           steady: tuple[float, float] | None = None) -> DiagnosticsRecord:
    """Full diagnostics for one state; quantities undefined at delta=0 are NaN."""
    grid = state.grid
    n = float(params.n)
    if params.delta > 0:
        prods = production_terms(state, params)
    else:
        prods = (math.nan, math.nan, math.nan)
    E = entropy(state, params) if (params.delta > 0 or not params.alpha) else math.nan
    E_rel = math.nan
    if steady is not None and (params.delta > 0 or not params.alpha):
        E_rel = relative_entropy(state, params, steady)[0]
    return DiagnosticsRecord(
        t=float(state.t),
        mass=G.integrate(grid, state.rho),
        entropy_E=E,
        rho_max=float(np.max(state.rho)),
        rho_Ln=G.lp_norm(grid, state.rho, n),
        c_L2=G.lp_norm(grid, state.c, 2),
        production_rho=prods[0],
        production_c=prods[1],
        coupling=prods[2],
        relative_entropy=E_rel,
    )


def fit_decay_rate(series: Sequence[tuple[float, float]],
                   window: tuple[float, float] | None = None,
                   reference_kappa: float = math.nan,
                   floor: float = DECAY_FLOOR) -> DecayFit:
    """Least-squares exponential rate of ``value ~ C exp(-rate t)``.

    The default window drops the first 20% of the time horizon.  Samples
    are taken up to (not including) the first value below ``floor``.
    """
    t = np.array([s[0] for s in series], dtype=float)
    y = np.array([s[1] for s in series], dtype=float)
    if window is None:
        t0, t1 = t[0] + 0.2 * (t[-1] - t[0]), t[-1]
    else:
        t0, t1 = window
    sel = (t >= t0) & (t <= t1)
    t, y = t[sel], y[sel]
    below = np.flatnonzero(y < floor)
    if below.size:
        t, y = t[: below[0]], y[: below[0]]
    if t.size < 10:
        raise DiagnosticsError(
            f"decay fit needs at least 10 samples above {floor:g} in [{t0:g}, {t1:g}], got {t.size}"
        )
    logy = np.log(y)
    slope, intercept = np.polyfit(t, logy, 1)
    resid = logy - (slope * t + intercept)
    ss_tot = float(np.sum((logy - logy.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - float(np.sum(resid**2)) / ss_tot
    return DecayFit(-float(slope), (float(t[0]), float(t[-1])), r2, reference_kappa, int(t.size))


def blow_up_report(trajectory: "Trajectory") -> BlowUpReport:
    suspected = trajectory.status == "blow_up_suspected"
    return BlowUpReport(
        suspected=suspected,
        t_estimate=float(trajectory.state.t),
        rho_max_history=list(trajectory.rho_max_history),
        trigger=trajectory.trigger if suspected else None,
    )


def write_csv(path, records: Iterable[DiagnosticsRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow(rec.row())


def read_csv(path) -> list[DiagnosticsRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise DiagnosticsError(f"unexpected diagnostics header {header}")
        return [DiagnosticsRecord(*map(float, row)) for row in reader]

