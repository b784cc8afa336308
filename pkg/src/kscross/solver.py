"""Implicit time stepping for the cross-diffusion Keller-Segel system.

Fully parabolic model (alpha = 1): one implicit Euler step solves

    (rho - rho_old)/tau = lap(phi(rho)) - div(rho grad c)
    (c - c_old)/tau     = lap(c) + delta lap(psi(rho)) + rho - c

for (rho, c) together by Newton's method, with ``phi(rho) = P(rho)^m``,
``psi(rho) = max(rho, 0)^n`` and ``P(rho) = max(rho, fd_floor)`` when
m < 1 (``max(rho, 0)`` otherwise).

Parabolic-elliptic model (alpha = 0): with ``v = c + delta psi(rho)``
the elliptic problem ``-lap(v) + v = rho + delta psi(rho)`` is solved for
the old density, then

    (rho - rho_old)/tau = lap(phi(rho) + delta n/(n+1) max(rho,0)^(n+1)) - div(rho grad v)

is solved for rho by Newton, and c is recovered from the new density.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from . import diagnostics
from .grid import Grid, GridError
from .linalg import solve_general, solve_spd
from .model import ModelParams

log = logging.getLogger(__name__)

ACCEPTED = "accepted"
REJECTED = "rejected_retry"
BLOW_UP = "blow_up_suspected"
FAILURE = "solver_failure"
COMPLETED = "completed"

Forcing = Callable[[float], tuple[np.ndarray, np.ndarray]]


class SolverFailure(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class State:
    grid: Grid
    rho: np.ndarray
    c: np.ndarray
    t: float = 0.0
    v: np.ndarray | None = None  # c + delta rho^n, kept for alpha = 0

    def __post_init__(self):
        self.grid.check_field(self.rho)
        self.grid.check_field(self.c)


@dataclass(frozen=True)
class StepperConfig:
    tau: float = 1e-3
    tau_min: float = 1e-9
    tau_max: float = 0.1
    newton_tol: float = 1e-10
    newton_max_iter: int = 25
    linear_tol: float = 1e-12
    linear_max_iter: int = 2000
    fd_floor: float = 0.005
    adapt: bool = True
    growth: float = 1.2
    shrink: float = 2.0
    cheap_newton: int = 5        # accepts using fewer Newton iterations count as cheap
    cheap_streak: int = 3        # grow tau after this many cheap accepts in a row
    hard_cap: float = 1e6
    growth_window: int = 20
    growth_factor: float = 10.0
    linear_solver: str = "krylov"   # "krylov" or "direct"
    drift: str = "upwind"           # "upwind" or "central"

    def __post_init__(self):
        if not 0 < self.tau_min <= self.tau <= self.tau_max:
            raise ValueError(
                f"need 0 < tau_min <= tau <= tau_max, got {self.tau_min}, {self.tau}, {self.tau_max}"
            )
        if self.newton_tol <= 0 or self.linear_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.fd_floor < 0:
            raise ValueError("fd_floor must be nonnegative")
        if self.growth < 1 or self.shrink <= 1:
            raise ValueError("need growth >= 1 and shrink > 1")
        if self.linear_solver not in ("krylov", "direct"):
            raise ValueError(f"unknown linear solver {self.linear_solver!r}")
        if self.drift not in ("upwind", "central"):
            raise ValueError(f"unknown drift scheme {self.drift!r}")


@dataclass
class StepOutcome:
    status: str
    state: State
    newton_iterations: int = 0
    linear_iterations: int = 0
    tau: float = 0.0
    residual: float = math.nan
    next_tau: float | None = None
    message: str = ""


# -- nonlinear constitutive functions ----------------------------------------

def _power_with_derivative(base, active, expo):
    """``base^expo`` and its derivative, the latter zeroed where ``active`` is False."""
    value = base**expo
    safe = np.where(active, base, 1.0)
    deriv = np.where(active, expo * safe ** (expo - 1.0), 0.0)
    return value, deriv


def cell_diffusion(rho, params: ModelParams, fd_floor: float):
    """Projected ``rho^m`` and its derivative."""
    m = float(params.m)
    floor = fd_floor if m < 1 else 0.0
    base = np.maximum(rho, floor)
    return _power_with_derivative(base, rho > floor, m)


def cross_diffusion(rho, params: ModelParams):
    """``max(rho, 0)^n`` and its derivative."""
    return _power_with_derivative(np.maximum(rho, 0.0), rho > 0, float(params.n))


def _face_rho(grid: Grid, rho, g, scheme: str):
    """Face density and the (n_faces x n_cells) matrix mapping rho to it."""
    left, right, _ = grid.faces
    nf = left.size
    if scheme == "central":
        rows = np.concatenate([np.arange(nf), np.arange(nf)])
        cols = np.concatenate([left, right])
        sel = sp.csr_matrix((np.full(2 * nf, 0.5), (rows, cols)), shape=(nf, grid.n_active))
        return 0.5 * (rho[left] + rho[right]), sel
    up = np.where(g >= 0, left, right)
    sel = sp.csr_matrix((np.ones(nf), (np.arange(nf), up)), shape=(nf, grid.n_active))
    return rho[up], sel


def _wnorm(grid: Grid, f) -> float:
    return float(np.sqrt(np.dot(f, f) * grid.cell_volume))


def _roundoff_floor(grid: Grid, tau: float, *fields) -> float:
    """Residual size that rounding alone produces for fields of this size.

    Differences of nearly equal neighbours are exact in floating point, so
    the Laplacian part scales with the variation of each field about its
    mean, not with its magnitude.
    """
    eps = np.finfo(float).eps
    lap_norm = 4.0 * grid.dim / float(np.min(grid.spacing)) ** 2
    total = 0.0
    for f in fields:
        total += _wnorm(grid, f) / tau + lap_norm * _wnorm(grid, f - np.mean(f))
    return 8.0 * eps * total


# -- linear elliptic problem ---------------------------------------------------

def elliptic_solve(grid: Grid, rhs: np.ndarray, cfg: StepperConfig,
                   x0: np.ndarray | None = None) -> np.ndarray:
    """Solve ``-lap(v) + v = rhs`` with no-flux boundary conditions.

    Raises SolverFailure if CG does not reach ``linear_tol`` (relative
    residual) within ``linear_max_iter`` iterations.  The tolerance is
    raised to the rounding floor of the operator when ``linear_tol`` is
    below it; ``|(I - lap)^-1| <= 1`` bounds that floor by ``eps |A|``.
    """
    A = grid.helmholtz_matrix
    a_norm = 1.0 + 4.0 * grid.dim / float(np.min(grid.spacing)) ** 2
    tol = max(cfg.linear_tol, 16.0 * np.finfo(float).eps * a_norm)
    # constants are exact eigenvectors (A 1 = 1), so only the fluctuation
    # goes through CG and the relative tolerance applies to it alone
    mean = float(np.mean(rhs))
    guess = None if x0 is None else x0 - mean
    res = solve_spd(A, rhs - mean, tol, cfg.linear_max_iter, x0=guess)
    if not res.converged:
        raise SolverFailure(
            f"elliptic solve stalled at relative residual {res.residual:.3g} "
            f"after {res.iterations} iterations"
        )
    return res.x + mean


def v_from_rho(grid: Grid, rho, params: ModelParams, cfg: StepperConfig, x0=None):
    """Return ``(v, c)`` with ``-lap v + v = rho + delta psi(rho)`` and ``c = v - delta psi``."""
    psi, _ = cross_diffusion(rho, params)
    delta = float(params.delta)
    v = elliptic_solve(grid, rho + delta * psi, cfg, x0=x0)
    return v, v - delta * psi


def consistent_state(state: State, params: ModelParams, cfg: StepperConfig) -> State:
    """For alpha = 0 replace c by the elliptic solution for the current rho."""
    if params.alpha:
        return state
    v, c = v_from_rho(state.grid, state.rho, params, cfg)
    return replace(state, c=c, v=v)


# -- shared Newton driver ------------------------------------------------------

def _newton(grid, u0, residual, jacobian, cfg, tau, floor_fields):
    """Damped-free Newton iteration; returns (u, its, lin_its, resnorm, ok, msg)."""
    u = u0.copy()
    F = residual(u)
    norm0 = _wnorm(grid, F)
    floor = _roundoff_floor(grid, tau, *floor_fields)
    target = max(cfg.newton_tol * norm0, floor)
    if norm0 <= floor:
        return u, 0, 0, norm0, True, ""
    lin_total = 0
    prev = norm0
    for it in range(1, cfg.newton_max_iter + 1):
        J = jacobian(u)
        sol = solve_general(J, -F, cfg.linear_tol, cfg.linear_max_iter, cfg.linear_solver)
        lin_total += sol.iterations
        if not sol.converged:
            return u, it, lin_total, math.nan, False, f"linear solve failed (res {sol.residual:.2g})"
        u = u + sol.x
        F = residual(u)
        norm = _wnorm(grid, F)
        if not np.isfinite(norm):
            return u, it, lin_total, norm, False, "non-finite residual"
        if norm <= target:
            return u, it, lin_total, norm, True, ""
        if norm <= 100.0 * floor and norm > 0.5 * prev:
            # stagnated at rounding level
            return u, it, lin_total, norm, True, ""
        prev = norm
        if norm > 1e6 * norm0:
            return u, it, lin_total, norm, False, "Newton diverged"
    return u, cfg.newton_max_iter, lin_total, norm, False, "Newton iteration cap reached"


def classify_breakdown(rho_max_history: Sequence[float] | None, cfg: StepperConfig) -> str:
    """Terminal status once tau has underflowed ``tau_min``."""
    if not rho_max_history:
        return FAILURE
    window = list(rho_max_history)[-(cfg.growth_window + 1):]
    if window[0] > 0 and window[-1] / window[0] >= cfg.growth_factor:
        return BLOW_UP
    return FAILURE


def _rejected(state, tau, cfg, its, lin, msg, rho_max_history):
    next_tau = tau / cfg.shrink
    status = REJECTED
    if next_tau < cfg.tau_min and rho_max_history is not None:
        status = classify_breakdown(rho_max_history, cfg)
    return StepOutcome(status, state, its, lin, tau, math.nan, next_tau, msg)


def _accept_density(grid, rho, mass_old):
    """Clip negative cells; None if the clipped mass is not negligible."""
    negative = float(np.sum(np.maximum(-rho, 0.0)) * grid.cell_volume)
    if negative > 1e-12 * abs(mass_old) + 1e-300:
        return None
    return np.maximum(rho, 0.0)


# -- alpha = 1 -----------------------------------------------------------------

def step_fully_parabolic(state: State, params: ModelParams, cfg: StepperConfig,
                         tau: float | None = None, forcing: Forcing | None = None,
                         rho_max_history: Sequence[float] | None = None) -> StepOutcome:
    """One implicit Euler step of the coupled (rho, c) system."""
    if params.alpha != 1:
        raise ValueError("step_fully_parabolic needs alpha = 1")
    tau = cfg.tau if tau is None else tau
    grid = state.grid
    na = grid.n_active
    L, D, Gm = grid.laplacian_matrix, grid.divergence_matrix, grid.gradient_matrix
    I = sp.identity(na, format="csr")
    delta = float(params.delta)
    rho_old, c_old = state.rho, state.c
    t_new = state.t + tau
    f_rho, f_c = forcing(t_new) if forcing is not None else (0.0, 0.0)

    def residual(u):
        rho, c = u[:na], u[na:]
        phi, _ = cell_diffusion(rho, params, cfg.fd_floor)
        psi, _ = cross_diffusion(rho, params)
        g = Gm @ c
        rho_f, _ = _face_rho(grid, rho, g, cfg.drift)
        F1 = (rho - rho_old) / tau - L @ phi + D @ (rho_f * g) - f_rho
        F2 = (c - c_old) / tau - L @ c - delta * (L @ psi) - rho + c - f_c
        return np.concatenate([F1, F2])

    def jacobian(u):
        rho, c = u[:na], u[na:]
        _, dphi = cell_diffusion(rho, params, cfg.fd_floor)
        _, dpsi = cross_diffusion(rho, params)
        g = Gm @ c
        rho_f, sel = _face_rho(grid, rho, g, cfg.drift)
        J11 = I / tau - L @ sp.diags(dphi) + D @ sp.diags(g) @ sel
        J12 = D @ sp.diags(rho_f) @ Gm
        J21 = -delta * (L @ sp.diags(dpsi)) - I
        J22 = (1.0 / tau + 1.0) * I - L
        return sp.bmat([[J11, J12], [J21, J22]], format="csc")

    u0 = np.concatenate([rho_old, c_old])
    u, its, lin, norm, ok, msg = _newton(grid, u0, residual, jacobian, cfg, tau,
                                         (rho_old, c_old, rho_old ** max(float(params.m), 1.0)))
    if not ok:
        return _rejected(state, tau, cfg, its, lin, msg, rho_max_history)
    mass_old = float(np.sum(rho_old) * grid.cell_volume)
    rho = _accept_density(grid, u[:na], mass_old)
    if rho is None:
        return _rejected(state, tau, cfg, its, lin, "negative density", rho_max_history)
    new = State(grid, rho, u[na:].copy(), t_new)
    return StepOutcome(ACCEPTED, new, its, lin, tau, norm)


# -- alpha = 0 -----------------------------------------------------------------

def step_parabolic_elliptic(state: State, params: ModelParams, cfg: StepperConfig,
                            tau: float | None = None,
                            rho_max_history: Sequence[float] | None = None) -> StepOutcome:
    """Elliptic solve for v, implicit Euler for rho in the v-form, recover c."""
    if params.alpha != 0:
        raise ValueError("step_parabolic_elliptic needs alpha = 0")
    tau = cfg.tau if tau is None else tau
    grid = state.grid
    na = grid.n_active
    L, D, Gm = grid.laplacian_matrix, grid.divergence_matrix, grid.gradient_matrix
    I = sp.identity(na, format="csr")
    delta, n = float(params.delta), float(params.n)
    rho_old = state.rho
    try:
        v, _ = v_from_rho(grid, rho_old, params, cfg, x0=state.v)
    except SolverFailure as exc:
        return StepOutcome(FAILURE, state, tau=tau, message=str(exc))
    g = Gm @ v
    weight = delta * n / (n + 1.0)

    def potential(rho):
        phi, dphi = cell_diffusion(rho, params, cfg.fd_floor)
        high, dhigh = _power_with_derivative(np.maximum(rho, 0.0), rho > 0, n + 1.0)
        return phi + weight * high, dphi + weight * dhigh

    def residual(rho):
        Phi, _ = potential(rho)
        rho_f, _ = _face_rho(grid, rho, g, cfg.drift)
        return (rho - rho_old) / tau - L @ Phi + D @ (rho_f * g)

    def jacobian(rho):
        _, dPhi = potential(rho)
        _, sel = _face_rho(grid, rho, g, cfg.drift)
        return (I / tau - L @ sp.diags(dPhi) + D @ sp.diags(g) @ sel).tocsc()

    rho, its, lin, norm, ok, msg = _newton(grid, rho_old, residual, jacobian, cfg, tau,
                                           (rho_old, potential(rho_old)[0]))
    if not ok:
        return _rejected(state, tau, cfg, its, lin, msg, rho_max_history)
    mass_old = float(np.sum(rho_old) * grid.cell_volume)
    rho = _accept_density(grid, rho, mass_old)
    if rho is None:
        return _rejected(state, tau, cfg, its, lin, "negative density", rho_max_history)
    try:
        v_new, c_new = v_from_rho(grid, rho, params, cfg, x0=v)
    except SolverFailure as exc:
        return StepOutcome(FAILURE, state, its, lin, tau, norm, message=str(exc))
    return StepOutcome(ACCEPTED, State(grid, rho, c_new, state.t + tau, v_new), its, lin, tau, norm)


def step(state, params, cfg, tau=None, forcing=None, rho_max_history=None) -> StepOutcome:
    if params.alpha:
        return step_fully_parabolic(state, params, cfg, tau, forcing, rho_max_history)
    if forcing is not None:
        raise ValueError("forcing terms are only supported for alpha = 1")
    return step_parabolic_elliptic(state, params, cfg, tau, rho_max_history)


# -- driver ----------------------------------------------------------------------

@dataclass
class Trajectory:
    status: str
    state: State                       # last accepted state
    records: list = field(default_factory=list)
    rho_max_history: list = field(default_factory=list)   # (t, rho_max)
    snapshots: list = field(default_factory=list)
    steps: int = 0
    rejections: int = 0
    trigger: str | None = None
    newton_iterations: int = 0
    linear_iterations: int = 0
    message: str = ""

    @property
    def times(self) -> np.ndarray:
        return np.array([r.t for r in self.records])


Observer = Callable[[State, "diagnostics.DiagnosticsRecord"], None]


def run(initial: State, params: ModelParams, cfg: StepperConfig, t_end: float,
        observers: Iterable[Observer] = (), snapshot_times: Sequence[float] = (),
        forcing: Forcing | None = None, steady: tuple[float, float] | None = None,
        record_every: int = 1) -> Trajectory:
    """Advance ``initial`` to ``t_end`` or until a terminal outcome.

    Diagnostics are recorded for the initial state and after every
    ``record_every``-th accepted step (and always for the last one).
    Steps are shortened to land exactly on ``t_end`` and snapshot times.
    """
    if initial.grid.dim != params.dim:
        raise GridError(f"grid is {initial.grid.dim}-D but params.dim = {params.dim}")
    observers = list(observers)
    state = consistent_state(initial, params, cfg)
    pending = sorted(t for t in snapshot_times if state.t <= t <= t_end)
    traj = Trajectory(COMPLETED, state)

    def observe(s):
        rec = diagnostics.record(s, params, steady)
        traj.records.append(rec)
        for obs in observers:
            obs(s, rec)

    def take_snapshots(s):
        while pending and pending[0] <= s.t + 1e-12 * max(1.0, abs(s.t)):
            traj.snapshots.append(s)
            pending.pop(0)

    observe(state)
    take_snapshots(state)
    rho_max = [float(np.max(state.rho))]
    traj.rho_max_history.append((state.t, rho_max[0]))
    tau = cfg.tau
    cheap = 0
    eps_t = 1e-12 * max(1.0, abs(t_end))

    while state.t < t_end - eps_t:
        target = t_end if not pending else min(t_end, pending[0])
        remaining = target - state.t
        clipped = remaining <= tau * (1 + 1e-9)
        tau_try = remaining if clipped else tau
        out = step(state, params, cfg, tau_try, forcing, rho_max_history=rho_max)
        traj.newton_iterations += out.newton_iterations
        traj.linear_iterations += out.linear_iterations
        if out.status == ACCEPTED:
            new = out.state
            if clipped:
                new = replace(new, t=target)
            state = new
            traj.state = state
            traj.steps += 1
            rho_max.append(float(np.max(state.rho)))
            traj.rho_max_history.append((state.t, rho_max[-1]))
            at_end = state.t >= t_end - eps_t
            if traj.steps % record_every == 0 or at_end:
                observe(state)
            take_snapshots(state)
            if rho_max[-1] > cfg.hard_cap:
                traj.status, traj.trigger = BLOW_UP, "hard_cap"
                traj.message = f"rho_max {rho_max[-1]:.4g} exceeds hard cap {cfg.hard_cap:.4g}"
                break
            if cfg.adapt and not clipped:
                cheap = cheap + 1 if out.newton_iterations < cfg.cheap_newton else 0
                if cheap >= cfg.cheap_streak:
                    tau = min(tau * cfg.growth, cfg.tau_max)
                    cheap = 0
            continue
        traj.rejections += 1
        cheap = 0
        log.debug("t=%.6g tau=%.3g rejected: %s", state.t, tau_try, out.message)
        if out.status in (BLOW_UP, FAILURE):
            traj.status = out.status
            traj.trigger = "tau_underflow" if out.status == BLOW_UP else None
            traj.message = out.message or f"tau fell below tau_min={cfg.tau_min:g}"
            break
        tau = out.next_tau
        if tau < cfg.tau_min:
            # steps without history classification still end the run
            traj.status = classify_breakdown(rho_max, cfg)
            traj.trigger = "tau_underflow" if traj.status == BLOW_UP else None
            traj.message = out.message
            break

    if traj.records[-1].t != state.t:
        observe(state)
    return traj
