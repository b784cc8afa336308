import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from kscross import diagnostics as D
from kscross import grid as G
from kscross.grid import Ball, Box, GridError, build_grid
from kscross.model import ModelParams
from kscross.solver import (
    ACCEPTED, BLOW_UP, COMPLETED, FAILURE, REJECTED, SolverFailure, State, StepperConfig,
    classify_breakdown, consistent_state, elliptic_solve, run, step, step_fully_parabolic,
    step_parabolic_elliptic, v_from_rho,
)

LINE = build_grid(Box((0.0,), (1.0,)), 40)


def _smooth_random(grid, rng, lo=0.2):
    x = grid.centers[:, 0]
    k = rng.integers(1, 4, size=3)
    a = rng.uniform(-1, 1, size=3)
    f = sum(ai * np.cos(ki * np.pi * x) for ai, ki in zip(a, k))
    return lo + (f - f.min())


def test_stepper_config_validation():
    with pytest.raises(ValueError):
        StepperConfig(tau=1.0, tau_max=0.1)
    with pytest.raises(ValueError):
        StepperConfig(newton_tol=0)
    with pytest.raises(ValueError):
        StepperConfig(linear_solver="magic")
    with pytest.raises(ValueError):
        StepperConfig(drift="downwind")
    with pytest.raises(ValueError):
        StepperConfig(shrink=1.0)


def test_state_checks_field_shapes():
    with pytest.raises(GridError):
        State(LINE, np.zeros(3), LINE.zeros())


@pytest.mark.parametrize("alpha", [0, 1])
@pytest.mark.parametrize("m,n,delta", [(1.0, 2.0, 0.1), (0.5, 1.5, 0.005), (2.0, 1.5, 0.0)])
def test_constant_state_is_fixed_point(alpha, m, n, delta):
    params = ModelParams(m, n, delta, alpha, 1)
    a = 1.7
    state = State(LINE, LINE.constant(a), LINE.constant(a))
    out = step(consistent_state(state, params, StepperConfig()), params, StepperConfig(tau=0.05, tau_max=0.1))
    assert out.status == ACCEPTED
    np.testing.assert_allclose(out.state.rho, a, rtol=1e-13)
    np.testing.assert_allclose(out.state.c, a, rtol=1e-12)


def test_zero_density_lets_c_decay_implicitly():
    params = ModelParams(1.0, 2.0, 0.1, 1, 1)
    tau, c0 = 0.1, 3.0
    state = State(LINE, LINE.zeros(), LINE.constant(c0))
    for k in range(1, 4):
        out = step_fully_parabolic(state, params, StepperConfig(tau=tau), tau)
        state = out.state
        np.testing.assert_array_equal(state.rho, 0.0)
        np.testing.assert_allclose(state.c, c0 / (1 + tau) ** k, rtol=1e-13)


def test_parabolic_elliptic_constant_gives_v():
    a, delta = 2.0, 0.3
    params = ModelParams(1.0, 2.0, delta, 0, 1)
    v, c = v_from_rho(LINE, LINE.constant(a), params, StepperConfig())
    np.testing.assert_allclose(v, a + delta * a**2, rtol=1e-14)
    np.testing.assert_allclose(c, a, rtol=1e-14)


def test_elliptic_solve_examples():
    cfg = StepperConfig()
    np.testing.assert_allclose(elliptic_solve(LINE, LINE.constant(4.0), cfg), 4.0, rtol=1e-14)
    errs = []
    for n in (40, 80, 160):
        g = build_grid(Box((0.0,), (1.0,)), n)
        x = g.centers[:, 0]
        v = elliptic_solve(g, (1 + np.pi**2) * np.cos(np.pi * x) + 2.0, cfg)
        errs.append(G.lp_norm(g, v - np.cos(np.pi * x) - 2.0, 2))
        rhs = 1 + x**3
        w = elliptic_solve(g, rhs, cfg)
        assert G.integrate(g, w) == pytest.approx(G.integrate(g, rhs), rel=1e-12)
        res = g.helmholtz_matrix @ w - rhs
        assert np.linalg.norm(res) <= 1e-9 * np.linalg.norm(rhs)
    assert math.log2(errs[0] / errs[1]) > 1.9
    assert math.log2(errs[1] / errs[2]) > 1.9


def test_elliptic_solve_iteration_cap():
    g = build_grid(Box((0.0, 0.0), (1.0, 1.0)), 32)
    rhs = np.random.default_rng(0).normal(size=g.n_active)
    with pytest.raises(SolverFailure):
        elliptic_solve(g, rhs, StepperConfig(linear_max_iter=2))


def test_v_recovery_after_each_step():
    params = ModelParams(1.0, 2.0, 0.5, 0, 1)
    rng = np.random.default_rng(1)
    state = consistent_state(State(LINE, _smooth_random(LINE, rng), LINE.zeros()), params, StepperConfig())
    cfg = StepperConfig(tau=0.01)
    for _ in range(5):
        out = step_parabolic_elliptic(state, params, cfg)
        assert out.status == ACCEPTED
        state = out.state
        np.testing.assert_allclose(state.c + params.delta * state.rho**2, state.v, rtol=1e-12, atol=1e-12)
        lhs = LINE.helmholtz_matrix @ state.v
        np.testing.assert_allclose(lhs, state.rho + params.delta * state.rho**2, rtol=1e-9)


def test_wrong_alpha_rejected():
    state = State(LINE, LINE.constant(1.0), LINE.constant(1.0))
    with pytest.raises(ValueError):
        step_fully_parabolic(state, ModelParams(1, 2, 0.1, 0, 1), StepperConfig())
    with pytest.raises(ValueError):
        step_parabolic_elliptic(state, ModelParams(1, 2, 0.1, 1, 1), StepperConfig())
    with pytest.raises(ValueError):
        step(state, ModelParams(1, 2, 0.1, 0, 1), StepperConfig(), forcing=lambda t: (0.0, 0.0))


def test_run_dimension_mismatch():
    state = State(LINE, LINE.constant(1.0), LINE.constant(1.0))
    with pytest.raises(GridError):
        run(state, ModelParams(1, 2, 0.1, 1, 2), StepperConfig(), 1.0)


@pytest.mark.parametrize("alpha", [0, 1])
@settings(max_examples=6, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(seed=st.integers(0, 2**31))
def test_mass_and_nonnegativity_random_data(alpha, seed):
    rng = np.random.default_rng(seed)
    params = ModelParams(1.0, 2.0, 0.1, alpha, 1)
    rho0 = _smooth_random(LINE, rng, lo=0.0)
    traj = run(State(LINE, rho0, LINE.zeros()), params, StepperConfig(tau=1e-3, tau_max=0.02), 0.2)
    assert traj.status == COMPLETED
    masses = np.array([r.mass for r in traj.records])
    assert np.max(np.abs(masses / masses[0] - 1)) <= 1e-8
    assert all(r.rho_max >= 0 for r in traj.records)
    assert np.all(traj.state.rho >= 0)


def test_fast_diffusion_on_disk_conserves_mass():
    g = build_grid(Ball((0.0, 0.0), 1.0), 16)
    params = ModelParams(0.5, 1.5, 0.005, 1, 2)
    rho0 = g.evaluate("80*(x^2+y^2-1)^2*(x-0.1)^2+5")
    traj = run(State(g, rho0, g.zeros()), params, StepperConfig(tau=1e-3, tau_max=0.01), 0.05)
    assert traj.status == COMPLETED
    m0, m1 = traj.records[0].mass, traj.records[-1].mass
    assert abs(m1 / m0 - 1) <= 1e-10


@settings(max_examples=8, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(seed=st.integers(0, 2**31))
def test_entropy_ledger_each_step(seed):
    rng = np.random.default_rng(seed)
    params = ModelParams(1.0, 2.0, 0.1, 1, 1)
    state = State(LINE, _smooth_random(LINE, rng), LINE.constant(rng.uniform(0, 1)))
    cfg = StepperConfig(tau=1e-3)
    for _ in range(10):
        out = step(state, params, cfg)
        assert out.status == ACCEPTED
        new = out.state
        dE = (D.entropy(new, params) - D.entropy(state, params)) / cfg.tau
        pr, pc, coup = D.production_terms(new, params)
        assert dE + pr + pc <= coup + 1e-6 * max(1.0, abs(D.entropy(new, params)))
        state = new


def test_parabolic_elliptic_entropy_stays_bounded():
    params = ModelParams(1.0, 2.0, 0.05, 0, 1)
    rho0 = LINE.evaluate("1+0.9*cos(pi*x)")
    traj = run(State(LINE, rho0, LINE.zeros()), params, StepperConfig(tau=1e-3, tau_max=0.05), 2.0)
    assert traj.status == COMPLETED
    # int rho^n/(n-1) with n = 2
    rho_part = [r.rho_Ln ** 2 for r in traj.records]
    assert max(rho_part) <= 1.01 * rho_part[0] + 1.0
    assert max(r.rho_max for r in traj.records) < 10


def test_local_error_with_forcing_scales_like_tau_plus_h2():
    from kscross.mms import default_case
    from kscross.expr import Expression
    case = default_case()
    ex_r, ex_c = Expression(case.exact_rho), Expression(case.exact_c)
    fr, fc = Expression(case.forcing_rho), Expression(case.forcing_c)
    errs = []
    for n, tau in ((40, 4e-3), (80, 1e-3), (160, 2.5e-4)):
        g = build_grid(Box((0.0,), (1.0,)), n)
        x = g.centers[:, 0]
        state = State(g, ex_r(x=x, t=0.0), ex_c(x=x, t=0.0))
        cfg = StepperConfig(tau=tau, tau_max=tau, drift="central")
        out = step_fully_parabolic(state, case.params, cfg, tau,
                                   forcing=lambda t: (fr(x=x, t=t), fc(x=x, t=t)))
        err = G.lp_norm(g, out.state.rho - ex_r(x=x, t=tau), 2)
        errs.append(err / tau)  # consistency error per unit time
    assert errs[0] / errs[1] > 3.0
    assert errs[1] / errs[2] > 3.0


def test_run_zero_horizon():
    params = ModelParams(1.0, 2.0, 0.1, 1, 1)
    state = State(LINE, LINE.constant(1.0), LINE.constant(1.0))
    traj = run(state, params, StepperConfig(), 0.0)
    assert traj.steps == 0 and traj.status == COMPLETED
    assert traj.state.t == 0.0
    assert len(traj.records) == 1


def test_run_constant_data_has_identical_diagnostics():
    params = ModelParams(1.0, 2.0, 0.1, 1, 1)
    state = State(LINE, LINE.constant(2.0), LINE.constant(2.0))
    traj = run(state, params, StepperConfig(tau=0.05, tau_max=0.05), 1.0, steady=(2.0, 2.0))
    assert traj.steps == 20
    first = traj.records[0]
    for rec in traj.records[1:]:
        for name in ("mass", "entropy_E", "rho_max", "c_L2", "production_c", "coupling"):
            assert getattr(rec, name) == pytest.approx(getattr(first, name), rel=1e-12)
        assert rec.relative_entropy == pytest.approx(0.0, abs=1e-20)


def test_run_lands_on_snapshot_times_and_t_end():
    params = ModelParams(1.0, 2.0, 0.1, 1, 1)
    rho0 = LINE.evaluate("1+0.5*cos(pi*x)")
    seen = []
    traj = run(State(LINE, rho0, LINE.zeros()), params, StepperConfig(tau=0.03, tau_max=0.03), 0.25,
               observers=[lambda s, rec: seen.append(rec.t)], snapshot_times=(0.0, 0.1, 0.2))
    assert [s.t for s in traj.snapshots] == pytest.approx([0.0, 0.1, 0.2], abs=1e-12)
    assert traj.state.t == pytest.approx(0.25, abs=1e-12)
    assert seen[0] == 0.0 and seen[-1] == pytest.approx(0.25)
    assert np.all(np.diff(traj.times) > 0)


def test_time_step_grows_after_cheap_steps():
    params = ModelParams(1.0, 2.0, 0.1, 1, 1)
    state = State(LINE, LINE.constant(1.0), LINE.constant(1.0))
    cfg = StepperConfig(tau=0.01, tau_max=1.0)
    traj = run(state, params, cfg, 1.0)
    ts = traj.times
    steps = np.diff(ts)
    assert steps[3] == pytest.approx(0.012)   # grown once after three cheap accepts
    assert traj.steps < 100
    no_adapt = run(state, params, replace(cfg, adapt=False), 0.1)
    np.testing.assert_allclose(np.diff(no_adapt.times), 0.01, rtol=1e-9)


def test_rejection_shrinks_step():
    params = ModelParams(1.0, 2.0, 0.1, 1, 1)
    rho0 = LINE.evaluate("1+0.9*cos(pi*x)")
    cfg = StepperConfig(tau=0.05, tau_max=0.05, newton_max_iter=2, newton_tol=1e-12)
    out = step(State(LINE, rho0, LINE.zeros()), params, cfg)
    assert out.status == REJECTED
    assert out.next_tau == pytest.approx(0.025)
    traj = run(State(LINE, rho0, LINE.zeros()), params, cfg, 0.05)
    assert traj.rejections >= 1
    assert traj.status == COMPLETED


def test_classify_breakdown():
    cfg = StepperConfig()
    assert classify_breakdown([1.0] * 5 + [20.0], cfg) == BLOW_UP
    assert classify_breakdown([1.0] * 30, cfg) == FAILURE
    assert classify_breakdown([], cfg) == FAILURE
    # growth must happen within the last growth_window steps
    assert classify_breakdown([1.0] + [50.0] * 30, cfg) == FAILURE


def test_hard_cap_triggers_blow_up():
    params = ModelParams(1.0, 2.0, 0.1, 1, 1)
    rho0 = LINE.evaluate("1+0.5*cos(pi*x)")
    traj = run(State(LINE, rho0, LINE.zeros()), params, StepperConfig(hard_cap=1.2), 1.0)
    assert traj.status == BLOW_UP and traj.trigger == "hard_cap"
    assert traj.state.t < 1.0
    report = D.blow_up_report(traj)
    assert report.suspected and report.trigger == "hard_cap"


def test_tau_underflow_with_growth_is_blow_up():
    params = ModelParams(1.0, 2.0, 0.1, 1, 1)
    rho0 = LINE.evaluate("1+0.5*cos(pi*x)")
    state = State(LINE, rho0, LINE.zeros())
    cfg = StepperConfig(tau=1e-3, tau_min=1e-3, newton_max_iter=1, newton_tol=1e-14)
    out = step(state, params, cfg, rho_max_history=[0.1] * 3 + [1.5])
    assert out.status == BLOW_UP
    out = step(state, params, cfg, rho_max_history=[1.5] * 4)
    assert out.status == FAILURE


def test_direct_and_krylov_agree():
    params = ModelParams(0.5, 1.5, 0.005, 1, 2)
    g = build_grid(Ball((0.0, 0.0), 1.0), 12)
    state = State(g, g.evaluate("80*(x^2+y^2-1)^2*(x-0.1)^2+5"), g.zeros())
    a = step(state, params, StepperConfig(linear_solver="krylov"))
    b = step(state, params, StepperConfig(linear_solver="direct"))
    np.testing.assert_allclose(a.state.rho, b.state.rho, rtol=1e-8)
