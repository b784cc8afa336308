import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kscross import diagnostics as D
from kscross import grid as G
from kscross.grid import Ball, Box, build_grid
from kscross.model import ModelError, ModelParams
from kscross.solver import State, StepperConfig, Trajectory, run

UNIT = build_grid(Box((0.0,), (1.0,)), 32)


def _state(rho, c, grid=UNIT):
    return State(grid, np.asarray(rho, float) * np.ones(grid.n_active), np.asarray(c, float) * np.ones(grid.n_active))


def test_entropy_examples():
    p = ModelParams(1.0, 2.0, 1.0, 1, 1)
    assert D.entropy(_state(0, 0), p) == 0.0
    assert D.entropy(_state(1, 0), p) == pytest.approx(1.0, rel=1e-14)
    with pytest.raises(ModelError):
        D.entropy(_state(1, 0), ModelParams(1.0, 2.0, 0.0, 1, 1))
    # alpha = 0 drops the c term, so delta = 0 is fine
    assert D.entropy(_state(1, 5), ModelParams(1.0, 2.0, 0.0, 0, 1)) == pytest.approx(1.0)


def test_entropy_matches_rational_requadrature():
    rng = np.random.default_rng(7)
    g = build_grid(Ball((0.0, 0.0), 1.0), 12)
    rho, c = rng.uniform(0, 3, g.n_active), rng.normal(size=g.n_active)
    p = ModelParams(1.0, 3.0, 0.25, 1, 2)
    exact = sum(Fraction(float(r)) ** 3 / 2 + Fraction(float(ci)) ** 2 * 2 for r, ci in zip(rho, c))
    exact *= Fraction(float(g.cell_volume))
    assert D.entropy(State(g, rho, c), p) == pytest.approx(float(exact), rel=1e-12)


def test_entropy_is_additive_over_cell_sets():
    rng = np.random.default_rng(2)
    rho = rng.uniform(0, 2, UNIT.n_active)
    p = ModelParams(1.0, 2.5, 0.0, 0, 1)
    half = np.arange(UNIT.n_active) < UNIT.n_active // 2
    total = D.entropy(State(UNIT, rho, UNIT.zeros()), p)
    a = D.entropy(State(UNIT, np.where(half, rho, 0.0), UNIT.zeros()), p)
    b = D.entropy(State(UNIT, np.where(half, 0.0, rho), UNIT.zeros()), p)
    assert a + b == pytest.approx(total, rel=1e-13)


def test_entropy_quadrature_is_second_order():
    p = ModelParams(1.0, 2.0, 0.5, 1, 1)
    # int (1 + x^2)^2 over [0,1] = 28/15, c = x gives int c^2 / (2 delta) = 1/3
    exact = 28 / 15 + 1 / 3
    errs = []
    for n in (16, 32, 64):
        g = build_grid(Box((0.0,), (1.0,)), n)
        x = g.centers[:, 0]
        errs.append(abs(D.entropy(State(g, 1 + x**2, x), p) - exact))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.02)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.02)


def test_relative_entropy_examples():
    p0 = ModelParams(1.0, 2.0, 0.0, 0, 1)
    assert D.relative_entropy(_state(2, 2), p0, (2.0, 2.0)) == (0.0, False)
    value, signed = D.relative_entropy(_state(3, 0), p0, (2.0, 2.0))
    assert value == pytest.approx(1.0) and not signed
    rho = np.where(UNIT.centers[:, 0] < 0.5, 1.0, 3.0)
    value, signed = D.relative_entropy(State(UNIT, rho, UNIT.zeros()), ModelParams(1.0, 3.0, 0, 0, 1), (2.0, 2.0))
    assert signed
    assert value == pytest.approx(0.0, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_relative_entropy_n2_is_squared_l2_distance(seed):
    rng = np.random.default_rng(seed)
    rho = rng.uniform(0, 4, UNIT.n_active)
    p = ModelParams(1.0, 2.0, 0.0, 0, 1)
    value, signed = D.relative_entropy(State(UNIT, rho, UNIT.zeros()), p, (1.5, 1.5))
    assert not signed
    assert value == pytest.approx(G.lp_norm(UNIT, rho - 1.5, 2) ** 2, rel=1e-12)


def test_production_terms_examples():
    p = ModelParams(1.0, 2.0, 0.5, 1, 1)
    assert D.production_terms(_state(0, 0), p) == (0.0, 0.0, 0.0)
    a, b = 2.0, 3.0
    pr, pc, coup = D.production_terms(_state(a, b), p)
    assert pr == 0.0
    assert pc == pytest.approx(b**2 / 0.5, rel=1e-14)
    assert coup == pytest.approx(a * b / 0.5, rel=1e-14)
    with pytest.raises(ModelError):
        D.production_terms(_state(1, 1), ModelParams(1.0, 2.0, 0.0, 1, 1))


def test_production_terms_against_independent_evaluation():
    rng = np.random.default_rng(11)
    rho, c = rng.uniform(0, 2, UNIT.n_active), rng.normal(size=UNIT.n_active)
    m, n, delta = 0.8, 1.6, 0.3
    p = ModelParams(m, n, delta, 1, 1)
    pexp = (m + n - 1) / 2
    h = UNIT.spacing[0]
    rp = rho**pexp
    want_r = m * n / pexp**2 * np.sum(np.diff(rp) ** 2) / h
    want_c = (np.sum(np.diff(c) ** 2) / h + np.sum(c**2) * h) / delta
    want_k = np.sum(rho * c) * h / delta
    got = D.production_terms(State(UNIT, rho, c), p)
    np.testing.assert_allclose(got, (want_r, want_c, want_k), rtol=1e-12)


def test_record_nan_for_undefined_quantities():
    rec = D.record(_state(1, 1), ModelParams(0.5, 1.5, 0.0, 1, 1))
    assert math.isnan(rec.entropy_E) and math.isnan(rec.production_rho)
    assert rec.mass == pytest.approx(1.0)
    rec = D.record(_state(1, 1), ModelParams(1.0, 2.0, 0.5, 1, 1), steady=(1.0, 1.0))
    assert rec.relative_entropy == 0.0 and rec.entropy_E >= 0


def test_fit_decay_examples():
    t = np.linspace(0, 5, 51)
    fit = D.fit_decay_rate(list(zip(t, np.exp(-2 * t))), window=(0, 5))
    assert fit.fitted_rate == pytest.approx(2.0, rel=1e-10)
    assert fit.r_squared == pytest.approx(1.0)
    fit = D.fit_decay_rate(list(zip(t, np.full_like(t, 3.0))))
    assert fit.fitted_rate == pytest.approx(0.0, abs=1e-12)
    kappa = 0.25
    t = np.linspace(0, 40, 401)
    fit = D.fit_decay_rate(list(zip(t, np.exp(-kappa * t) * (1 + 0.01 * np.sin(t)))), reference_kappa=kappa)
    assert abs(fit.fitted_rate - kappa) / kappa < 0.02
    assert fit.passes


def test_fit_decay_default_window_drops_first_fifth():
    t = np.linspace(0, 10, 101)
    fit = D.fit_decay_rate(list(zip(t, np.exp(-t))))
    assert fit.window == (pytest.approx(2.0), 10.0)


def test_fit_decay_stops_at_floor_and_needs_ten_samples():
    t = np.linspace(0, 10, 101)
    y = np.exp(-5 * t)
    fit = D.fit_decay_rate(list(zip(t, y)), window=(0, 10))
    assert fit.window[1] < 6.0
    assert np.all(y[t <= fit.window[1]] >= D.DECAY_FLOOR)
    assert fit.fitted_rate == pytest.approx(5.0, rel=1e-10)
    with pytest.raises(D.DiagnosticsError):
        D.fit_decay_rate(list(zip(t[:9], y[:9])), window=(0, 10))
    with pytest.raises(D.DiagnosticsError):
        D.fit_decay_rate([(0.0, 1e-14)] * 20)


@settings(max_examples=50, deadline=None)
@given(scale=st.floats(1e-6, 1e6), rate=st.floats(0.1, 3.0))
def test_fit_decay_scale_invariant(scale, rate):
    t = np.linspace(0, 4, 41)
    y = np.exp(-rate * t) * (1 + 0.05 * np.cos(3 * t))
    a = D.fit_decay_rate(list(zip(t, y)))
    b = D.fit_decay_rate(list(zip(t, scale * y)))
    assert b.fitted_rate == pytest.approx(a.fitted_rate, rel=1e-9, abs=1e-9)


def test_blow_up_report_constant_run():
    p = ModelParams(1.0, 2.0, 0.1, 1, 1)
    traj = run(_state(1, 1), p, StepperConfig(tau=0.1, tau_max=0.1), 0.5)
    rep = D.blow_up_report(traj)
    assert not rep.suspected and rep.trigger is None
    assert rep.t_estimate == pytest.approx(0.5)


def test_blow_up_report_synthetic_series():
    traj = Trajectory("blow_up_suspected", _state(1, 1), trigger="hard_cap")
    traj.rho_max_history.extend([(0.0, 1.0), (0.1, 1e3), (0.2, 1e7)])
    rep = D.blow_up_report(traj)
    assert rep.suspected and rep.trigger == "hard_cap"
    assert rep.rho_max_history[-1] == (0.2, 1e7)


def test_csv_roundtrip(tmp_path):
    p = ModelParams(1.0, 2.0, 0.1, 1, 1)
    recs = [D.record(_state(1 + k * 0.1, 2), p, steady=(1.0, 1.0)) for k in range(3)]
    path = tmp_path / "diag.csv"
    D.write_csv(path, recs)
    header = path.read_text().splitlines()[0]
    assert header == "t,mass,E,rho_max,rho_Ln,c_L2,prod_rho,prod_c,coupling,E_rel"
    back = D.read_csv(path)
    assert back == recs
