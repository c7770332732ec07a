from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest

from rpom import fom
from rpom.errors import NonPositive, ShapeMismatch, UnsupportedOrder


# --------------------------------------------------------------- formulas

def test_rayleigh_number_frozen():
    assert fom.rayleigh_number(9.81, 2e-4, 1.5, 10.0, 2.0, 0.5) == pytest.approx(0.11772, rel=1e-12)
    with pytest.raises(NonPositive):
        fom.rayleigh_number(9.81, 0.0, 1.0, 1.0, 1.0, 1.0)


def test_adaptive_dt_frozen():
    assert fom.adaptive_dt(2.0, 0.1, 0.5, 1.0) == 0.025
    assert fom.adaptive_dt(2.0, 0.1, 0.5, 0.01) == 0.01
    assert fom.adaptive_dt(0.0, 0.1, 0.5, 0.01) == 0.01


@pytest.mark.parametrize("m", [1, 2, 3, 4])
def test_bdf_exact_on_polynomials(m):
    # BDF_m differentiates polynomials of degree <= m exactly (dt = 1, t_n = 0)
    a = fom.bdf_coefficients_exact(m)
    for k in range(m + 1):
        lhs = sum(ai * Fraction(-i) ** k for i, ai in enumerate(a))
        assert lhs == (1 if k == 1 else 0)


def test_bdf_coefficients_scale_with_dt():
    np.testing.assert_allclose(fom.bdf_coefficients(2, 0.5), [3.0, -4.0, 1.0])
    with pytest.raises(UnsupportedOrder):
        fom.bdf_coefficients(5, 0.1)
    with pytest.raises(NonPositive):
        fom.bdf_coefficients(2, 0.0)


# ---------------------------------------------------------------- pressure

def manufactured_error(n):
    g = fom.Grid(n, n)
    X, Y = g.cell_centers()
    exact = np.cos(np.pi * X) * np.cos(np.pi * Y)
    p = fom.solve_poisson(-2 * np.pi ** 2 * exact, g, tol=1e-13)
    return np.abs(p - (exact - exact.mean())).max()


def test_poisson_second_order():
    e = [manufactured_error(n) for n in (8, 16, 32)]
    rates = np.log2(np.array(e[:-1]) / np.array(e[1:]))
    assert np.all(rates > 1.9)
    assert e[-1] < 1e-3


def test_velocity_is_discretely_divergence_free(rng):
    g = fom.Grid(12, 8, 2.0, 1.0)
    T = rng.random(g.shape)
    p = fom.solve_pressure(T, 300.0, g, tol=1e-12)
    ux, uy = fom.compute_velocity(p, T, 300.0, g)
    assert np.all(ux[:, [0, -1]] == 0) and np.all(uy[[0, -1], :] == 0)
    assert np.abs(fom.divergence(ux, uy, g)).max() < 1e-8 * np.abs(uy).max() / g.h


def test_uniform_temperature_is_at_rest():
    g = fom.Grid(8, 8)
    T = np.full(g.shape, 0.7)
    p = fom.solve_pressure(T, 50.0, g, tol=1e-13)
    ux, uy = fom.compute_velocity(p, T, 50.0, g)
    assert fom.max_speed(ux, uy) < 1e-9


def test_pressure_shape_checks():
    g = fom.Grid(8, 8)
    with pytest.raises(ShapeMismatch):
        fom.solve_pressure(np.zeros((4, 4)), 1.0, g)
    with pytest.raises(ValueError):
        fom.solve_pressure(np.full(g.shape, np.nan), 1.0, g)


# -------------------------------------------------------------- temperature

def test_energy_conserved_without_dirichlet_or_flow(rng):
    sc = replace(fom.heated_side(10, 10), dirichlet=())
    g = sc.grid
    bc = fom.TemperatureBC.from_scenario(sc)
    T = rng.random(g.shape)
    ux, uy = np.zeros((10, 11)), np.zeros((11, 10))
    history = [T]
    for m in (1, 2, 3):
        history.append(fom.advance_temperature(history[-m:], ux, uy, 1e-3, m, 0.0, bc, g))
    np.testing.assert_allclose([h.sum() for h in history], T.sum(), rtol=1e-10)


def test_bdf1_step_obeys_maximum_principle(rng):
    sc = replace(fom.heated_side(12, 12), dirichlet=())
    g = sc.grid
    bc = fom.TemperatureBC.from_scenario(sc)
    T = rng.random(g.shape)
    p = fom.solve_pressure(T, 100.0, g, tol=1e-12)
    ux, uy = fom.compute_velocity(p, T, 100.0, g)
    dt = fom.adaptive_dt(fom.max_speed(ux, uy), g.h, 0.5, 1.0)
    out = fom.advance_temperature([T], ux, uy, dt, 1, 0.0, bc, g)
    assert out.min() >= T.min() - 1e-9 and out.max() <= T.max() + 1e-9


def test_advance_requires_history():
    sc = fom.heated_side(8, 8)
    bc = fom.TemperatureBC.from_scenario(sc)
    z = np.zeros((8, 8))
    with pytest.raises(ValueError):
        fom.advance_temperature([z], np.zeros((8, 9)), np.zeros((9, 8)), 1e-3, 2, 0.0, bc, sc.grid)
    with pytest.raises(UnsupportedOrder):
        fom.advance_temperature([z] * 5, np.zeros((8, 9)), np.zeros((9, 8)), 1e-3, 5, 0.0, bc, sc.grid)


# ------------------------------------------------------------------ scenarios

def test_scenario_validation():
    with pytest.raises(ValueError):
        fom.make_scenario("heated_side", 2, 8)
    with pytest.raises(ValueError):
        fom.Scenario("elder", 8, 8, dirichlet=(fom.Segment("bottom", 0.5, 1.5, 1.0),))
    with pytest.raises(KeyError):
        fom.make_scenario("lid_driven", 8, 8)
    with pytest.raises(ShapeMismatch):
        fom.heated_side(8, 8).ra_field([1.0, 2.0])
    with pytest.raises(NonPositive):
        fom.heated_side(8, 8).ra_field([-1.0])


def test_modified_elder_subdomain():
    ra = fom.modified_elder(32, 16).ra_field([400.0, 0.5])
    assert (ra == 0.5).sum() == 32  # a quarter of each extent: 8 x 4 cells
    assert (ra == 400.0).sum() == 32 * 16 - 32


@pytest.mark.parametrize("order", [1, 4])
def test_heated_side_run(order):
    params = fom.SolverParams(bdf_order=order, t_end=0.02)
    tr = fom.run_simulation(fom.heated_side(16, 16), params, [80.0])
    dts = np.diff(tr.times)
    assert tr.times[0] == 0.0 and tr.times[-1] == 0.02
    assert dts[0] == pytest.approx(params.dt0)
    assert np.all(dts > 0) and np.all(dts <= params.dt_max * (1 + 1e-12))
    assert tr.T.shape == (len(tr.times), 16, 16)
    # heat enters from the left wall and stays bounded by the wall values
    assert tr.T.min() >= -1e-10 and tr.T.max() <= 1 + 1e-10
    assert tr.T[-1][:, 0].mean() > tr.T[-1][:, -1].mean()


def test_run_is_deterministic():
    sc, sp = fom.heated_side(8, 8), fom.SolverParams(t_end=0.005)
    a = fom.run_simulation(sc, sp, [60.0])
    b = fom.run_simulation(sc, sp, [60.0])
    assert np.array_equal(a.T, b.T) and np.array_equal(a.times, b.times)


@pytest.mark.parametrize("ra", [100.0, 400.0])
def test_elder_upwelling_above_heater(ra):
    tr = fom.run_simulation(fom.elder(16, 8), fom.SolverParams(t_end=0.01), [ra], keep_velocity=True)
    # the two central columns sit above the middle of the heated strip
    assert np.all(tr.uy[-1][3:6, 7:9] > 0)
    assert tr.ux.shape == (len(tr.times), 8, 17) and tr.uy.shape == (len(tr.times), 9, 16)
