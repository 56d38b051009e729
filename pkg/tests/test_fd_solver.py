import math

import numpy as np
import pytest

from contact_hj.fd_solver import FDBlowUpError, FDParams, lf_step, resolve_alpha, solve_cp, step_size
from contact_hj.grid import GridFunction, PeriodicGrid, phi_eps_example, u1_example
from contact_hj.semigroup import SemigroupParams, evolve_final


def test_constant_law(H):
    g = PeriodicGrid(100)
    w = solve_cp(H, GridFunction.constant(g, 0.5), 1.0, FDParams(100)).final
    np.testing.assert_allclose(w.values, 0.5 * math.e**2, rtol=0.01)


def test_monotonicity_condition_holds(H):
    g = PeriodicGrid(200)
    phi = phi_eps_example(0.1, g)
    p = FDParams(200)
    a = resolve_alpha(H, phi, p)
    dt = step_size(H, a, p)
    assert dt * (a / g.dx + H.K1) <= 1.0
    # monotone: a nonnegative perturbation stays nonnegative after one step
    bump = np.zeros(g.N)
    bump[50] = 1e-3
    up = lf_step(H, GridFunction(g, phi.values + bump), p, dt=dt, alpha=a)
    base = lf_step(H, phi, p, dt=dt, alpha=a)
    assert np.all(up.values - base.values >= -1e-15)


def test_u1_stationary(H):
    g = PeriodicGrid(400)
    w = solve_cp(H, u1_example(g), 1.0, FDParams(400)).final
    assert w.distance(u1_example(g)) <= 0.02


def test_reach_example_on_fine_grid(H):
    g = PeriodicGrid(2000)
    w = solve_cp(H, phi_eps_example(0.1, g), 2.0, FDParams(2000), stride=10**9).final
    assert w.distance(u1_example(g)) <= 0.02


def test_agrees_with_semigroup(H):
    g = PeriodicGrid(200)
    phi = phi_eps_example(0.1, g)
    fd = solve_cp(H, phi, 0.5, FDParams(200), stride=10**9).final
    sl = evolve_final(H, phi, 0.5, SemigroupParams.default(H, g, v_max=2.0))
    assert fd.distance(sl) <= 0.05


def test_blow_up_reported(H):
    g = PeriodicGrid(32)
    with pytest.raises(FDBlowUpError, match="blew up") as info:
        solve_cp(H, GridFunction.constant(g, 1.0), 20.0, FDParams(32))
    # the discrete growth factor 1 + 2 dt per step is below exp(2 dt)
    assert info.value.t == pytest.approx(math.log(1e9) / 2, rel=0.02)
    assert info.value.sup > 1e9


def test_params_validation():
    with pytest.raises(ValueError):
        FDParams(100, cfl=1.0)
    with pytest.raises(ValueError):
        FDParams(100, alpha=-1)
    with pytest.raises(ValueError):
        FDParams(-4)
    with pytest.raises(ValueError, match="grid"):
        solve_cp(__import__("contact_hj").example_quadratic(), GridFunction.constant(PeriodicGrid(16), 0), 1.0,
                 FDParams(32))
