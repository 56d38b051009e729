import math

import numpy as np
import pytest

from contact_hj import weakkam as wk
from contact_hj.action import action_params
from contact_hj.grid import GridFunction, PeriodicGrid, phi_eps_example, phi_example, u1_example
from contact_hj.semigroup import evolve


@pytest.fixture(scope="module")
def u_plus():
    from contact_hj.model import example_quadratic

    return wk.compute_u_plus(example_quadratic(), PeriodicGrid(200))


def test_u_plus_is_zero_by_both_routes(H, grid, params, u_plus):
    assert u_plus.sup_norm() <= 2 * grid.dx
    other = wk.compute_u_plus(H, grid, params, route="duality")
    assert other.distance(u_plus) <= 3 * grid.dx


def test_u_plus_from_nonzero_start_and_history(H, grid, params):
    up, hist = wk.compute_u_plus(H, grid, params, initial=u1_example(grid), return_history=True)
    assert up.sup_norm() <= 2 * grid.dx
    assert hist[-1] <= 1e-8


def test_u_plus_non_convergence(H, grid, params):
    with pytest.raises(wk.ConvergenceError):
        wk.compute_u_plus(H, grid, params, initial=u1_example(grid), max_steps=3)
    with pytest.raises(ValueError):
        wk.compute_u_plus(H, grid, params, route="bogus")


def test_classes(grid, u_plus):
    assert wk.classify(u1_example(grid), u_plus).label == "A"
    assert wk.classify(u_plus + 0.5, u_plus).label == "A_plus"
    assert wk.classify(u_plus - 0.5, u_plus).label == "A_minus"


def test_aubry_sets(grid, u_plus):
    origin = grid.origin_index
    assert wk.aubry_set(u1_example(grid), u_plus).tolist() == [origin]
    assert wk.aubry_set(phi_example(grid), u_plus).tolist() == [origin]
    assert wk.in_A_u(phi_example(grid), u1_example(grid), u_plus)
    with pytest.raises(ValueError):
        wk.aubry_set(u_plus + 1.0, u_plus)


def test_distance_to_set():
    g = PeriodicGrid(20)
    d = wk.distance_to_set(g, np.array([0]))
    assert d[0] == 0 and d[10] == pytest.approx(0.5) and d[19] == pytest.approx(g.dx)


def test_thm1_construction(grid, u_plus):
    res = wk.construct_phi_eps_thm1(u1_example(grid), phi_example(grid), u_plus, 0.1)
    assert all(c["ok"] for c in res.checks.values())
    assert res.radius == pytest.approx(0.1 / phi_example(grid).lipschitz())
    np.testing.assert_allclose(res.phi_eps.values[res.neighbourhood], u1_example(grid).values[res.neighbourhood])


def test_thm1_needs_phi_in_A_u(grid, u_plus):
    shifted = GridFunction(grid, np.roll(u1_example(grid).values, 50))
    with pytest.raises(ValueError, match="A_u"):
        wk.construct_phi_eps_thm1(u1_example(grid), shifted, u_plus, 0.1)


def test_example_phi_eps_properties(grid, u_plus):
    pe, u1 = phi_eps_example(0.1, grid), u1_example(grid)
    nodes = np.flatnonzero(np.isclose(pe.values, u1.values, rtol=0, atol=1e-15))
    checks = wk.verify_phi_eps_thm1(pe, u1, phi_example(grid), u_plus, 0.1, nodes)
    assert all(c["ok"] for c in checks.values())


def test_thm2_construction(grid, u_plus):
    phi = u1_example(grid)
    pe = wk.construct_phi_eps_thm2(phi, u_plus, 0.05)
    O = wk.thm2_neighbourhood(phi, u_plus, 0.05)
    np.testing.assert_array_equal(pe.values[O], phi.values[O])
    assert pe.max() <= 0.05 + 1e-15
    with pytest.raises(ValueError):
        wk.construct_phi_eps_thm2(u_plus + 1, u_plus, 0.05)


def test_closed_form_constants(u_plus):
    g = PeriodicGrid(1000)
    up = GridFunction.constant(g, 0.0)
    f = wk.f_eps(u1_example(g), phi_example(g), up, 0.1)
    # r = eps / Lip(phi) = eps / 1.5, so f = r^2 / 2 up to the dx-wide ring on the grid
    assert f == pytest.approx(2 * 0.1**2 / 9, rel=0.03)
    assert wk.M0_over([u1_example(g)]) == pytest.approx(0.125)
    t0 = wk.t0_example_estimate(u1_example(g), phi_example(g), up, 0.1, 0.125, 4.0)
    assert t0 == pytest.approx(0.5 * math.log(9 / 0.4), abs=0.01)


def test_T0_bound():
    assert wk.T0_bound(0.1, 2.0, 0.2, 0.0) == pytest.approx(0.5 * math.log(12.0))
    assert wk.T0_bound(10.0, 2.0, 0.2, 0.0) == 1.0
    with pytest.raises(ValueError):
        wk.T0_bound(0.0, 2.0, 0.2, 0.0)


def test_estimate_C1_matches_closed_form(H):
    g = PeriodicGrid(200)
    up = GridFunction.constant(g, 0.0)
    # sup over displacements d <= 1/2 of exp(2) d^2 / (2 (exp(2) - 1)) at t = 1
    exact = math.exp(2) * 0.25 / (2 * (math.exp(2) - 1))
    C1 = wk.estimate_C1(H, up)
    assert exact <= C1 <= exact + 0.02


def test_reach_report(H, grid, params):
    tr = evolve(H, phi_eps_example(0.1, grid), 1.5, params, stride=20)
    rep = wk.measure_reach_time(tr, u1_example(grid), 0.02, "u1", 0.1)
    assert rep.reached and rep.t_star_measured <= 1.5
    d = rep.to_dict()
    assert d["target"] == "u1" and d["reached"]
    never = wk.measure_reach_time(tr, u1_example(grid) + 5.0, 0.01)
    assert not never.reached and never.t_star_measured is None


def test_restriction_identities(H, grid):
    p = action_params(H, grid, 2.0)
    pe, u1 = phi_eps_example(0.1, grid), u1_example(grid)
    O = np.flatnonzero(np.isclose(pe.values, u1.values, rtol=0, atol=1e-15))
    assert wk.verify_restriction_identity(H, pe, O, 1.5, p) <= 0.02
    assert wk.verify_restriction_identity(H, u1, O, 1.5, p, reference=u1) <= 0.02
    # at very short times most nodes cannot be reached from O
    assert wk.verify_restriction_identity(H, pe, O, 0.05, p) == math.inf


def test_restricted_infimum_cross_check(H, grid):
    p = action_params(H, grid, 2.0)
    pe = phi_eps_example(0.1, grid)
    O = np.arange(grid.origin_index - 5, grid.origin_index + 6)
    vals, masks = wk.restricted_infimum(H, pe, O, [0.3], p)
    point = wk.restricted_infimum_pointwise(H, pe, O, 0.3, p)
    ok = ~masks[-1]
    assert np.array_equal(ok, np.isfinite(point))
    # a monotone step maps a minimum to at most the minimum of the images, and
    # interpolation of the min differs from the min of interpolants by O(dx^2)
    assert np.all(vals[-1][ok] <= point[ok] + 1e-12)
    assert np.max(point[ok] - vals[-1][ok]) <= 10 * grid.dx**2


def test_locate_restriction_time(H, grid):
    p = action_params(H, grid, 2.0)
    pe, u1 = phi_eps_example(0.1, grid), u1_example(grid)
    O = np.flatnonzero(np.isclose(pe.values, u1.values, rtol=0, atol=1e-15))
    t = wk.locate_restriction_time(H, pe, O, 1.5, 0.02, p, n_times=16)
    assert t is not None and 0 < t <= 1.5


def test_coincidence_with_evolved_stationary_solution(H, grid, params):
    pe, u1 = phi_eps_example(0.1, grid), u1_example(grid)
    a = evolve(H, pe, 2.0, params, stride=40)
    b = evolve(H, u1, 2.0, params, stride=40)
    t = wk.coincidence_time(a, b)
    # the discrete solutions become bitwise equal after a finite time
    assert t is not None and t < 2.0
    assert np.array_equal(a.final.values, b.final.values)
    assert wk.coincidence_time(a, evolve(H, u1 + 1.0, 2.0, params, stride=40)) is None
