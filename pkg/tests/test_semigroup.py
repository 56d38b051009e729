import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contact_hj import _kernels
from contact_hj.grid import GridFunction, PeriodicGrid, phi_eps_example, u1_example
from contact_hj.model import quadratic, quartic, sine_coupled
from contact_hj.semigroup import (SemigroupParams, dp_step, evolve, evolve_final, evolve_values, step_backward,
                                  step_forward, time_steps)


def test_constant_step_is_exact_fixed_point(H, grid, params):
    for c in (-1.0, 0.3):
        out = step_backward(H, GridFunction.constant(grid, c), params)
        np.testing.assert_allclose(out.values, c / (1 - 2 * params.dt), rtol=1e-12)
        assert abs(out.values[0] - c * math.exp(2 * params.dt)) <= 4 * abs(c) * params.dt**2
        back = step_forward(H, GridFunction.constant(grid, c), params)
        np.testing.assert_allclose(back.values, c / (1 + 2 * params.dt), rtol=1e-12)


def test_constant_law_generic_lagrangian():
    # L(x, u, 0) = 2u for the quartic family as well, so constants grow like exp(2t)
    H, g = quartic(), PeriodicGrid(32)
    p = SemigroupParams.default(H, g, v_max=2.0, n_v=9)
    w = evolve_final(H, GridFunction.constant(g, 0.5), 0.05, p)
    np.testing.assert_allclose(w.values, 0.5 * math.exp(0.1), rtol=1e-3)


def test_u1_is_nearly_stationary(H, grid, params):
    u1 = u1_example(grid)
    out = step_backward(H, u1, params)
    assert out.distance(u1) <= 2 * (grid.dx + params.dt**2)


def test_zero_time_is_identity(H, grid, params):
    phi = phi_eps_example(0.1, grid)
    for dt in (1e-4, 1e-6, 1e-8):
        w = dp_step(H, grid, phi.values, params, "backward", dt=dt)
        assert np.max(np.abs(w - phi.values)) <= 50 * dt
    assert evolve(H, phi, 0.0, params).final is phi


def test_trace_invariants(H, grid, params):
    phi = phi_eps_example(0.1, grid)
    tr = evolve(H, phi, 0.05, params)
    assert tr.slices[0] is phi
    np.testing.assert_allclose(np.diff(tr.times)[:-1], params.dt)
    assert tr.times[-1] == 0.05
    assert tr.at_time(0.05) is tr.final
    times, vals = evolve_values(H, grid, phi.values, 0.05, params, record_times=[0.0, 0.05])
    np.testing.assert_array_equal(vals[-1], tr.final.values)
    np.testing.assert_array_equal(vals[0], phi.values)


def test_time_steps():
    assert time_steps(0.0, 0.1) == []
    s = time_steps(0.25, 0.1)
    assert len(s) == 3 and sum(s) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        time_steps(-1, 0.1)


def smooth(grid, coeffs):
    x = grid.nodes
    return sum(a * np.cos(2 * np.pi * (k + 1) * x + k) for k, a in enumerate(coeffs))


coeff = st.lists(st.floats(-0.3, 0.3, allow_nan=False), min_size=1, max_size=4)


@settings(max_examples=20, deadline=None)
@given(coeff, st.lists(st.floats(0.0, 0.5, allow_nan=False), min_size=1, max_size=4))
def test_monotone(c, bump):
    g = PeriodicGrid(32)
    from contact_hj.model import example_quadratic

    H = example_quadratic()
    p = SemigroupParams.default(H, g, v_max=2.0)
    phi = smooth(g, c)
    psi = phi - np.abs(smooth(g, bump))
    for direction in ("backward", "forward"):
        a = dp_step(H, g, phi, p, direction)
        b = dp_step(H, g, psi, p, direction)
        assert np.all(a >= b - 1e-12)


@settings(max_examples=10, deadline=None)
@given(coeff, st.integers(0, 31))
def test_translation_equivariance(c, shift):
    g = PeriodicGrid(32)
    from contact_hj.model import example_quadratic

    H = example_quadratic()
    p = SemigroupParams.default(H, g, v_max=2.0)
    phi = smooth(g, c)
    a = np.roll(dp_step(H, g, phi, p, "backward"), shift)
    b = dp_step(H, g, np.roll(phi, shift), p, "backward")
    np.testing.assert_allclose(a, b, atol=1e-13)


def test_contraction_with_exponential_rate(H, grid, params):
    # |T phi - T psi| <= exp(K1 t) |phi - psi|
    phi = GridFunction(grid, smooth(grid, [0.2, -0.1]))
    psi = GridFunction(grid, smooth(grid, [0.1, 0.05, 0.1]))
    t = 0.3
    d = evolve_final(H, phi, t, params).distance(evolve_final(H, psi, t, params))
    assert d <= math.exp(2 * t) * phi.distance(psi) * (1 + 1e-9)


@pytest.mark.skipif(not _kernels.available(), reason="numba not available")
@pytest.mark.parametrize("make", [lambda: None, lambda: quadratic(a1=0.3, b0=0.2, b1=0.4, c1=0.1)])
@pytest.mark.parametrize("direction", ["backward", "forward"])
def test_kernel_matches_numpy(make, direction, H, grid):
    ham = make() or H
    p = SemigroupParams.default(ham, grid, v_max=3.0)
    phi = phi_eps_example(0.1, grid).values
    a = dp_step(ham, grid, phi, p, direction)
    b = dp_step(ham, grid, phi, replace(p, backend="numpy"), direction)
    np.testing.assert_allclose(a, b, atol=1e-14)


def test_generic_path_on_non_affine_lagrangian(grid):
    H = sine_coupled(c1=0.2)
    p = SemigroupParams.default(H, grid, v_max=2.0)
    phi = GridFunction(grid, smooth(grid, [0.2]))
    out = step_backward(H, phi, p)
    assert np.all(np.isfinite(out.values))
    # one step moves the slice by O(dt)
    assert out.distance(phi) <= 10 * p.dt


def test_params_validation(H, grid):
    with pytest.raises(ValueError):
        SemigroupParams(dt=-1, v_max=1)
    with pytest.raises(ValueError):
        SemigroupParams(dt=0.1, v_max=1, n_v=4)
    with pytest.raises(ValueError):
        SemigroupParams(dt=0.1, v_max=1, backend="gpu")
    with pytest.raises(ValueError, match="contraction"):
        SemigroupParams(dt=0.6, v_max=1).check(H)
    d = SemigroupParams.default(H, PeriodicGrid(1000), v_max=2.0)
    assert d.dt == pytest.approx(2.5e-4)


def test_batched_rows_match_single(H, grid, params):
    rows = np.stack([phi_eps_example(0.1, grid).values, u1_example(grid).values])
    _, vals = evolve_values(H, grid, rows, 0.02, params)
    for k in range(2):
        _, single = evolve_values(H, grid, rows[k], 0.02, params)
        np.testing.assert_allclose(vals[-1][k], single[-1], atol=1e-14)


def test_residuals_converge_at_first_order():
    from contact_hj.checks import convergence_order

    res = convergence_order(N=250, N_fd=100)
    for order in res.notes["observed_order"].values():
        assert order >= 0.85
