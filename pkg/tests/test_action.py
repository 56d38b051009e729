import math

import numpy as np
import pytest

from contact_hj import action as act
from contact_hj.grid import PeriodicGrid, circle_distance


def h_closed_form(x0, u0, x, t):
    """h_{x0,u0}(x, t) for H = -2u + p^2, from the linear ODE along straight lines."""
    d = circle_distance(x, x0)
    e = math.exp(2 * t)
    return e * u0 + e * d * d / (2 * (e - 1))


@pytest.fixture(scope="module")
def setting():
    from contact_hj.model import example_quadratic

    H = example_quadratic()
    grid = PeriodicGrid(400)
    return H, grid, act.action_params(H, grid, 2.0)


@pytest.fixture(scope="module")
def field(setting):
    H, grid, p = setting
    d = act.PointDatum.on_grid(grid, 0.1, 0.05)
    return act.h_forward(H, grid, d, 1.0, p, record_times=[0.25, 0.5, 1.0])


def test_field_matches_closed_form(field, setting):
    _, grid, _ = setting
    for t, tol in ((0.5, 0.01), (1.0, 0.01)):
        s = field.slice(t)
        exact = np.array([h_closed_form(0.1, 0.05, x, t) for x in grid.nodes])
        err = np.abs(s.data - exact)[~s.mask]
        assert err.max() <= tol


def test_reachable_set_grows_one_node_per_step(setting):
    H, grid, p = setting
    d = act.PointDatum.on_grid(grid, 0.0, 0.0)
    f = act.h_forward(H, grid, d, 10 * p.dt, p, keep_pointers=False)
    reach = np.flatnonzero(~f.masks[-1])
    assert reach.size == 2 * 10 + 1
    assert f.times[0] == pytest.approx(3 * p.dt)


def test_masked_access(setting):
    H, grid, p = setting
    d = act.PointDatum.on_grid(grid, 0.0, 0.0)
    f = act.h_forward(H, grid, d, 5 * p.dt, p)
    with pytest.raises(act.MaskedAccessError):
        f.value(0.4, 5 * p.dt)
    with pytest.raises(ValueError):
        f.value(0.0, p.dt)


def test_unreachable_horizon_is_rejected(setting):
    H, grid, p = setting
    with pytest.raises(ValueError):
        act.h_forward(H, grid, act.PointDatum.on_grid(grid, 0.0, 0.0), p.dt, p)


def test_separation_in_u0(field, setting):
    H, grid, p = setting
    g = act.h_forward(H, grid, act.PointDatum.on_grid(grid, 0.1, 0.15), 1.0, p, record_times=[0.5, 1.0],
                      keep_pointers=False)
    for t in (0.5, 1.0):
        a, b = field.slice(t), g.slice(t)
        gap = (b - a).compressed()
        # the example is affine in u: the gap is uniform in x and grows by 1 / (1 - 2 dt) per step
        np.testing.assert_allclose(gap, 0.1 * (1 - 2 * p.dt) ** -round(t / p.dt), rtol=1e-10)
        assert gap.min() >= 0.1 * math.exp(2 * t)


def test_inversion(setting):
    H, grid, p = setting
    res = act.check_inversion_batch(H, grid, [(0.1, 0.05, 0.3, 0.5), (-0.2, -0.1, 0.25, 1.0)], p)
    assert res.max() <= 0.02


def test_backtrack_reproduces_value(field, setting):
    H, grid, _ = setting
    curve = act.minimizer_backtrack(field, 0.3, 1.0)
    assert curve.x[0] == pytest.approx(0.1) and curve.x[-1] == pytest.approx(grid.nodes[grid.index_of(0.3)])
    # along the characteristic p = p0 exp(2t), so the speed 2p grows exponentially;
    # the first steps are smeared by the point datum
    p0 = 0.2 / (math.e**2 - 1)
    mid = curve.times[:-1] + 0.5 * np.diff(curve.times)
    late = mid >= 0.25
    np.testing.assert_allclose(curve.v[late], 2 * p0 * np.exp(2 * mid[late]), atol=0.03)
    assert act.curve_action(H, curve, 0.05) == pytest.approx(field.value(0.3, 1.0), abs=0.01)


def h_backward_closed_form(x0, u0, x, t):
    """Solve h_{x,u}(x0, t) = u0 for u."""
    d = circle_distance(x, x0)
    return math.exp(-2 * t) * u0 - d * d / (2 * (math.exp(2 * t) - 1))


def test_backward_field_matches_closed_form(setting):
    H, grid, p = setting
    f = act.h_backward(H, grid, act.PointDatum.on_grid(grid, 0.0, 0.2), 0.5, p)
    s = f.slice(0.5)
    exact = np.array([h_backward_closed_form(0.0, 0.2, x, 0.5) for x in grid.nodes])
    assert np.abs(s.data - exact)[~s.mask].max() <= 0.01


def test_field_csv_marks_masks(tmp_path, setting):
    H, grid, p = setting
    f = act.h_forward(H, grid, act.PointDatum.on_grid(grid, 0.0, 0.0), 4 * p.dt, p)
    path = f.to_csv(tmp_path / "f.csv")
    text = path.read_text()
    assert "nan" not in text.lower()
    assert text.count("\n") == 1 + len(f.times) * grid.N
