import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contact_hj import _io
from contact_hj.grid import (GridFunction, PeriodicGrid, circle_distance, even_periodic_extension, interpolate,
                             phi_eps_example, phi_eps_profile, phi_example, u1_example, wrap)


def test_nodes_contain_zero_and_half():
    g = PeriodicGrid(16)
    assert g.nodes[g.origin_index] == 0.0
    assert g.nodes[-1] == 0.5
    assert np.all(np.diff(g.nodes) > 0)


@pytest.mark.parametrize("N", [15, 8, -4])
def test_invalid_grids(N):
    with pytest.raises(ValueError):
        PeriodicGrid(N)


def test_non_integer_grid():
    with pytest.raises(TypeError):
        PeriodicGrid(100.0)


@settings(max_examples=100)
@given(st.floats(-50, 50, allow_nan=False))
def test_wrap_is_periodic(x):
    w = wrap(x)
    assert -0.5 < w <= 0.5
    assert circle_distance(x, w) == pytest.approx(0.0, abs=1e-9)
    assert wrap(x + 3.0) == pytest.approx(w, abs=1e-9) or abs(abs(w) - 0.5) < 1e-9


@settings(max_examples=100)
@given(st.floats(-5, 5, allow_nan=False), st.floats(-5, 5, allow_nan=False))
def test_circle_distance_is_a_metric(x, y):
    d = circle_distance(x, y)
    assert 0 <= d <= 0.5 + 1e-12
    assert d == pytest.approx(circle_distance(y, x), abs=1e-12)


@settings(max_examples=50)
@given(st.floats(-0.5, 0.5, allow_nan=False), st.sampled_from(["linear", "cubic"]))
def test_interpolation_is_periodic(x, order):
    g = PeriodicGrid(64)
    f = GridFunction.from_function(g, lambda s: np.cos(2 * np.pi * s))
    assert interpolate(f, x, order) == pytest.approx(interpolate(f, x + 1.0, order), abs=1e-9)


def test_interpolation_reproduces_nodes_and_accuracy():
    g = PeriodicGrid(128)
    f = GridFunction.from_function(g, lambda s: np.sin(2 * np.pi * s))
    for order in ("linear", "cubic"):
        np.testing.assert_allclose(f.interpolate(g.nodes, order), f.values, atol=1e-12)
    x = np.linspace(-0.5, 0.5, 301)
    assert np.max(np.abs(f.interpolate(x, "cubic") - np.sin(2 * np.pi * x))) < 1e-6
    assert np.max(np.abs(f.interpolate(x) - np.sin(2 * np.pi * x))) < (2 * np.pi / 128) ** 2


@settings(max_examples=40)
@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=16, max_size=16),
       st.lists(st.floats(-10, 10, allow_nan=False), min_size=16, max_size=16))
def test_sup_norm_triangle_inequality(a, b):
    g = PeriodicGrid(16)
    f, h = GridFunction(g, a), GridFunction(g, b)
    assert (f + h).sup_norm() <= f.sup_norm() + h.sup_norm() + 1e-12
    assert f.distance(h) == pytest.approx((f - h).sup_norm())


def test_lipschitz_estimate_includes_wrap():
    g = PeriodicGrid(100)
    f = GridFunction.from_function(g, lambda x: x)
    # the wrap-around jump from 1/2 to -1/2 + dx dominates
    assert f.lipschitz() == pytest.approx((1 - g.dx) / g.dx)
    assert u1_example(g).lipschitz() == pytest.approx(0.5, abs=g.dx)


def test_example_profiles():
    g = PeriodicGrid(1000)
    u1, phi = u1_example(g), phi_example(g)
    x = g.nodes
    np.testing.assert_allclose(u1.values, x**2 / 2)
    np.testing.assert_allclose(phi.values, x**2 / 2 + np.abs(x))
    pe = phi_eps_example(0.1, g)
    near = np.abs(x) <= 0.1
    far = np.abs(x) >= 0.2
    np.testing.assert_allclose(pe.values[near], u1.values[near])
    np.testing.assert_allclose(pe.values[far], phi.values[far])
    assert pe.distance(phi) == pytest.approx(0.1, abs=1e-12)
    prof = phi_eps_profile(0.1)
    for r in (0.1, 0.2):
        assert prof(r - 1e-12) == pytest.approx(prof(r + 1e-12), abs=1e-9)


def test_phi_eps_range():
    with pytest.raises(ValueError):
        phi_eps_profile(0.3)


def test_even_extension_is_even():
    g = PeriodicGrid(50)
    f = even_periodic_extension(lambda r: r**3 + r, g)
    j = np.arange(g.N - 1)
    mirror = (2 * g.origin_index - j) % g.N
    np.testing.assert_allclose(f.values[j], f.values[mirror])


def test_round_trips(tmp_path):
    g = PeriodicGrid(32)
    f = GridFunction.from_function(g, lambda x: np.exp(x) / 3)
    assert np.array_equal(GridFunction.from_json(f.to_json()).values, f.values)
    f.to_csv(tmp_path / "f.csv")
    assert np.array_equal(GridFunction.from_csv(tmp_path / "f.csv").values, f.values)
    assert (tmp_path / "f.csv").read_bytes().count(b"\r\n") == g.N + 1


def test_grid_function_rejects_bad_values():
    g = PeriodicGrid(16)
    with pytest.raises(ValueError):
        GridFunction(g, np.full(16, np.nan))
    with pytest.raises(ValueError):
        GridFunction(g, np.zeros(10))
    with pytest.raises(ValueError):
        GridFunction(g, np.zeros(16)) + GridFunction(PeriodicGrid(32), np.zeros(32))


def test_json_float_format():
    assert _io.fmt_float(0.1) == "0.10000000000000001"
    assert _io.fmt_float(3.0) == "3.0"
    assert json.loads(_io.dumps({"a": [1e-300, 2.5]})) == {"a": [1e-300, 2.5]}
    assert _io.sanitize({"r": [float("inf"), 1.0]}) == {"r": ["inf", 1.0]}
    with pytest.raises(ValueError):
        _io.fmt_float(float("inf"))
