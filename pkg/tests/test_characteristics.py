import math

import numpy as np
import pytest

from contact_hj.characteristics import ContactState, DivergenceError, conformal_energy, flow, shoot_h
from contact_hj.grid import circle_distance
from contact_hj.model import quartic


def h_closed_form(x0, u0, x, t):
    d = circle_distance(x, x0)
    e = math.exp(2 * t)
    return e * u0 + e * d * d / (2 * (e - 1))


def test_flow_matches_linear_solution(H):
    # x' = 2p, p' = 2p, u' = p^2 + 2u for H = -2u + p^2
    s0 = ContactState(0.0, 0.3, 0.1)
    tr = flow(H, s0, 0.5)
    t = 0.5
    p = 0.3 * math.exp(2 * t)
    assert tr.p[-1] == pytest.approx(p, rel=1e-8)
    assert tr.x_lift[-1] == pytest.approx(0.3 * (math.exp(2 * t) - 1), rel=1e-8)
    u = 0.1 * math.exp(2 * t) + 0.09 * (math.exp(4 * t) - math.exp(2 * t)) / 2
    assert tr.u[-1] == pytest.approx(u, rel=1e-8)


def test_conformal_energy():
    H = quartic(c1=0.3)
    tr = flow(H, ContactState(0.2, -0.4, 0.3), 0.7)
    e, pred = conformal_energy(H, tr)
    np.testing.assert_allclose(e, pred, atol=1e-6)


@pytest.mark.parametrize("x0,u0,x,t", [(0.0, 0.0, 0.2, 0.5), (0.25, 0.1, -0.1, 1.0), (0.1, -0.2, 0.1, 0.75),
                                       (0.4, 0.0, -0.45, 0.5)])
def test_shooting_matches_closed_form(H, x0, u0, x, t):
    assert shoot_h(H, x0, u0, x, t) == pytest.approx(h_closed_form(x0, u0, x, t), abs=1e-6)


def test_short_time_rejected(H):
    with pytest.raises(ValueError):
        shoot_h(H, 0.0, 0.0, 0.1, 0.01)


def test_divergence_detected(H):
    with pytest.raises(DivergenceError):
        flow(H, ContactState(0.0, 1e3, 0.0), 10.0)


def test_state_validation():
    with pytest.raises(ValueError):
        ContactState(float("nan"), 0.0, 0.0)
