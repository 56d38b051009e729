"""Contact characteristics and a shooting oracle for implicit action values.

The characteristic system of H(x, u, p) is

    x' = H_p,   p' = -H_x - H_u p,   u' = p H_p - H,

integrated here with classical RK4. Nothing in this module touches the spatial
grid, so it gives an independent check on the dynamic-programming fields.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _io
from .grid import wrap
from .model import ContactHamiltonian

DIVERGENCE_BOUND = 1.0e9


class DivergenceError(RuntimeError):
    pass


class UnreachableError(RuntimeError):
    pass


@dataclass(frozen=True)
class ContactState:
    x: float
    p: float
    u: float

    def __post_init__(self):
        if not np.all(np.isfinite([self.x, self.p, self.u])):
            raise ValueError("contact state must be finite")


@dataclass
class Trajectory:
    times: np.ndarray
    x: np.ndarray
    p: np.ndarray
    u: np.ndarray
    # x without wrapping, for winding bookkeeping
    x_lift: np.ndarray

    @property
    def final(self) -> ContactState:
        return ContactState(float(self.x[-1]), float(self.p[-1]), float(self.u[-1]))

    def to_csv(self, path):
        rows = zip(self.times.tolist(), self.x.tolist(), self.p.tolist(), self.u.tolist())
        return _io.write_csv(path, ["t", "x", "p", "u"], rows)


def _rhs(H: ContactHamiltonian, x, p, u):
    hp = H.h_p(x, u, p)
    return hp, -H.h_x(x, u, p) - H.h_u(x, u, p) * p, p * hp - H(x, u, p)


def _integrate(H, x, p, u, t, dt_ode, record=False):
    """Vectorized RK4 over arrays of initial states; ``t`` may be negative."""
    n = max(1, int(np.ceil(abs(t) / dt_ode - 1e-9)))
    h = t / n
    xs, ps, us = [x], [p], [u]
    for _ in range(n):
        k1 = _rhs(H, x, p, u)
        k2 = _rhs(H, x + 0.5 * h * k1[0], p + 0.5 * h * k1[1], u + 0.5 * h * k1[2])
        k3 = _rhs(H, x + 0.5 * h * k2[0], p + 0.5 * h * k2[1], u + 0.5 * h * k2[2])
        k4 = _rhs(H, x + h * k3[0], p + h * k3[1], u + h * k3[2])
        x = x + h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        p = p + h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        u = u + h / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        if record:
            xs.append(x)
            ps.append(p)
            us.append(u)
    return (x, p, u, n) if not record else (np.array(xs), np.array(ps), np.array(us), n)


def flow(H: ContactHamiltonian, s0: ContactState, t: float, dt_ode: float = 1e-3) -> Trajectory:
    """Integrate the characteristic system from ``s0`` over ``[0, t]`` (``t < 0`` runs backward)."""
    if dt_ode > 1e-3:
        raise ValueError("dt_ode must be <= 1e-3")
    xs, ps, us, n = _integrate(H, np.float64(s0.x), np.float64(s0.p), np.float64(s0.u), t, dt_ode, record=True)
    norm = np.max(np.abs(np.stack([xs, ps, us])), axis=0)
    if not np.all(np.isfinite(norm)) or np.any(norm > DIVERGENCE_BOUND):
        k = int(np.argmax(~np.isfinite(norm) | (norm > DIVERGENCE_BOUND)))
        raise DivergenceError(f"characteristic diverged near t={k * t / n:.4g}")
    times = np.linspace(0.0, t, n + 1)
    return Trajectory(times, wrap(xs), ps, us, xs)


def conformal_energy(H: ContactHamiltonian, traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    """(H along the path, H(s0) * exp(-int H_u)) by trapezoid quadrature."""
    energy = H(traj.x, traj.u, traj.p)
    rate = -H.h_u(traj.x, traj.u, traj.p) * np.ones_like(traj.times)
    integral = np.concatenate([[0.0], np.cumsum(0.5 * (rate[1:] + rate[:-1]) * np.diff(traj.times))])
    return energy, energy[0] * np.exp(integral)


def _endpoints(H, x0, u0, p0, t, dt_ode):
    x0v = np.full_like(p0, x0)
    u0v = np.full_like(p0, u0)
    with np.errstate(over="ignore", invalid="ignore"):
        x, p, u, _ = _integrate(H, x0v, p0, u0v, t, dt_ode)
    bad = ~np.isfinite(x) | ~np.isfinite(u) | (np.abs(u) > DIVERGENCE_BOUND)
    x = np.where(bad, np.nan, x)
    u = np.where(bad, np.nan, u)
    return x, u


def shoot_h(H: ContactHamiltonian, x0: float, u0: float, x: float, t: float, n_starts: int = 40,
            p_min: float = 1e-3, p_max: float = 20.0, dt_ode: float = 1e-3, pos_tol: float = 1e-6,
            windings: int = 2) -> float:
    """Smallest terminal u among characteristics from (x0, p0, u0) that reach x at time t.

    Initial momenta are scanned on a log-spaced set of magnitudes of both signs
    plus zero; every sign change of the endpoint mismatch (for each winding
    ``|k| <= windings``) is refined by bisection.
    """
    if t < 0.05:
        raise ValueError("shooting needs t >= 0.05")
    try:
        return _shoot(H, x0, u0, x, t, n_starts, p_min, p_max, dt_ode, pos_tol, windings)
    except UnreachableError:
        # dense rescan before giving up
        return _shoot(H, x0, u0, x, t, 8 * n_starts, p_min, p_max, dt_ode, pos_tol, windings)


def _shoot(H, x0, u0, x, t, n_starts, p_min, p_max, dt_ode, pos_tol, windings):
    mags = np.geomspace(p_min, p_max, n_starts)
    p_grid = np.concatenate([-mags[::-1], [0.0], mags])
    xe, ue = _endpoints(H, x0, u0, p_grid, t, dt_ode)
    lift_target = x0 + wrap(x - x0)
    candidates = []
    brackets = []
    for k in range(-windings, windings + 1):
        target = lift_target + k
        r = xe - target
        for i in np.flatnonzero(np.abs(r) <= pos_tol):
            candidates.append((float(ue[i]), abs(float(p_grid[i]))))
        ok = np.isfinite(r[:-1]) & np.isfinite(r[1:])
        for i in np.flatnonzero(ok & (r[:-1] * r[1:] < 0)):
            brackets.append((p_grid[i], p_grid[i + 1], r[i], r[i + 1], target))
    if brackets:
        a, b, ra, rb, tg = (np.array(col, dtype=float) for col in zip(*brackets))
        candidates.extend(_refine_roots(H, x0, u0, t, dt_ode, a, b, ra, rb, tg, pos_tol))
    if not candidates:
        raise UnreachableError(f"no characteristic from x0={x0} reaches x={x} at t={t}")
    # smallest value; ties toward smaller |p0|
    candidates.sort()
    return candidates[0][0]


def _refine_roots(H, x0, u0, t, dt_ode, a, b, ra, rb, target, pos_tol, max_iter=80):
    """Illinois regula falsi on every bracket at once (falls back to bisection
    steps when the secant point stalls)."""
    found = [None] * a.size
    side = np.zeros(a.size)
    for it in range(max_iter):
        with np.errstate(divide="ignore", invalid="ignore"):
            m = b - rb * (b - a) / (rb - ra)
        stalled = ~np.isfinite(m) | (m <= np.minimum(a, b)) | (m >= np.maximum(a, b))
        if it % 6 == 5:
            stalled[:] = True
        m = np.where(stalled, 0.5 * (a + b), m)
        xm, um = _endpoints(H, x0, u0, m, t, dt_ode)
        rm = xm - target
        for i in np.flatnonzero(np.abs(rm) <= pos_tol):
            if found[i] is None:
                found[i] = (float(um[i]), abs(float(m[i])))
        if all(f is not None for f in found) or not np.all(np.isfinite(rm)):
            break
        same = np.sign(rm) == np.sign(rb)
        # Illinois: halve the retained end's residual when the same side repeats
        a, ra = np.where(same, a, b), np.where(same, np.where(side > 0, 0.5 * ra, ra), rb)
        side = np.where(same, 1.0, 0.0)
        b, rb = m, rm
    return [f for f in found if f is not None]
