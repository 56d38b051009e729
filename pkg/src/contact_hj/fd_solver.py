"""Monotone Lax-Friedrichs scheme for w_t + H(x, w, w_x) = 0 on the circle.

One step reads

    W'_i = W_i - dt H(x_i, W_i, (W_{i+1} - W_{i-1}) / 2dx)
               + (alpha dt / 2dx) (W_{i+1} - 2 W_i + W_{i-1}).

The scheme is monotone when ``alpha >= |H_p|`` on the slice and
``dt (alpha / dx + K1) <= 1``. The time step is fixed from the initial datum;
with ``adaptive`` the viscosity speed is re-estimated on every slice (never
above its initial value), which keeps the scheme monotone and much less
dissipative once gradients flatten.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridFunction, PeriodicGrid
from .model import ContactHamiltonian, max_speed
from .semigroup import EvolutionTrace, time_steps

BLOWUP_BOUND = 1.0e9


class FDBlowUpError(OverflowError):
    def __init__(self, t: float, sup: float):
        super().__init__(f"finite-difference solution blew up: sup |w| = {sup:.3e} exceeded "
                         f"{BLOWUP_BOUND:.0e} at t = {t:.4g} (blow-up time estimate)")
        self.t, self.sup = t, sup


@dataclass(frozen=True)
class FDParams:
    N: int
    cfl: float = 0.9
    # viscosity speed; None estimates it from the datum
    alpha: float | None = None
    pad: float = 1.25
    adaptive: bool = True

    def __post_init__(self):
        PeriodicGrid(self.N)
        if not 0.0 < self.cfl <= 0.9:
            raise ValueError(f"cfl must lie in (0, 0.9], got {self.cfl}")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.pad < 1.0:
            raise ValueError("pad must be >= 1")

    @property
    def grid(self) -> PeriodicGrid:
        return PeriodicGrid(self.N)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def observed_speed(H: ContactHamiltonian, W: GridFunction) -> float:
    """max |H_p| at the slice values over the one-sided difference quotients."""
    x, w, dx = W.grid.nodes, W.values, W.grid.dx
    dplus = (np.roll(w, -1) - w) / dx
    dminus = (w - np.roll(w, 1)) / dx
    return float(max(np.max(np.abs(H.h_p(x, w, dplus))), np.max(np.abs(H.h_p(x, w, dminus)))))


def resolve_alpha(H: ContactHamiltonian, W: GridFunction, params: FDParams) -> float:
    """Initial viscosity speed: padded observed speed, floored at the speed over |p| <= 1
    so that flat data still get a time step resolving the u-dynamics."""
    if params.alpha is not None:
        return params.alpha
    floor = max_speed(H, 1.0, u_bound=max(1.0, W.sup_norm()))
    return params.pad * max(observed_speed(H, W), floor)


def step_size(H: ContactHamiltonian, alpha: float, params: FDParams) -> float:
    dx = 1.0 / params.N
    dt = params.cfl * dx / alpha
    if dt * (alpha / dx + H.K1) > 1.0 + 1e-12:
        raise ValueError(f"monotonicity condition fails: dt*(alpha/dx + K1) = {dt * (alpha / dx + H.K1):.4f}")
    return dt


def lf_step(H: ContactHamiltonian, W: GridFunction, params: FDParams, dt: float | None = None,
            alpha: float | None = None) -> GridFunction:
    """One Lax-Friedrichs step; ``dt`` and ``alpha`` default to the values implied by ``params``."""
    if alpha is None:
        alpha = resolve_alpha(H, W, params)
    if dt is None:
        dt = step_size(H, alpha, params)
    return GridFunction(W.grid, _lf_values(H, W.grid, W.values, dt, alpha))


def _lf_values(H, grid, w, dt, alpha):
    dx = grid.dx
    wp, wm = np.roll(w, -1), np.roll(w, 1)
    p = (wp - wm) / (2.0 * dx)
    return w - dt * H(grid.nodes, w, p) + (alpha * dt / (2.0 * dx)) * (wp - 2.0 * w + wm)


def solve_cp(H: ContactHamiltonian, phi: GridFunction, T: float, params: FDParams,
             stride: int = 1) -> EvolutionTrace:
    """Iterate :func:`lf_step` to horizon ``T`` (last step shortened)."""
    if phi.grid.N != params.N:
        raise ValueError("datum grid does not match params.N")
    alpha0 = resolve_alpha(H, phi, params)
    dt = step_size(H, alpha0, params)
    steps = time_steps(T, dt)
    grid = phi.grid
    w = phi.values
    times, slices = [0.0], [phi]
    alphas = [alpha0]
    for k, h in enumerate(steps, start=1):
        alpha = alpha0
        if params.adaptive and params.alpha is None:
            alpha = min(alpha0, params.pad * max(observed_speed(H, GridFunction(grid, w)), 1e-2))
        with np.errstate(over="ignore", invalid="ignore"):
            w = _lf_values(H, grid, w, h, alpha)
        now = k * dt if k < len(steps) else T
        sup = float(np.max(np.abs(w)))
        if not np.isfinite(sup) or sup > BLOWUP_BOUND:
            raise FDBlowUpError(now, sup)
        if k % stride == 0 or k == len(steps):
            times.append(now)
            slices.append(GridFunction(grid, w))
            alphas.append(alpha)
    meta = {"solver": "lax_friedrichs", "dt": dt, "alpha0": alpha0, "alpha_final": alphas[-1]}
    return EvolutionTrace(np.array(times), slices, params, "backward", meta)
