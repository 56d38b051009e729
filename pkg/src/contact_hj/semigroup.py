"""Backward and forward implicit Lax-Oleinik semigroups by semi-Lagrangian DP.

One backward step from a slice U solves, for every node x and sampled velocity v,

    w = U(x - v dt) + dt * L(x, w, v)

by fixed-point iteration (a contraction with factor dt*K1) and keeps the
smallest w. The forward step mirrors it with ``U(x + v dt) - dt * L`` and a
maximum. Work happens in index units: a velocity ``v`` shifts the foot point by
``v * dt / dx`` cells.

Slices may carry a boolean mask of unreachable nodes (used for point data);
a candidate whose interpolation stencil touches a masked node with non-zero
weight is discarded, and a node with no admissible candidate stays masked.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _io, _kernels
from .grid import GridFunction, PeriodicGrid
from .model import ContactHamiltonian, max_speed

BIG = 1.0e6
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class FixedPointError(RuntimeError):
    def __init__(self, x, v, residual):
        super().__init__(f"per-step fixed point did not converge at x={x!r}, v={v!r} (residual {residual:.3e})")
        self.x, self.v, self.residual = x, v, residual


@dataclass(frozen=True)
class SemigroupParams:
    dt: float
    v_max: float
    n_v: int = 129
    fp_tol: float = 1e-12
    fp_max_iter: int = 60
    interpolation: str = "linear"
    refine: bool = True
    golden_iter: int = 16
    # "auto" uses the compiled kernel when the Lagrangian is quadratic in v
    backend: str = "auto"

    def __post_init__(self):
        if not (self.dt > 0 and self.v_max > 0):
            raise ValueError("dt and v_max must be positive")
        if self.n_v < 3 or self.n_v % 2 == 0:
            raise ValueError("n_v must be odd and >= 3 so that v = 0 is sampled")
        if self.interpolation != "linear":
            raise ValueError("only linear interpolation keeps the step monotone")
        if self.backend not in ("auto", "numpy"):
            raise ValueError(f"backend must be 'auto' or 'numpy', got {self.backend!r}")

    def check(self, H: ContactHamiltonian) -> SemigroupParams:
        if self.dt * H.K1 >= 1.0:
            raise ValueError(f"dt*K1 = {self.dt * H.K1:.3g} must be < 1 for the per-step contraction")
        return self

    @classmethod
    def default(cls, H: ContactHamiltonian, grid: PeriodicGrid, v_max: float | None = None,
                p_bound: float = 1.0, **kw) -> SemigroupParams:
        """dt = min(0.5 dx / v_max, 0.5 / K1); v_max from sup |H_p| over |p| <= p_bound."""
        if v_max is None:
            v_max = max_speed(H, p_bound)
        dt = min(0.5 * grid.dx / v_max, 0.5 / H.K1)
        return cls(dt=dt, v_max=v_max, **kw).check(H)

    @classmethod
    def for_action(cls, H: ContactHamiltonian, grid: PeriodicGrid, v_max: float, **kw) -> SemigroupParams:
        """dt = dx / v_max: the extreme velocities land exactly on neighbouring
        nodes, so reachable sets of point data grow by one node per step."""
        return cls(dt=grid.dx / v_max, v_max=v_max, **kw).check(H)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@functools.lru_cache(maxsize=64)
def _stencil(n: int, n_v: int, reach: float, sign: float):
    """Velocity samples (sorted by |shift|, so argmin ties go to smaller |v|)
    and the fixed interpolation stencil of every (node, velocity) foot point."""
    if abs(reach - round(reach)) < 1e-9:
        reach = float(round(reach))
    shifts = np.linspace(-reach, reach, n_v)
    shifts[n_v // 2] = 0.0
    order = np.argsort(np.abs(shifts), kind="stable")
    rank = np.empty(n_v, dtype=np.intp)
    rank[order] = np.arange(n_v)
    sorted_shifts = shifts[order]
    s = np.arange(n, dtype=float)[:, None] - sign * sorted_shifts[None, :]
    j = np.floor(s)
    theta = s - j
    j0 = j.astype(np.intp) % n
    j1 = (j0 + 1) % n
    arrays = (shifts, order, rank, sorted_shifts, j0, j1, 1.0 - theta, theta, theta < 1.0, theta > 0.0)
    for a in arrays:
        a.setflags(write=False)
    return arrays


def _fixed_point_iterations(q: float, tol: float, cap: int) -> int:
    if q <= 0.0:
        return 1
    return int(min(cap, max(2, math.ceil(math.log(tol) / math.log(q)))))


def _solve_step(H, sign, x, a, v, dt, params, n_iter, L0=None):
    """Solve w = a + sign * dt * L(x, w, v) elementwise.

    For Lagrangians affine in u the fixed point is available in closed form;
    ``L0`` may carry a precomputed L0(x, v).
    """
    if H.lagrangian_affine is not None:
        f0, rate = H.lagrangian_affine
        if L0 is None:
            L0 = f0(x, v)
        return (a + sign * dt * L0) / (1.0 - sign * dt * rate)
    w = a
    for _ in range(n_iter):
        w = a + sign * dt * H.L(x, w, v)
    nxt = a + sign * dt * H.L(x, w, v)
    resid = np.abs(nxt - w)
    count = n_iter + 1
    while np.any(resid > params.fp_tol * (1.0 + np.abs(nxt))):
        if count >= params.fp_max_iter:
            k = np.unravel_index(np.argmax(resid), resid.shape)
            xk = np.broadcast_to(x, resid.shape)[k]
            vk = np.broadcast_to(v, resid.shape)[k]
            raise FixedPointError(float(xk), float(vk), float(resid[k]))
        w = nxt
        nxt = a + sign * dt * H.L(x, w, v)
        resid = np.abs(nxt - w)
        count += 1
    return nxt


def _gather_rows(values, mask, s):
    """Interpolated foot values and admissibility, one foot position per entry of ``values``."""
    n = values.shape[-1]
    j = np.floor(s)
    theta = s - j
    j0 = j.astype(np.intp) % n
    j1 = (j0 + 1) % n
    if values.ndim == 1:
        v0, v1 = values[j0], values[j1]
    else:
        v0, v1 = np.take_along_axis(values, j0, -1), np.take_along_axis(values, j1, -1)
    a = (1.0 - theta) * v0 + theta * v1
    if mask is None:
        return a, None
    if mask.ndim == 1:
        m0, m1 = mask[j0], mask[j1]
    else:
        m0, m1 = np.take_along_axis(mask, j0, -1), np.take_along_axis(mask, j1, -1)
    return a, (m0 & (theta < 1.0)) | (m1 & (theta > 0.0))


_L0_CACHE: dict = {}


def _affine_L0(H, grid, vel_sorted):
    key = (id(H), grid.N, vel_sorted.tobytes())
    hit = _L0_CACHE.get(key)
    if hit is None or hit[0] is not H:
        if len(_L0_CACHE) > 64:
            _L0_CACHE.clear()
        L0 = np.asarray(H.lagrangian_affine[0](grid.nodes[:, None], vel_sorted[None, :]), dtype=float)
        L0 = np.broadcast_to(L0, (grid.N, vel_sorted.size)).copy()
        hit = (H, L0)
        _L0_CACHE[key] = hit
    return hit[1]


def dp_step(H: ContactHamiltonian, grid: PeriodicGrid, U: np.ndarray, params: SemigroupParams,
            direction: str = "backward", mask: np.ndarray | None = None, dt: float | None = None,
            return_velocity: bool = False):
    """One semigroup step on raw arrays ``U[..., N]`` (leading axes are a batch).

    Returns ``W``; additionally the new mask when ``mask`` was given, and the
    chosen velocities when ``return_velocity``. Masked output entries hold
    ``+BIG`` (backward) or ``-BIG`` (forward).
    """
    if direction not in ("backward", "forward"):
        raise ValueError(f"direction must be 'backward' or 'forward', got {direction!r}")
    dt = params.dt if dt is None else dt
    sign = 1.0 if direction == "backward" else -1.0
    dx = grid.dx
    U = np.asarray(U, dtype=float)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        U = np.where(mask, 0.0, U)
    shifts, order, rank, sorted_shifts, j0, j1, omt, theta, w0, w1 = _stencil(
        grid.N, params.n_v, params.v_max * dt / dx, sign)
    if use_kernel(H, params):
        stencil = (shifts, order, sorted_shifts, j0, j1, omt, theta)
        return _kernel_step(H, grid, U, mask, params, sign, dt, stencil, return_velocity)
    vel = sorted_shifts * (dx / dt)
    # foot values: x - v dt (backward), x + v dt (forward)
    a = omt * U[..., j0] + theta * U[..., j1]
    bad = None
    if mask is not None:
        bad = (mask[..., j0] & w0) | (mask[..., j1] & w1)
        a = np.where(bad, 0.0, a)
    n_iter = _fixed_point_iterations(dt * H.K1, params.fp_tol, params.fp_max_iter)
    L0 = _affine_L0(H, grid, vel) if H.lagrangian_affine is not None else None
    W = _solve_step(H, sign, grid.nodes[:, None], a, vel[None, :], dt, params, n_iter, L0)
    score = W if sign > 0 else -W
    if bad is not None:
        score = np.where(bad, np.inf, score)
    k = np.argmin(score, axis=-1)
    best = np.take_along_axis(score, k[..., None], -1)[..., 0]
    v_best = vel[k]
    new_mask = None if bad is None else ~np.isfinite(best)

    if params.refine:
        # neighbours of the discrete optimum in velocity order
        kv = order[k]
        lo = shifts[np.maximum(kv - 1, 0)] * (dx / dt)
        hi = shifts[np.minimum(kv + 1, params.n_v - 1)] * (dx / dt)
        v_ref, s_ref = _golden(H, grid, U, mask, sign, lo, hi, dt, params, n_iter)
        better = s_ref < best
        best = np.where(better, s_ref, best)
        v_best = np.where(better, v_ref, v_best)

    out = sign * best
    if new_mask is not None:
        out = np.where(new_mask, sign * BIG, out)
        v_best = np.where(new_mask, 0.0, v_best)
    result = [out]
    if mask is not None:
        result.append(new_mask)
    if return_velocity:
        result.append(v_best)
    return result[0] if len(result) == 1 else tuple(result)


def use_kernel(H: ContactHamiltonian, params: SemigroupParams) -> bool:
    return (params.backend == "auto" and H.lagrangian_quadratic is not None
            and H.lagrangian_affine is not None and _kernels.available())


_COEF_CACHE: dict = {}


def _quadratic_coefficients(H, grid):
    key = (id(H), grid.N)
    hit = _COEF_CACHE.get(key)
    if hit is None or hit[0] is not H:
        if len(_COEF_CACHE) > 64:
            _COEF_CACHE.clear()
        coefs = tuple(np.ascontiguousarray(np.broadcast_to(np.asarray(c, dtype=float), (grid.N,)))
                      for c in H.lagrangian_quadratic(grid.nodes))
        hit = (H, coefs)
        _COEF_CACHE[key] = hit
    return hit[1]


def _kernel_step(H, grid, U, mask, params, sign, dt, stencil, return_velocity):
    A, B, C = _quadratic_coefficients(H, grid)
    lead = U.shape[:-1]
    U2 = U.reshape(-1, grid.N)
    m2 = None if mask is None else np.broadcast_to(mask, U.shape).reshape(-1, grid.N)
    out, new_mask, v_best = _kernels.quadratic_step(
        U2, m2, A, B, C, H.lagrangian_affine[1], sign, dt, grid.dx, stencil,
        params.refine, params.golden_iter, BIG)
    out, new_mask, v_best = (a.reshape(lead + (grid.N,)) for a in (out, new_mask, v_best))
    result = [out]
    if mask is not None:
        result.append(new_mask)
    if return_velocity:
        result.append(v_best)
    return result[0] if len(result) == 1 else tuple(result)


def _golden(H, grid, U, mask, sign, lo, hi, dt, params, n_iter):
    dx = grid.dx
    shape = np.broadcast_shapes(U.shape, lo.shape)
    idx = np.broadcast_to(np.arange(grid.N, dtype=float), shape)
    x = np.broadcast_to(grid.nodes, shape)
    lo = np.broadcast_to(lo, shape)
    hi = np.broadcast_to(hi, shape)
    Ub = np.broadcast_to(U, shape)
    mb = None if mask is None else np.broadcast_to(mask, shape)

    def objective(v):
        a, bad = _gather_rows(Ub, mb, idx - sign * v * (dt / dx))
        if bad is not None:
            a = np.where(bad, 0.0, a)
        w = _solve_step(H, sign, x, a, v, dt, params, n_iter)
        sc = sign * w
        return sc if bad is None else np.where(bad, np.inf, sc)

    c = hi - GOLDEN * (hi - lo)
    d = lo + GOLDEN * (hi - lo)
    fc, fd = objective(c), objective(d)
    for _ in range(params.golden_iter):
        left = fc < fd
        hi = np.where(left, d, hi)
        lo = np.where(left, lo, c)
        nc = np.where(left, hi - GOLDEN * (hi - lo), d)
        nd = np.where(left, c, lo + GOLDEN * (hi - lo))
        fnew = objective(np.where(left, nc, nd))
        fc, fd = np.where(left, fnew, fd), np.where(left, fc, fnew)
        c, d = nc, nd
    take_c = fc <= fd
    return np.where(take_c, c, d), np.where(take_c, fc, fd)


def step_backward(H: ContactHamiltonian, U: GridFunction, params: SemigroupParams) -> GridFunction:
    return GridFunction(U.grid, dp_step(H, U.grid, U.values, params, "backward"))


def step_forward(H: ContactHamiltonian, U: GridFunction, params: SemigroupParams) -> GridFunction:
    return GridFunction(U.grid, dp_step(H, U.grid, U.values, params, "forward"))


@dataclass
class EvolutionTrace:
    times: np.ndarray
    slices: list
    params: object
    direction: str = "backward"
    meta: dict = field(default_factory=dict)

    @property
    def grid(self) -> PeriodicGrid:
        return self.slices[0].grid

    @property
    def final(self) -> GridFunction:
        return self.slices[-1]

    def at_time(self, t: float) -> GridFunction:
        k = int(np.argmin(np.abs(self.times - t)))
        return self.slices[k]

    def values(self) -> np.ndarray:
        return np.stack([s.values for s in self.slices])

    def sup_distance(self, target: GridFunction) -> np.ndarray:
        return np.max(np.abs(self.values() - target.values[None, :]), axis=1)

    def to_csv(self, path):
        nodes = self.grid.nodes.tolist()
        rows = ((float(t), xv, float(val)) for t, s in zip(self.times, self.slices)
                for xv, val in zip(nodes, s.values.tolist()))
        return _io.write_csv(path, ["t", "x", "value"], rows)

    def summary(self) -> dict:
        vals = self.values()
        return {
            "direction": self.direction,
            "N": self.grid.N,
            "times": [float(t) for t in self.times],
            "sup_norm": np.max(np.abs(vals), axis=1).tolist(),
            "min": vals.min(axis=1).tolist(),
            "max": vals.max(axis=1).tolist(),
            "params": self.params.to_dict() if hasattr(self.params, "to_dict") else dict(self.params),
            **self.meta,
        }


def time_steps(t: float, dt: float) -> list[float]:
    """Step sizes reaching ``t``; the last one is shortened when needed."""
    if t < 0:
        raise ValueError("horizon must be non-negative")
    n = math.ceil(t / dt - 1e-9)
    if n == 0:
        return []
    steps = [dt] * (n - 1)
    steps.append(t - dt * (n - 1))
    return steps


def evolve(H: ContactHamiltonian, phi: GridFunction, t: float, params: SemigroupParams,
           direction: str = "backward", stride: int = 1, callback=None) -> EvolutionTrace:
    """Iterate the one-step operator up to horizon ``t``.

    Slices are recorded every ``stride`` steps, and always at the horizon.
    """
    params.check(H)
    steps = time_steps(t, params.dt)
    values = phi.values
    times, slices = [0.0], [phi]
    now = 0.0
    for k, h in enumerate(steps, start=1):
        values = dp_step(H, phi.grid, values, params, direction, dt=h)
        now = (k * params.dt) if k < len(steps) else t
        if k % stride == 0 or k == len(steps):
            times.append(now)
            slices.append(GridFunction(phi.grid, values))
        if callback is not None:
            callback(now, values)
    return EvolutionTrace(np.array(times), slices, params, direction)


def evolve_final(H: ContactHamiltonian, phi: GridFunction, t: float, params: SemigroupParams,
                 direction: str = "backward") -> GridFunction:
    """Horizon slice only (no trace kept)."""
    params.check(H)
    values = phi.values
    for h in time_steps(t, params.dt):
        values = dp_step(H, phi.grid, values, params, direction, dt=h)
    return GridFunction(phi.grid, values)


def with_dt(params: SemigroupParams, dt: float) -> SemigroupParams:
    return replace(params, dt=dt)


def evolve_values(H: ContactHamiltonian, grid: PeriodicGrid, U: np.ndarray, t: float, params: SemigroupParams,
                  direction: str = "backward", record_times=None) -> tuple[np.ndarray, np.ndarray]:
    """Batched evolution of raw slices ``U[..., N]``.

    Returns ``(times, values)`` with ``values[k]`` the batch at ``times[k]``;
    by default only the horizon is kept. Requested times snap to the nearest step.
    """
    params.check(H)
    steps = time_steps(t, params.dt)
    step_times = np.concatenate([[0.0], params.dt * np.arange(1, len(steps)), [t]]) if steps else np.array([0.0])
    wanted = {len(steps)} if record_times is None else {int(np.argmin(np.abs(step_times - s))) for s in record_times}
    values = np.asarray(U, dtype=float)
    times, out = [], []
    if 0 in wanted:
        times.append(0.0)
        out.append(values.copy())
    for k, h in enumerate(steps, start=1):
        values = dp_step(H, grid, values, params, direction, dt=h)
        if k in wanted:
            times.append(float(step_times[k]))
            out.append(values)
    return np.array(times), np.array(out)
