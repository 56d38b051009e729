"""Implicit action functions as value functions with point initial data.

``h_{x0,u0}(x, t)`` (the forward action) is the backward semigroup started from
``u0`` at ``x0`` and "+infinity" elsewhere; ``h^{x0,u0}(x, t)`` (the backward
action) is the forward semigroup started from ``u0`` at ``x0`` and "-infinity"
elsewhere. Infinities are represented by a boolean mask; masked entries carry
``+BIG`` / ``-BIG`` but never enter a minimum or maximum.

Fields are computed with ``dt = dx / v_max`` so that the extreme velocities
land exactly on neighbouring nodes and the reachable set grows by one node per
step.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from . import _io
from .grid import PeriodicGrid
from .model import ContactHamiltonian
from .semigroup import BIG, SemigroupParams, dp_step, time_steps

ACTION_N_V = 33


class MaskedAccessError(LookupError):
    """Requested (x, t) is not reachable from the point datum."""


class UnreachableHorizonError(RuntimeError):
    pass


class BrokenPointerError(RuntimeError):
    pass


@dataclass(frozen=True)
class PointDatum:
    x0: float
    u0: float
    index: int

    @classmethod
    def on_grid(cls, grid: PeriodicGrid, x0: float, u0: float) -> PointDatum:
        """Snap ``x0`` to the nearest node."""
        if not np.isfinite(u0):
            raise ValueError("u0 must be finite")
        j = grid.index_of(x0)
        return cls(float(grid.nodes[j]), float(u0), int(j))


def action_params(H: ContactHamiltonian, grid: PeriodicGrid, v_max: float = 2.0,
                  n_v: int = ACTION_N_V, **kw) -> SemigroupParams:
    """Parameters for point-datum fields: ``dt = dx / v_max``."""
    return SemigroupParams.for_action(H, grid, v_max, n_v=n_v, **kw)


@dataclass(frozen=True)
class Curve:
    times: np.ndarray
    x: np.ndarray
    nodes: np.ndarray
    # velocity chosen on the step ending at times[k + 1]
    v: np.ndarray

    def to_csv(self, path):
        v = np.append(self.v, np.nan)
        rows = ((float(t), float(x), "" if np.isnan(w) else float(w)) for t, x, w in zip(self.times, self.x, v))
        return _io.write_csv(path, ["t", "x", "v"], rows)


@dataclass(eq=False)
class ActionField:
    """Slices of one action function at recorded times.

    ``kind`` is ``"forward"`` for h_{x0,u0} and ``"backward"`` for h^{x0,u0}.
    """

    H: ContactHamiltonian
    grid: PeriodicGrid
    datum: PointDatum
    kind: str
    times: np.ndarray
    values: np.ndarray
    masks: np.ndarray
    params: SemigroupParams
    step_dts: np.ndarray
    velocities: np.ndarray | None = None
    step_masks: np.ndarray | None = None

    @property
    def t_min(self) -> float:
        return 3.0 * self.params.dt

    def _time_index(self, t: float) -> int:
        if t < self.t_min - 1e-12:
            raise ValueError(f"action values are only recorded for t >= 3 dt = {self.t_min:.3g}")
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 0.5 * self.params.dt + 1e-12:
            raise KeyError(f"time {t} was not recorded (nearest {self.times[k]})")
        return k

    def slice(self, t: float) -> np.ma.MaskedArray:
        k = self._time_index(t)
        return np.ma.MaskedArray(self.values[k], mask=self.masks[k])

    def value(self, x: float, t: float) -> float:
        """Value at the node nearest ``x``; raises :class:`MaskedAccessError` when unreachable."""
        k = self._time_index(t)
        j = self.grid.index_of(x)
        if self.masks[k, j]:
            raise MaskedAccessError(f"x={x} is not reachable from x0={self.datum.x0} by t={t}")
        return float(self.values[k, j])

    def to_csv(self, path):
        nodes = self.grid.nodes.tolist()
        rows = ((float(t), xv, float(val), int(m))
                for t, vals, ms in zip(self.times, self.values, self.masks)
                for xv, val, m in zip(nodes, vals.tolist(), ms.tolist()))
        return _io.write_csv(path, ["t", "x", "value", "masked"], rows)


def masked_evolve(H: ContactHamiltonian, grid: PeriodicGrid, U0: np.ndarray, mask0: np.ndarray,
                  t_max: float, params: SemigroupParams, direction: str = "backward",
                  record_times: Sequence[float] | None = None, keep_pointers: bool = False) -> dict:
    """Evolve a batch of masked slices ``U0[B, N]``.

    Returns a dict with ``times``, ``values[T, B, N]``, ``masks[T, B, N]``,
    ``step_dts`` and, with ``keep_pointers``, the per-step chosen velocities and
    masks (``velocities[steps, B, N]``, ``step_masks[steps + 1, B, N]``).
    """
    params.check(H)
    steps = time_steps(t_max, params.dt)
    if not steps:
        raise ValueError("t_max must be positive")
    step_times = np.concatenate([[0.0], params.dt * np.arange(1, len(steps)), [t_max]])
    if record_times is None:
        want = set(range(len(steps) + 1))
    else:
        want = set()
        for t in record_times:
            k = int(np.argmin(np.abs(step_times - t)))
            if abs(step_times[k] - t) > 0.5 * params.dt + 1e-12:
                raise ValueError(f"record time {t} outside [0, {t_max}]")
            want.add(k)
    sign = 1.0 if direction == "backward" else -1.0
    U = np.where(mask0, sign * BIG, np.asarray(U0, dtype=float))
    M = np.asarray(mask0, dtype=bool).copy()
    times, values, masks = [], [], []
    vel_hist, mask_hist = [], [M.copy()] if keep_pointers else None
    if 0 in want:
        times.append(0.0)
        values.append(U.copy())
        masks.append(M.copy())
    for k, h in enumerate(steps, start=1):
        if keep_pointers:
            U, M, V = dp_step(H, grid, U, params, direction, mask=M, dt=h, return_velocity=True)
            vel_hist.append(V)
            mask_hist.append(M)
        else:
            U, M = dp_step(H, grid, U, params, direction, mask=M, dt=h)
        if k in want:
            times.append(float(step_times[k]))
            values.append(U)
            masks.append(M)
    out = {
        "times": np.array(times),
        "values": np.array(values),
        "masks": np.array(masks),
        "step_dts": np.array(steps),
    }
    if keep_pointers:
        out["velocities"] = np.array(vel_hist)
        out["step_masks"] = np.array(mask_hist)
    return out


def compute_fields(H: ContactHamiltonian, grid: PeriodicGrid, data: Sequence[PointDatum], t_max: float,
                   params: SemigroupParams, kind: str = "forward",
                   record_times: Sequence[float] | None = None,
                   keep_pointers: bool = False) -> list[ActionField]:
    """Batched action fields, one per datum, sharing the time stepping."""
    if kind not in ("forward", "backward"):
        raise ValueError(f"kind must be 'forward' or 'backward', got {kind!r}")
    if t_max < 3.0 * params.dt - 1e-12:
        raise ValueError(f"t_max must be at least 3 dt = {3 * params.dt:.3g}")
    data = list(data)
    U0 = np.zeros((len(data), grid.N))
    M0 = np.ones((len(data), grid.N), dtype=bool)
    for b, d in enumerate(data):
        U0[b, d.index] = d.u0
        M0[b, d.index] = False
    direction = "backward" if kind == "forward" else "forward"
    if record_times is not None:
        record_times = sorted(set(record_times) | {t_max})
    res = masked_evolve(H, grid, U0, M0, t_max, params, direction, record_times, keep_pointers)
    keep = res["times"] >= 3.0 * params.dt - 1e-12
    if res["masks"][-1].all(axis=-1).any():
        raise UnreachableHorizonError("every node is masked at t_max")
    fields = []
    for b, d in enumerate(data):
        fields.append(ActionField(
            H=H, grid=grid, datum=d, kind=kind,
            times=res["times"][keep],
            values=res["values"][keep, b],
            masks=res["masks"][keep, b],
            params=params,
            step_dts=res["step_dts"],
            velocities=res["velocities"][:, b] if keep_pointers else None,
            step_masks=res["step_masks"][:, b] if keep_pointers else None,
        ))
    return fields


def h_forward(H: ContactHamiltonian, grid: PeriodicGrid, datum: PointDatum, t_max: float,
              params: SemigroupParams, record_times=None, keep_pointers: bool = True) -> ActionField:
    """Field of x -> h_{x0,u0}(x, t) for t up to ``t_max``."""
    return compute_fields(H, grid, [datum], t_max, params, "forward", record_times, keep_pointers)[0]


def h_backward(H: ContactHamiltonian, grid: PeriodicGrid, datum: PointDatum, t_max: float,
               params: SemigroupParams, record_times=None, keep_pointers: bool = False) -> ActionField:
    """Field of x -> h^{x0,u0}(x, t) for t up to ``t_max``."""
    return compute_fields(H, grid, [datum], t_max, params, "backward", record_times, keep_pointers)[0]


def check_inversion(H: ContactHamiltonian, grid: PeriodicGrid, x0: float, u0: float, x: float, t: float,
                    params: SemigroupParams) -> float:
    """|h^{x,u}(x0, t) - u0| with u = h_{x0,u0}(x, t)."""
    return check_inversion_batch(H, grid, [(x0, u0, x, t)], params)[0]


def check_inversion_batch(H: ContactHamiltonian, grid: PeriodicGrid, samples, params: SemigroupParams) -> np.ndarray:
    """Inversion residuals for many (x0, u0, x, t); the fields are computed in two batches."""
    samples = [tuple(map(float, s)) for s in samples]
    t_max = max(s[3] for s in samples)
    times = sorted({s[3] for s in samples})
    fwd = compute_fields(H, grid, [PointDatum.on_grid(grid, s[0], s[1]) for s in samples], t_max, params,
                         "forward", record_times=times)
    u = [f.value(s[2], s[3]) for f, s in zip(fwd, samples)]
    bwd = compute_fields(H, grid, [PointDatum.on_grid(grid, s[2], ub) for s, ub in zip(samples, u)], t_max,
                         params, "backward", record_times=times)
    return np.array([abs(f.value(s[0], s[3]) - PointDatum.on_grid(grid, s[0], s[1]).u0)
                     for f, s in zip(bwd, samples)])


def minimizer_backtrack(field: ActionField, x: float, t: float) -> Curve:
    """Follow the stored argmin velocities from (x, t) back to the datum.

    The foot position is tracked continuously (in index units) and the
    velocity at a non-node position is interpolated from the admissible
    stencil nodes. ``nodes`` holds the nearest admissible node at every step;
    the path starts exactly at ``x0`` and ends exactly at the node of ``x``.
    """
    if field.velocities is None:
        raise ValueError("field was computed without pointers")
    step_times = np.concatenate([[0.0], np.cumsum(field.step_dts)])
    k_end = int(np.argmin(np.abs(step_times - t)))
    if abs(step_times[k_end] - t) > 0.5 * field.params.dt + 1e-12:
        raise ValueError(f"t={t} lies beyond the field horizon")
    grid = field.grid
    n = grid.N
    j = grid.index_of(x)
    if field.step_masks[k_end, j]:
        raise MaskedAccessError(f"x={x} is not reachable by t={t}")
    sign = 1.0 if field.kind == "forward" else -1.0
    s = float(j)
    positions, nodes, vels = [s], [j], []
    for k in range(k_end, 0, -1):
        lo = int(np.floor(s))
        theta = s - lo
        j0, j1 = lo % n, (lo + 1) % n
        here = field.step_masks[k]
        w0 = 0.0 if here[j0] else 1.0 - theta
        w1 = 0.0 if here[j1] else theta
        if w0 + w1 == 0.0:
            w0, w1 = (0.0, 1.0) if not here[j1] else (1.0, 0.0)
            if here[j0] and here[j1]:
                raise BrokenPointerError(f"pointer chain broken at step {k}, position {s:.3f}")
        v = (w0 * field.velocities[k - 1, j0] + w1 * field.velocities[k - 1, j1]) / (w0 + w1)
        s = s - sign * float(v) * float(field.step_dts[k - 1]) / grid.dx
        lo = int(np.floor(s))
        cands = [lo % n, (lo + 1) % n]
        if s - lo > 0.5:
            cands.reverse()
        prev = field.step_masks[k - 1]
        choice = next((c for c in cands if not prev[c]), None)
        if choice is None:
            raise BrokenPointerError(f"pointer chain broken at step {k}, position {s:.3f}")
        positions.append(s)
        nodes.append(choice)
        vels.append(float(v))
    nodes = np.array(nodes[::-1])
    if nodes[0] != field.datum.index:
        raise BrokenPointerError("backtracked path does not start at the datum")
    xs = np.array([grid.nodes[0] + q * grid.dx for q in positions[::-1]])
    xs = (xs + 0.5) % 1.0 - 0.5
    xs[0] = field.datum.x0
    xs[-1] = grid.nodes[j]
    return Curve(step_times[: k_end + 1], xs, nodes, np.array(vels[::-1]))


def curve_action(H: ContactHamiltonian, curve: Curve, u0: float, kind: str = "forward") -> float:
    """Re-integrate the implicit one-step equation along a discrete curve.

    Uses the recorded velocities and arrival nodes: ``w_{k+1} = w_k + dt L(x_{k+1}, w_{k+1}, v_k)``
    for the forward kind, with ``-dt`` for the backward kind.
    """
    sign = 1.0 if kind == "forward" else -1.0
    w = float(u0)
    for k, h in enumerate(np.diff(curve.times)):
        x = float(curve.x[k + 1])
        v = float(curve.v[k])
        a = w
        for _ in range(200):
            nxt = a + sign * h * float(H.L(x, w, v))
            if abs(nxt - w) <= 1e-14 * (1.0 + abs(nxt)):
                w = nxt
                break
            w = nxt
    return w
