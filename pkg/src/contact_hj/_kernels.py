"""Compiled one-step kernel for Lagrangians L = A(x) v^2 + B(x) v + C(x) + rate * u.

Same sampling, tie-breaking and golden-section refinement as the numpy path in
:mod:`contact_hj.semigroup`; only the loop order differs.
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    njit = None

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _objective(U, mask, has_mask, b, i, s, v, A, B, C, sign, dt, denom, n):
    j = math.floor(s)
    theta = s - j
    # foot shifts stay within a few cells, so one wrap suffices
    j0 = int(j)
    if j0 < 0:
        j0 += n
    elif j0 >= n:
        j0 -= n
    j1 = j0 + 1
    if j1 == n:
        j1 = 0
    if has_mask:
        if (mask[b, j0] and theta < 1.0) or (mask[b, j1] and theta > 0.0):
            return math.inf
    a = (1.0 - theta) * U[b, j0] + theta * U[b, j1]
    L0 = A * v * v + B * v + C
    return sign * ((a + sign * dt * L0) / denom)


def _step(U, mask, has_mask, A, B, C, rate, sign, dt, dx, shifts, order, vel, j0, j1, omt, theta,
          refine, golden_iter, out, out_mask, out_v, big):
    nb, n = U.shape
    n_v = order.size
    denom = 1.0 - sign * dt * rate
    scale = dx / dt
    for b in range(nb):
        for i in range(n):
            best = math.inf
            rbest = -1
            Ai, Bi, Ci = A[i], B[i], C[i]
            for r in range(n_v):
                k0 = j0[i, r]
                k1 = j1[i, r]
                t = theta[i, r]
                if has_mask:
                    if (mask[b, k0] and t < 1.0) or (mask[b, k1] and t > 0.0):
                        continue
                a = omt[i, r] * U[b, k0] + t * U[b, k1]
                v = vel[r]
                sc = sign * ((a + sign * dt * (Ai * v * v + Bi * v + Ci)) / denom)
                if sc < best:
                    best = sc
                    rbest = r
            if rbest < 0:
                out[b, i] = sign * big
                out_mask[b, i] = True
                out_v[b, i] = 0.0
                continue
            vbest = vel[rbest]
            if refine:
                kbest = order[rbest]
                lo = shifts[max(kbest - 1, 0)] * scale
                hi = shifts[min(kbest + 1, n_v - 1)] * scale
                c = hi - GOLDEN * (hi - lo)
                d = lo + GOLDEN * (hi - lo)
                fc = _objective(U, mask, has_mask, b, i, i - sign * c * (dt / dx), c, Ai, Bi, Ci,
                                sign, dt, denom, n)
                fd = _objective(U, mask, has_mask, b, i, i - sign * d * (dt / dx), d, Ai, Bi, Ci,
                                sign, dt, denom, n)
                for _ in range(golden_iter):
                    if fc < fd:
                        hi = d
                        d = c
                        fd = fc
                        c = hi - GOLDEN * (hi - lo)
                        fc = _objective(U, mask, has_mask, b, i, i - sign * c * (dt / dx), c, Ai, Bi,
                                        Ci, sign, dt, denom, n)
                    else:
                        lo = c
                        c = d
                        fc = fd
                        d = lo + GOLDEN * (hi - lo)
                        fd = _objective(U, mask, has_mask, b, i, i - sign * d * (dt / dx), d, Ai, Bi,
                                        Ci, sign, dt, denom, n)
                if fc <= fd:
                    vr, fr = c, fc
                else:
                    vr, fr = d, fd
                if fr < best:
                    best = fr
                    vbest = vr
            out[b, i] = sign * best
            out_mask[b, i] = False
            out_v[b, i] = vbest


if njit is not None:
    _objective = njit(cache=True, inline="always")(_objective)
    _step = njit(cache=True)(_step)


def available() -> bool:
    return njit is not None


def quadratic_step(U, mask, A, B, C, rate, sign, dt, dx, stencil, refine, golden_iter, big):
    """Run the kernel on ``U[batch, N]``; returns ``(values, mask, velocities)``.

    ``stencil`` is ``(shifts, order, sorted_shifts, j0, j1, 1 - theta, theta)``
    with velocities sorted by ``|shift|``.
    """
    shifts, order, sorted_shifts, j0, j1, omt, theta = stencil
    vel = sorted_shifts * (dx / dt)
    U = np.ascontiguousarray(U, dtype=np.float64)
    nb, n = U.shape
    has_mask = mask is not None
    m = np.ascontiguousarray(mask, dtype=np.bool_) if has_mask else np.zeros((1, 1), dtype=np.bool_)
    out = np.empty_like(U)
    out_mask = np.zeros(U.shape, dtype=np.bool_)
    out_v = np.empty_like(U)
    _step(U, m, has_mask, A, B, C, float(rate), float(sign), float(dt), float(dx),
          shifts, order, vel, j0, j1, omt, theta, bool(refine), int(golden_iter),
          out, out_mask, out_v, float(big))
    return out, out_mask, out_v
