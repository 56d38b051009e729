"""Weak KAM objects on the grid: u_+, the A / A_+ / A_- classes, Aubry sets,
the two finite-time-convergence initial data, time bounds and reach times."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .action import PointDatum, action_params, compute_fields, masked_evolve
from .grid import GridFunction, PeriodicGrid
from .model import ContactHamiltonian, dual
from .semigroup import EvolutionTrace, SemigroupParams, dp_step, evolve_final

LABELS = ("A", "A_plus", "A_minus")


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, history: list):
        super().__init__(f"{message}; last residuals {history[-5:]}")
        self.history = history


class InconsistencyError(RuntimeError):
    pass


class ConstructionError(ValueError):
    def __init__(self, clause: str, detail: str):
        super().__init__(f"construction violates ({clause}): {detail}")
        self.clause = clause


# -- u_+ ----------------------------------------------------------------------

def compute_u_plus(H: ContactHamiltonian, grid: PeriodicGrid, params: SemigroupParams | None = None,
                   route: str = "fixed_point", tol: float = 1e-8, max_steps: int = 10**6,
                   initial: GridFunction | None = None, return_history: bool = False):
    """Forward weak KAM solution as the fixed point of T^+ (``fixed_point``) or
    as minus the fixed point of T^- for the dual Hamiltonian (``duality``).

    Iteration stops once one step moves the slice by at most ``tol`` in sup norm.
    """
    if route == "fixed_point":
        ham, direction, sign = H, "forward", 1.0
    elif route == "duality":
        ham, direction, sign = dual(H), "backward", -1.0
    else:
        raise ValueError(f"route must be 'fixed_point' or 'duality', got {route!r}")
    params = (params or SemigroupParams.default(H, grid)).check(ham)
    U = np.zeros(grid.N) if initial is None else sign * initial.values
    history = []
    for k in range(1, max_steps + 1):
        nxt = dp_step(ham, grid, U, params, direction)
        res = float(np.max(np.abs(nxt - U)))
        if k == 1 or k % 100 == 0:
            history.append(res)
        U = nxt
        if res <= tol:
            history.append(res)
            out = GridFunction(grid, sign * U)
            return (out, history) if return_history else out
    raise ConvergenceError(f"u_+ iteration ({route}) did not converge in {max_steps} steps", history)


def fixed_point_residual(H: ContactHamiltonian, u: GridFunction, t: float, params: SemigroupParams,
                         direction: str = "forward") -> float:
    """sup |T_t u - u| for T^+ (``forward``) or T^- (``backward``)."""
    return evolve_final(H, u, t, params, direction).distance(u)


# -- classes and Aubry sets -----------------------------------------------------

@dataclass(frozen=True)
class Classification:
    label: str
    min_gap: float
    tol_band: float

    def to_dict(self) -> dict:
        return {"label": self.label, "min_gap": self.min_gap, "tol_band": self.tol_band}


def _check_grid(*fs: GridFunction):
    if any(f.grid != fs[0].grid for f in fs):
        raise ValueError("grid functions live on different grids")


def classify(phi: GridFunction, u_plus: GridFunction, tol_band: float | None = None) -> Classification:
    """A when min(phi - u_+) is within ``tol_band`` of zero, A_plus above, A_minus below."""
    _check_grid(phi, u_plus)
    if tol_band is None:
        tol_band = 3.0 * phi.grid.dx * phi.lipschitz()
    gap = float(np.min(phi.values - u_plus.values))
    if abs(gap) <= tol_band:
        label = "A"
    elif gap > tol_band:
        label = "A_plus"
    else:
        label = "A_minus"
    return Classification(label, gap, float(tol_band))


def aubry_tolerance(phi: GridFunction) -> float:
    """Default contact tolerance dx^2 max(1, Lip(phi)) / 4.

    A quadratic contact with u_+ then resolves to the contact node alone (its
    neighbours sit at dx^2 / 2); a band linear in dx would swallow a whole
    neighbourhood of it.
    """
    return 0.25 * phi.grid.dx ** 2 * max(1.0, phi.lipschitz())


def aubry_set(phi: GridFunction, u_plus: GridFunction, tol: float | None = None,
              tol_band: float | None = None) -> np.ndarray:
    """Indices of nodes where phi - u_+ <= tol (phi must be in class A).

    A positive minimum gap inside the class-A band (numerical error in u_+) is
    added to ``tol`` so that the contact locus is never empty.
    """
    cls = classify(phi, u_plus, tol_band)
    if cls.label != "A":
        raise ValueError(f"aubry_set needs a function of class A, got {cls.label} (gap {cls.min_gap:.3g})")
    if tol is None:
        tol = aubry_tolerance(phi)
    nodes = np.flatnonzero(phi.values - u_plus.values <= tol + max(cls.min_gap, 0.0))
    if nodes.size == 0:
        raise InconsistencyError(f"class A but no node within {tol:.3g} of u_+ (gap {cls.min_gap:.3g})")
    return nodes


def in_A_u(phi: GridFunction, u: GridFunction, u_plus: GridFunction, tol: float | None = None) -> bool:
    """True iff the Aubry set of ``u`` is contained in that of ``phi``."""
    return bool(np.all(np.isin(aubry_set(u, u_plus, tol), aubry_set(phi, u_plus, tol))))


def distance_to_set(grid: PeriodicGrid, nodes: np.ndarray) -> np.ndarray:
    """Circle distance from every node to the node set."""
    idx = np.arange(grid.N)
    d = grid.node_distance(idx[:, None], np.asarray(nodes)[None, :]).min(axis=1)
    return d * grid.dx


# -- finite-time-convergence data --------------------------------------------------

@dataclass
class PhiEpsConstruction:
    phi_eps: GridFunction
    neighbourhood: np.ndarray
    radius: float
    checks: dict = field(default_factory=dict)


def verify_phi_eps_thm1(phi_eps: GridFunction, u: GridFunction, phi: GridFunction, u_plus: GridFunction,
                        eps: float, neighbourhood: np.ndarray, atol: float = 1e-12) -> dict:
    """The three defining properties, evaluated on the grid.

    (i) phi_eps = u on the neighbourhood; (ii) phi_eps > u_+ off it;
    (iii) sup |phi_eps - phi| <= eps (attained with equality by the worked
    example's profile, so the bound is checked non-strictly).
    """
    inside = np.zeros(u.grid.N, dtype=bool)
    inside[neighbourhood] = True
    dev_i = float(np.max(np.abs(phi_eps.values - u.values)[inside], initial=0.0))
    margin_ii = float(np.min((phi_eps.values - u_plus.values)[~inside], initial=np.inf))
    dev_iii = phi_eps.distance(phi)
    return {
        "i": {"max_deviation": dev_i, "ok": dev_i <= atol},
        "ii": {"min_margin": margin_ii, "ok": margin_ii > 0.0},
        "iii": {"sup_distance": dev_iii, "ok": dev_iii <= eps * (1.0 + 1e-9) + atol},
    }


def construct_phi_eps_thm1(u: GridFunction, phi: GridFunction, u_plus: GridFunction, eps: float,
                           tol: float | None = None) -> PhiEpsConstruction:
    """Datum equal to ``u`` near the Aubry set of ``u``, above u_+ elsewhere and eps-close to ``phi``.

    With ``r = eps / max(Lip phi, Lip u)`` and ``d`` the distance to the Aubry set
    of ``u``: the output is ``u`` for ``d <= r``; beyond, the linear blend
    ``(1 - b) u + b phi`` with ``b = min(1, (d - r) / r)`` lifted to at least
    ``u_+ + min(eps/2, (u - u_+)/2)``. The three properties are checked on the grid.
    """
    _check_grid(u, phi, u_plus)
    if eps <= 0:
        raise ValueError("eps must be positive")
    if not in_A_u(phi, u, u_plus, tol):
        raise ValueError("phi must belong to A_u")
    grid = u.grid
    core = aubry_set(u, u_plus, tol)
    r = eps / max(phi.lipschitz(), u.lipschitz(), 1e-12)
    d = distance_to_set(grid, core)
    inside = d <= r + 1e-12
    b = np.clip((d - r) / r, 0.0, 1.0)
    blend = (1.0 - b) * u.values + b * phi.values
    lift = u_plus.values + np.minimum(0.5 * eps, 0.5 * (u.values - u_plus.values))
    vals = np.where(inside, u.values, np.maximum(blend, lift))
    out = GridFunction(grid, vals)
    neighbourhood = np.flatnonzero(inside)
    checks = verify_phi_eps_thm1(out, u, phi, u_plus, eps, neighbourhood)
    for clause, res in checks.items():
        if not res["ok"]:
            raise ConstructionError(clause, str(res))
    return PhiEpsConstruction(out, neighbourhood, r, checks)


def construct_phi_eps_thm2(phi: GridFunction, u_plus: GridFunction, eps: float,
                           tol_band: float | None = None) -> GridFunction:
    """phi on O = {phi < u_+ + eps}, u_+ + eps elsewhere."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    cls = classify(phi, u_plus, tol_band)
    if cls.label != "A":
        raise ValueError(f"phi must be of class A, got {cls.label}")
    O = phi.values < u_plus.values + eps
    return GridFunction(phi.grid, np.where(O, phi.values, u_plus.values + eps))


def thm2_neighbourhood(phi: GridFunction, u_plus: GridFunction, eps: float) -> np.ndarray:
    return np.flatnonzero(phi.values < u_plus.values + eps)


# -- bounds -----------------------------------------------------------------------

def estimate_C1(H: ContactHamiltonian, u_plus: GridFunction, params: SemigroupParams | None = None,
                t: float = 1.0, stride: int = 8, refine: bool = True, v_max: float = 2.0,
                batch: int = 32) -> float:
    """max over x, y of |h_{y, u_+(y)}(x, t)| and |u_+(x)|.

    Origins ``y`` run over every ``stride``-th node; with ``refine`` all nodes
    within ``stride`` of the best origin are added.
    """
    grid = u_plus.grid
    params = params or action_params(H, grid, v_max)

    def sweep(origins):
        best, arg = -np.inf, None
        for start in range(0, len(origins), batch):
            chunk = origins[start:start + batch]
            data = [PointDatum(float(grid.nodes[j]), float(u_plus.values[j]), int(j)) for j in chunk]
            fields = compute_fields(H, grid, data, t, params, "forward", record_times=[t])
            for j, f in zip(chunk, fields):
                sl = f.slice(t)
                m = float(np.max(np.abs(sl.compressed()))) if sl.count() else -np.inf
                if m > best:
                    best, arg = m, j
        return best, arg

    origins = list(range(0, grid.N, stride))
    best, arg = sweep(origins)
    if refine and stride > 1:
        near = [int(j % grid.N) for j in range(arg - stride + 1, arg + stride) if j % grid.N not in origins]
        if near:
            best = max(best, sweep(near)[0])
    return float(max(best, u_plus.sup_norm()))


def T0_bound(eps: float, K2: float, C1: float, u_plus_norm: float) -> float:
    """max{ (1/K2) ln((C1 + 1 + |u_+|) / eps), 1 }."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    return max(math.log((C1 + 1.0 + u_plus_norm) / eps) / K2, 1.0)


def f_eps(u: GridFunction, phi: GridFunction, u_plus: GridFunction, eps: float, tol: float | None = None) -> float:
    """min of u - u_+ over nodes at distance r = eps / max(Lip phi, Lip u) (within dx) from I_u."""
    grid = u.grid
    r = eps / max(phi.lipschitz(), u.lipschitz())
    d = distance_to_set(grid, aubry_set(u, u_plus, tol))
    ring = np.abs(d - r) <= grid.dx + 1e-12
    if not ring.any():
        raise InconsistencyError(f"no node at distance {r:.4g} from the Aubry set")
    return float(np.min((u.values - u_plus.values)[ring]))


def t0_example_estimate(u: GridFunction, phi: GridFunction, u_plus: GridFunction, eps: float, M0: float,
                        K2: float, tol: float | None = None) -> float:
    """(1/K2) ln((M0 + 1 + |u_+|) / f(eps))."""
    if not in_A_u(phi, u, u_plus, tol):
        raise ValueError("phi must belong to A_u")
    f = f_eps(u, phi, u_plus, eps, tol)
    if f <= 0:
        raise InconsistencyError(f"f(eps) = {f:.3g} <= 0: degenerate neighbourhood")
    return math.log((M0 + 1.0 + u_plus.sup_norm()) / f) / K2


def M0_over(candidates) -> float:
    """sup norm over the supplied stationary candidates."""
    return float(max(c.sup_norm() for c in candidates))


# -- reach times -----------------------------------------------------------------

@dataclass
class ReachReport:
    target: str
    epsilon: float | None
    t_star_measured: float | None
    t0_analytic: float | None
    T0_analytic: float | None
    tol: float
    horizon: float
    final_distance: float
    extra: dict = field(default_factory=dict)

    @property
    def reached(self) -> bool:
        return self.t_star_measured is not None

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "epsilon": self.epsilon,
            "reached": self.reached,
            "t_star_measured": self.t_star_measured,
            "t0_analytic": self.t0_analytic,
            "T0_analytic": self.T0_analytic,
            "tol": self.tol,
            "horizon": self.horizon,
            "final_distance": self.final_distance,
            **self.extra,
        }


def measure_reach_time(trace: EvolutionTrace, target: GridFunction, tol: float, target_id: str = "target",
                       epsilon: float | None = None, t0_analytic: float | None = None,
                       T0_analytic: float | None = None) -> ReachReport:
    """Smallest recorded time from which every later slice is within ``tol`` of ``target``."""
    if trace.grid != target.grid:
        raise ValueError("trace and target live on different grids")
    dist = trace.sup_distance(target)
    bad = np.flatnonzero(dist > tol)
    if bad.size == 0:
        t_star = float(trace.times[0])
    elif bad[-1] == len(dist) - 1:
        t_star = None
    else:
        t_star = float(trace.times[bad[-1] + 1])
    return ReachReport(target_id, epsilon, t_star, t0_analytic, T0_analytic, float(tol),
                       float(trace.times[-1]), float(dist[-1]))


def coincidence_time(a: EvolutionTrace, b: EvolutionTrace, tol: float = 0.0) -> float | None:
    """First recorded time from which the two traces stay within ``tol`` of each other.

    With ``b`` the evolution of a stationary solution this compares against
    the scheme's own stationary state, so ``tol = 0`` asks for bitwise equality.
    """
    if not np.array_equal(a.times, b.times):
        raise ValueError("traces are recorded at different times")
    dist = np.max(np.abs(a.values() - b.values()), axis=1)
    bad = np.flatnonzero(dist > tol)
    if bad.size == 0:
        return float(a.times[0])
    if bad[-1] == len(dist) - 1:
        return None
    return float(a.times[bad[-1] + 1])


# -- restriction identities --------------------------------------------------------

def restricted_infimum(H: ContactHamiltonian, phi: GridFunction, nodes: np.ndarray, times,
                       params: SemigroupParams) -> tuple[np.ndarray, np.ndarray]:
    """inf over y in ``nodes`` of h_{y, phi(y)}(x, t) for every node x and t in ``times``.

    One masked evolution from phi restricted to the node set replaces the
    per-origin fields. Returns ``(values[T, N], masks[T, N])``.
    """
    mask = np.ones(phi.grid.N, dtype=bool)
    mask[np.asarray(nodes)] = False
    times = sorted(times)
    res = masked_evolve(H, phi.grid, phi.values[None, :], mask[None, :], times[-1], params, "backward",
                        record_times=times)
    return res["values"][:, 0], res["masks"][:, 0]


def restricted_infimum_pointwise(H: ContactHamiltonian, phi: GridFunction, nodes: np.ndarray, t: float,
                                 params: SemigroupParams, batch: int = 64) -> np.ndarray:
    """Same quantity from one action field per origin (slow; for cross-checks)."""
    grid = phi.grid
    best = np.full(grid.N, np.inf)
    nodes = list(np.asarray(nodes))
    for start in range(0, len(nodes), batch):
        data = [PointDatum(float(grid.nodes[j]), float(phi.values[j]), int(j)) for j in nodes[start:start + batch]]
        for f in compute_fields(H, grid, data, t, params, "forward", record_times=[t]):
            sl = f.slice(t)
            best = np.minimum(best, sl.filled(np.inf))
    return best


def restriction_residual_series(H: ContactHamiltonian, phi: GridFunction, nodes: np.ndarray, times,
                                params: SemigroupParams, reference: GridFunction | None = None,
                                x_sample: np.ndarray | None = None) -> np.ndarray:
    """Residuals max_x |left(x, t) - inf_{y in nodes} h_{y, phi(y)}(x, t)| for each t.

    The left side is T^-_t phi, or the fixed ``reference`` (the stationary
    variant). Masked right-hand values count as infinite residual.
    """
    times = sorted(times)
    right, masks = restricted_infimum(H, phi, nodes, times, params)
    x_idx = np.arange(phi.grid.N) if x_sample is None else np.asarray(x_sample)
    if reference is None:
        res = masked_evolve(H, phi.grid, phi.values[None, :], np.zeros((1, phi.grid.N), dtype=bool),
                            times[-1], params, "backward", record_times=times)
        left = res["values"][:, 0]
    else:
        left = np.broadcast_to(reference.values, right.shape)
    diff = np.abs(left - right)[:, x_idx]
    diff = np.where(masks[:, x_idx], np.inf, diff)
    return diff.max(axis=1)


def verify_restriction_identity(H: ContactHamiltonian, phi_eps: GridFunction, nodes: np.ndarray, t: float,
                                params: SemigroupParams, reference: GridFunction | None = None,
                                x_sample: np.ndarray | None = None) -> float:
    """Residual of T^-_t phi_eps = inf_{y in O} h_{y, phi_eps(y)}(., t) at horizon ``t``.

    Pass ``reference=u`` for the stationary form u = inf_{y in O} h_{y, u(y)}(., t).
    """
    return float(restriction_residual_series(H, phi_eps, nodes, [t], params, reference, x_sample)[-1])


def locate_restriction_time(H: ContactHamiltonian, phi: GridFunction, nodes: np.ndarray, t_max: float,
                            threshold: float, params: SemigroupParams, reference: GridFunction | None = None,
                            n_times: int = 64) -> float | None:
    """First time on an ``n_times`` grid of (0, t_max] from which the residual stays below ``threshold``.

    The residual series is computed once; the crossing is located by bisection
    on it (earlier times are not residual-monotone in general, so the search
    uses the suffix maximum).
    """
    times = np.linspace(t_max / n_times, t_max, n_times)
    res = restriction_residual_series(H, phi, nodes, times, params, reference)
    suffix = np.maximum.accumulate(res[::-1])[::-1]
    if suffix[-1] > threshold:
        return None
    lo, hi = 0, len(times) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if suffix[mid] <= threshold:
            hi = mid
        else:
            lo = mid + 1
    return float(times[lo])
