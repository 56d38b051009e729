"""Contact Hamiltonians H(x, u, p) on the circle, their Lagrangians and duals.

A Hamiltonian is registered with the constants ``K1 >= K2 > 0`` bounding the
rate at which it decreases in ``u``. Partial derivatives may be given in closed
form; otherwise central differences (step 1e-5) stand in for them.

New catalog entries are added by writing a factory returning a
:class:`ContactHamiltonian` and listing it in ``CATALOG``.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

FD_STEP = 1e-5
FD_STEP_2 = 1e-4
TWO_PI = 2.0 * np.pi
# K2 as printed for the worked example; the u-monotonicity band itself gives lam = 2
K2_EXAMPLE_PRINTED = 4.0


class LegendreError(RuntimeError):
    """Root find for the maximizing momentum did not converge."""

    def __init__(self, x, u, v, message="Legendre transform did not converge"):
        super().__init__(f"{message} at (x={x!r}, u={u!r}, v={v!r})")
        self.x, self.u, self.v = x, u, v


class AssumptionViolation(ValueError):
    def __init__(self, report: AssumptionReport):
        first = report.violations[0]
        super().__init__(f"{len(report.violations)} violations of {report.hamiltonian}; first: {first}")
        self.report = report


@dataclass(frozen=True, eq=False)
class ContactHamiltonian:
    name: str
    func: Callable
    K1: float
    K2: float
    dH_dx: Callable | None = None
    dH_du: Callable | None = None
    dH_dp: Callable | None = None
    d2H_dp2: Callable | None = None
    lagrangian: Callable | None = None
    dL_du: Callable | None = None
    p_growth: Callable | None = None
    # L(x, u, v) = L0(x, v) + rate * u, when known; enables the exact per-step solve
    lagrangian_affine: tuple | None = None
    # x -> (A, B, C) with L0(x, v) = A v^2 + B v + C; enables the compiled step
    lagrangian_quadratic: Callable | None = None
    # -1: strictly decreasing in u (the standing assumption); +1 for duals
    u_sign: int = -1
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 < self.K2 <= self.K1):
            raise ValueError(f"need 0 < K2 <= K1, got K1={self.K1}, K2={self.K2}")
        if self.u_sign not in (-1, 1):
            raise ValueError("u_sign must be -1 or +1")

    def __call__(self, x, u, p):
        return self.func(x, u, p)

    def h_x(self, x, u, p):
        if self.dH_dx is not None:
            return self.dH_dx(x, u, p)
        return (self.func(x + FD_STEP, u, p) - self.func(x - FD_STEP, u, p)) / (2 * FD_STEP)

    def h_u(self, x, u, p):
        if self.dH_du is not None:
            return self.dH_du(x, u, p)
        return (self.func(x, u + FD_STEP, p) - self.func(x, u - FD_STEP, p)) / (2 * FD_STEP)

    def h_p(self, x, u, p):
        if self.dH_dp is not None:
            return self.dH_dp(x, u, p)
        return (self.func(x, u, p + FD_STEP) - self.func(x, u, p - FD_STEP)) / (2 * FD_STEP)

    def h_pp(self, x, u, p):
        if self.d2H_dp2 is not None:
            return self.d2H_dp2(x, u, p)
        return second_difference_p(self, x, u, p)

    def L(self, x, u, v):
        """Lagrangian sup_p [p v - H]; closed form when registered."""
        if self.lagrangian is not None:
            return self.lagrangian(x, u, v)
        return legendre(self, x, u, v)[0]

    def L_u(self, x, u, v):
        if self.dL_du is not None:
            return self.dL_du(x, u, v)
        if self.lagrangian is not None:
            return (self.lagrangian(x, u + FD_STEP, v) - self.lagrangian(x, u - FD_STEP, v)) / (2 * FD_STEP)
        # envelope theorem: dL/du = -dH/du at the maximizing momentum
        _, p = legendre(self, x, u, v)
        return -self.h_u(x, u, p)

    def __repr__(self) -> str:
        return f"ContactHamiltonian({self.name!r}, K1={self.K1}, K2={self.K2})"


@dataclass(frozen=True, eq=False)
class ContactLagrangian:
    func: Callable
    dL_du: Callable | None = None
    dL_dv: Callable | None = None

    @classmethod
    def from_hamiltonian(cls, H: ContactHamiltonian) -> ContactLagrangian:
        return cls(func=H.L, dL_du=H.L_u)

    def __call__(self, x, u, v):
        return self.func(x, u, v)

    def l_u(self, x, u, v):
        if self.dL_du is not None:
            return self.dL_du(x, u, v)
        return (self.func(x, u + FD_STEP, v) - self.func(x, u - FD_STEP, v)) / (2 * FD_STEP)

    def l_v(self, x, u, v):
        if self.dL_dv is not None:
            return self.dL_dv(x, u, v)
        return (self.func(x, u, v + FD_STEP) - self.func(x, u, v - FD_STEP)) / (2 * FD_STEP)


def second_difference_p(H: ContactHamiltonian, x, u, p, h: float = FD_STEP_2):
    return (H.func(x, u, p + h) - 2.0 * H.func(x, u, p) + H.func(x, u, p - h)) / h**2


# -- convex duality -------------------------------------------------------

def _solve_monotone(g: Callable, dg: Callable, target, tol=1e-12, max_iter=200, max_expand=80):
    """Solve g(z) = target for increasing g, elementwise, by safeguarded Newton.

    Returns ``(z, converged_mask)``.
    """
    target = np.asarray(target, dtype=float)
    lo = np.full(target.shape, -1.0)
    hi = np.full(target.shape, 1.0)
    for _ in range(max_expand):
        bad = g(lo) > target
        if not bad.any():
            break
        lo = np.where(bad, 2.0 * lo, lo)
    for _ in range(max_expand):
        bad = g(hi) < target
        if not bad.any():
            break
        hi = np.where(bad, 2.0 * hi, hi)
    z = 0.5 * (lo + hi)
    done = np.zeros(target.shape, dtype=bool)
    for _ in range(max_iter):
        r = g(z) - target
        scale = 1.0 + np.abs(target)
        done = np.abs(r) <= tol * scale
        if done.all():
            break
        lo = np.where(r < 0, z, lo)
        hi = np.where(r > 0, z, hi)
        d = dg(z)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = z - r / d
        inside = np.isfinite(newton) & (newton > lo) & (newton < hi)
        z_new = np.where(inside, newton, 0.5 * (lo + hi))
        z = np.where(done, z, z_new)
        if np.all(done | (hi - lo <= 1e-15 * (1.0 + np.abs(z)))):
            done = np.ones_like(done)
            break
    ok = np.isfinite(z) & (g(lo) <= target) & (g(hi) >= target)
    return z, done & ok


def legendre(H: ContactHamiltonian, x, u, v, tol: float = 1e-12, max_iter: int = 200):
    """Numerical Legendre transform in p.

    Returns ``(L, p_star)`` with ``L = p_star * v - H(x, u, p_star)`` and
    ``H_p(x, u, p_star) = v``. Arguments broadcast elementwise.
    """
    x, u, v = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, u, v)))
    p, ok = _solve_monotone(lambda q: H.h_p(x, u, q), lambda q: H.h_pp(x, u, q), v, tol, max_iter)
    if not np.all(ok):
        k = np.flatnonzero(~np.asarray(ok).ravel())[0]
        raise LegendreError(float(x.ravel()[k]), float(u.ravel()[k]), float(v.ravel()[k]))
    L = p * v - H.func(x, u, p)
    if L.ndim == 0:
        return float(L), float(p)
    return L, p


def inverse_legendre(L: ContactLagrangian, x, u, p, tol: float = 1e-12, max_iter: int = 200):
    """Recover ``H(x, u, p) = sup_v [p v - L(x, u, v)]``; returns ``(H, v_star)``."""
    x, u, p = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, u, p)))

    def d2(w):
        return (L.l_v(x, u, w + FD_STEP_2) - L.l_v(x, u, w - FD_STEP_2)) / (2 * FD_STEP_2)

    v, ok = _solve_monotone(lambda w: L.l_v(x, u, w), d2, p, tol, max_iter)
    if not np.all(ok):
        k = np.flatnonzero(~np.asarray(ok).ravel())[0]
        raise LegendreError(float(x.ravel()[k]), float(u.ravel()[k]), float(p.ravel()[k]),
                            "inverse Legendre transform did not converge")
    Hval = p * v - L(x, u, v)
    if Hval.ndim == 0:
        return float(Hval), float(v)
    return Hval, v


def dual(H: ContactHamiltonian) -> ContactHamiltonian:
    """F(x, u, p) = H(x, -u, -p); increasing in u when H is decreasing."""

    def maybe(f, wrap):
        return None if f is None else wrap(f)

    lag = None
    if H.lagrangian is not None:
        lag = lambda x, u, v, L=H.lagrangian: L(x, -u, -v)  # noqa: E731
    dlag = None
    if H.dL_du is not None:
        dlag = lambda x, u, v, f=H.dL_du: -f(x, -u, -v)  # noqa: E731
    growth = H.p_growth
    affine = None
    if H.lagrangian_affine is not None:
        L0, rate = H.lagrangian_affine
        affine = (lambda x, v, L0=L0: L0(x, -v), -rate)
    quad = None
    if H.lagrangian_quadratic is not None:
        def quad(x, q=H.lagrangian_quadratic):
            A, B, C = q(x)
            return A, -B, C
    return ContactHamiltonian(
        name=f"dual({H.name})",
        func=lambda x, u, p, f=H.func: f(x, -u, -p),
        K1=H.K1,
        K2=H.K2,
        dH_dx=maybe(H.dH_dx, lambda f: lambda x, u, p: f(x, -u, -p)),
        dH_du=maybe(H.dH_du, lambda f: lambda x, u, p: -f(x, -u, -p)),
        dH_dp=maybe(H.dH_dp, lambda f: lambda x, u, p: -f(x, -u, -p)),
        d2H_dp2=maybe(H.d2H_dp2, lambda f: lambda x, u, p: f(x, -u, -p)),
        lagrangian=lag,
        dL_du=dlag,
        p_growth=growth,
        lagrangian_affine=affine,
        lagrangian_quadratic=quad,
        u_sign=-H.u_sign,
        params=dict(H.params),
    )


# -- assumption checks ----------------------------------------------------

@dataclass(frozen=True)
class WorkingBox:
    u_max: float = 4.0
    p_max: float = 8.0
    x_min: float = -0.5
    x_max: float = 0.5

    def __post_init__(self):
        vals = (self.u_max, self.p_max, self.x_min, self.x_max)
        if not all(np.isfinite(vals)) or self.u_max <= 0 or self.p_max <= 0 or self.x_max <= self.x_min:
            raise ValueError(f"invalid working box {self}")


@dataclass
class AssumptionReport:
    hamiltonian: str
    n_samples: int
    hpp_min: float
    hpp_max: float
    u_rate_min: float
    u_rate_max: float
    K1: float
    K2: float
    violations: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def failed(self, clause: str) -> bool:
        return any(v["clause"] == clause for v in self.violations)

    def raise_if_failed(self):
        if self.violations:
            raise AssumptionViolation(self)
        return self

    def to_dict(self) -> dict:
        return {
            "hamiltonian": self.hamiltonian,
            "passed": self.passed,
            "n_samples": self.n_samples,
            "d2H_dp2": [self.hpp_min, self.hpp_max],
            "u_rate": [self.u_rate_min, self.u_rate_max],
            "K1": self.K1,
            "K2": self.K2,
            "violations": self.violations[:20],
        }


def verify_assumptions(H: ContactHamiltonian, box: WorkingBox | None = None, n_samples: int = 4000,
                       tol: float = 1e-9, seed: int = 0, max_listed: int = 50) -> AssumptionReport:
    """Sample the working box and check convexity in p, superlinearity, and the u-monotonicity band.

    The u-rate is ``-dH/du`` for decreasing Hamiltonians and ``dF/du`` for
    duals; it must stay in ``[K2, K1]``.
    """
    box = box or WorkingBox()
    rng = np.random.default_rng(seed)
    x = rng.uniform(box.x_min, box.x_max, n_samples)
    u = rng.uniform(-box.u_max, box.u_max, n_samples)
    p = rng.uniform(-box.p_max, box.p_max, n_samples)
    # the p = 0 slice is where convexity failures usually hide
    p[: n_samples // 20] = 0.0

    hpp = second_difference_p(H, x, u, p)
    rate = H.u_sign * np.asarray(H.h_u(x, u, p), dtype=float) * np.ones(n_samples)

    violations = []

    def record(clause, idx, value):
        for k in idx[: max_listed - len(violations)]:
            violations.append({"clause": clause, "x": float(x[k]), "u": float(u[k]),
                               "p": float(p[k]), "value": float(value[k])})

    record("H1", np.flatnonzero(~(hpp > tol)), hpp)
    record("H3", np.flatnonzero((rate < H.K2 - tol) | (rate > H.K1 + tol)), rate)
    if H.p_growth is not None:
        for c in (1.0, 4.0, 16.0):
            radius = float(H.p_growth(c, box.u_max))
            q = radius * (1.0 + rng.uniform(0, 1, n_samples)) * np.sign(rng.uniform(-1, 1, n_samples))
            excess = H.func(x, u, q) - c * np.abs(q)
            record("H2", np.flatnonzero(excess < -tol), excess)

    return AssumptionReport(
        hamiltonian=H.name,
        n_samples=n_samples,
        hpp_min=float(hpp.min()),
        hpp_max=float(hpp.max()),
        u_rate_min=float(rate.min()),
        u_rate_max=float(rate.max()),
        K1=H.K1,
        K2=H.K2,
        violations=violations,
    )


def max_speed(H: ContactHamiltonian, p_bound: float, u_bound: float = 1.0, n: int = 201) -> float:
    """sup |dH/dp| over |p| <= p_bound, |u| <= u_bound, x on the circle."""
    x, u, p = np.meshgrid(np.linspace(-0.5, 0.5, 33), np.linspace(-u_bound, u_bound, 9),
                          np.linspace(-p_bound, p_bound, n), indexing="ij")
    return float(np.max(np.abs(H.h_p(x, u, p))))


# -- catalog --------------------------------------------------------------

def _quadratic_growth(a_min, b_max, c_max, lam):
    def radius(c, u_bound):
        # a p^2 - b|p| - lam U - c_max >= c |p|
        k = c + b_max
        return (k + np.sqrt(k * k + 4 * a_min * (lam * u_bound + c_max))) / (2 * a_min)

    return radius


def example_quadratic(lam: float = 2.0) -> ContactHamiltonian:
    """H = -lam u + p^2, the worked example for lam = 2."""
    lam = float(lam)
    if lam <= 0:
        raise ValueError("lam must be positive")
    return ContactHamiltonian(
        name="example_quadratic",
        func=lambda x, u, p: -lam * u + p * p,
        K1=lam,
        K2=lam,
        dH_dx=lambda x, u, p: np.zeros(np.broadcast(x, u, p).shape),
        dH_du=lambda x, u, p: np.full(np.broadcast(x, u, p).shape, -lam),
        dH_dp=lambda x, u, p: 2.0 * p + 0.0 * (x + u),
        d2H_dp2=lambda x, u, p: np.full(np.broadcast(x, u, p).shape, 2.0),
        lagrangian=lambda x, u, v: 0.25 * v * v + lam * u,
        dL_du=lambda x, u, v: np.full(np.broadcast(x, u, v).shape, lam),
        p_growth=_quadratic_growth(1.0, 0.0, 0.0, lam),
        lagrangian_affine=(lambda x, v: 0.25 * v * v + 0.0 * x, lam),
        lagrangian_quadratic=lambda x: (0.25 + 0.0 * x, 0.0 * x, 0.0 * x),
        params={"lam": lam, "K2_assumption": lam, "K2_example": K2_EXAMPLE_PRINTED},
    )


def quadratic(lam: float = 2.0, a0: float = 1.0, a1: float = 0.0, b0: float = 0.0, b1: float = 0.0,
              c0: float = 0.0, c1: float = 0.0) -> ContactHamiltonian:
    """H = a(x) p^2 + b(x) p - lam u + c(x) with

    a = a0 + a1 cos 2pi x,  b = b0 + b1 sin 2pi x,  c = c0 + c1 cos 2pi x.
    """
    lam, a0, a1, b0, b1, c0, c1 = map(float, (lam, a0, a1, b0, b1, c0, c1))
    if lam <= 0 or a0 <= abs(a1):
        raise ValueError("need lam > 0 and a0 > |a1| for a uniformly convex family")

    def a(x):
        return a0 + a1 * np.cos(TWO_PI * x)

    def b(x):
        return b0 + b1 * np.sin(TWO_PI * x)

    def c(x):
        return c0 + c1 * np.cos(TWO_PI * x)

    def da(x):
        return -TWO_PI * a1 * np.sin(TWO_PI * x)

    def db(x):
        return TWO_PI * b1 * np.cos(TWO_PI * x)

    def dc(x):
        return -TWO_PI * c1 * np.sin(TWO_PI * x)

    shape = lambda *args: np.broadcast(*args).shape  # noqa: E731
    return ContactHamiltonian(
        name="quadratic",
        func=lambda x, u, p: a(x) * p * p + b(x) * p - lam * u + c(x),
        K1=lam,
        K2=lam,
        dH_dx=lambda x, u, p: da(x) * p * p + db(x) * p + dc(x) + 0.0 * u,
        dH_du=lambda x, u, p: np.full(shape(x, u, p), -lam),
        dH_dp=lambda x, u, p: 2.0 * a(x) * p + b(x) + 0.0 * u,
        d2H_dp2=lambda x, u, p: 2.0 * a(x) + 0.0 * (u + p),
        lagrangian=lambda x, u, v: (v - b(x)) ** 2 / (4.0 * a(x)) + lam * u - c(x),
        dL_du=lambda x, u, v: np.full(shape(x, u, v), lam),
        p_growth=_quadratic_growth(a0 - abs(a1), abs(b0) + abs(b1), abs(c0) + abs(c1), lam),
        lagrangian_affine=(lambda x, v: (v - b(x)) ** 2 / (4.0 * a(x)) - c(x), lam),
        lagrangian_quadratic=lambda x: (1.0 / (4.0 * a(x)), -b(x) / (2.0 * a(x)),
                                        b(x) ** 2 / (4.0 * a(x)) - c(x)),
        params={"lam": lam, "a0": a0, "a1": a1, "b0": b0, "b1": b1, "c0": c0, "c1": c1},
    )


def quartic(lam: float = 2.0, c1: float = 0.0) -> ContactHamiltonian:
    """H = p^2/2 + p^4/4 - lam u + c1 cos 2pi x; no closed-form Lagrangian."""
    lam, c1 = float(lam), float(c1)
    if lam <= 0:
        raise ValueError("lam must be positive")
    shape = lambda *args: np.broadcast(*args).shape  # noqa: E731
    return ContactHamiltonian(
        name="quartic",
        func=lambda x, u, p: 0.5 * p**2 + 0.25 * p**4 - lam * u + c1 * np.cos(TWO_PI * x),
        K1=lam,
        K2=lam,
        dH_dx=lambda x, u, p: -TWO_PI * c1 * np.sin(TWO_PI * x) + 0.0 * (u + p),
        dH_du=lambda x, u, p: np.full(shape(x, u, p), -lam),
        dH_dp=lambda x, u, p: p + p**3 + 0.0 * (x + u),
        d2H_dp2=lambda x, u, p: 1.0 + 3.0 * p**2 + 0.0 * (x + u),
        p_growth=lambda c, u_bound: max(1.0, c + np.sqrt(4.0 * (lam * u_bound + abs(c1)))),
        params={"lam": lam, "c1": c1},
    )


def sine_coupled(lam: float = 2.0, mu: float = 0.5, c1: float = 0.0) -> ContactHamiltonian:
    """H = p^2/2 - lam u - mu sin u + c1 cos 2pi x, so -dH/du ranges over [lam-|mu|, lam+|mu|]."""
    lam, mu, c1 = float(lam), float(mu), float(c1)
    if lam <= abs(mu):
        raise ValueError("need lam > |mu| so that H stays strictly decreasing in u")
    shape = lambda *args: np.broadcast(*args).shape  # noqa: E731
    return ContactHamiltonian(
        name="sine_coupled",
        func=lambda x, u, p: 0.5 * p * p - lam * u - mu * np.sin(u) + c1 * np.cos(TWO_PI * x),
        K1=lam + abs(mu),
        K2=lam - abs(mu),
        dH_dx=lambda x, u, p: -TWO_PI * c1 * np.sin(TWO_PI * x) + 0.0 * (u + p),
        dH_du=lambda x, u, p: -lam - mu * np.cos(u) + 0.0 * (x + p),
        dH_dp=lambda x, u, p: p + 0.0 * (x + u),
        d2H_dp2=lambda x, u, p: np.ones(shape(x, u, p)),
        lagrangian=lambda x, u, v: 0.5 * v * v + lam * u + mu * np.sin(u) - c1 * np.cos(TWO_PI * x),
        dL_du=lambda x, u, v: lam + mu * np.cos(u) + 0.0 * (x + v),
        p_growth=lambda c, u_bound: c + np.sqrt(c * c + 2.0 * (lam * u_bound + abs(mu) + abs(c1))),
        params={"lam": lam, "mu": mu, "c1": c1},
    )


CATALOG: dict[str, Callable[..., ContactHamiltonian]] = {
    "example_quadratic": example_quadratic,
    "quadratic": quadratic,
    "quartic": quartic,
    "sine_coupled": sine_coupled,
}


def get_hamiltonian(hid: str, **params) -> ContactHamiltonian:
    try:
        factory = CATALOG[hid]
    except KeyError:
        raise KeyError(f"unknown Hamiltonian id {hid!r}; known: {sorted(CATALOG)}") from None
    return factory(**params)
