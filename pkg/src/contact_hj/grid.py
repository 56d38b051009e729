"""Periodic grids on the circle S = (-1/2, 1/2] and functions sampled on them.

Node ``j`` (0-based) sits at ``x_j = (j + 1 - N/2) / N`` so that, for even N,
both ``x = 0`` (index ``N/2 - 1``) and ``x = 1/2`` (index ``N - 1``) are nodes.
"""

from __future__ import annotations

import json
from collections.abc import Callable
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from . import _io

MIN_NODES = 16


def wrap(x):
    """Map coordinates onto the fundamental domain (-1/2, 1/2]."""
    x = np.asarray(x, dtype=float)
    out = x - np.ceil(x - 0.5)
    return out if out.ndim else float(out)


def circle_distance(x, y):
    d = np.abs(wrap(np.asarray(x, dtype=float) - np.asarray(y, dtype=float)))
    return d


@dataclass(frozen=True)
class PeriodicGrid:
    N: int

    def __post_init__(self):
        if not isinstance(self.N, (int, np.integer)) or isinstance(self.N, bool):
            raise TypeError("N must be an integer")
        if self.N < MIN_NODES:
            raise ValueError(f"need at least {MIN_NODES} nodes, got N={self.N}")
        if self.N % 2:
            raise ValueError(f"N must be even so that 0 and 1/2 are nodes, got N={self.N}")

    @property
    def dx(self) -> float:
        return 1.0 / self.N

    @property
    def dx_exact(self) -> Fraction:
        return Fraction(1, self.N)

    @property
    def nodes(self) -> np.ndarray:
        j = np.arange(self.N)
        return (j + 1 - self.N // 2) / self.N

    @property
    def origin_index(self) -> int:
        """Index of the node at x = 0."""
        return self.N // 2 - 1

    def index_coordinate(self, x):
        """Continuous index position of ``x`` (node j sits at j), in [0, N)."""
        s = (wrap(x) + 0.5) * self.N - 1.0
        return np.mod(s, self.N)

    def index_of(self, x) -> int | np.ndarray:
        """Nearest node index (with wraparound)."""
        j = np.mod(np.rint(self.index_coordinate(x)).astype(int), self.N)
        return j if np.ndim(j) else int(j)

    def node_distance(self, i, j):
        """Circle distance between two nodes, in index units."""
        d = np.mod(np.asarray(i) - np.asarray(j), self.N)
        return np.minimum(d, self.N - d)

    def __repr__(self) -> str:
        return f"PeriodicGrid(N={self.N})"


def periodic_lerp(values: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Linear interpolation of periodic ``values[..., N]`` at index positions ``s``.

    ``s`` broadcasts against the leading axes of ``values``; the result has
    shape ``values.shape[:-1] + s.shape``.
    """
    n = values.shape[-1]
    j = np.floor(s)
    theta = s - j
    j0 = j.astype(np.intp) % n
    j1 = (j0 + 1) % n
    return (1.0 - theta) * values[..., j0] + theta * values[..., j1]


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Finite real values on the nodes of a :class:`PeriodicGrid`."""

    grid: PeriodicGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != (self.grid.N,):
            raise ValueError(f"expected {self.grid.N} values, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid function values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    # -- constructors -------------------------------------------------
    @classmethod
    def from_function(cls, grid: PeriodicGrid, f: Callable) -> GridFunction:
        return cls(grid, np.asarray(f(grid.nodes), dtype=float) * np.ones(grid.N))

    @classmethod
    def constant(cls, grid: PeriodicGrid, c: float) -> GridFunction:
        return cls(grid, np.full(grid.N, float(c)))

    # -- algebra ------------------------------------------------------
    def _other(self, other):
        if isinstance(other, GridFunction):
            if other.grid != self.grid:
                raise ValueError("grid functions live on different grids")
            return other.values
        return float(other)

    def __add__(self, other):
        return GridFunction(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return GridFunction(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return GridFunction(self.grid, self._other(other) - self.values)

    def __neg__(self):
        return GridFunction(self.grid, -self.values)

    def __mul__(self, c):
        return GridFunction(self.grid, self.values * float(c))

    __rmul__ = __mul__

    def __len__(self) -> int:
        return self.grid.N

    def __repr__(self) -> str:
        return f"GridFunction(N={self.grid.N}, min={self.values.min():.6g}, max={self.values.max():.6g})"

    # -- queries ------------------------------------------------------
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def min(self) -> float:
        return float(self.values.min())

    def max(self) -> float:
        return float(self.values.max())

    def at(self, x: float) -> float:
        """Value at the node nearest to ``x``."""
        return float(self.values[self.grid.index_of(x)])

    def distance(self, other: GridFunction) -> float:
        return float(np.max(np.abs(self.values - self._other(other))))

    def interpolate(self, x, order: str = "linear"):
        return interpolate(self, x, order=order)

    def lipschitz(self) -> float:
        return lipschitz_estimate(self)

    def resample(self, grid: PeriodicGrid, order: str = "linear") -> GridFunction:
        return GridFunction(grid, interpolate(self, grid.nodes, order=order))

    # -- serialization ------------------------------------------------
    def to_json(self) -> str:
        return _io.dumps({"N": self.grid.N, "values": [float(v) for v in self.values]}, indent=None)

    @classmethod
    def from_json(cls, text: str) -> GridFunction:
        data = json.loads(text)
        return cls(PeriodicGrid(int(data["N"])), np.array(data["values"], dtype=float))

    def to_csv(self, path: str | Path) -> Path:
        rows = zip(self.grid.nodes.tolist(), self.values.tolist())
        return _io.write_csv(path, ["x", "value"], rows)

    @classmethod
    def from_csv(cls, path: str | Path) -> GridFunction:
        _, rows = _io.read_csv(path)
        vals = np.array([float(r[1]) for r in rows])
        return cls(PeriodicGrid(len(vals)), vals)


def sup_norm(f: GridFunction) -> float:
    return f.sup_norm()


def interpolate(f: GridFunction, x, order: str = "linear"):
    """Periodic interpolation of ``f`` at circle coordinates ``x``.

    ``order`` is ``"linear"`` (default, monotone) or ``"cubic"`` (periodic
    spline). Both reproduce node values exactly.
    """
    s = f.grid.index_coordinate(x)
    if order == "linear":
        out = periodic_lerp(f.values, np.asarray(s, dtype=float))
    elif order == "cubic":
        n = f.grid.N
        knots = np.arange(n + 1, dtype=float)
        spline = CubicSpline(knots, np.append(f.values, f.values[0]), bc_type="periodic")
        out = spline(np.mod(s, n))
    else:
        raise ValueError(f"unknown interpolation order {order!r}")
    return out if np.ndim(out) else float(out)


def lipschitz_estimate(f: GridFunction) -> float:
    """Largest forward-difference slope, wrap-around pair included."""
    diffs = np.diff(np.append(f.values, f.values[0]))
    return float(np.max(np.abs(diffs)) / f.grid.dx)


def even_periodic_extension(profile: Callable, grid: PeriodicGrid) -> GridFunction:
    """Sample ``x -> profile(|x|)`` on the grid; ``profile`` lives on [0, 1/2]."""
    r = np.abs(grid.nodes)
    vals = np.asarray(profile(r), dtype=float) * np.ones(grid.N)
    return GridFunction(grid, vals)


# -- the worked example on the circle --------------------------------------

def u1_example(grid: PeriodicGrid) -> GridFunction:
    """Even periodic extension of x^2/2 (stationary for H = -2u + p^2)."""
    return even_periodic_extension(lambda r: 0.5 * r**2, grid)


def phi_example(grid: PeriodicGrid) -> GridFunction:
    """Even periodic extension of x^2/2 + x."""
    return even_periodic_extension(lambda r: 0.5 * r**2 + r, grid)


def phi_eps_profile(eps: float) -> Callable:
    """Three-piece profile on [0, 1/2]: quadratic, linear bridge, shifted quadratic."""
    if not 0.0 < eps < 0.25:
        raise ValueError(f"epsilon must lie in (0, 1/4), got {eps}")

    def profile(r):
        r = np.asarray(r, dtype=float)
        inner = 0.5 * r**2
        bridge = 0.5 * eps**2 + (1.5 * eps + 2.0) * (r - eps)
        outer = 0.5 * r**2 + r
        return np.where(r <= eps, inner, np.where(r <= 2 * eps, bridge, outer))

    return profile


def phi_eps_example(eps: float, grid: PeriodicGrid) -> GridFunction:
    return even_periodic_extension(phi_eps_profile(eps), grid)
