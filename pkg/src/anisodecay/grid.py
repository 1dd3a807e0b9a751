"""Rectangular grids, zero-Dirichlet fields and their discrete norms.

Fields store interior nodes only, in lexicographic (C) order; the boundary
is structurally zero.  Partial derivatives are forward differences on the
``n_i + 1`` edges of every grid line along axis ``i``, the two boundary
edges included (ghost value 0).  With the per-node weight ``prod(h_i)`` the
negative divergence ``D_i^T a`` is the exact first variation of the
discrete energy, which is what makes the dissipation identities close.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.integrate import trapezoid

__all__ = [
    "GridError",
    "Grid",
    "Field",
    "NormLog",
    "Trajectory",
    "make_grid",
    "norm",
    "truncate_gk",
    "truncate_tn",
    "difference_matrices",
    "partial_differences",
    "anisotropic_energy",
    "axis_energies",
    "lrs_norm",
]


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    extents: tuple[float, ...]
    resolution: tuple[int, ...]

    def __post_init__(self):
        extents = tuple(float(e) for e in self.extents)
        resolution = tuple(int(n) for n in self.resolution)
        if len(extents) != len(resolution):
            raise GridError("extents and resolution must have the same length")
        if len(extents) not in (2, 3):
            raise GridError(f"only 2-D and 3-D grids are supported, got n_dims={len(extents)}")
        if any(not math.isfinite(e) or e <= 0 for e in extents):
            raise GridError(f"extents must be positive, got {extents}")
        if any(n < 2 for n in resolution):
            raise GridError(f"need at least 2 interior nodes per axis, got {resolution}")
        object.__setattr__(self, "extents", extents)
        object.__setattr__(self, "resolution", resolution)

    @property
    def n_dims(self) -> int:
        return len(self.extents)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.resolution

    @property
    def size(self) -> int:
        return math.prod(self.resolution)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(e / (n + 1) for e, n in zip(self.extents, self.resolution))

    @property
    def cell_volume(self) -> float:
        return math.prod(self.spacing)

    @property
    def measure(self) -> float:
        """Lebesgue measure of the rectangle."""
        return math.prod(self.extents)

    @property
    def discrete_measure(self) -> float:
        """Total quadrature weight of the interior nodes."""
        return self.size * self.cell_volume

    def axes(self) -> list[np.ndarray]:
        return [h * np.arange(1, n + 1) for h, n in zip(self.spacing, self.resolution)]

    def coordinates(self) -> list[np.ndarray]:
        """Interior node coordinates, one array of ``shape`` per axis."""
        return np.meshgrid(*self.axes(), indexing="ij")

    def center_index(self) -> int:
        """Flat index of the node closest to the domain centre."""
        idx = tuple((n - 1) // 2 if n % 2 else n // 2 for n in self.resolution)
        return int(np.ravel_multi_index(idx, self.resolution))


def make_grid(extents: Sequence[float], resolution: Sequence[int] | int) -> Grid:
    extents = tuple(extents)
    if isinstance(resolution, (int, np.integer)):
        resolution = (int(resolution),) * len(extents)
    return Grid(extents=extents, resolution=tuple(resolution))


@dataclass(frozen=True, eq=False)
class Field:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        if values.size != self.grid.size:
            raise GridError(f"field has {values.size} values, grid has {self.grid.size} nodes")
        if not np.all(np.isfinite(values)):
            raise GridError("field values must be finite")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grid: Grid) -> "Field":
        return cls(grid, np.zeros(grid.size))

    @classmethod
    def constant(cls, grid: Grid, value: float) -> "Field":
        return cls(grid, np.full(grid.size, float(value)))

    @classmethod
    def from_function(cls, grid: Grid, func: Callable[..., np.ndarray]) -> "Field":
        return cls(grid, np.broadcast_to(func(*grid.coordinates()), grid.shape))

    @property
    def array(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)

    def with_values(self, values: np.ndarray) -> "Field":
        return Field(self.grid, values)

    def _check(self, other: "Field"):
        if other.grid != self.grid:
            raise GridError("fields live on different grids")

    def __add__(self, other):
        if isinstance(other, Field):
            self._check(other)
            return Field(self.grid, self.values + other.values)
        return Field(self.grid, self.values + float(other))

    def __sub__(self, other):
        if isinstance(other, Field):
            self._check(other)
            return Field(self.grid, self.values - other.values)
        return Field(self.grid, self.values - float(other))

    def __mul__(self, scalar):
        return Field(self.grid, self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return Field(self.grid, -self.values)

    def __abs__(self):
        return Field(self.grid, np.abs(self.values))

    def __eq__(self, other):
        return isinstance(other, Field) and other.grid == self.grid and np.array_equal(
            other.values, self.values
        )

    __hash__ = None


def _lp(values: np.ndarray, weight: float, p: float) -> float:
    if p < 1:
        raise GridError(f"norm exponent must be >= 1, got {p}")
    a = np.abs(values)
    if math.isinf(p):
        return float(a.max(initial=0.0))
    if p == 1:
        return float(a.sum() * weight)
    if p == 2:
        return float(math.sqrt(np.dot(a, a) * weight))
    peak = a.max(initial=0.0)
    if peak == 0:
        return 0.0
    # scaled to avoid overflow for large exponents
    return float(peak * ((a / peak) ** p).sum() ** (1 / p) * weight ** (1 / p))


def norm(field: Field, exponent: float = 2) -> float:
    """Discrete L^p norm with weight ``prod(h_i)`` per node; sup norm for ``inf``."""
    return _lp(field.values, field.grid.cell_volume, float(exponent))


def _gk(values: np.ndarray, k: float) -> np.ndarray:
    return np.sign(values) * np.maximum(np.abs(values) - k, 0.0)


def truncate_gk(field: Field, k: float) -> Field:
    """``G_k(s) = sign(s) (|s| - k)_+``."""
    if k < 0:
        raise GridError(f"truncation level must be >= 0, got {k}")
    return field.with_values(_gk(field.values, k))


def truncate_tn(field: Field, n: float) -> Field:
    """``T_n(s) = clip(s, -n, n)``; ``T_n + G_n`` is the identity."""
    if n <= 0:
        raise GridError(f"truncation level must be > 0, got {n}")
    return field.with_values(np.clip(field.values, -n, n))


def _difference_1d(n: int, h: float) -> sp.csr_matrix:
    # (n+1) edges x n nodes; edge e joins padded nodes e and e+1
    return sp.diags([np.ones(n), -np.ones(n)], [0, -1], shape=(n + 1, n), format="csr") / h


@lru_cache(maxsize=16)
def difference_matrices(grid: Grid) -> tuple[sp.csr_matrix, ...]:
    """Forward-difference operators ``D_i`` (edges x nodes), one per axis."""
    mats = []
    for axis in range(grid.n_dims):
        factors = [sp.identity(n, format="csr") for n in grid.resolution]
        factors[axis] = _difference_1d(grid.resolution[axis], grid.spacing[axis])
        d = factors[0]
        for f in factors[1:]:
            d = sp.kron(d, f, format="csr")
        mats.append(d.tocsr())
    return tuple(mats)


def partial_differences(field: Field) -> list[np.ndarray]:
    return [d @ field.values for d in difference_matrices(field.grid)]


def _axis_energies(values: np.ndarray, grid: Grid, p: Sequence[float]) -> np.ndarray:
    w = grid.cell_volume
    return np.array(
        [np.sum(np.abs(d @ values) ** pi) * w for d, pi in zip(difference_matrices(grid), p)]
    )


def _exponent_floats(exponents, n_dims: int) -> tuple[float, ...]:
    p = exponents.as_floats() if hasattr(exponents, "as_floats") else tuple(map(float, exponents))
    if len(p) != n_dims:
        raise GridError(f"{len(p)} exponents for a {n_dims}-D grid")
    return p


def axis_energies(field: Field, exponents) -> np.ndarray:
    """Per-axis ``sum_edges |D_i u|^{p_i} * prod(h)``."""
    return _axis_energies(field.values, field.grid, _exponent_floats(exponents, field.grid.n_dims))


def anisotropic_energy(field: Field, exponents) -> float:
    """``sum_i sum_edges |D_i u|^{p_i} * prod(h)``."""
    return float(axis_energies(field, exponents).sum())


@dataclass(frozen=True)
class NormLog:
    t: np.ndarray
    l1: np.ndarray
    l2: np.ndarray
    sup: np.ndarray
    energy: np.ndarray

    COLUMNS = ("t", "l1", "l2", "sup", "energy")

    @classmethod
    def compute(cls, times, states: Sequence[Field], exponents) -> "NormLog":
        p = _exponent_floats(exponents, states[0].grid.n_dims) if states else ()
        return cls(
            t=np.asarray(times, dtype=float),
            l1=np.array([norm(s, 1) for s in states]),
            l2=np.array([norm(s, 2) for s in states]),
            sup=np.array([norm(s, math.inf) for s in states]),
            energy=np.array([_axis_energies(s.values, s.grid, p).sum() for s in states]),
        )

    def rows(self):
        return zip(self.t, self.l1, self.l2, self.sup, self.energy)

    def __len__(self):
        return len(self.t)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Recorded states ``u(t_j)`` of one run, with their norms.

    ``problem`` is the originating problem description (may be ``None`` for
    trajectories assembled by hand); ``exponents`` drive the energy column.
    """

    problem: object
    times: np.ndarray
    states: tuple[Field, ...]
    norm_log: NormLog = field(repr=False)
    step_count: int = 0

    @classmethod
    def build(cls, problem, times, states, exponents=None, step_count: int | None = None):
        times = np.asarray(times, dtype=float)
        states = tuple(states)
        if len(times) != len(states) or len(times) == 0:
            raise GridError("need one state per sample instant")
        if times[0] != 0.0:
            raise GridError("trajectories start at t = 0")
        if np.any(np.diff(times) <= 0):
            raise GridError("sample instants must be strictly increasing")
        grid = states[0].grid
        if any(s.grid != grid for s in states):
            raise GridError("states live on different grids")
        if exponents is None:
            exponents = problem.exponents
        times.flags.writeable = False
        log = NormLog.compute(times, states, exponents)
        return cls(problem, times, states, log, len(times) - 1 if step_count is None else step_count)

    @property
    def grid(self) -> Grid:
        return self.states[0].grid

    @property
    def final(self) -> Field:
        return self.states[-1]

    @property
    def t_final(self) -> float:
        return float(self.times[-1])

    def state_at(self, t: float) -> Field:
        j = int(np.argmin(np.abs(self.times - t)))
        return self.states[j]

    def __len__(self):
        return len(self.times)


def _window_series(times: np.ndarray, values: np.ndarray, t0: float, t1: float):
    """Samples restricted to [t0, t1] with linearly interpolated endpoints."""
    inside = (times > t0) & (times < t1)
    t = np.concatenate([[t0], times[inside], [t1]])
    v = np.interp(t, times, values)
    return t, v


def lrs_norm(traj: Trajectory, r: float, s: float, t0: float, t1: float) -> float:
    """``(int_{t0}^{t1} ||u(tau)||_{L^s}^r dtau)^{1/r}`` by the trapezoidal rule.

    For ``r = inf`` the essential sup is taken over samples inside the window.
    """
    if r < 1 or s < 1:
        raise GridError("r and s must be >= 1")
    if not (0 <= t0 < t1 <= traj.t_final + 1e-12 * max(1.0, traj.t_final)):
        raise GridError(f"empty or invalid time window [{t0}, {t1}]")
    norms = np.array([norm(u, s) for u in traj.states])
    if math.isinf(r):
        inside = (traj.times >= t0) & (traj.times <= t1)
        if not inside.any():
            return float(np.interp(t0, traj.times, norms))
        return float(norms[inside].max())
    t, v = _window_series(traj.times, norms, t0, t1)
    return float(trapezoid(v**r, t) ** (1 / r))
