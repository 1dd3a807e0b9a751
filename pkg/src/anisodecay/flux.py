"""Coefficient families ``a_i(x, xi)`` and an empirical structure checker.

Three autonomous families are provided:

* ``orthotropic_power``: ``a_i(xi) = |xi_i|^{p_i-2} xi_i``
* ``regularized_power``: ``a_i(xi) = (eps^2 + xi_i^2)^{(p_i-2)/2} xi_i``
* ``perturbed``: orthotropic plus ``h(x)^{1-1/p_i} tanh(xi_i)`` with a
  nonnegative field ``h``; coercivity, growth and monotonicity survive
  because ``tanh`` is odd, bounded and increasing.

Each ``a_i`` depends on ``xi`` only through ``xi_i``, so the vectorised
routines act on one array of edge differences per axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exponents import ExponentVector
from .grid import Field, Grid

__all__ = [
    "FluxError",
    "SingularDerivativeError",
    "FluxModel",
    "StructureReport",
    "flux_eval",
    "flux_derivative",
    "edge_flux",
    "edge_flux_derivative",
    "edge_perturbation",
    "verify_structure",
    "reference_gamma",
]

KINDS = ("orthotropic_power", "regularized_power", "perturbed")


class FluxError(ValueError):
    pass


class SingularDerivativeError(FluxError):
    pass


def reference_gamma(p) -> float:
    """``min_i 2^{2-p_i}``: the elementary strong-monotonicity constant for p >= 2."""
    return float(min(2.0 ** (2.0 - float(pi)) for pi in p))


@dataclass(frozen=True, eq=False)
class FluxModel:
    kind: str
    exponents: ExponentVector
    epsilon: float = 0.0
    alpha: float = 1.0
    beta: tuple[float, ...] | None = None
    gamma: float | None = None
    h_field: Field | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise FluxError(f"unknown flux kind {self.kind!r}; expected one of {KINDS}")
        if self.epsilon < 0:
            raise FluxError("epsilon must be >= 0")
        n = self.exponents.n_dims
        beta = (1.0,) * n if self.beta is None else tuple(float(b) for b in self.beta)
        if len(beta) != n:
            raise FluxError(f"need {n} growth constants, got {len(beta)}")
        if not (0 < self.alpha <= min(beta)):
            raise FluxError("structure constants must satisfy 0 < alpha <= beta_i")
        object.__setattr__(self, "beta", beta)
        if self.gamma is None:
            object.__setattr__(self, "gamma", reference_gamma(self.exponents.p))
        if self.kind == "perturbed":
            if self.h_field is None:
                raise FluxError("the perturbed flux needs an h_field")
            if np.any(self.h_field.values < 0):
                raise FluxError("h_field must be nonnegative")
        object.__setattr__(self, "_p", self.exponents.as_floats())

    @classmethod
    def orthotropic(cls, exponents: ExponentVector) -> "FluxModel":
        return cls("orthotropic_power", exponents)

    @classmethod
    def regularized(cls, exponents: ExponentVector, epsilon: float) -> "FluxModel":
        return cls("regularized_power", exponents, epsilon=float(epsilon))

    @classmethod
    def perturbed(cls, exponents: ExponentVector, h_field: Field) -> "FluxModel":
        return cls("perturbed", exponents, h_field=h_field)

    @property
    def p(self) -> tuple[float, ...]:
        return self._p

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "p": [str(pi) for pi in self.exponents.p],
            "epsilon": self.epsilon,
            "alpha": self.alpha,
            "beta": list(self.beta),
            "gamma": self.gamma,
        }


def _check_axis(model: FluxModel, axis: int) -> int:
    """Validate a 1-based axis and return the 0-based index."""
    if not (1 <= axis <= model.exponents.n_dims):
        raise FluxError(f"axis {axis} out of range 1..{model.exponents.n_dims}")
    return axis - 1


def edge_flux(model: FluxModel, axis: int, xi: np.ndarray, h=None) -> np.ndarray:
    """``a_axis`` evaluated at the array of partial differences ``xi``.

    ``h`` holds the perturbation values on the same edges (perturbed kind).
    """
    p = model.p[axis]
    xi = np.asarray(xi, dtype=float)
    if model.kind == "regularized_power" and model.epsilon > 0:
        return (model.epsilon**2 + xi * xi) ** ((p - 2) / 2) * xi
    if p == 2:
        out = xi.copy()
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.abs(xi) ** (p - 2) * xi
        if p < 2:
            out = np.where(xi == 0, 0.0, out)
    if model.kind == "perturbed" and h is not None:
        out = out + np.asarray(h) ** (1 - 1 / p) * np.tanh(xi)
    return out


def edge_flux_derivative(model: FluxModel, axis: int, xi: np.ndarray, h=None, newton_eps: float = 0.0):
    """``d a_axis / d xi_axis``; ``newton_eps > 0`` regularises the power law."""
    p = model.p[axis]
    xi = np.asarray(xi, dtype=float)
    if model.kind == "regularized_power" and model.epsilon > 0:
        s = model.epsilon**2 + xi * xi
        return s ** ((p - 4) / 2) * (model.epsilon**2 + (p - 1) * xi * xi)
    if p == 2:
        out = np.ones_like(xi)
    elif newton_eps > 0:
        out = (p - 1) * (newton_eps**2 + xi * xi) ** ((p - 2) / 2)
    else:
        with np.errstate(divide="ignore"):
            out = (p - 1) * np.abs(xi) ** (p - 2)
    if model.kind == "perturbed" and h is not None:
        out = out + np.asarray(h) ** (1 - 1 / p) / np.cosh(xi) ** 2
    return out


def edge_perturbation(model: FluxModel, grid: Grid) -> list[np.ndarray] | None:
    """Edge values of ``h`` per axis: mean of the two end nodes, copying the
    interior neighbour onto the boundary side (``h`` carries no boundary condition)."""
    if model.kind != "perturbed":
        return None
    h = model.h_field.array
    out = []
    for axis in range(grid.n_dims):
        lo = np.concatenate([np.take(h, [0], axis=axis), h], axis=axis)
        hi = np.concatenate([h, np.take(h, [-1], axis=axis)], axis=axis)
        out.append((0.5 * (lo + hi)).reshape(-1))
    return out


def flux_eval(model: FluxModel, axis: int, gradient, h_value: float = 0.0) -> float:
    """Pointwise ``a_axis(gradient)``; ``axis`` counts from 1 to N."""
    i = _check_axis(model, axis)
    xi = float(np.asarray(gradient, dtype=float)[i])
    if not np.isfinite(xi):
        raise FluxError("gradient must be finite")
    return float(edge_flux(model, i, np.array([xi]), np.array([h_value]))[0])


def flux_derivative(model: FluxModel, axis: int, gradient, h_value: float = 0.0) -> float:
    """Exact derivative of :func:`flux_eval` in the ``axis`` component."""
    i = _check_axis(model, axis)
    xi = float(np.asarray(gradient, dtype=float)[i])
    if not np.isfinite(xi):
        raise FluxError("gradient must be finite")
    p = model.p[i]
    unregularized = not (model.kind == "regularized_power" and model.epsilon > 0)
    if unregularized and p < 2 and xi == 0:
        raise SingularDerivativeError(f"derivative is singular at 0 for p={p} < 2")
    return float(edge_flux_derivative(model, i, np.array([xi]), np.array([h_value]))[0])


@dataclass(frozen=True)
class StructureReport:
    coercivity_ok: bool
    growth_ok: bool
    strict_monotone_ok: bool
    strong_monotone_ok: bool
    worst_gamma: float
    worst_gamma_per_axis: tuple[float, ...]
    sample_count: int
    gamma_tested: float


def verify_structure(
    model: FluxModel,
    sample_count: int,
    seed: int,
    sample_range: float = 10.0,
    near_fraction: float = 0.5,
    rtol: float = 1e-12,
) -> StructureReport:
    """Sample ``(xi, eta)`` pairs and test coercivity, growth and (strong) monotonicity.

    A fraction ``near_fraction`` of the pairs are near-diagonal
    (``|xi - eta|`` log-uniform in [1e-6, 1]); that is where strong
    monotonicity fails for exponents below 2.  The strong condition is tested
    against ``model.gamma``; ``worst_gamma`` is the empirical infimum of
    ``(a(xi) - a(eta))(xi - eta) / |xi - eta|^p`` over samples and axes.
    """
    if sample_count < 1:
        raise FluxError("sample_count must be >= 1")
    rng = np.random.default_rng(seed)
    n_near = int(round(near_fraction * sample_count))
    xi = rng.uniform(-sample_range, sample_range, size=sample_count)
    eta = rng.uniform(-sample_range, sample_range, size=sample_count)
    gap = 10.0 ** rng.uniform(-6, 0, size=n_near) * rng.choice([-1.0, 1.0], size=n_near)
    eta[:n_near] = xi[:n_near] + gap
    if model.kind == "perturbed":
        h = rng.uniform(0.0, float(model.h_field.values.max()), size=sample_count)
    else:
        h = np.zeros(sample_count)

    coercive = growth = strict = strong = True
    worst = []
    for axis, p in enumerate(model.p):
        a_xi = edge_flux(model, axis, xi, h)
        a_eta = edge_flux(model, axis, eta, h)
        lower = model.alpha * np.abs(xi) ** p
        coercive &= bool(np.all(a_xi * xi >= lower * (1 - rtol)))
        upper = model.beta[axis] * np.abs(xi) ** (p - 1) + h ** (1 - 1 / p)
        growth &= bool(np.all(np.abs(a_xi) <= upper * (1 + rtol)))
        d = xi - eta
        mono = (a_xi - a_eta) * d
        mask = d != 0
        strict &= bool(np.all(mono[mask] > 0))
        ratio = mono[mask] / np.abs(d[mask]) ** p
        w = float(ratio.min()) if ratio.size else float("inf")
        worst.append(w)
        strong &= w >= model.gamma * (1 - 1e-9)
    worst_gamma = min(worst)
    return StructureReport(
        coercivity_ok=coercive,
        growth_ok=growth,
        strict_monotone_ok=strict,
        strong_monotone_ok=bool(strong and model.gamma > 0),
        worst_gamma=worst_gamma,
        worst_gamma_per_axis=tuple(worst),
        sample_count=sample_count,
        gamma_tested=float(model.gamma),
    )
