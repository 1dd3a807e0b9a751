"""Stationary solver for ``sum_i D_i^T a_i(D_i w) = f`` (zero Dirichlet data).

The steady state is reached as the long-time limit of the implicit parabolic
flow: pseudo-time steps with a geometrically growing step size until the
time increment per unit time (which equals the stationary residual) drops
below ``solver_tol``, followed by a Newton polish on the stationary residual.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import spsolve

from .exponents import ExponentVector
from .flux import FluxModel
from .grid import Field, Grid, norm, truncate_tn
from .parabolic import StepFailure, _newton_step, _operator

__all__ = ["EllipticSpec", "EllipticReport", "EllipticError", "solve_elliptic", "stationary_residual"]

log = logging.getLogger(__name__)


class EllipticError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True, eq=False)
class EllipticSpec:
    grid: Grid
    exponents: ExponentVector
    flux: FluxModel
    forcing: Field
    levels: tuple[float, ...] | None = None
    solver_tol: float = 1e-10
    initial: Field | None = None
    dt0: float | None = None
    dt_growth: float = 2.0
    max_steps: int = 2000

    def __post_init__(self):
        if self.forcing.grid != self.grid:
            raise ValueError("forcing must live on the problem grid")
        if self.initial is not None and self.initial.grid != self.grid:
            raise ValueError("initial guess must live on the problem grid")
        if self.solver_tol <= 0:
            raise ValueError("solver_tol must be positive")
        if self.levels is not None:
            lv = tuple(float(n) for n in self.levels)
            if not lv or any(n <= 0 for n in lv) or any(b <= a for a, b in zip(lv, lv[1:])):
                raise ValueError("levels must be positive and strictly increasing")
            object.__setattr__(self, "levels", lv)


@dataclass(frozen=True, eq=False)
class EllipticReport:
    levels: tuple[float, ...]
    solutions: tuple[Field, ...]
    l1_distances: np.ndarray
    residuals: tuple[float, ...]

    @property
    def solution(self) -> Field:
        return self.solutions[-1]


def stationary_residual(w: Field, flux: FluxModel, forcing: Field) -> np.ndarray:
    """``A(w) - f``; zero at a discrete steady state."""
    return _operator(w.grid, flux).apply(w.values) - forcing.values


def _solve_one(spec: EllipticSpec, forcing: Field) -> tuple[Field, float]:
    grid = spec.grid
    op = _operator(grid, spec.flux)
    tol = spec.solver_tol
    f = forcing.values
    u = np.zeros(grid.size) if spec.initial is None else spec.initial.values.copy()
    # start on the diffusive time scale of the grid
    dt = spec.dt0 if spec.dt0 is not None else 0.1 * min(grid.spacing) ** 2

    def res_norm(v):
        return float(np.abs(op.apply(v) - f).max(initial=0.0))

    res = res_norm(u)
    steps = 0
    while res > tol and steps < spec.max_steps:
        steps += 1
        try:
            u_new, _, _ = _newton_step(op, u, u + dt * f, dt, 0.01 * tol * dt, 60)
        except StepFailure:
            dt /= 4
            continue
        u = u_new
        res = res_norm(u)
        dt = min(dt * spec.dt_growth, 1e12)

    # Newton polish on the stationary residual
    for _ in range(20):
        if res <= tol:
            break
        r = op.apply(u) - f
        jac = op.jacobian(u).tocsc()
        try:
            delta = -spsolve(jac, r)
        except Exception:  # singular Jacobian: keep the continuation result
            break
        if not np.all(np.isfinite(delta)):
            break
        lam, improved = 1.0, False
        for _ in range(30):
            cand = u + lam * delta
            rc = res_norm(cand)
            if rc < res:
                u, res, improved = cand, rc, True
                break
            lam *= 0.5
        if not improved:
            break
    if res > tol:
        raise EllipticError(f"stationary solve stalled with residual {res:.3e}", res)
    log.debug("elliptic solve: %d pseudo-time steps, residual %.3e", steps, res)
    return Field(grid, u), res


def solve_elliptic(spec: EllipticSpec, return_report: bool = False):
    """Discrete steady state ``w`` with ``||A(w) - f||_inf <= solver_tol``.

    With ``spec.levels`` the problem is solved for every truncated datum
    ``T_n(f)``; the finest level is returned and, if ``return_report`` is
    set, an :class:`EllipticReport` with the consecutive-level L^1
    distances comes with it.
    """
    if spec.levels is None:
        w, res = _solve_one(spec, spec.forcing)
        report = EllipticReport((), (w,), np.zeros(0), (res,))
    else:
        sols, residuals = [], []
        for n in spec.levels:
            w, res = _solve_one(spec, truncate_tn(spec.forcing, n))
            sols.append(w)
            residuals.append(res)
        dists = np.array([norm(a - b, 1) for a, b in zip(sols, sols[1:])])
        report = EllipticReport(spec.levels, tuple(sols), dists, tuple(residuals))
        w = sols[-1]
    return (w, report) if return_report else w
