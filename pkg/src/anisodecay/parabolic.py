"""Backward-Euler integration of ``u_t - sum_i D_i^T a_i(D_i u) = f`` with zero
Dirichlet data, a damped Newton inner solver, and the truncation-based
approximation (SOLA) driver.

One implicit step solves, at every interior node,

    u+ + dt * sum_i D_i^T a_i(D_i u+) = u + dt * f(t + dt).

``D_i^T`` applied to edge fluxes is the negative discrete divergence, the
adjoint of the forward differences used by :func:`grid.anisotropic_energy`.
"""

from __future__ import annotations

import hashlib
import logging
import math
import weakref
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg, splu, spsolve

from .exponents import ExponentVector
from .flux import FluxModel, edge_flux, edge_flux_derivative, edge_perturbation
from .grid import Field, Grid, Trajectory, difference_matrices, norm, truncate_tn
from .io import load_checkpoint, save_checkpoint

__all__ = [
    "ProblemError",
    "StepFailure",
    "SampledForcing",
    "ProblemSpec",
    "SolaReport",
    "DiscreteOperator",
    "step_implicit",
    "solve_parabolic",
    "sola_solve",
    "problem_hash",
]

log = logging.getLogger(__name__)

NEWTON_EPS = 1e-8
MAX_HALVINGS = 30


class ProblemError(ValueError):
    pass


class StepFailure(RuntimeError):
    """Newton failed to reach the residual tolerance."""

    def __init__(self, message: str, residual: float, time: float | None = None):
        super().__init__(message)
        self.residual = residual
        self.time = time


@dataclass(frozen=True, eq=False)
class SampledForcing:
    """``f(x, t)`` sampled at increasing instants, linear in between and
    held constant outside the sampled range."""

    times: np.ndarray
    fields: tuple[Field, ...]

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or len(times) != len(self.fields) or len(times) == 0:
            raise ProblemError("need one forcing field per sample instant")
        if np.any(np.diff(times) <= 0):
            raise ProblemError("forcing instants must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "fields", tuple(self.fields))
        object.__setattr__(self, "_stack", np.stack([f.values for f in self.fields]))

    @property
    def grid(self) -> Grid:
        return self.fields[0].grid

    def values_at(self, t: float) -> np.ndarray:
        j = int(np.searchsorted(self.times, t))
        if j == 0:
            return self._stack[0]
        if j >= len(self.times):
            return self._stack[-1]
        t0, t1 = self.times[j - 1], self.times[j]
        w = (t - t0) / (t1 - t0)
        return (1 - w) * self._stack[j - 1] + w * self._stack[j]

    def at(self, t: float) -> Field:
        return Field(self.grid, self.values_at(t))

    def map(self, func) -> "SampledForcing":
        return SampledForcing(self.times, tuple(func(f) for f in self.fields))


def _forcing_values(forcing, t: float) -> np.ndarray:
    if isinstance(forcing, Field):
        return forcing.values
    return forcing.values_at(t)


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    grid: Grid
    exponents: ExponentVector
    flux: FluxModel
    initial: Field
    forcing: Field | SampledForcing
    t_final: float
    dt: float
    newton_tol: float = 1e-10
    newton_max_iters: int = 50
    record_every: int = 1

    def __post_init__(self):
        if self.dt <= 0 or self.newton_tol <= 0:
            raise ProblemError("dt and newton_tol must be positive")
        if self.t_final < self.dt * (1 - 1e-12):
            raise ProblemError("t_final must be at least one time step")
        if self.record_every < 1 or self.newton_max_iters < 1:
            raise ProblemError("record_every and newton_max_iters must be >= 1")
        if self.initial.grid != self.grid or self.forcing.grid != self.grid:
            raise ProblemError("initial datum and forcing must live on the problem grid")
        if self.exponents.n_dims != self.grid.n_dims:
            raise ProblemError("exponent count does not match the grid dimension")
        if self.flux.exponents != self.exponents:
            raise ProblemError("flux model and problem use different exponents")

    @property
    def autonomous(self) -> bool:
        return isinstance(self.forcing, Field)

    @property
    def n_steps(self) -> int:
        return max(1, math.ceil(self.t_final / self.dt - 1e-9))

    def step_time(self, k: int) -> float:
        return min(k * self.dt, self.t_final)

    def replace(self, **changes) -> "ProblemSpec":
        kwargs = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kwargs.update(changes)
        return ProblemSpec(**kwargs)


def _hash_array(h, values: np.ndarray):
    h.update(np.ascontiguousarray(values, dtype="<f8").tobytes())


def problem_hash(problem: ProblemSpec) -> str:
    """Digest of everything that determines the trajectory except ``t_final``,
    so a run can be resumed towards a longer horizon."""
    h = hashlib.sha256()
    g = problem.grid
    h.update(repr((g.extents, g.resolution)).encode())
    h.update(repr(sorted(problem.flux.describe().items())).encode())
    if problem.flux.h_field is not None:
        _hash_array(h, problem.flux.h_field.values)
    _hash_array(h, problem.initial.values)
    if isinstance(problem.forcing, Field):
        _hash_array(h, problem.forcing.values)
    else:
        _hash_array(h, problem.forcing.times)
        _hash_array(h, problem.forcing._stack)
    h.update(repr((problem.dt, problem.newton_tol, problem.newton_max_iters, problem.record_every)).encode())
    return h.hexdigest()


class DiscreteOperator:
    """``A(u) = sum_i D_i^T a_i(D_i u)`` and its Jacobian on one grid."""

    def __init__(self, grid: Grid, flux: FluxModel, newton_eps: float = NEWTON_EPS):
        self.grid = grid
        self.flux = flux
        self.newton_eps = newton_eps
        self.d = difference_matrices(grid)
        self.dt_ = tuple(d.T.tocsr() for d in self.d)
        self.abs_dt = tuple(abs(d) for d in self.dt_)
        self.h_edges = edge_perturbation(flux, grid)

    @cached_property
    def linear(self) -> bool:
        return self.flux.kind != "perturbed" and all(p == 2 for p in self.flux.p)

    def _h(self, axis):
        return None if self.h_edges is None else self.h_edges[axis]

    def apply(self, u: np.ndarray) -> np.ndarray:
        out = np.zeros(self.grid.size)
        for axis, (d, dt) in enumerate(zip(self.d, self.dt_)):
            out += dt @ edge_flux(self.flux, axis, d @ u, self._h(axis))
        return out

    def magnitude(self, u: np.ndarray) -> np.ndarray:
        """``sum_i |D_i^T| |a_i|``: the scale of the terms summed in ``apply``."""
        out = np.zeros(self.grid.size)
        for axis, (d, adt) in enumerate(zip(self.d, self.abs_dt)):
            out += adt @ np.abs(edge_flux(self.flux, axis, d @ u, self._h(axis)))
        return out

    def jacobian(self, u: np.ndarray) -> sp.csr_matrix:
        n = self.grid.size
        jac = sp.csr_matrix((n, n))
        for axis, (d, dt) in enumerate(zip(self.d, self.dt_)):
            c = edge_flux_derivative(self.flux, axis, d @ u, self._h(axis), self.newton_eps)
            jac = jac + dt @ sp.diags(c) @ d
        return jac.tocsr()

    @cached_property
    def stiffness(self) -> sp.csc_matrix:
        return self.jacobian(np.zeros(self.grid.size))


_OPERATORS: "weakref.WeakKeyDictionary[FluxModel, dict]" = weakref.WeakKeyDictionary()


def _operator(grid: Grid, flux: FluxModel) -> DiscreteOperator:
    cache = _OPERATORS.setdefault(flux, {})
    if grid not in cache:
        cache[grid] = DiscreteOperator(grid, flux)
    return cache[grid]


_EPS = np.finfo(float).eps


def _solve_spd(jac: sp.csc_matrix, rhs: np.ndarray, atol: float) -> np.ndarray:
    """Jacobi-preconditioned CG on the SPD Newton system; direct solve if CG stalls."""
    diag = jac.diagonal()
    precond = sp.diags(1.0 / diag)
    x, info = cg(jac, rhs, rtol=1e-8, atol=atol, maxiter=400, M=precond)
    if info != 0:
        x = spsolve(jac, rhs)
    return x


def _newton_step(op: DiscreteOperator, u_old, rhs, dt, tol, max_iters, lu_cache=None):
    """Solve ``u + dt A(u) = rhs`` starting from ``u_old``."""

    def residual(u):
        return u + dt * op.apply(u) - rhs

    def floor(u):
        # attainable accuracy given rounding in the residual terms
        scale = np.abs(u) + np.abs(rhs) + dt * op.magnitude(u)
        return 64 * _EPS * float(scale.max(initial=0.0))

    u = np.array(u_old, dtype=float)
    r = residual(u)
    res = float(np.abs(r).max(initial=0.0))
    for it in range(max_iters + 1):
        if res <= tol or res <= floor(u):
            return u, res, it
        if it == max_iters:
            break
        if op.linear:
            key = float(dt)
            if lu_cache is not None and key in lu_cache:
                lu = lu_cache[key]
            else:
                lu = splu((sp.identity(op.grid.size, format="csc") + dt * op.stiffness).tocsc())
                if lu_cache is not None:
                    lu_cache[key] = lu
            delta = -lu.solve(r)
        else:
            jac = sp.identity(op.grid.size, format="csr") + dt * op.jacobian(u)
            delta = -_solve_spd(jac, r, 0.01 * tol)
        norm2 = float(np.dot(r, r))
        lam = 1.0
        for _ in range(MAX_HALVINGS + 1):
            cand = u + lam * delta
            r_c = residual(cand)
            if float(np.dot(r_c, r_c)) < norm2:
                break
            lam *= 0.5
        else:
            if res <= 1024 * floor(u):
                return u, res, it
            raise StepFailure(f"damping exhausted with residual {res:.3e}", residual=res)
        u, r = cand, r_c
        res = float(np.abs(r).max(initial=0.0))
    raise StepFailure(f"Newton did not converge in {max_iters} iterations (residual {res:.3e})", residual=res)


def step_implicit(
    state: Field,
    dt: float,
    forcing: Field,
    flux: FluxModel,
    tol: float = 1e-10,
    max_iters: int = 50,
) -> Field:
    """One backward-Euler step; raises :class:`StepFailure` on non-convergence."""
    if dt <= 0:
        raise ProblemError("dt must be positive")
    if forcing.grid != state.grid:
        raise ProblemError("state and forcing live on different grids")
    op = _operator(state.grid, flux)
    rhs = state.values + dt * forcing.values
    u, _, _ = _newton_step(op, state.values, rhs, dt, tol, max_iters)
    return state.with_values(u)


def solve_parabolic(problem: ProblemSpec, resume_from=None, checkpoint_to=None) -> Trajectory:
    """Integrate from ``t = 0`` (or a checkpoint) to ``problem.t_final``.

    States are recorded every ``record_every`` steps and at the final time.
    ``resume_from`` is a checkpoint directory written for the same problem
    (``t_final`` may differ); ``checkpoint_to`` writes one after the run.
    """
    op = _operator(problem.grid, problem.flux)
    lu_cache: dict = {}
    key = problem_hash(problem)
    if resume_from is not None:
        ck = load_checkpoint(resume_from)
        if ck.problem_hash != key:
            raise ProblemError("checkpoint belongs to a different problem")
        if not math.isclose(ck.last_time, problem.step_time(ck.step_count), rel_tol=1e-12):
            raise ProblemError("cannot resume after a shortened final step")
        if ck.last_time > problem.t_final * (1 + 1e-12):
            raise ProblemError("checkpoint lies beyond t_final")
        times, states, start = list(ck.times), list(ck.states), ck.step_count
    else:
        times, states, start = [0.0], [problem.initial], 0

    u = states[-1].values
    n_steps = problem.n_steps
    for k in range(start + 1, n_steps + 1):
        t_prev, t = problem.step_time(k - 1), problem.step_time(k)
        dt = t - t_prev
        rhs = u + dt * _forcing_values(problem.forcing, t)
        try:
            u, _, _ = _newton_step(
                op, u, rhs, dt, problem.newton_tol, problem.newton_max_iters, lu_cache
            )
        except StepFailure as exc:
            raise StepFailure(f"step to t={t:.6g} failed: {exc}", exc.residual, t) from exc
        if k % problem.record_every == 0 or k == n_steps:
            if t > times[-1]:
                times.append(t)
                states.append(Field(problem.grid, u))
    traj = Trajectory.build(problem, times, states, problem.exponents, step_count=n_steps)
    if checkpoint_to is not None:
        save_checkpoint(traj, checkpoint_to, key)
    return traj


@dataclass(frozen=True, eq=False)
class SolaReport:
    levels: tuple[float, ...]
    trajectories: tuple[Trajectory, ...]
    cauchy_matrix: np.ndarray
    data_bound_matrix: np.ndarray
    satisfied: np.ndarray
    tolerance: float = field(default=0.0)

    @property
    def all_satisfied(self) -> bool:
        return bool(self.satisfied.all())


def _truncate_forcing(forcing, n):
    if isinstance(forcing, Field):
        return truncate_tn(forcing, n)
    return forcing.map(lambda f: truncate_tn(f, n))


def _forcing_l1_integral(fa, fb, t_final: float, dt: float) -> float:
    """``int_0^T ||fa - fb||_1`` with the end-of-step evaluation used by the stepper."""
    if isinstance(fa, Field):
        return t_final * norm(fa - fb, 1)
    n = max(1, math.ceil(t_final / dt - 1e-9))
    total, t_prev = 0.0, 0.0
    w = fa.grid.cell_volume
    for k in range(1, n + 1):
        t = min(k * dt, t_final)
        total += (t - t_prev) * float(np.abs(fa.values_at(t) - fb.values_at(t)).sum() * w)
        t_prev = t
    return total


def sola_solve(
    problem: ProblemSpec,
    levels: Sequence[float],
    tolerance: float = 1e-8,
    workers: int = 1,
) -> SolaReport:
    """Solve with data ``T_n(u0), T_n(f)`` for each level and compare the runs.

    Levels whose truncated data coincide share one trajectory.  The Cauchy
    entry for ``(n, m)`` is ``max_t ||u_n(t) - u_m(t)||_1`` over recorded
    instants; the data bound is ``||T_n u0 - T_m u0||_1 + int ||T_n f - T_m f||_1``.
    """
    levels = tuple(float(n) for n in levels)
    if not levels or any(n <= 0 for n in levels) or any(b <= a for a, b in zip(levels, levels[1:])):
        raise ProblemError("levels must be positive and strictly increasing")

    problems = []
    for n in levels:
        problems.append(
            problem.replace(
                initial=truncate_tn(problem.initial, n),
                forcing=_truncate_forcing(problem.forcing, n),
            )
        )

    # levels with identical truncated data reuse the same run
    unique: list[int] = []
    owner = []
    for i, prob in enumerate(problems):
        for j in unique:
            if prob.initial == problems[j].initial and _same_forcing(prob.forcing, problems[j].forcing):
                owner.append(j)
                break
        else:
            unique.append(i)
            owner.append(i)

    to_run = [problems[i] for i in unique]
    if workers > 1 and len(to_run) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(solve_parabolic, to_run))
    else:
        runs = [solve_parabolic(p) for p in to_run]
    by_index = dict(zip(unique, runs))
    trajectories = tuple(by_index[owner[i]] for i in range(len(levels)))

    m = len(levels)
    cauchy = np.zeros((m, m))
    bound = np.zeros((m, m))
    w = problem.grid.cell_volume
    for i in range(m):
        for j in range(i + 1, m):
            ti, tj = trajectories[i], trajectories[j]
            if ti is tj:
                dist = 0.0
            else:
                dist = max(
                    float(np.abs(a.values - b.values).sum() * w) for a, b in zip(ti.states, tj.states)
                )
            data = norm(problems[i].initial - problems[j].initial, 1) + _forcing_l1_integral(
                problems[i].forcing, problems[j].forcing, problem.t_final, problem.dt
            )
            cauchy[i, j] = cauchy[j, i] = dist
            bound[i, j] = bound[j, i] = data
    satisfied = cauchy <= bound + tolerance
    return SolaReport(levels, trajectories, cauchy, bound, satisfied, tolerance)


def _same_forcing(fa, fb) -> bool:
    if isinstance(fa, Field) and isinstance(fb, Field):
        return fa == fb
    if isinstance(fa, SampledForcing) and isinstance(fb, SampledForcing):
        return np.array_equal(fa.times, fb.times) and np.array_equal(fa._stack, fb._stack)
    return False
