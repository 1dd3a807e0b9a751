"""Checks of the decay, contraction, regularization and energy estimates on solver output.

Every check is a pure function of stored trajectories and returns a
:class:`BoundCheckReport`.  Bounds are always tested with fitted constants;
only exponents are compared against closed forms from :mod:`exponents`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exponents import (
    ExponentVector,
    UndefinedCriticalExponentError,
    algebraic_exponents,
    universal_exponent,
)
from .grid import (
    Field,
    Grid,
    Trajectory,
    _axis_energies,
    _gk,
    _lp,
    _window_series,
    norm,
)

__all__ = [
    "VerifyError",
    "BoundCheckReport",
    "POWER_LAW_RESIDUAL",
    "fit_decay_rate",
    "accumulated_forcing_l1",
    "check_l1_contraction",
    "check_decay_bounds",
    "check_regularizing",
    "check_regularity_transfer",
    "check_steady_convergence",
    "check_energy_dissipation",
    "estimate_functional_constants",
]

# RMS log-residual above which a series is not accepted as a power law
POWER_LAW_RESIDUAL = 0.05
DEFAULT_EXPONENT_TOL = 0.15
DEFAULT_SKIP = 5


class VerifyError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class BoundCheckReport:
    name: str
    window: tuple[float, float]
    fitted_constant: float
    fitted_exponent: float
    expected_exponent: float
    passed: bool
    margin: float
    details: dict = field(default_factory=dict)
    curve: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    def envelope(self, t) -> np.ndarray:
        """The fitted bound ``scale * t^{-expected}`` (decay reports only)."""
        scale = self.details.get("scale")
        if scale is None:
            raise VerifyError(f"report {self.name!r} carries no envelope")
        t = np.asarray(t, dtype=float)
        return scale * t ** (-self.expected_exponent)

    def row(self) -> dict:
        return {
            "estimate": self.name,
            "window_lo": self.window[0],
            "window_hi": self.window[1],
            "fitted_C": self.fitted_constant,
            "fitted_h": self.fitted_exponent,
            "expected_h": self.expected_exponent,
            "passed": self.passed,
            "margin": self.margin,
        }


def _tol_of(traj: Trajectory, default: float = 1e-10) -> float:
    return float(getattr(traj.problem, "newton_tol", default))


def _check_pair(a: Trajectory, b: Trajectory):
    if a.grid != b.grid:
        raise VerifyError("trajectories live on different grids")
    if len(a.times) != len(b.times) or not np.allclose(a.times, b.times, rtol=1e-12, atol=0):
        raise VerifyError("trajectories are sampled at different instants")


def _differences(a: Trajectory, b: Trajectory) -> list[np.ndarray]:
    return [u.values - v.values for u, v in zip(a.states, b.states)]


def fit_decay_rate(t, values, window: tuple[float, float] | None = None):
    """Least-squares fit ``log v = log C - h log t``; returns ``(C, h, residual)``.

    ``residual`` is the RMS of the log-residuals; above
    :data:`POWER_LAW_RESIDUAL` the series is not power-law shaped.
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.shape != v.shape:
        raise VerifyError("times and values differ in length")
    if window is not None:
        m = (t >= window[0]) & (t <= window[1])
        t, v = t[m], v[m]
    if t.size < 5:
        raise VerifyError(f"need at least 5 samples in the window, got {t.size}")
    if np.any(v <= 0) or np.any(t <= 0):
        raise VerifyError("decay fits need positive times and values")
    A = np.column_stack([np.ones_like(t), -np.log(t)])
    coef, *_ = np.linalg.lstsq(A, np.log(v), rcond=None)
    res = np.log(v) - A @ coef
    return float(math.exp(coef[0])), float(coef[1]), float(np.sqrt(np.mean(res**2)))


def accumulated_forcing_l1(fa, fb, times, dt: float) -> np.ndarray:
    """``int_0^t ||fa - fb||_1`` at each instant of ``times``, evaluated with
    the end-of-step rule of the implicit stepper (step size ``dt``)."""
    from .parabolic import _forcing_values

    times = np.asarray(times, dtype=float)
    grid = fa.grid
    out = np.zeros(times.size)
    total, t_prev, k = 0.0, 0.0, 1
    for j, tj in enumerate(times):
        while t_prev < tj * (1 - 1e-12):
            t = min(k * dt, tj)
            diff = _forcing_values(fa, t) - _forcing_values(fb, t)
            total += (t - t_prev) * float(np.abs(diff).sum() * grid.cell_volume)
            t_prev = t
            if t >= k * dt * (1 - 1e-12):
                k += 1
        out[j] = total
    return out


def check_l1_contraction(
    trajU: Trajectory,
    trajV: Trajectory,
    u0: Field,
    v0: Field,
    f_minus_g_l1=None,
    tolerance: float | None = None,
) -> BoundCheckReport:
    """``||u(t)-v(t)||_1 <= ||u0-v0||_1 + int_0^t ||f-g||_1`` at every sample.

    ``f_minus_g_l1`` is ``None`` (same forcing), a constant rate, or the
    accumulated integral at each recorded instant.
    """
    _check_pair(trajU, trajV)
    times = trajU.times
    if tolerance is None:
        tolerance = 10 * _tol_of(trajU)
    w = trajU.grid.cell_volume
    lhs = np.array([np.abs(d).sum() * w for d in _differences(trajU, trajV)])
    if f_minus_g_l1 is None:
        forcing = np.zeros_like(times)
    elif np.ndim(f_minus_g_l1) == 0:
        forcing = float(f_minus_g_l1) * times
    else:
        forcing = np.asarray(f_minus_g_l1, dtype=float)
        if forcing.shape != times.shape:
            raise VerifyError("forcing integral series must match the sample instants")
    bound = norm(u0 - v0, 1) + forcing
    slack = bound - lhs
    increase = float(np.max(np.diff(lhs - forcing), initial=0.0))
    return BoundCheckReport(
        name="dipdati",
        window=(float(times[0]), float(times[-1])),
        fitted_constant=1.0,
        fitted_exponent=float("nan"),
        expected_exponent=float("nan"),
        passed=bool(np.all(slack >= -tolerance)),
        margin=float(slack.min()),
        details={"max_increase": increase, "tolerance": tolerance},
        curve=(times.copy(), lhs),
    )


def _default_window(times: np.ndarray, skip: int = DEFAULT_SKIP) -> tuple[float, float]:
    pos = times[times > 0]
    if pos.size <= skip + 5:
        raise VerifyError("trajectory too short for a default fitting window")
    return float(pos[skip]), float(pos[-1])


def _trivial(name, window, expected):
    return BoundCheckReport(name, window, 0.0, float("nan"), expected, True, float("inf"),
                            {"trivial": True, "scale": 0.0})


def _tail_energy(diffs, grid, p, times) -> np.ndarray:
    """Right-endpoint sum of ``sum_i int_t^T |D_i w|^{p_i}`` at each sample."""
    e = np.array([_axis_energies(d, grid, p).sum() for d in diffs])
    dt = np.diff(times)
    contrib = np.concatenate([dt * e[1:], [0.0]])
    return np.cumsum(contrib[::-1])[::-1]


def _power_report(name, t, s, window, expected, prefactor, tol):
    m = (t >= window[0]) & (t <= window[1])
    tw, sw = t[m], s[m]
    C_fit, h_fit, res = fit_decay_rate(tw, sw)
    least = float(np.max(sw * tw**expected) / prefactor)
    return BoundCheckReport(
        name=name,
        window=window,
        fitted_constant=least,
        fitted_exponent=h_fit,
        expected_exponent=expected,
        passed=bool(abs(h_fit - expected) <= tol and np.isfinite(least)),
        margin=float(tol - abs(h_fit - expected)),
        details={"scale": least * prefactor, "regression_C": C_fit, "residual": res},
        curve=(tw, sw),
    )


def _expo_report(t, s, early, late, n_dims, d0, tol):
    """Prefactor exponent from a power fit on ``early``; ``sigma`` from
    ``log(s t^{N/2}) = log C - sigma t`` on ``late``."""
    _, h_fit, _ = fit_decay_rate(t, s, early)
    expected = n_dims / 2
    m = (t >= late[0]) & (t <= late[1]) & (s > 1e3 * np.finfo(float).eps * s.max())
    tw, sw = t[m], s[m]
    if tw.size < 5:
        raise VerifyError("exponential-regime window needs >= 5 samples above the rounding floor")
    slope, _ = np.polyfit(tw, np.log(sw * tw**expected), 1)
    sigma = float(-slope)
    least = float(np.max(sw * tw**expected * np.exp(max(sigma, 0.0) * tw)) / d0)
    return BoundCheckReport(
        name="expo",
        window=late,
        fitted_constant=least,
        fitted_exponent=h_fit,
        expected_exponent=expected,
        passed=bool(abs(h_fit - expected) <= tol and sigma > 0),
        margin=float(tol - abs(h_fit - expected)),
        details={"sigma": sigma, "scale": least * d0, "prefactor_window": early},
        curve=(tw, sw),
    )


def check_decay_bounds(
    trajU: Trajectory,
    trajV: Trajectory,
    exponents: ExponentVector,
    gamma: float,
    domain_measure: float,
    window: tuple[float, float] | None = None,
    windows: dict | None = None,
    exponent_tol: float = DEFAULT_EXPONENT_TOL,
) -> list[BoundCheckReport]:
    """Sup-norm decay of ``u - v`` in every regime that applies, plus gradient tails.

    ``uno`` is always emitted; ``expo`` when the harmonic mean equals 2 and
    ``uni`` when it exceeds 2, each followed by its gradient counterpart.
    ``windows`` maps regime names to fitting windows and overrides ``window``.
    """
    _check_pair(trajU, trajV)
    if gamma <= 0:
        raise VerifyError("gamma must be positive")
    times = trajU.times
    if window is None:
        window = _default_window(times)
    if not (0 < window[0] < window[1]):
        raise VerifyError(f"degenerate window {window}")
    windows = dict(windows or {})
    p_bar = exponents.p_bar
    p_bar_f = float(p_bar)
    h0, h1 = algebraic_exponents(exponents)
    regimes = ["uno"]
    if p_bar == 2:
        regimes.append("expo")
    elif p_bar > 2:
        regimes.append("uni")

    diffs = _differences(trajU, trajV)
    sup = np.array([np.abs(d).max(initial=0.0) for d in diffs])
    d0 = float(np.abs(diffs[0]).sum() * trajU.grid.cell_volume)
    reports: list[BoundCheckReport] = []
    if d0 == 0 or np.all(sup == 0):
        for name in regimes:
            exp = {"uno": float(h1), "expo": exponents.n_dims / 2,
                   "uni": float(universal_exponent(p_bar)) if p_bar > 2 else float("nan")}[name]
            reports.append(_trivial(name, windows.get(name, window), exp))
            reports.append(_trivial("grad" + name, windows.get(name, window), 2 * exp))
        return reports

    c0 = domain_measure / (2 * gamma)
    tail = _tail_energy(diffs, trajU.grid, exponents.as_floats(), times)
    for name in regimes:
        win = tuple(float(x) for x in windows.get(name, window))
        if name == "uno":
            rep = _power_report("uno", times, sup, win, float(h1), d0 ** float(h0), exponent_tol)
        elif name == "uni":
            rep = _power_report("uni", times, sup, win, float(universal_exponent(p_bar)), 1.0, exponent_tol)
        else:
            early = tuple(float(x) for x in windows.get("uno", window))
            rep = _expo_report(times, sup, early, win, exponents.n_dims, d0, exponent_tol)
        reports.append(rep)
        reports.append(_gradient_report(rep, times, sup, tail, c0, p_bar_f))
    return reports


def _gradient_report(rep: BoundCheckReport, times, sup, tail, c0, p_bar) -> BoundCheckReport:
    lo, hi = rep.window
    m = (times >= lo) & (times <= hi)
    if rep.name == "expo":
        sigma = max(rep.details["sigma"], 0.0)
        bound = rep.details["scale"] * times[m] ** (-rep.expected_exponent) * np.exp(-sigma * times[m])
    else:
        bound = rep.envelope(times[m])
    rhs = c0 * bound**2
    lhs = tail[m]
    rel = (rhs - lhs) / np.where(rhs > 0, rhs, 1.0)
    return BoundCheckReport(
        name="grad" + rep.name,
        window=rep.window,
        fitted_constant=c0 * rep.fitted_constant**2,
        fitted_exponent=2 * rep.fitted_exponent,
        expected_exponent=2 * rep.expected_exponent,
        passed=bool(np.all(lhs <= rhs * (1 + 1e-9))),
        margin=float(rel.min()),
        details={"C0": c0},
        curve=(times[m], lhs),
    )


def check_regularizing(
    traj: Trajectory,
    f_lm_norm: float,
    m: float,
    exponents: ExponentVector,
    t0: float,
    t0_grid: Sequence[float] | None = None,
    others: Sequence[Trajectory] = (),
    residual_tol: float = 0.1,
    spread_tol: float = 0.2,
) -> BoundCheckReport:
    """Boundedness of ``sup_{t >= t0} ||u(t)||_inf`` and its ``C t0^{-h} + c`` shape.

    For harmonic mean above 2, ``others`` (runs with different initial data)
    must reach sup norms past ``t0`` within ``spread_tol`` of this one.
    """
    n = exponents.n_dims
    p_bar = exponents.p_bar
    if m <= 1 + n / float(p_bar):
        warnings.warn(f"forcing summability m={m} does not exceed 1 + N/p_bar", stacklevel=2)
    times = traj.times
    if not (0 < t0 < traj.t_final) or not np.any(times > t0):
        raise VerifyError(f"trajectory has no samples past t0={t0}")
    sup = traj.norm_log.sup
    tail = np.maximum.accumulate(sup[::-1])[::-1]
    if t0_grid is None:
        t0_grid = np.geomspace(t0, min(5 * t0, 0.5 * traj.t_final), 15)
    t0_grid = np.asarray(t0_grid, dtype=float)
    S = np.interp(t0_grid, times, tail)
    _, h = algebraic_exponents(exponents)
    h = float(h)
    A = np.column_stack([t0_grid ** (-h), np.ones_like(t0_grid)])
    (C, c), *_ = np.linalg.lstsq(A, S, rcond=None)
    resid = float(np.max(np.abs(A @ np.array([C, c]) - S) / S))
    finite = bool(np.all(np.isfinite(S)))
    passed = finite and resid < residual_tol
    details = {"additive_c": float(c), "residual": resid, "f_norm": f_lm_norm, "m": m}
    here = float(tail[np.searchsorted(times, t0 - 1e-12 * max(1.0, t0))])
    if p_bar > 2 and others:
        values = [here]
        for o in others:
            if not np.any(o.times >= t0):
                raise VerifyError("comparison run has no samples past t0")
            values.append(float(o.norm_log.sup[o.times >= t0 - 1e-12 * max(1.0, t0)].max()))
        spread = (max(values) - min(values)) / min(values)
        details.update(spread=spread, sup_values=values)
        passed = passed and spread <= spread_tol
    return BoundCheckReport(
        name="defC4" if p_bar > 2 else "defC3",
        window=(float(t0_grid[0]), float(t0_grid[-1])),
        fitted_constant=float(C),
        fitted_exponent=h,
        expected_exponent=h,
        passed=bool(passed),
        margin=float(residual_tol - resid),
        details=details,
        curve=(t0_grid, S),
    )


def _sampled_lr(times, values, t0, t1, r) -> float:
    if math.isinf(r):
        inside = (times >= t0) & (times <= t1)
        return float(values[inside].max()) if inside.any() else float(np.interp(t0, times, values))
    t, v = _window_series(times, values, t0, t1)
    from scipy.integrate import trapezoid

    return float(trapezoid(v**r, t) ** (1 / r))


def check_regularity_transfer(
    trajU: Trajectory,
    trajV: Trajectory,
    decay: BoundCheckReport,
    r: float,
    s: float,
    t0: float,
) -> BoundCheckReport:
    """``|u| <= ||u - v||_inf + |v|`` pointwise and the resulting ``L^r(t0,T;L^s)`` bound.

    ``||u - v||_inf`` is replaced by the envelope fitted in ``decay``.
    """
    _check_pair(trajU, trajV)
    times = trajU.times
    t1 = trajU.t_final
    if not (0 < t0 < t1):
        raise VerifyError(f"t0={t0} outside (0, {t1})")
    grid = trajU.grid
    diffs = _differences(trajU, trajV)
    sup = np.array([np.abs(d).max(initial=0.0) for d in diffs])
    pointwise = all(
        np.all(np.abs(u.values) <= s_j + np.abs(v.values) + 1e-14 * (1 + s_j))
        for u, v, s_j in zip(trajU.states, trajV.states, sup)
    )
    if decay.details.get("trivial") or decay.details.get("scale", 0.0) == 0.0:
        env = sup.copy()
    else:
        env = decay.envelope(np.maximum(times, 1e-300))
    late = times >= t0
    envelope_ok = bool(np.all(sup[late] <= env[late] * (1 + 1e-12)))
    u_s = np.array([_lp(u.values, grid.cell_volume, s) for u in trajU.states])
    v_s = np.array([_lp(v.values, grid.cell_volume, s) for v in trajV.states])
    lhs = _sampled_lr(times, u_s, t0, t1, r)
    rhs_v = _sampled_lr(times, v_s, t0, t1, r)
    meas = 1.0 if math.isinf(s) else grid.discrete_measure ** (1 / s)
    rhs_env = meas * _sampled_lr(times, env, t0, t1, r)
    rhs = rhs_env + rhs_v
    return BoundCheckReport(
        name="stessa",
        window=(float(t0), float(t1)),
        fitted_constant=decay.fitted_constant,
        fitted_exponent=decay.fitted_exponent,
        expected_exponent=decay.expected_exponent,
        passed=bool(pointwise and envelope_ok and lhs <= rhs * (1 + 1e-12)),
        margin=float(rhs - lhs),
        details={"lhs": lhs, "envelope_part": rhs_env, "v_part": rhs_v,
                 "pointwise_ok": bool(pointwise), "envelope_ok": envelope_ok, "r": r, "s": s},
    )


def check_steady_convergence(
    traj: Trajectory,
    steady: Field,
    tail_start: float,
    threshold: float = 1e-4,
    tolerance: float | None = None,
) -> BoundCheckReport:
    """``||u(t) - w||_inf`` nonincreasing after ``tail_start`` and below ``threshold`` at the end."""
    problem = traj.problem
    if problem is not None and not getattr(problem, "autonomous", True):
        raise VerifyError("steady convergence needs a time-independent forcing")
    if steady.grid != traj.grid:
        raise VerifyError("steady field lives on a different grid")
    if tolerance is None:
        tolerance = 10 * _tol_of(traj)
    times = traj.times
    d = np.array([np.abs(u.values - steady.values).max(initial=0.0) for u in traj.states])
    late = times >= tail_start
    if late.sum() < 2:
        raise VerifyError("no tail samples after tail_start")
    dl = d[late]
    increase = float(np.max(np.diff(dl), initial=0.0))
    monotone = increase <= tolerance
    final = float(d[-1])
    rate = float("nan")
    pos = dl > 10 * tolerance
    if pos.sum() >= 5:
        tl = times[late][pos]
        rate = float(-np.polyfit(tl, np.log(dl[pos]), 1)[0])
    return BoundCheckReport(
        name="limauto",
        window=(float(tail_start), float(times[-1])),
        fitted_constant=float(dl[0]),
        fitted_exponent=rate,
        expected_exponent=float("nan"),
        passed=bool(monotone and final < threshold),
        margin=float(threshold - final),
        details={"final_distance": final, "max_increase": increase, "decay_rate": rate},
        curve=(times.copy(), d),
    )


def check_energy_dissipation(
    trajU: Trajectory,
    trajV: Trajectory,
    gamma: float,
    k: float,
    rel_slack: float = 1e-8,
    tolerance: float | None = None,
) -> BoundCheckReport:
    """Truncated energy inequality for every recorded pair ``t1 < t2``.

    With ``S_j = 1/2 ||G_k w_j||^2 + gamma * sum_{l <= j} dt_l E(G_k w_l)`` the
    inequality reads ``S_j - S_i <= slack`` for ``i < j``.  The step sum is
    exact when every implicit step is recorded.
    """
    _check_pair(trajU, trajV)
    if k < 0:
        raise VerifyError("truncation level k must be >= 0")
    times = trajU.times
    grid = trajU.grid
    exps = getattr(trajU.problem, "exponents", None)
    if exps is None:
        raise VerifyError("trajectory carries no exponents")
    p = exps.as_floats()
    w = grid.cell_volume
    gk = [_gk(d, k) for d in _differences(trajU, trajV)]
    half = np.array([0.5 * float((g * g).sum()) * w for g in gk])
    energy = np.array([_axis_energies(g, grid, p).sum() for g in gk])
    steps = np.concatenate([[0.0], np.diff(times) * energy[1:]])
    S = half + gamma * np.cumsum(steps)
    if len(S) < 2:
        raise VerifyError("need at least two recorded instants")
    running_min = np.minimum.accumulate(S)
    worst = float(np.max(S[1:] - running_min[:-1]))
    if tolerance is None:
        tolerance = 10 * _tol_of(trajU)
    # a per-step residual of size tol moves 1/2||w||^2 by at most ||w||_2 tol |Omega|^{1/2}
    amp = math.sqrt(2 * half.max())
    scale = max(half[0], 1e-300)
    slack = rel_slack * scale + tolerance * trajU.step_count * amp * math.sqrt(grid.discrete_measure)
    return BoundCheckReport(
        name="stima_G",
        window=(float(times[0]), float(times[-1])),
        fitted_constant=float(gamma),
        fitted_exponent=float("nan"),
        expected_exponent=float("nan"),
        passed=bool(worst <= slack),
        margin=float(slack - worst),
        details={"k": k, "worst_violation": worst, "relative_violation": worst / scale, "slack": slack},
        curve=(times.copy(), S),
    )


def _random_field(grid: Grid, rng: np.random.Generator) -> np.ndarray:
    coords = grid.coordinates()
    n_modes = int(rng.integers(1, 5))
    u = np.zeros(grid.shape)
    for _ in range(n_modes):
        term = rng.normal()
        for x, L in zip(coords, grid.extents):
            term = term * np.sin(int(rng.integers(1, 4)) * np.pi * x / L)
        u = u + term
    return u.reshape(-1)


def estimate_functional_constants(
    grid: Grid, exponents: ExponentVector, sample_count: int, seed: int
) -> tuple[float, float]:
    """Largest observed Sobolev and Poincaré ratios over random smooth fields.

    These are empirical lower bounds for the embedding constants.
    """
    if exponents.n_dims != grid.n_dims:
        raise VerifyError("exponent count differs from grid dimension")
    if exponents.p_star is None:
        raise UndefinedCriticalExponentError(
            f"p_bar={exponents.p_bar} >= N={exponents.n_dims}: no Sobolev exponent"
        )
    if sample_count < 1:
        raise VerifyError("sample_count must be >= 1")
    rng = np.random.default_rng(seed)
    p = exponents.as_floats()
    q = float(exponents.p_star)
    w = grid.cell_volume
    sob = poin = 0.0
    for _ in range(sample_count):
        u = _random_field(grid, rng)
        axis_norms = _axis_energies(u, grid, p) ** (1 / np.array(p))
        if np.any(axis_norms == 0):
            continue
        sob = max(sob, _lp(u, w, q) / float(np.prod(axis_norms ** (1 / grid.n_dims))))
        poin = max(poin, max(_lp(u, w, pi) / ni for pi, ni in zip(p, axis_norms)))
    return sob, poin
