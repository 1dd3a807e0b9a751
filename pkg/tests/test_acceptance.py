"""The nine acceptance criteria, each at its stated tolerance.

Every test prints ``criterion N: PASS|FAIL <detail>``; the lines are also
collected into a section of the pytest terminal summary.
"""

import math
import random
import time
from fractions import Fraction as F

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.optimize import bisect
from scipy.sparse.linalg import spsolve

from anisodecay.elliptic import EllipticSpec, solve_elliptic
from anisodecay.exponents import ExponentVector, check_admissible, decay_profile, harmonic_mean
from anisodecay.flux import FluxModel, verify_structure
from anisodecay.grid import Field, difference_matrices, make_grid, norm
from anisodecay.parabolic import ProblemSpec, sola_solve, solve_parabolic, step_implicit
from anisodecay.verify import (
    check_decay_bounds,
    check_energy_dissipation,
    check_l1_contraction,
    check_regularizing,
    check_steady_convergence,
)

from conftest import ACCEPTANCE_LINES


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return ok


def sine(g, amp=1.0):
    u = np.full(g.shape, amp)
    for x, L in zip(g.coordinates(), g.extents):
        u = u * np.sin(np.pi * x / L)
    return Field(g, u.reshape(-1))


def peak(g, height):
    v = np.zeros(g.size)
    v[g.center_index()] = height
    return Field(g, v)


def gaussian(g, height, sigma):
    r2 = sum((x - 0.5 * L) ** 2 for x, L in zip(g.coordinates(), g.extents))
    return Field(g, (height * np.exp(-r2 / (2 * sigma**2))).reshape(-1))


def random_admissible(rng):
    while True:
        n = rng.randint(2, 5)
        p = [F(rng.randint(1700, 4000), 1000) for _ in range(n)]
        rep = check_admissible(p)
        if rep.admissible:
            return n, p


def test_criterion_1_exponent_algebra():
    rng = random.Random(2024)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        n, p = random_admissible(rng)
        pb = harmonic_mean(p)
        prof = decay_profile(2, 1, n * pb / (n - pb), pb)
        d = n * (pb - 2) + pb
        for got, want in ((prof.h1, n / d), (prof.h0, pb / d)):
            worst = max(worst, abs(float(got) - float(want)) / abs(float(want)))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and elapsed < 1.0
    assert report(1, ok, f"worst rel err {worst:.2e}, {elapsed:.3f}s")


PAIRS = {
    "2d": ((2, 2), 64),
    "3d": ((2, 2, F(5, 2)), 16),
}


@pytest.fixture(scope="module")
def contraction_runs():
    runs = {}
    for label, (p, n) in PAIRS.items():
        ev = ExponentVector.of(*p)
        g = make_grid((1.0,) * len(p), n)
        flux = FluxModel.orthotropic(ev)
        rng = np.random.default_rng(7)
        u0 = sine(g, 2.0)
        v0 = Field(g, rng.uniform(-1, 1, g.size))
        prob = ProblemSpec(g, ev, flux, u0, Field.zeros(g), 0.5, 1e-3, newton_tol=1e-12)
        start = time.perf_counter()
        tu = solve_parabolic(prob)
        tv = solve_parabolic(prob.replace(initial=v0))
        runs[label] = (ev, flux, tu, tv, time.perf_counter() - start)
    return runs


def test_criterion_2_l1_contraction(contraction_runs):
    ok, parts = True, []
    for label, (ev, flux, tu, tv, elapsed) in contraction_runs.items():
        rep = check_l1_contraction(tu, tv, tu.states[0], tv.states[0], tolerance=1e-8)
        inc = rep.details["max_increase"]
        good = inc <= 1e-8 and rep.passed and elapsed < 240
        ok &= good
        parts.append(f"{label} max increase {inc:.2e} ({elapsed:.1f}s for two runs)")
    assert report(2, ok, "; ".join(parts))


def test_criterion_3_heat_decay_rate():
    ev = ExponentVector.of(2, 2)
    g = make_grid((1, 1), 64)
    flux = FluxModel.orthotropic(ev)
    u0 = peak(g, 1.0 / g.cell_volume)
    start = time.perf_counter()
    prob = ProblemSpec(g, ev, flux, u0, Field.zeros(g), 0.05, 1e-4)
    tu = solve_parabolic(prob)
    tv = solve_parabolic(prob.replace(initial=Field.zeros(g)))
    uno = check_decay_bounds(tu, tv, ev, 1.0, 1.0, window=(1e-3, 5e-2))[0]
    elapsed = time.perf_counter() - start
    ok = uno.name == "uno" and abs(uno.fitted_exponent - 1.0) <= 0.15 and elapsed < 120
    assert report(3, ok, f"fitted exponent {uno.fitted_exponent:.4f} on [1e-3, 5e-2] ({elapsed:.1f}s)")


def test_criterion_4_universal_bound():
    ev = ExponentVector.of(F(5, 2), F(5, 2), F(5, 2))
    assert check_admissible(ev.p).admissible
    g = make_grid((1, 1, 1), 16)
    flux = FluxModel.orthotropic(ev)
    base = ProblemSpec(g, ev, flux, sine(g, 100.0), Field.zeros(g), 0.1, 1e-3, record_every=10)
    start = time.perf_counter()
    sups = []
    for scale in (1, 10, 100):
        tr = solve_parabolic(base.replace(initial=base.initial * float(scale)))
        sups.append(float(tr.norm_log.sup[-1]))
    elapsed = time.perf_counter() - start
    spread = (max(sups) - min(sups)) / min(sups)
    ok = spread <= 0.2 and elapsed < 600
    assert report(4, ok, f"sup at t=0.1 {', '.join(f'{s:.4g}' for s in sups)}; spread {spread:.1%} ({elapsed:.1f}s)")


def test_criterion_5_energy_dissipation(contraction_runs):
    ok, parts = True, []
    for label, (ev, flux, tu, tv, _) in contraction_runs.items():
        s = verify_structure(flux, 20000, 0)
        assert s.strong_monotone_ok
        diff0 = norm(tu.states[0] - tv.states[0], math.inf)
        for k in (0.0, 0.25 * diff0):
            rep = check_energy_dissipation(tu, tv, s.gamma_tested, k, rel_slack=1e-8)
            ok &= rep.passed
            parts.append(f"{label} k={k:.3g} rel violation {rep.details['relative_violation']:.1e}")
    assert report(5, ok, "; ".join(parts))


def test_criterion_6_sola_cauchy():
    ev = ExponentVector.of(2, 2)
    g = make_grid((1, 1), 64)
    flux = FluxModel.orthotropic(ev)
    prob = ProblemSpec(g, ev, flux, peak(g, 10.0), Field.zeros(g), 0.05, 1e-3)
    start = time.perf_counter()
    rep = sola_solve(prob, (1, 2, 4, 8, 16), tolerance=1e-8)
    elapsed = time.perf_counter() - start
    entrywise = bool(np.all(rep.cauchy_matrix <= rep.data_bound_matrix + 1e-8))
    finest = float(rep.cauchy_matrix[-1, -2])
    ok = entrywise and finest < 1e-3 and elapsed < 300
    assert report(6, ok, f"entrywise bound {entrywise}, finest gap {finest:.3e} ({elapsed:.1f}s)")


def test_criterion_7_steady_convergence():
    ev = ExponentVector.of(2, 2)
    g = make_grid((1, 1), 32)
    flux = FluxModel.orthotropic(ev)
    f = Field.constant(g, 1.0)
    start = time.perf_counter()
    w = solve_elliptic(EllipticSpec(g, ev, flux, f))
    finals, ok = [], True
    for u0 in (Field.zeros(g), sine(g, 3.0)):
        tr = solve_parabolic(ProblemSpec(g, ev, flux, u0, f, 2.0, 1e-2))
        rep = check_steady_convergence(tr, w, 0.1, threshold=1e-4)
        finals.append(rep.details["final_distance"])
        ok &= rep.passed
    elapsed = time.perf_counter() - start
    ok = ok and elapsed < 120
    assert report(7, ok, f"||u(2)-w||_inf {finals[0]:.2e}, {finals[1]:.2e}, monotone tail ({elapsed:.1f}s)")


def test_criterion_8_regularizing():
    heights = (1e2, 1e3, 1e4)
    heat = ExponentVector.of(2, 2)
    g = make_grid((1, 1), 32)
    flux = FluxModel.orthotropic(heat)
    f = Field.constant(g, 1.0)
    residuals = []
    for hgt in heights:
        tr = solve_parabolic(ProblemSpec(g, heat, flux, peak(g, hgt), f, 0.1, 1e-4, record_every=10))
        rep = check_regularizing(tr, 1.0, math.inf, heat, 0.01)
        residuals.append(rep.details["residual"])
    heat_ok = max(residuals) < 0.1

    ev = ExponentVector.of(F(5, 2), F(5, 2), F(5, 2))
    g3 = make_grid((1, 1, 1), 16)
    flux3 = FluxModel.orthotropic(ev)
    f3 = Field.constant(g3, 1.0)
    trajs = [
        solve_parabolic(ProblemSpec(g3, ev, flux3, gaussian(g3, hgt, 0.25), f3, 0.3, 1e-3, record_every=5))
        for hgt in heights
    ]
    rep = check_regularizing(trajs[0], 1.0, math.inf, ev, 0.1, others=trajs[1:], spread_tol=0.2)
    spread = rep.details["spread"]
    ok = heat_ok and spread <= 0.2
    assert report(8, ok, f"heat fit residuals {', '.join(f'{r:.3f}' for r in residuals)}; "
                         f"p_bar=2.5 sup spread {spread:.1%}")


def test_criterion_9_oracle_equivalence():
    heat = ExponentVector.of(2, 2)
    g = make_grid((1, 1), 16)
    rng = np.random.default_rng(11)
    u = Field(g, rng.standard_normal(g.size))
    f = Field(g, rng.standard_normal(g.size))
    dt = 1e-3
    got = step_implicit(u, dt, f, FluxModel.orthotropic(heat), tol=1e-12)
    lap = sum(d.T @ d for d in difference_matrices(g))
    oracle = spsolve((sp.identity(g.size) + dt * lap).tocsc(), u.values + dt * f.values)
    lin_err = float(np.abs(got.values - oracle).max())

    # symmetric 2x2 grid: all four nodes share one scalar equation
    g2 = make_grid((1, 1), 2)
    h = g2.spacing[0]
    bis_err = 0.0
    for p, u0, tau in ((3, 0.8, 0.05), (4, -1.5, 0.01), (2.5, 4.0, 1e-3)):
        out = step_implicit(Field.constant(g2, u0), tau, Field.zeros(g2),
                            FluxModel.orthotropic(ExponentVector.of(p, p)), tol=1e-13)

        def scalar(v):
            return v + tau * 2 * abs(v / h) ** (p - 2) * (v / h) / h - u0

        ref = bisect(scalar, -abs(u0) - 1, abs(u0) + 1, xtol=1e-15, rtol=1e-15, maxiter=500)
        bis_err = max(bis_err, float(np.abs(out.values - ref).max()))

    s = verify_structure(FluxModel.orthotropic(ExponentVector.of(2, 3)), 100_000, 0)
    floor = 2.0 ** (2 - 3) - 1e-3
    ok = lin_err <= 1e-10 and bis_err <= 1e-10 and s.worst_gamma >= floor
    assert report(9, ok, f"linear err {lin_err:.1e}, bisection err {bis_err:.1e}, "
                         f"worst gamma {s.worst_gamma:.6f} >= {floor}")
