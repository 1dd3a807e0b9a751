import math
import warnings

import numpy as np
import pytest

from anisodecay.exponents import ExponentVector, UndefinedCriticalExponentError
from anisodecay.flux import FluxModel
from anisodecay.grid import Field, Trajectory, make_grid, norm
from anisodecay.io import read_field_stack, write_field_stack
from anisodecay.parabolic import ProblemSpec, solve_parabolic
from anisodecay.elliptic import EllipticSpec, solve_elliptic
from anisodecay.verify import (
    POWER_LAW_RESIDUAL,
    VerifyError,
    accumulated_forcing_l1,
    check_decay_bounds,
    check_energy_dissipation,
    check_l1_contraction,
    check_regularity_transfer,
    check_regularizing,
    check_steady_convergence,
    estimate_functional_constants,
    fit_decay_rate,
)

HEAT = ExponentVector.of(2, 2)


def spike(g, mass=1.0):
    v = np.zeros(g.size)
    v[g.center_index()] = mass / g.cell_volume
    return Field(g, v)


@pytest.fixture(scope="module")
def heat_pair():
    g = make_grid((1, 1), 32)
    flux = FluxModel.orthotropic(HEAT)
    pu = ProblemSpec(g, HEAT, flux, spike(g), Field.zeros(g), 0.2, 1e-3)
    return solve_parabolic(pu), solve_parabolic(pu.replace(initial=Field.zeros(g)))


def test_fit_exact_power_law():
    t = np.geomspace(0.01, 1, 20)
    C, h, res = fit_decay_rate(t, 3 * t**-2)
    assert C == pytest.approx(3, rel=1e-12) and h == pytest.approx(2, rel=1e-12) and res < 1e-12


def test_fit_noisy_power_law():
    rng = np.random.default_rng(0)
    t = np.geomspace(0.01, 1, 40)
    _, h, res = fit_decay_rate(t, 0.5 * t**-1.3 * (1 + rng.uniform(-1e-3, 1e-3, t.size)))
    assert abs(h - 1.3) < 1e-2 and res < POWER_LAW_RESIDUAL


def test_fit_flags_exponential():
    t = np.linspace(1, 10, 30)
    _, _, res = fit_decay_rate(t, np.exp(-t))
    assert res > POWER_LAW_RESIDUAL


def test_fit_errors():
    t = np.linspace(1, 2, 10)
    with pytest.raises(VerifyError):
        fit_decay_rate(t[:4], t[:4])
    with pytest.raises(VerifyError):
        fit_decay_rate(t, -t)


def test_contraction_identical_and_distinct(heat_pair):
    tu, tv = heat_pair
    same = check_l1_contraction(tu, tu, tu.states[0], tu.states[0])
    assert same.passed and same.margin == 0
    rep = check_l1_contraction(tu, tv, tu.states[0], tv.states[0])
    assert rep.passed and rep.details["max_increase"] <= 1e-12


def test_contraction_forcing_only():
    g = make_grid((1, 1), 32)
    flux = FluxModel.orthotropic(HEAT)
    f = Field.constant(g, 1.0)
    x, y = g.coordinates()
    gf = Field(g, (np.sin(3 * x) * y).ravel())
    pu = ProblemSpec(g, HEAT, flux, Field.zeros(g), f, 0.1, 1e-2)
    tu, tv = solve_parabolic(pu), solve_parabolic(pu.replace(forcing=gf))
    acc = accumulated_forcing_l1(f, gf, tu.times, 1e-2)
    assert acc[-1] == pytest.approx(0.1 * norm(f - gf, 1), rel=1e-12)
    rep = check_l1_contraction(tu, tv, pu.initial, pu.initial, acc)
    assert rep.passed and rep.margin >= 0


def test_contraction_mismatch(heat_pair):
    tu, _ = heat_pair
    g = make_grid((1, 1), 8)
    other = Trajectory.build(None, [0.0], [Field.zeros(g)], HEAT)
    with pytest.raises(VerifyError):
        check_l1_contraction(tu, other, tu.states[0], other.states[0])


def test_decay_heat_regimes(heat_pair):
    tu, tv = heat_pair
    reps = {r.name: r for r in check_decay_bounds(tu, tv, HEAT, 1.0, 1.0, windows={"uno": (5e-3, 5e-2), "expo": (2e-2, 0.2)})}
    assert set(reps) == {"uno", "graduno", "expo", "gradexpo"}
    assert all(r.passed for r in reps.values())
    assert abs(reps["uno"].fitted_exponent - 1) <= 0.15
    assert reps["expo"].details["sigma"] > 0


def test_decay_identical_runs_trivial(heat_pair):
    tu, _ = heat_pair
    reps = check_decay_bounds(tu, tu, HEAT, 1.0, 1.0)
    assert all(r.passed and r.details.get("trivial") for r in reps)


def test_decay_regime_selection():
    g = make_grid((1, 1), 8)
    for p, expected in (((1.8, 1.9), {"uno", "graduno"}), ((2, 3), {"uno", "graduno", "uni", "graduni"})):
        ev = ExponentVector.of(*p)
        flux = FluxModel.orthotropic(ev)
        x, y = g.coordinates()
        u0 = Field(g, (np.sin(np.pi * x) * np.sin(np.pi * y)).ravel())
        pu = ProblemSpec(g, ev, flux, u0, Field.zeros(g), 0.1, 1e-2)
        tu, tv = solve_parabolic(pu), solve_parabolic(pu.replace(initial=Field.zeros(g)))
        names = {r.name for r in check_decay_bounds(tu, tv, ev, 0.5, 1.0, window=(0.02, 0.1))}
        assert names == expected


def test_decay_degenerate_window(heat_pair):
    tu, tv = heat_pair
    with pytest.raises(VerifyError):
        check_decay_bounds(tu, tv, HEAT, 1.0, 1.0, window=(0.1, 0.05))


def test_reports_reproducible_from_serialized(heat_pair, tmp_path):
    tu, tv = heat_pair
    write_field_stack(tu.states, tmp_path / "u.bin")
    write_field_stack(tv.states, tmp_path / "v.bin")
    tu2 = Trajectory.build(tu.problem, tu.times, read_field_stack(tmp_path / "u.bin"))
    tv2 = Trajectory.build(tv.problem, tv.times, read_field_stack(tmp_path / "v.bin"))
    a = check_decay_bounds(tu, tv, HEAT, 1.0, 1.0, window=(5e-3, 5e-2))
    b = check_decay_bounds(tu2, tv2, HEAT, 1.0, 1.0, window=(5e-3, 5e-2))
    for x, y in zip(a, b):
        assert x.passed == y.passed
        assert x.fitted_constant == pytest.approx(y.fitted_constant, rel=1e-12)
        assert x.fitted_exponent == pytest.approx(y.fitted_exponent, rel=1e-12)


def test_energy_dissipation(heat_pair):
    tu, tv = heat_pair
    same = check_energy_dissipation(tu, tu, 1.0, 0.0)
    assert same.passed and same.details["worst_violation"] == 0
    exact = check_energy_dissipation(tu, tv, 1.0, 0.0)
    assert exact.passed and exact.details["relative_violation"] <= 1e-10
    k = 0.5 * norm(tu.states[0], math.inf)
    assert check_energy_dissipation(tu, tv, 1.0, k).passed
    with pytest.raises(VerifyError):
        check_energy_dissipation(tu, tv, 1.0, -1.0)


def test_regularizing_heat_spikes():
    g = make_grid((1, 1), 32)
    flux = FluxModel.orthotropic(HEAT)
    for height in (1e2, 1e3, 1e4):
        v = np.zeros(g.size)
        v[g.center_index()] = height
        tr = solve_parabolic(ProblemSpec(g, HEAT, flux, Field(g, v), Field.constant(g, 1.0), 0.1, 1e-3))
        rep = check_regularizing(tr, 1.0, math.inf, HEAT, 0.01)
        assert rep.passed and rep.name == "defC3"
        assert rep.details["residual"] < 0.1


def test_regularizing_warns_and_errors(heat_pair):
    tu, _ = heat_pair
    with pytest.warns(UserWarning):
        check_regularizing(tu, 0.0, 1.5, HEAT, 0.01)
    with pytest.raises(VerifyError):
        check_regularizing(tu, 0.0, math.inf, HEAT, 0.5)


def test_regularizing_bounded_data_trivial():
    g = make_grid((1, 1), 16)
    flux = FluxModel.orthotropic(HEAT)
    tr = solve_parabolic(ProblemSpec(g, HEAT, flux, Field.constant(g, 1.0), Field.constant(g, 1.0), 0.1, 1e-3))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = check_regularizing(tr, 1.0, math.inf, HEAT, 0.01)
    assert np.isfinite(rep.fitted_constant)


def test_regularity_transfer(heat_pair):
    tu, tv = heat_pair
    decay = check_decay_bounds(tu, tv, HEAT, 1.0, 1.0, window=(5e-3, 5e-2))[0]
    rep = check_regularity_transfer(tu, tv, decay, math.inf, math.inf, 0.01)
    assert rep.passed and rep.details["pointwise_ok"]
    same = check_regularity_transfer(tu, tu, decay, 2, 2, 0.01)
    assert same.passed and same.details["envelope_part"] == 0 or same.passed


def test_regularity_transfer_random_pairs():
    g = make_grid((1, 1), 12)
    flux = FluxModel.orthotropic(HEAT)
    rng = np.random.default_rng(9)
    for _ in range(3):
        pu = ProblemSpec(g, HEAT, flux, Field(g, rng.standard_normal(g.size)), Field.zeros(g), 0.1, 1e-2)
        tu = solve_parabolic(pu)
        tv = solve_parabolic(pu.replace(initial=Field(g, rng.standard_normal(g.size))))
        decay = check_decay_bounds(tu, tv, HEAT, 1.0, 1.0, window=(0.02, 0.1))[0]
        assert check_regularity_transfer(tu, tv, decay, 2, 2, 0.02).details["pointwise_ok"]


def test_steady_convergence():
    g = make_grid((1, 1), 16)
    flux = FluxModel.orthotropic(HEAT)
    f = Field.constant(g, 1.0)
    w = solve_elliptic(EllipticSpec(g, HEAT, flux, f))
    at_rest = solve_parabolic(ProblemSpec(g, HEAT, flux, w, f, 0.5, 0.05))
    rep = check_steady_convergence(at_rest, w, 0.0)
    assert rep.passed and rep.details["final_distance"] <= 1e-9
    moving = solve_parabolic(ProblemSpec(g, HEAT, flux, Field.zeros(g), f, 2.0, 0.01, record_every=5))
    rep = check_steady_convergence(moving, w, 0.05)
    assert rep.passed and rep.details["decay_rate"] > 0


def test_functional_constants():
    g = make_grid((1, 1), 16)
    ev = ExponentVector.of(1.5, 1.8)
    sob, poin = estimate_functional_constants(g, ev, 200, 0)
    assert 0 < sob < np.inf and 0 < poin < np.inf
    with pytest.raises(UndefinedCriticalExponentError):
        estimate_functional_constants(g, HEAT, 10, 0)
