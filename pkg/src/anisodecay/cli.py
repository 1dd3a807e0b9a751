"""Experiment runner: ``anisodecay run | sweep | inspect``.

Configs are UTF-8 text with one ``dotted.key = value`` per line and ``#``
comments, for example::

    experiment = decay
    seed = 1
    problem.p = 2,2
    problem.resolution = 64
    problem.dt = 1e-4
    problem.t_final = 0.05
    problem.initial = spike:1
    verify.window = 1e-3,5e-2

Data fields (``problem.initial``, ``problem.initial_v``, ``problem.forcing``,
``problem.forcing_g``, ``problem.h``) use a small grammar: ``zero``,
``constant:c``, ``spike:M`` (one node of height ``M / cell volume`` at the
centre when ``M`` is the mass; use ``peak:M`` for a raw node value),
``gaussian:M:sigma``, ``sine:A`` and ``random:A`` (seeded).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .elliptic import EllipticSpec, solve_elliptic
from .exponents import (
    ExponentVector,
    check_admissible,
    decay_profile,
    pde_decay_profile,
    algebraic_exponents,
)
from .flux import FluxModel, verify_structure
from .grid import Field, Grid, Trajectory, make_grid, norm
from .io import write_norm_log
from .parabolic import ProblemSpec, StepFailure, solve_parabolic, sola_solve
from .verify import (
    BoundCheckReport,
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

log = logging.getLogger("anisodecay")

OUT_ENV = "ANISODECAY_OUT"
REPORT_COLUMNS = ("estimate", "window_lo", "window_hi", "fitted_C", "fitted_h", "expected_h", "passed", "margin")
RECIPES = ("contraction", "decay", "universal", "regularize", "transfer", "steady", "sola", "structure", "exponents")

PROBLEM_KEYS = {
    "p", "extents", "resolution", "dt", "t_final", "flux", "epsilon", "h",
    "initial", "initial_v", "forcing", "forcing_g", "newton_tol", "record_every", "scales",
}
VERIFY_KEYS = {
    "window", "window.uno", "window.expo", "window.uni", "exponent_tol", "k", "t0",
    "levels", "threshold", "samples", "tail_start", "r", "s", "m", "tolerance", "spread_tol",
}
TOP_KEYS = {"experiment", "seed", "parallel", "output"}

REQUIRED = {
    "exponents": {"problem.p"},
    "structure": {"problem.p"},
}
_RUN_KEYS = {"problem.p", "problem.resolution", "problem.dt", "problem.t_final", "problem.initial"}
for _name in ("contraction", "decay", "universal", "regularize", "transfer", "steady", "sola"):
    REQUIRED[_name] = set(_RUN_KEYS)
REQUIRED["contraction"] |= {"problem.initial_v"}
REQUIRED["transfer"] |= {"verify.t0"}
REQUIRED["sola"] |= {"verify.levels"}
REQUIRED["steady"] |= {"problem.forcing", "problem.initial_v"}


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.key = key
        self.line = line


# ---------------------------------------------------------------- config


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    values: dict
    output: str | None = None
    seed: int = 0
    parallel: int = 1
    lines: dict = field(default_factory=dict, compare=False)
    source: str | None = field(default=None, compare=False)

    @property
    def config_hash(self) -> str:
        canon = "\n".join(f"{k}={v}" for k, v in sorted(self.values.items()))
        canon += f"\nexperiment={self.experiment}\nseed={self.seed}"
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    def has(self, key: str) -> bool:
        return key in self.values

    def raw(self, key: str, default=None):
        return self.values.get(key, default)

    def _convert(self, key, default, conv):
        if key not in self.values:
            if default is _MISSING:
                raise ConfigError("required key missing", key)
            return default
        try:
            return conv(self.values[key])
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"bad value {self.values[key]!r}: {exc}", key, self.lines.get(key)) from exc

    def float(self, key: str, default=None):
        return self._convert(key, _MISSING if default is None else default, float)

    def int(self, key: str, default=None):
        return self._convert(key, _MISSING if default is None else default, int)

    def floats(self, key: str, default=None):
        return self._convert(key, _MISSING if default is None else default, _float_list)


_MISSING = object()


def _float_list(text) -> tuple[float, ...]:
    if isinstance(text, tuple):
        return text
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def parse_config(text: str, source: str | None = None) -> ExperimentConfig:
    """Parse the flat ``key = value`` format and validate it for its recipe."""
    values: dict[str, str] = {}
    lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=lineno)
        key, _, value = (s.strip() for s in line.partition("="))
        if not key:
            raise ConfigError("empty key", line=lineno)
        if key in values:
            raise ConfigError("duplicate key", key, lineno)
        section, _, rest = key.partition(".")
        known = (
            key in TOP_KEYS
            or (section == "problem" and rest in PROBLEM_KEYS)
            or (section == "verify" and rest in VERIFY_KEYS)
        )
        if not known:
            raise ConfigError("unknown key", key, lineno)
        values[key] = value
        lines[key] = lineno
    if "experiment" not in values:
        raise ConfigError("required key missing", "experiment")
    experiment = values.pop("experiment")
    if experiment not in RECIPES:
        raise ConfigError(f"unknown recipe {experiment!r}; expected one of {RECIPES}", "experiment", lines["experiment"])
    try:
        seed = int(values.pop("seed", "0"))
        parallel = int(values.pop("parallel", "1"))
    except ValueError as exc:
        raise ConfigError(f"not an integer: {exc}", "seed/parallel") from exc
    if parallel < 1:
        raise ConfigError("must be >= 1", "parallel", lines.get("parallel"))
    output = values.pop("output", None)
    missing = sorted(REQUIRED[experiment] - values.keys())
    if missing:
        raise ConfigError(f"required for recipe {experiment!r}", missing[0])
    return ExperimentConfig(experiment, values, output, seed, parallel, lines, source)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    return parse_config(text, str(path))


# ---------------------------------------------------------------- problem assembly


def _exponents(cfg: ExperimentConfig) -> ExponentVector:
    try:
        parts = [s.strip() for s in cfg.raw("problem.p").split(",")]
        return ExponentVector(tuple(Fraction(s) for s in parts))
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(str(exc), "problem.p", cfg.lines.get("problem.p")) from exc


def _grid(cfg: ExperimentConfig, n_dims: int) -> Grid:
    res = tuple(int(v) for v in cfg.floats("problem.resolution"))
    if len(res) == 1:
        res = res * n_dims
    extents = cfg.floats("problem.extents", (1.0,) * n_dims)
    if len(extents) == 1:
        extents = extents * n_dims
    try:
        return make_grid(extents, res)
    except ValueError as exc:
        raise ConfigError(str(exc), "problem.resolution") from exc


def make_datum(spec: str, grid: Grid, seed: int = 0, key: str | None = None) -> Field:
    """Build a field from the data grammar described in the module docstring."""
    kind, *args = [s.strip() for s in spec.split(":")]
    try:
        nums = [float(a) for a in args]
    except ValueError as exc:
        raise ConfigError(f"bad datum {spec!r}", key) from exc
    if not all(np.isfinite(nums)):
        raise ConfigError(f"datum parameters must be finite: {spec!r}", key)
    coords = grid.coordinates()
    centre = [0.5 * L for L in grid.extents]
    if kind == "zero" and not nums:
        return Field.zeros(grid)
    if kind == "constant" and len(nums) == 1:
        return Field.constant(grid, nums[0])
    if kind in ("spike", "peak") and len(nums) == 1:
        v = np.zeros(grid.size)
        v[grid.center_index()] = nums[0] / grid.cell_volume if kind == "spike" else nums[0]
        return Field(grid, v)
    if kind == "gaussian" and len(nums) == 2:
        m, sigma = nums
        r2 = sum((x - c) ** 2 for x, c in zip(coords, centre))
        return Field(grid, (m * np.exp(-r2 / (2 * sigma**2))).reshape(-1))
    if kind == "sine" and len(nums) == 1:
        u = np.full(grid.shape, nums[0])
        for x, L in zip(coords, grid.extents):
            u = u * np.sin(np.pi * x / L)
        return Field(grid, u.reshape(-1))
    if kind == "random" and len(nums) == 1:
        rng = np.random.default_rng(seed)
        return Field(grid, nums[0] * rng.standard_normal(grid.size))
    raise ConfigError(f"unrecognized datum {spec!r}", key)


def _flux(cfg: ExperimentConfig, ev: ExponentVector, grid: Grid) -> FluxModel:
    kind = cfg.raw("problem.flux", "orthotropic")
    if kind in ("orthotropic", "orthotropic_power"):
        return FluxModel.orthotropic(ev)
    if kind in ("regularized", "regularized_power"):
        return FluxModel.regularized(ev, cfg.float("problem.epsilon", 1e-3))
    if kind == "perturbed":
        h = make_datum(cfg.raw("problem.h", "constant:1"), grid, cfg.seed + 7, "problem.h")
        return FluxModel.perturbed(ev, h)
    raise ConfigError(f"unknown flux kind {kind!r}", "problem.flux", cfg.lines.get("problem.flux"))


@dataclass
class Setup:
    cfg: ExperimentConfig
    exponents: ExponentVector
    grid: Grid
    flux: FluxModel
    problem: ProblemSpec

    def datum(self, key: str, default: str = "zero", seed_offset: int = 0) -> Field:
        return make_datum(self.cfg.raw(key, default), self.grid, self.cfg.seed + seed_offset, key)


def build_setup(cfg: ExperimentConfig) -> Setup:
    ev = _exponents(cfg)
    grid = _grid(cfg, ev.n_dims)
    flux = _flux(cfg, ev, grid)
    initial = make_datum(cfg.raw("problem.initial"), grid, cfg.seed, "problem.initial")
    forcing = make_datum(cfg.raw("problem.forcing", "zero"), grid, cfg.seed + 2, "problem.forcing")
    try:
        problem = ProblemSpec(
            grid=grid,
            exponents=ev,
            flux=flux,
            initial=initial,
            forcing=forcing,
            t_final=cfg.float("problem.t_final"),
            dt=cfg.float("problem.dt"),
            newton_tol=cfg.float("problem.newton_tol", 1e-10),
            record_every=cfg.int("problem.record_every", 1),
        )
    except ValueError as exc:
        raise ConfigError(str(exc), "problem") from exc
    return Setup(cfg, ev, grid, flux, problem)


# ---------------------------------------------------------------- recipes


@dataclass
class RecipeResult:
    reports: list[BoundCheckReport]
    trajectories: dict[str, Trajectory] = field(default_factory=dict)


def _row(name, passed, fitted_C=float("nan"), fitted_h=float("nan"), expected_h=float("nan"),
         margin=float("nan"), window=(float("nan"), float("nan")), **details) -> BoundCheckReport:
    return BoundCheckReport(name, window, float(fitted_C), float(fitted_h), float(expected_h),
                            bool(passed), float(margin), details)


def _gamma(flux: FluxModel, seed: int, samples: int = 20000) -> float:
    rep = verify_structure(flux, samples, seed)
    if not rep.strong_monotone_ok:
        raise StepFailure(f"declared gamma={flux.gamma} not confirmed (worst {rep.worst_gamma})", 0.0)
    return rep.gamma_tested


def recipe_exponents(cfg: ExperimentConfig) -> RecipeResult:
    ev = _exponents(cfg)
    adm = check_admissible(ev.p)
    rows = [_row("assupi", adm.admissible, fitted_C=float(adm.p_bar),
                 margin=float(adm.upper_bound - ev.p_max) if adm.admissible else -1.0)]
    q = ev.p_star if ev.p_star is not None else math.inf
    prof = decay_profile(2, 1, q, ev.p_bar)
    h0, h1 = algebraic_exponents(ev)
    for name, got, want in (("h1", prof.h1, h1), ("h0", prof.h0, h0)):
        err = abs(float(got) - float(want))
        rows.append(_row(name, err <= 1e-12 * abs(float(want)), fitted_h=float(got), expected_h=float(want),
                         margin=1e-12 * abs(float(want)) - err))
    pde = pde_decay_profile(ev)
    rows.append(_row("regime", True, fitted_h=float(pde.h2) if pde.h2 is not None else float("nan"),
                     regime=pde.regime))
    return RecipeResult(rows)


def recipe_structure(cfg: ExperimentConfig) -> RecipeResult:
    ev = _exponents(cfg)
    n = ev.n_dims
    grid = _grid(cfg, n) if cfg.has("problem.resolution") else make_grid((1.0,) * n, 16)
    flux = _flux(cfg, ev, grid)
    samples = cfg.int("verify.samples", 100000)
    rep = verify_structure(flux, samples, cfg.seed)
    ok = rep.coercivity_ok and rep.growth_ok and rep.strict_monotone_ok and rep.strong_monotone_ok
    rows = [_row("structure", ok, fitted_C=rep.worst_gamma, expected_h=rep.gamma_tested,
                 margin=rep.worst_gamma - rep.gamma_tested)]
    if ev.p_star is not None:
        sob, poin = estimate_functional_constants(grid, ev, min(samples, 1000), cfg.seed)
        rows.append(_row("Sob", np.isfinite(sob), fitted_C=sob))
        rows.append(_row("poincare", np.isfinite(poin), fitted_C=poin))
    return RecipeResult(rows)


def _pair(setup: Setup):
    cfg = setup.cfg
    v0 = setup.datum("problem.initial_v", "zero", 1)
    g = setup.datum("problem.forcing_g", cfg.raw("problem.forcing", "zero"), 2)
    pu = setup.problem
    pv = pu.replace(initial=v0, forcing=g)
    return pu, pv, solve_parabolic(pu), solve_parabolic(pv)


def recipe_contraction(cfg: ExperimentConfig) -> RecipeResult:
    setup = build_setup(cfg)
    pu, pv, tu, tv = _pair(setup)
    acc = accumulated_forcing_l1(pu.forcing, pv.forcing, tu.times, pu.dt)
    rows = [check_l1_contraction(tu, tv, pu.initial, pv.initial, acc)]
    if pu.forcing == pv.forcing:
        gamma = _gamma(setup.flux, cfg.seed)
        rows.append(check_energy_dissipation(tu, tv, gamma, 0.0))
        k = cfg.float("verify.k", 0.5 * norm(pu.initial - pv.initial, math.inf))
        if k > 0:
            rows.append(check_energy_dissipation(tu, tv, gamma, k))
    return RecipeResult(rows, {"u": tu, "v": tv})


def _windows(cfg: ExperimentConfig) -> dict:
    out = {}
    for name in ("uno", "expo", "uni"):
        if cfg.has(f"verify.window.{name}"):
            out[name] = cfg.floats(f"verify.window.{name}")
    return out


def recipe_decay(cfg: ExperimentConfig) -> RecipeResult:
    setup = build_setup(cfg)
    _, _, tu, tv = _pair(setup)
    gamma = _gamma(setup.flux, cfg.seed)
    window = cfg.floats("verify.window") if cfg.has("verify.window") else None
    rows = check_decay_bounds(tu, tv, setup.exponents, gamma, setup.grid.measure, window=window,
                              windows=_windows(cfg), exponent_tol=cfg.float("verify.exponent_tol", 0.15))
    return RecipeResult(rows, {"u": tu, "v": tv})


def _scaled_runs(setup: Setup):
    scales = setup.cfg.floats("problem.scales", (1.0,))
    runs = {}
    for s in scales:
        runs[f"scale_{s:g}"] = solve_parabolic(setup.problem.replace(initial=setup.problem.initial * s))
    return scales, runs


def recipe_universal(cfg: ExperimentConfig) -> RecipeResult:
    setup = build_setup(cfg)
    ev = setup.exponents
    if not ev.p_bar > 2:
        raise ConfigError("the universal bound needs p_bar > 2", "problem.p")
    h2 = float(pde_decay_profile(ev).h2)
    t0 = cfg.float("verify.t0", 0.1)
    scales, runs = _scaled_runs(setup)
    rows, consts = [], []
    for s, (label, traj) in zip(scales, runs.items()):
        j = int(np.searchsorted(traj.times, t0 - 1e-12))
        if j >= len(traj.times):
            raise ConfigError("t0 beyond t_final", "verify.t0")
        sup = float(traj.norm_log.sup[j])
        const = sup * traj.times[j] ** h2
        consts.append(const)
        late = traj.times >= t0
        fit_h = float("nan")
        if late.sum() >= 5 and np.all(traj.norm_log.sup[late] > 0):
            _, fit_h, _ = fit_decay_rate(traj.times[late], traj.norm_log.sup[late])
        rows.append(_row("uni", True, fitted_C=const, fitted_h=fit_h, expected_h=h2,
                         window=(t0, traj.t_final), scale=s))
    if len(consts) > 1:
        spread = (max(consts) - min(consts)) / min(consts)
        tol = cfg.float("verify.spread_tol", 0.2)
        rows.append(_row("uni_spread", spread <= tol, fitted_C=spread, margin=tol - spread,
                         window=(t0, t0)))
    return RecipeResult(rows, runs)


def recipe_regularize(cfg: ExperimentConfig) -> RecipeResult:
    setup = build_setup(cfg)
    t0 = cfg.float("verify.t0", 0.01)
    m = cfg.float("verify.m", math.inf)
    f = setup.problem.forcing
    f_norm = norm(f, m) if not math.isinf(m) else norm(f, math.inf)
    scales, runs = _scaled_runs(setup)
    trajs = list(runs.values())
    rows = []
    for i, traj in enumerate(trajs):
        others = trajs[:i] + trajs[i + 1 :] if setup.exponents.p_bar > 2 else ()
        rows.append(check_regularizing(traj, f_norm, m, setup.exponents, t0, others=others,
                                       spread_tol=cfg.float("verify.spread_tol", 0.2)))
    return RecipeResult(rows, runs)


def recipe_transfer(cfg: ExperimentConfig) -> RecipeResult:
    setup = build_setup(cfg)
    _, _, tu, tv = _pair(setup)
    gamma = _gamma(setup.flux, cfg.seed)
    window = cfg.floats("verify.window") if cfg.has("verify.window") else None
    decay = check_decay_bounds(tu, tv, setup.exponents, gamma, setup.grid.measure, window=window,
                               windows=_windows(cfg))[0]
    rep = check_regularity_transfer(tu, tv, decay, cfg.float("verify.r", math.inf),
                                    cfg.float("verify.s", math.inf), cfg.float("verify.t0"))
    return RecipeResult([decay, rep], {"u": tu, "v": tv})


def recipe_steady(cfg: ExperimentConfig) -> RecipeResult:
    setup = build_setup(cfg)
    tol = cfg.float("verify.tolerance", 1e-10)
    w = solve_elliptic(EllipticSpec(setup.grid, setup.exponents, setup.flux, setup.problem.forcing,
                                    solver_tol=tol))
    _, _, tu, tv = _pair(setup)
    tail = cfg.float("verify.tail_start", 0.1)
    thr = cfg.float("verify.threshold", 1e-4)
    rows = [check_steady_convergence(t, w, tail, thr) for t in (tu, tv)]
    return RecipeResult(rows, {"u": tu, "v": tv})


def recipe_sola(cfg: ExperimentConfig) -> RecipeResult:
    setup = build_setup(cfg)
    levels = cfg.floats("verify.levels")
    tol = cfg.float("verify.tolerance", 1e-8)
    rep = sola_solve(setup.problem, levels, tol, workers=cfg.parallel)
    excess = rep.cauchy_matrix - rep.data_bound_matrix
    rows = [_row("didi", rep.all_satisfied, fitted_C=float(rep.cauchy_matrix.max()),
                 margin=float(-excess.max()), window=(0.0, setup.problem.t_final))]
    finest = float(rep.cauchy_matrix[-1, -2]) if len(levels) > 1 else 0.0
    thr = cfg.float("verify.threshold", 1e-3)
    rows.append(_row("sola_finest", finest < thr, fitted_C=finest, margin=thr - finest,
                     window=(0.0, setup.problem.t_final)))
    trajs = {f"level_{n:g}": t for n, t in zip(rep.levels, rep.trajectories)}
    return RecipeResult(rows, trajs)


RECIPE_FUNCS: dict[str, Callable[[ExperimentConfig], RecipeResult]] = {
    "contraction": recipe_contraction,
    "decay": recipe_decay,
    "universal": recipe_universal,
    "regularize": recipe_regularize,
    "transfer": recipe_transfer,
    "steady": recipe_steady,
    "sola": recipe_sola,
    "structure": recipe_structure,
    "exponents": recipe_exponents,
}


# ---------------------------------------------------------------- artifacts


@dataclass(frozen=True)
class RunArtifacts:
    directory: Path
    reports: tuple[BoundCheckReport, ...]
    files: tuple[Path, ...]
    manifest: Path

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, str):
        return v
    return format(float(v), ".17g")


def write_report_csv(reports, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for r in reports:
            row = r.row()
            writer.writerow([_fmt(row[c]) for c in REPORT_COLUMNS])
    return path


def read_report_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _plot(report: BoundCheckReport, path: Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "anisodecay"
    t, v = report.curve
    fig, ax = plt.subplots(figsize=(5, 3.5))
    positive = (t > 0) & (v > 0)
    if positive.sum() >= 2:
        ax.loglog(t[positive], v[positive], "o-", ms=2, label="measured")
        if report.details.get("scale") and np.isfinite(report.expected_exponent):
            ax.loglog(t[positive], report.envelope(t[positive]), "--", label="fitted bound")
    else:
        ax.plot(t, v, "o-", ms=2, label="measured")
    ax.set_title(f"{report.name} ({'pass' if report.passed else 'FAIL'})")
    ax.set_xlabel("t")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _versions() -> dict:
    import matplotlib
    import scipy

    return {
        "anisodecay": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "matplotlib": matplotlib.__version__,
    }


def run_experiment(cfg: ExperimentConfig, out: str | os.PathLike | None = None) -> RunArtifacts:
    """Run one recipe and write norm logs, report CSV, plots and manifest to ``out``."""
    directory = Path(out or cfg.output or os.environ.get(OUT_ENV) or "anisodecay-out")
    start = time.perf_counter()
    result = RECIPE_FUNCS[cfg.experiment](cfg)
    wall = time.perf_counter() - start
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {directory}: {exc}") from exc
    files: list[Path] = []
    for label, traj in result.trajectories.items():
        files.append(write_norm_log(traj.norm_log, directory / f"norms_{label}.csv"))
    files.append(write_report_csv(result.reports, directory / "report.csv"))
    for i, rep in enumerate(result.reports):
        if rep.curve is not None and len(rep.curve[0]) >= 2:
            files.append(_plot(rep, directory / f"plot_{i:02d}_{rep.name}.svg"))
    manifest = {
        "experiment": cfg.experiment,
        "config_hash": cfg.config_hash,
        "config": dict(sorted(cfg.values.items())),
        "seed": cfg.seed,
        "versions": _versions(),
        "wall_time_s": wall,
        "passed": all(r.passed for r in result.reports),
        "artifacts": {p.name: _sha256(p) for p in files},
    }
    mpath = directory / "manifest.json"
    mpath.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return RunArtifacts(directory, tuple(result.reports), tuple(files), mpath)


def verify_manifest(directory) -> list[str]:
    """Names of artifacts whose hash no longer matches the manifest."""
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    bad = []
    for name, digest in manifest["artifacts"].items():
        p = directory / name
        if not p.exists() or _sha256(p) != digest:
            bad.append(name)
    return bad


# ---------------------------------------------------------------- sweep

SWEEP_COLUMNS = ("config", "config_hash") + REPORT_COLUMNS + ("error",)


def _sweep_one(args):
    path, out_root = args
    try:
        cfg = load_config(path)
        art = run_experiment(cfg, Path(out_root) / Path(path).stem)
        return [(str(Path(path).name), cfg.config_hash, r.row(), "") for r in art.reports]
    except Exception as exc:  # recorded per row; the sweep goes on
        return [(str(Path(path).name), "", None, f"{type(exc).__name__}: {exc}")]


def sweep(config_paths, workers: int = 1, out_root=None) -> list[dict]:
    """Run every config (at most ``workers`` at a time); rows follow config order."""
    if workers < 1:
        raise ValueError("workers must be >= 1")
    out_root = Path(out_root or os.environ.get(OUT_ENV) or "anisodecay-out")
    jobs = [(str(p), str(out_root)) for p in config_paths]
    if workers == 1 or len(jobs) <= 1:
        results = [_sweep_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_one, jobs))
    table = []
    for rows in results:
        for name, digest, row, err in rows:
            entry = {"config": name, "config_hash": digest, "error": err}
            for c in REPORT_COLUMNS:
                entry[c] = "" if row is None else _fmt(row[c])
            table.append(entry)
    return table


def write_sweep_csv(table, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        writer.writeheader()
        writer.writerows(table)
    return path


# ---------------------------------------------------------------- inspect


def inspect_artifact(path) -> tuple[str, bool]:
    """Human-readable summary of an artifact and whether it is intact/passing."""
    path = Path(path)
    if path.is_dir() and (path / "manifest.json").exists():
        manifest = json.loads((path / "manifest.json").read_text(encoding="utf-8"))
        bad = verify_manifest(path)
        lines = [f"experiment {manifest['experiment']}  config {manifest['config_hash'][:12]}",
                 f"passed {manifest['passed']}  wall {manifest['wall_time_s']:.2f}s"]
        if (path / "report.csv").exists():
            for r in read_report_csv(path / "report.csv"):
                r = {c: r.get(c) or "" for c in REPORT_COLUMNS}
                lines.append(f"  {r['estimate']:<12} passed={r['passed']:<5} C={r['fitted_C']} h={r['fitted_h']}")
        lines.append("hashes ok" if not bad else "hash mismatch: " + ", ".join(bad))
        return "\n".join(lines), not bad and bool(manifest["passed"])
    if path.suffix == ".csv":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        header = rows[0] if rows else []
        text = f"{path.name}: {len(rows) - 1} rows, columns {', '.join(header)}"
        if tuple(header) == REPORT_COLUMNS:
            ok = all(r[6] == "true" for r in rows[1:])
            return text, ok
        return text, True
    from .io import read_field

    f = read_field(path)
    return (f"{path.name}: grid {f.grid.resolution} extents {f.grid.extents} "
            f"sup {norm(f, math.inf):.6g} L1 {norm(f, 1):.6g}"), True


# ---------------------------------------------------------------- entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anisodecay", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment config")
    run.add_argument("--config", required=True)
    run.add_argument("--out", default=None, help=f"output directory (default: config 'output', ${OUT_ENV})")
    sw = sub.add_parser("sweep", help="run every config in a directory")
    sw.add_argument("--config-dir", required=True)
    sw.add_argument("--workers", type=int, default=1)
    sw.add_argument("--out", default=None)
    ins = sub.add_parser("inspect", help="summarize an artifact directory or file")
    ins.add_argument("--artifact", required=True)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            cfg = load_config(args.config)
            art = run_experiment(cfg, args.out)
            for r in art.reports:
                print(f"{r.name:<12} {'passed' if r.passed else 'FAILED'}  margin={r.margin:.4g}")
            print(f"artifacts in {art.directory}")
            return 0 if art.passed else 1
        if args.command == "sweep":
            paths = sorted(p for p in Path(args.config_dir).iterdir() if p.suffix in (".cfg", ".conf", ".txt"))
            if not paths:
                print(f"no configs in {args.config_dir}", file=sys.stderr)
                return 2
            out_root = Path(args.out or os.environ.get(OUT_ENV) or "anisodecay-out")
            table = sweep(paths, args.workers, out_root)
            dest = write_sweep_csv(table, out_root / "sweep_report.csv")
            print(f"{len(table)} rows -> {dest}")
            ok = all(r["error"] == "" and r["passed"] == "true" for r in table)
            return 0 if ok else 1
        text, ok = inspect_artifact(args.artifact)
        print(text)
        return 0 if ok else 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StepFailure as exc:
        print(f"solver failure at t={exc.time}: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
