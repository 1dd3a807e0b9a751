"""Exponent algebra for the anisotropic problem.

Everything here is a pure function of the exponent vector ``p`` and the
abstract norm indices of the decay machinery.  When every input is an
``int`` or a :class:`fractions.Fraction` the arithmetic is carried out in
exact rationals, so closed-form identities can be checked with ``==``.
Any float input switches the whole computation to double precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Integral, Rational, Real
from typing import Sequence

__all__ = [
    "InvalidExponentError",
    "UndefinedCriticalExponentError",
    "InvalidIndicesError",
    "ExponentVector",
    "AdmissibilityReport",
    "DecayProfile",
    "harmonic_mean",
    "check_admissible",
    "sobolev_critical",
    "decay_profile",
    "pde_decay_profile",
    "algebraic_exponents",
    "universal_exponent",
]

# relative tolerance used to classify b == r when working in floats
REGIME_RTOL = 1e-12


class InvalidExponentError(ValueError):
    pass


class UndefinedCriticalExponentError(ValueError):
    pass


class InvalidIndicesError(ValueError):
    pass


def _is_exact(x) -> bool:
    return isinstance(x, Rational) and not isinstance(x, bool)


def _coerce(values):
    """Return values as Fractions if all are exact, else as floats."""
    values = list(values)
    if all(_is_exact(v) for v in values):
        return [Fraction(v) for v in values]
    return [float(v) for v in values]


def _validate_p(p: Sequence[Real], n_dims: int | None = None) -> list:
    p = list(p)
    if not p:
        raise InvalidExponentError("exponent list is empty")
    if n_dims is None:
        n_dims = len(p)
    if not isinstance(n_dims, Integral) or n_dims < 2:
        raise InvalidExponentError(f"n_dims must be an integer >= 2, got {n_dims!r}")
    if len(p) != n_dims:
        raise InvalidExponentError(f"expected {n_dims} exponents, got {len(p)}")
    for pi in p:
        if not isinstance(pi, Real) or isinstance(pi, bool) or not math.isfinite(float(pi)):
            raise InvalidExponentError(f"exponent {pi!r} is not a finite real number")
        if pi <= 1:
            raise InvalidExponentError(f"every exponent must exceed 1, got {pi!r}")
    return _coerce(p)


def harmonic_mean(p: Sequence[Real], n_dims: int | None = None):
    """Harmonic mean ``N / sum(1/p_i)`` of the exponents.

    Exact (``Fraction``) for rational input.  ``p_bar >= N`` is allowed here;
    only the Sobolev exponent refuses it.
    """
    p = _validate_p(p, n_dims)
    return len(p) / sum(1 / pi for pi in p)


def sobolev_critical(p_bar: Real, n_dims: int):
    """Critical Sobolev exponent ``N p_bar / (N - p_bar)``."""
    if not isinstance(n_dims, Integral) or n_dims < 1:
        raise InvalidExponentError(f"n_dims must be a positive integer, got {n_dims!r}")
    (pb,) = _coerce([p_bar])
    if pb <= 1:
        raise InvalidExponentError(f"p_bar must exceed 1, got {p_bar!r}")
    if pb >= n_dims:
        raise UndefinedCriticalExponentError(
            f"critical exponent undefined for p_bar={p_bar} >= N={n_dims}"
        )
    return n_dims * pb / (n_dims - pb)


@dataclass(frozen=True)
class ExponentVector:
    """The exponents ``p_i`` together with their derived quantities.

    ``p_star`` is ``None`` when ``p_bar >= N``; ``p_infty`` then falls back
    to ``math.inf`` (no finite critical exponent).
    """

    p: tuple
    n_dims: int = field(init=False)
    p_bar: Real = field(init=False)
    p_star: Real | None = field(init=False)
    p_max: Real = field(init=False)
    p_min: Real = field(init=False)
    p_infty: Real = field(init=False)

    def __post_init__(self):
        p = tuple(_validate_p(self.p))
        object.__setattr__(self, "p", p)
        n = len(p)
        p_bar = harmonic_mean(p, n)
        try:
            p_star = sobolev_critical(p_bar, n)
        except UndefinedCriticalExponentError:
            p_star = None
        object.__setattr__(self, "n_dims", n)
        object.__setattr__(self, "p_bar", p_bar)
        object.__setattr__(self, "p_star", p_star)
        object.__setattr__(self, "p_max", max(p))
        object.__setattr__(self, "p_min", min(p))
        object.__setattr__(self, "p_infty", math.inf if p_star is None else max(p_star, max(p)))

    @classmethod
    def of(cls, *p) -> "ExponentVector":
        if len(p) == 1 and not isinstance(p[0], Real):
            p = tuple(p[0])
        return cls(p=tuple(p))

    def as_floats(self) -> tuple[float, ...]:
        return tuple(float(pi) for pi in self.p)

    def __len__(self):
        return self.n_dims


@dataclass(frozen=True)
class AdmissibilityReport:
    lower_ok: tuple[bool, ...]
    upper_ok: tuple[bool, ...]
    subcritical_ok: bool
    model_monotone_ok: bool
    lower_bound: Real
    upper_bound: Real
    p_bar: Real

    @property
    def admissible(self) -> bool:
        return all(self.lower_ok) and all(self.upper_ok) and self.subcritical_ok


def check_admissible(p: Sequence[Real], n_dims: int | None = None) -> AdmissibilityReport:
    """Evaluate ``2 - 1/(N+1) < p_i < p_bar (N+1)/N`` and ``p_bar < N``.

    ``model_monotone_ok`` records ``min p_i >= 2``, the condition under which
    the model flux is strongly monotone; it does not enter ``admissible``.
    """
    p = _validate_p(p, n_dims)
    n = len(p)
    p_bar = harmonic_mean(p, n)
    lower = 2 - Fraction(1, n + 1) if isinstance(p_bar, Fraction) else 2 - 1 / (n + 1)
    upper = p_bar * (n + 1) / n
    return AdmissibilityReport(
        lower_ok=tuple(bool(pi > lower) for pi in p),
        upper_ok=tuple(bool(pi < upper) for pi in p),
        subcritical_ok=bool(p_bar < n),
        model_monotone_ok=bool(min(p) >= 2),
        lower_bound=lower,
        upper_bound=upper,
        p_bar=p_bar,
    )


@dataclass(frozen=True)
class DecayProfile:
    r: Real
    r0: Real
    q: Real
    b: Real
    h0: Real
    h1: Real
    regime: str
    kappa: Real
    c1: Real
    c2: Real
    domain_measure: Real
    h2: Real | None = None
    sigma: Real | None = None


def _over_q(x, q):
    # x / q with q possibly infinite
    return 0 if math.isinf(q) else x / q


def decay_profile(r, r0, q, b, domain_measure=1, c1=1, c2=1, kappa=None) -> DecayProfile:
    """Exponents of the abstract L^r0 -> L^inf decay estimate.

    ``h1 = 1/(b - (r - r0) - r0 b/q)`` and ``h0 = h1 (1 - b/q) r0``.  The
    regime follows the sign of ``b - r``: exponential for ``b == r`` (with
    rate ``sigma``), universal for ``b > r`` (with ``h2 = 1/(b - r)``).
    ``q`` may be ``math.inf``.
    """
    q_inf = isinstance(q, Real) and math.isinf(float(q))
    finite = [r, r0, b, domain_measure, c1, c2] + ([] if q_inf else [q])
    if kappa is not None:
        finite.append(kappa)
    for v in finite:
        if not isinstance(v, Real) or isinstance(v, bool) or not math.isfinite(float(v)):
            raise InvalidIndicesError(f"index {v!r} is not a finite real number")
    vals = _coerce(finite)
    r, r0, b, domain_measure, c1, c2 = vals[:6]
    rest = vals[6:]
    q = math.inf if q_inf else rest.pop(0)
    if kappa is not None:
        kappa = rest.pop(0)

    if not (1 <= r0 < r < q):
        raise InvalidIndicesError(f"need 1 <= r0 < r < q, got r0={r0}, r={r}, q={q}")
    b0 = (r - r0) / (1 - _over_q(r0, q))
    if not (b0 < b < q):
        raise InvalidIndicesError(f"need b0 < b < q with b0={b0}, got b={b}")
    if c1 <= 0 or c2 <= 0 or domain_measure <= 0:
        raise InvalidIndicesError("c1, c2 and the domain measure must be positive")

    h1 = 1 / (b - (r - r0) - _over_q(r0 * b, q))
    h0 = h1 * (1 - _over_q(b, q)) * r0

    kappa_hi = 1 - r0 / r
    if kappa is None:
        kappa = kappa_hi / 2
    elif not (0 < kappa < kappa_hi):
        raise InvalidIndicesError(f"kappa must lie in (0, {kappa_hi}), got {kappa}")

    exact = isinstance(h1, Fraction)
    gap = b - r
    if exact:
        sign = (gap > 0) - (gap < 0)
    else:
        sign = 0 if abs(gap) <= REGIME_RTOL * max(abs(b), abs(r)) else (1 if gap > 0 else -1)

    h2 = sigma = None
    if sign == 0:
        regime = "exponential"
        measure_pow = domain_measure ** (1 - _over_q(r, q))
        sigma = c1 * kappa / (4 * (r - r0) * measure_pow)
    elif sign > 0:
        regime = "universal"
        h2 = 1 / gap
    else:
        regime = "algebraic"
    return DecayProfile(
        r=r, r0=r0, q=q, b=b, h0=h0, h1=h1, regime=regime, kappa=kappa,
        c1=c1, c2=c2, domain_measure=domain_measure, h2=h2, sigma=sigma,
    )


def pde_decay_profile(exponents: ExponentVector, domain_measure=1, c1=1, c2=1) -> DecayProfile:
    """Profile for differences of solutions: r=2, r0=1, q=p_bar*, b=p_bar.

    Without a finite Sobolev exponent (``p_bar >= N``) ``q`` is taken as inf.
    """
    q = math.inf if exponents.p_star is None else exponents.p_star
    return decay_profile(2, 1, q, exponents.p_bar, domain_measure, c1, c2)


def algebraic_exponents(exponents: ExponentVector):
    """Closed-form ``(data exponent, time exponent)`` of the L^1 -> L^inf bound.

    ``||u-v||_inf <= C ||u0-v0||_1^{p_bar/D} / t^{N/D}`` with
    ``D = N (p_bar - 2) + p_bar``.
    """
    n, pb = exponents.n_dims, exponents.p_bar
    denom = n * (pb - 2) + pb
    if denom <= 0:
        raise InvalidExponentError(f"p_bar={pb} too small: N(p_bar-2)+p_bar <= 0")
    return pb / denom, n / denom


def universal_exponent(p_bar: Real):
    """Time exponent ``1/(p_bar - 2)`` of the data-independent bound."""
    if p_bar <= 2:
        raise InvalidExponentError("the universal bound needs p_bar > 2")
    return 1 / (p_bar - 2)
