"""Scale functions, fixation probabilities, expected absorption times,
boundary classification and the Sibuya law.

Fixation-probability entry points take ``y``, the initial frequency of the
*inefficient* type; the efficient frequency is ``x = 1 - y``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from scipy import special

from .core import (
    DEFAULT_QUAD,
    InvalidArgument,
    QuadratureFailure,
    QuadratureSpec,
    adaptive_quadrature,
    as_fraction,
)
from .diffusion import DiffusionSpec, M2Case, Variant

__all__ = [
    "InfiniteExpectation",
    "UnresolvedCase",
    "Accessibility",
    "BoundaryReport",
    "SibuyaDist",
    "scale_m1",
    "fixation_prob_inefficient_m1",
    "fixation_prob_classical",
    "expected_fixation_time_m1_neutral",
    "greens_m1_neutral",
    "expected_fixation_time_numeric",
    "fixation_prob_inefficient_m2_case_i",
    "scale_density_log",
    "scale_numeric",
    "fixation_prob_inefficient_numeric",
    "boundary_classification",
    "sibuya_pmf",
    "x_infinity_law",
    "drift_root_case_i",
    "fixation_curve_rows",
    "FIXATION_CSV_HEADER",
]

BRANCH_TOL = 1e-12


class InfiniteExpectation(ArithmeticError):
    """The expected absorption time is infinite for these parameters."""


class UnresolvedCase(ArithmeticError):
    """No result is known for this parameter combination."""


def _same(kappa, two_alpha) -> bool:
    # exact when both sides are rational, tolerance otherwise
    if isinstance(kappa, Fraction) and isinstance(two_alpha, (Fraction, int)):
        return kappa == two_alpha
    return abs(float(kappa) - float(two_alpha)) < BRANCH_TOL


def _check_unit(name, v):
    if not 0 <= v <= 1:
        raise InvalidArgument(f"{name} must lie in [0, 1]")


# --------------------------------------------------------------------------
# M1 closed forms


def fixation_prob_classical(alpha: float, y: float) -> float:
    """Classical Wright-Fisher probability that the favoured type 1 fixes
    from frequency ``y`` with selection ``alpha`` against type 0."""
    _check_unit("y", y)
    if alpha == 0:
        return float(y)
    return math.expm1(-2 * alpha * y) / math.expm1(-2 * alpha)


def _m1_scale_unnormalised(kappa: float, alpha: float, x: float, log_branch: bool) -> float:
    # S(x) up to a positive factor, S(0) = 0; increasing in x
    e = 1.0 - 2.0 * alpha / kappa
    if kappa * x >= 1.0:
        # kappa = 1 at x = 1, reached only with e > 0
        return 1.0 / e
    lg = math.log1p(-kappa * x)
    if log_branch:
        return -lg
    return -math.expm1(e * lg) / e


def scale_m1(kappa, alpha: float, x: float) -> float:
    """Normalised scale function of the rule-M1 diffusion (``S(0)=0``,
    ``S(1)=1``)."""
    _check_unit("x", x)
    if alpha < 0:
        raise InvalidArgument("alpha must be non-negative")
    k = float(kappa)
    if not 0 <= k <= 1:
        raise InvalidArgument("kappa must lie in [0, 1]")
    if k == 0:
        if alpha == 0:
            return float(x)
        return math.expm1(2 * alpha * x) / math.expm1(2 * alpha)
    if k == 1 and 2 * alpha >= 1:
        # S(1) is infinite: the normalised scale vanishes on [0, 1)
        return 1.0 if x == 1 else 0.0
    branch = _same(kappa, 2 * alpha)
    return _m1_scale_unnormalised(k, alpha, x, branch) / _m1_scale_unnormalised(k, alpha, 1.0, branch)


def fixation_prob_inefficient_m1(kappa, alpha: float, y: float) -> float:
    """Probability that the inefficient type fixes, rule M1, from ``y``."""
    _check_unit("y", y)
    k = float(kappa)
    if k == 0:
        return fixation_prob_classical(alpha, y)
    if not 0 < k < 1:
        raise InvalidArgument("kappa must lie in [0, 1); for kappa = 1 see x_infinity_law")
    return 1.0 - scale_m1(kappa, alpha, 1.0 - y)


def expected_fixation_time_m1_neutral(kappa, x: float) -> float:
    """Closed-form mean absorption time of the neutral rule-M1 diffusion
    started at efficient frequency ``x`` (time in units of N generations)."""
    _check_unit("x", x)
    k = float(kappa)
    if k >= 1:
        raise InfiniteExpectation("absorption time has infinite mean at kappa = 1")
    if k < 0:
        raise InvalidArgument("kappa must be non-negative")
    z = 1.0 - x
    lk = math.log1p(-k * x)
    t1 = 2 * x * (lk - math.log1p(-k)) - 2 * special.xlogy(x, x)
    t2 = -(2.0 / (1.0 - k)) * (special.xlogy(z, z) - z * lk)
    return float(t1 + t2)


def greens_m1_neutral(kappa, x: float, u: float) -> float:
    """Green's function of the neutral rule-M1 diffusion."""
    if not 0 < u < 1:
        raise InvalidArgument("u must lie strictly inside (0, 1)")
    if not 0 < x < 1:
        raise InvalidArgument("x must lie strictly inside (0, 1)")
    k = float(kappa)
    if u > x:
        return 2 * x / (u * (1 - k * u))
    return 2 * (1 - x) / ((1 - u) * (1 - k * u))


# --------------------------------------------------------------------------
# generic scale machinery


def _iw(spec: DiffusionSpec, u: float) -> float:
    """Integral over [0, u] of the efficiency weight sum."""
    w0, w = spec.weights()
    total = w0 * u
    p = u
    for i in range(1, w.size):
        p *= u
        if w[i]:
            total += w[i] * (u - p / (i + 1))
    return total


def _log_one_minus_ku(kappa: float, u: float, d: Optional[float] = None) -> float:
    # log(1 - kappa u) with 1 - kappa u formed as (1-kappa) + kappa d near u = 1
    if d is not None and u > 0.5:
        return math.log((1.0 - kappa) + kappa * d)
    return math.log1p(-kappa * u)


def scale_density_log(spec: DiffusionSpec, u: float, d: Optional[float] = None) -> float:
    """``log s(u)`` with ``s = exp(-int_0^u 2 mu / sigma^2)``.

    ``mu / sigma^2`` reduces to ``-alpha/(1 - kappa u) + W(u)`` where ``W``
    is the efficiency weight sum, so both pieces integrate in closed form.
    Pass ``d = 1 - u`` when it is known more accurately than ``1 - u``.
    """
    k, a = spec.kappa, spec.alpha
    if k == 0:
        la = 2 * a * u
    elif a == 0:
        la = 0.0
    else:
        la = -(2 * a / k) * _log_one_minus_ku(k, u, d)
    return la - 2 * _iw(spec, u)


def _s(spec, u, d=None):
    return math.exp(scale_density_log(spec, u, d))


def _quad(f, a, b, spec: QuadratureSpec):
    return adaptive_quadrature(f, a, b, spec)[0]


def scale_numeric(spec: DiffusionSpec, x: float, quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """Normalised scale function by quadrature of the scale density."""
    _check_unit("x", x)
    if spec.kappa >= 1:
        raise InvalidArgument("scale_numeric needs kappa < 1")
    if x == 0:
        return 0.0
    if x == 1:
        return 1.0
    f = lambda u: _s(spec, u)
    left = _quad(f, 0.0, x, quad)
    right = _quad(f, x, 1.0, quad)
    return left / (left + right)


def fixation_prob_inefficient_numeric(spec: DiffusionSpec, y: float, quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """``(S(1) - S(1-y)) / (S(1) - S(0))`` with ``S`` from :func:`scale_numeric`.

    The two pieces are integrated separately so that small probabilities
    keep their relative accuracy.
    """
    _check_unit("y", y)
    if spec.kappa >= 1:
        raise InvalidArgument("needs kappa < 1")
    x = 1.0 - y
    if y == 0:
        return 0.0
    if y == 1:
        return 1.0
    f = lambda u: _s(spec, u)
    left = _quad(f, 0.0, x, quad)
    right = _quad(f, x, 1.0, quad)
    return right / (left + right)


def fixation_prob_inefficient_m2_case_i(kappa, alpha: float, y: float, quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """Inefficient fixation probability for rule M2 with ``0 < kappa < 1/2``."""
    _check_unit("y", y)
    if isinstance(kappa, float):
        raise InvalidArgument("rule M2 needs an exact rational kappa")
    k = float(as_fraction(kappa))
    if not 0 < k < 0.5:
        raise InvalidArgument("CaseI needs 0 < kappa < 1/2")
    if y == 0:
        return 0.0
    if y == 1:
        return 1.0
    e = -2 * alpha / k
    f = lambda u: math.exp(-2 * k * u + e * math.log1p(-k * u))
    num = _quad(f, 1.0 - y, 1.0, quad)
    rest = _quad(f, 0.0, 1.0 - y, quad)
    return num / (num + rest)


def expected_fixation_time_numeric(spec: DiffusionSpec, x: float, quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """Mean absorption time ``int_0^1 G(x, u) du`` from the general
    two-branch Green's function built on the scale function.

    ``S(u) - S(0)`` and ``S(1) - S(u)`` are integrated directly (not as
    differences) so the ``u(1-u)`` factor of ``sigma^2`` cancels cleanly.
    """
    _check_unit("x", x)
    if spec.kappa >= 1:
        raise InfiniteExpectation("absorption time has infinite mean at kappa = 1")
    if x in (0.0, 1.0):
        return 0.0
    inner = QuadratureSpec(1e-14, 1e-12, quad.max_subdivisions)
    f = lambda u: _s(spec, u)
    s_x = _quad(f, 0.0, x, inner)
    s_tail = _quad(f, x, 1.0, inner)
    s_one = s_x + s_tail
    k = spec.kappa

    def g_below(u):
        # 0 < u < x
        su = _quad(f, 0.0, u, inner)
        return 2.0 * s_tail * su / (s_one * _s(spec, u) * u * (1 - u) * (1 - k * u))

    def g_above(u):
        tail = _quad(f, u, 1.0, inner)
        return 2.0 * s_x * tail / (s_one * _s(spec, u) * u * (1 - u) * (1 - k * u))

    return _quad(g_below, 0.0, x, quad) + _quad(g_above, x, 1.0, quad)


# --------------------------------------------------------------------------
# boundary classification


class Accessibility(Enum):
    ACCESSIBLE = "Accessible"
    INACCESSIBLE = "Inaccessible"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class BoundaryReport:
    zero: Accessibility
    one: Accessibility
    # per-decade contributions to the integral test, outermost first
    increments_zero: tuple = ()
    increments_one: tuple = ()
    estimate_zero: float = math.nan
    estimate_one: float = math.nan


def _classify_increments(inc: list[float]) -> tuple[Accessibility, float]:
    if not inc or not all(math.isfinite(v) for v in inc):
        return Accessibility.INACCESSIBLE, math.inf
    a, b = inc[-2], inc[-1]
    if a <= 0:
        return Accessibility.INCONCLUSIVE, math.nan
    r = b / a
    if r < 0.5:
        # geometric tail extrapolation of the remaining decades
        return Accessibility.ACCESSIBLE, sum(inc) + b * r / (1 - r)
    if r > 0.8:
        return Accessibility.INACCESSIBLE, math.inf
    return Accessibility.INCONCLUSIVE, math.nan


def boundary_classification(
    spec: DiffusionSpec,
    eps: float = 1e-8,
    quad: QuadratureSpec = QuadratureSpec(1e-13, 1e-10, 10_000),
) -> BoundaryReport:
    """Decide whether 0 and 1 can be reached, by the integral test
    ``int m(u) (S(u) - S(0)) du < inf`` near 0 (and its mirror near 1).

    The integral is cut into decades of distance to the boundary, down to
    ``eps``, each integrated in the log-distance variable (``u = e^{-v}``
    near 0, ``u = 1 - e^{-v}`` near 1). A decade ratio below 0.5 signals
    convergence, above 0.8 divergence; anything between is reported as
    inconclusive.
    """
    k = spec.kappa
    decades = int(round(-math.log10(eps)))

    def m(u, d):
        # speed density 2 / (sigma^2 s)
        one_k = (1.0 - k) + k * d if u > 0.5 else 1.0 - k * u
        return 2.0 / (u * d * one_k * _s(spec, u, d))

    # near 0: S(u) - S(0) = int_0^u s
    def near_zero(v):
        u = math.exp(-v)
        head = _quad(lambda t: _s(spec, t), 0.0, u, quad)
        return m(u, 1.0 - u) * head * u

    def near_one(v):
        d = math.exp(-v)
        u = 1.0 - d
        tail = _quad(lambda t: _s(spec, 1.0 - t, t), 0.0, d, quad)
        return m(u, d) * tail * d

    out = []
    for fn in (near_zero, near_one):
        inc = []
        lo = math.log(2.0)
        for j in range(1, decades + 1):
            hi = j * math.log(10.0)
            try:
                inc.append(_quad(fn, lo, hi, quad))
            except QuadratureFailure:
                inc.append(math.inf)
                break
            lo = hi
        out.append(inc)
    (acc0, est0), (acc1, est1) = (_classify_increments(i) for i in out)
    return BoundaryReport(acc0, acc1, tuple(out[0]), tuple(out[1]), est0, est1)


# --------------------------------------------------------------------------
# Sibuya law and kappa = 1 limits


@dataclass(frozen=True)
class SibuyaDist:
    """Law on ``{1, 2, ...}`` with pgf ``1 - (1 - s)**gamma``."""

    gamma: float

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise InvalidArgument("gamma must lie in (0, 1]")

    @classmethod
    def from_alpha(cls, alpha: float) -> "SibuyaDist":
        if not 0 <= alpha < 0.5:
            raise InvalidArgument("needs 0 <= alpha < 1/2")
        return cls(1.0 - 2.0 * alpha)

    def pmf(self, k):
        """Vectorised pmf; ``p_k = gamma Gamma(k - gamma) / (Gamma(1 - gamma) k!)``."""
        k = np.asarray(k)
        if np.any(k < 1):
            raise InvalidArgument("support starts at 1")
        g = self.gamma
        if g == 1:
            return np.where(k == 1, 1.0, 0.0)
        logp = math.log(g) + special.gammaln(k - g) - special.gammaln(1 - g) - special.gammaln(k + 1)
        return np.exp(logp)

    def pmf_recursive(self, kmax: int) -> np.ndarray:
        """``p_1 .. p_kmax`` by the ratio recursion."""
        p = np.empty(kmax)
        p[0] = self.gamma
        for k in range(1, kmax):
            p[k] = p[k - 1] * (k - self.gamma) / (k + 1)
        return p

    def survival(self, k) -> np.ndarray:
        """``P(K > k)``."""
        k = np.asarray(k, dtype=float)
        g = self.gamma
        if g == 1:
            return np.where(k >= 1, 0.0, 1.0)
        # P(K > k) = Gamma(k + 1 - g) / (Gamma(1 - g) Gamma(k + 1))
        return np.exp(special.gammaln(k + 1 - g) - special.gammaln(1 - g) - special.gammaln(k + 1))

    def pgf(self, s):
        return 1.0 - (1.0 - np.asarray(s, dtype=float)) ** self.gamma

    def sample(self, size, rng) -> np.ndarray:
        """Geometric law with a Beta(gamma, 1 - gamma) success probability."""
        if self.gamma == 1:
            return np.ones(size, np.int64)
        w = rng.beta(self.gamma, 1.0 - self.gamma, size)
        return rng.geometric(np.maximum(w, np.finfo(float).tiny))


def sibuya_pmf(dist: SibuyaDist, k: int) -> float:
    if k < 1:
        raise InvalidArgument("k must be a positive integer")
    return float(dist.pmf(k))


def x_infinity_law(alpha: float, x: float) -> float:
    """``P(X_inf = 1)`` for the rule-M1 diffusion with ``kappa = 1``."""
    _check_unit("x", x)
    if alpha < 0:
        raise InvalidArgument("alpha must be non-negative")
    if alpha == 0.5:
        raise UnresolvedCase("alpha = 1/2 at kappa = 1 has no known limit law")
    if alpha > 0.5:
        return 0.0
    return 1.0 - (1.0 - x) ** (1.0 - 2.0 * alpha)


def drift_root_case_i(kappa, alpha: float) -> Optional[float]:
    """Interior zero of ``-alpha + kappa (1 - kappa x)``, if any."""
    k = float(kappa)
    if k <= 0:
        return None
    r = (k - alpha) / (k * k)
    if 0 < r < 1:
        return r
    return None


# --------------------------------------------------------------------------
# fixation curves

FIXATION_CSV_HEADER = ("kappa", "alpha", "y", "p_fix", "method")


def fixation_curve_rows(spec: DiffusionSpec, ys: Sequence[float], method: str = "closed_form"):
    """Rows ``(kappa, alpha, y, p_fix, method)`` for the inefficient type.

    ``closed_form`` exists for M1 and for M2 CaseI (the latter evaluated by
    its explicit one-dimensional integral); ``quadrature`` works for every
    variant with ``kappa < 1``.
    """
    kappa_txt = str(spec.exact_kappa) if spec.exact_kappa is not None else repr(spec.kappa)
    for y in ys:
        y = float(y)
        if method == "closed_form":
            if spec.variant is Variant.M1:
                p = fixation_prob_inefficient_m1(spec.exact_kappa if spec.exact_kappa is not None else spec.kappa, spec.alpha, y)
            elif spec.case is not None and spec.case.case_tag is M2Case.CASE_I:
                p = fixation_prob_inefficient_m2_case_i(spec.exact_kappa, spec.alpha, y)
            else:
                raise InvalidArgument("no closed form for this variant; use method='quadrature'")
        elif method == "quadrature":
            p = fixation_prob_inefficient_numeric(spec, y)
        else:
            raise InvalidArgument(f"unknown method {method!r}")
        yield kappa_txt, repr(spec.alpha), repr(y), repr(float(p)), method
