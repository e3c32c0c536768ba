"""Limiting frequency diffusions of the efficiency model and an
Euler-Maruyama integrator for them.

Every variant shares the noise coefficient ``sqrt(x(1-x)(1-kappa x))`` and
has a drift of the form

    (-alpha + (1 - kappa x) * (w0 + sum_i w_i (1 - x**i))) * x (1 - x)

so a variant is fully described by ``(alpha, kappa, w0, w)``. Rule M1 has no
efficiency term at all (``w0 = 0``, empty ``w``); the rule-M2 cases differ
only in their weights.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np
from numba import njit

from .core import (
    InvalidArgument,
    McSummary,
    RngSpec,
    as_fraction,
    block_sizes,
    derive_rng_stream,
    parallel_map,
)

__all__ = [
    "Variant",
    "M2Case",
    "M2CaseData",
    "DiffusionSpec",
    "DiffusionPath",
    "Boundary",
    "BoundaryInaccessible",
    "AbsorptionStudy",
    "classify_m2_case",
    "drift",
    "noise_coef",
    "generator_apply",
    "em_step",
    "simulate_path",
    "absorption_trial",
    "absorption_study",
    "observe_batch",
    "coupled_absorption_times",
    "coupled_values",
    "ONE_CEILING",
]

# largest value a kappa = 1 path may take; boundary 1 is never reached there
ONE_CEILING = 1.0 - 1e-12


class Variant(Enum):
    M1 = "m1"
    M2 = "m2"


class M2Case(Enum):
    CASE_I = "CaseI"
    CASE_II = "CaseII"
    CASE_III = "CaseIII"


class Boundary(Enum):
    ZERO = 0
    ONE = 1


class BoundaryInaccessible(InvalidArgument):
    """Absorption at 1 was requested where 1 cannot be reached."""


@dataclass(frozen=True)
class M2CaseData:
    case_tag: M2Case
    a: int
    b: int
    m: Optional[int] = None
    c: tuple = ()

    @property
    def kappa(self) -> Fraction:
        if self.case_tag is M2Case.CASE_I:
            return Fraction(self.a, self.b)
        return 1 - Fraction(self.a, self.b)


def classify_m2_case(kappa) -> M2CaseData:
    """Sort ``kappa = a/b`` into the three rule-M2 regimes.

    For CaseI ``(a, b)`` describe ``kappa`` itself; for CaseII and CaseIII
    they describe ``1 - kappa``. ``kappa = 1/2`` is sent to CaseII with
    ``b = 2``.
    """
    k = as_fraction(kappa)
    if not 0 < k < 1:
        raise InvalidArgument("rule M2 cases need 0 < kappa < 1")
    if k < Fraction(1, 2):
        return M2CaseData(M2Case.CASE_I, k.numerator, k.denominator)
    one_minus = 1 - k
    a, b = one_minus.numerator, one_minus.denominator
    if a == 1:
        return M2CaseData(M2Case.CASE_II, 1, b)
    m = b // a
    c = tuple([one_minus] * (m - 1) + [1 - m * one_minus])
    return M2CaseData(M2Case.CASE_III, a, b, m, c)


@dataclass(frozen=True)
class DiffusionSpec:
    """One limiting diffusion.

    Use :meth:`m1` or :meth:`m2` rather than the raw constructor. Under M2,
    ``caseii_sum_from`` selects the lower index (1 or 2) of the CaseII sum.
    """

    variant: Variant
    alpha: float
    kappa: float
    case: Optional[M2CaseData] = None
    caseii_sum_from: int = 2
    exact_kappa: Optional[Fraction] = field(default=None, compare=False)

    @classmethod
    def m1(cls, kappa, alpha: float = 0.0) -> "DiffusionSpec":
        k = as_fraction(kappa) if isinstance(kappa, (str, Fraction)) else kappa
        if not 0 <= float(k) <= 1:
            raise InvalidArgument("kappa must lie in [0, 1]")
        if alpha < 0:
            raise InvalidArgument("alpha must be non-negative")
        exact = k if isinstance(k, Fraction) else None
        return cls(Variant.M1, float(alpha), float(k), exact_kappa=exact)

    @classmethod
    def m2(cls, kappa, alpha: float = 0.0, caseii_sum_from: int = 2) -> "DiffusionSpec":
        if isinstance(kappa, float):
            raise InvalidArgument("rule M2 needs an exact rational kappa such as '2/5'")
        k = as_fraction(kappa)
        if not 0 <= k < 1:
            raise InvalidArgument("rule M2 needs 0 <= kappa < 1")
        if alpha < 0:
            raise InvalidArgument("alpha must be non-negative")
        if caseii_sum_from not in (1, 2):
            raise InvalidArgument("caseii_sum_from must be 1 or 2")
        case = classify_m2_case(k) if k > 0 else None
        return cls(Variant.M2, float(alpha), float(k), case, caseii_sum_from, exact_kappa=k)

    def weights(self) -> tuple[float, np.ndarray]:
        """``(w0, w)`` with ``w[i]`` the weight of ``1 - x**i`` (``w[0]`` unused)."""
        case = self.case
        if self.variant is Variant.M1 or case is None:
            return 0.0, np.zeros(1)
        if case.case_tag is M2Case.CASE_I:
            return self.kappa, np.zeros(1)
        if case.case_tag is M2Case.CASE_II:
            w = np.zeros(max(case.b, 1))
            w[self.caseii_sum_from:case.b] = 1.0 - self.kappa
            return 0.0, w
        w = np.zeros(case.m + 1)
        w[1:] = [float(ci) for ci in case.c]
        return 0.0, w

    def kernel_args(self):
        w0, w = self.weights()
        return float(self.alpha), float(self.kappa), float(w0), w

    def label(self) -> str:
        if self.variant is Variant.M1:
            return "M1"
        return "M2-" + (self.case.case_tag.value if self.case else "neutral")


# --------------------------------------------------------------------------
# coefficients (numba)


@njit(nogil=True, cache=True)
def _drift(x, alpha, kappa, w0, w):
    s = w0
    p = 1.0
    for i in range(1, w.size):
        p *= x
        s += w[i] * (1.0 - p)
    return (-alpha + (1.0 - kappa * x) * s) * x * (1.0 - x)


@njit(nogil=True, cache=True)
def _noise(x, kappa):
    v = x * (1.0 - x) * (1.0 - kappa * x)
    if v <= 0.0:
        return 0.0
    return math.sqrt(v)


@njit(nogil=True, cache=True)
def _step(x, sdt, dt, g, alpha, kappa, w0, w):
    y = x + _drift(x, alpha, kappa, w0, w) * dt + _noise(x, kappa) * sdt * g
    if y <= 0.0:
        return 0.0
    if kappa >= 1.0:
        if y > 1.0 - 1e-12:
            return 1.0 - 1e-12
        return y
    if y >= 1.0:
        return 1.0
    return y


@njit(nogil=True, cache=True)
def _path(x0, dt, nsteps, alpha, kappa, w0, w, rng):
    xs = np.empty(nsteps + 1)
    xs[0] = x0
    x = x0
    sdt = math.sqrt(dt)
    hit = -1
    absorbing_one = kappa < 1.0
    if x <= 0.0 or (absorbing_one and x >= 1.0):
        hit = 0
    for i in range(nsteps):
        if hit < 0:
            x = _step(x, sdt, dt, rng.standard_normal(), alpha, kappa, w0, w)
            if x == 0.0 or (absorbing_one and x == 1.0):
                hit = i + 1
        xs[i + 1] = x
    return xs, hit


@njit(nogil=True, cache=True)
def _absorb_batch(reps, x0, dt, max_steps, alpha, kappa, w0, w, rng):
    # boundary: 0 / 1, or -1 when max_steps ran out
    where = np.empty(reps, np.int8)
    steps = np.empty(reps, np.int64)
    sdt = math.sqrt(dt)
    for r in range(reps):
        x = x0
        n = 0
        while 0.0 < x < 1.0 and n < max_steps:
            x = _step(x, sdt, dt, rng.standard_normal(), alpha, kappa, w0, w)
            n += 1
        if x <= 0.0:
            where[r] = 0
        elif x >= 1.0:
            where[r] = 1
        else:
            where[r] = -1
        steps[r] = n
    return where, steps


@njit(nogil=True, cache=True)
def _observe_batch(reps, x0, dt, obs_steps, alpha, kappa, w0, w, rng):
    # value of each path at the (sorted) step indices in obs_steps
    out = np.empty((reps, obs_steps.size))
    sdt = math.sqrt(dt)
    absorbing_one = kappa < 1.0
    for r in range(reps):
        x = x0
        n = 0
        for j in range(obs_steps.size):
            target = obs_steps[j]
            while n < target:
                if x == 0.0 or (absorbing_one and x == 1.0):
                    n = target
                    break
                x = _step(x, sdt, dt, rng.standard_normal(), alpha, kappa, w0, w)
                n += 1
            out[r, j] = x
    return out


@njit(nogil=True, cache=True)
def _absorb_pair_batch(reps, x0, dt, max_steps, alpha, kappa, w0, w, rng):
    # coarse step dt driven by the sum of two fine (dt/2) Gaussian increments
    tc = np.full(reps, -1.0)
    tf = np.full(reps, -1.0)
    h = 0.5 * dt
    sh = math.sqrt(h)
    sdt = math.sqrt(dt)
    for r in range(reps):
        xc = x0
        xf = x0
        n = 0
        while n < max_steps and (tc[r] < 0.0 or tf[r] < 0.0):
            g1 = rng.standard_normal()
            g2 = rng.standard_normal()
            if tf[r] < 0.0:
                xf = _step(xf, sh, h, g1, alpha, kappa, w0, w)
                if xf <= 0.0 or xf >= 1.0:
                    tf[r] = (2 * n + 1) * h
                else:
                    xf = _step(xf, sh, h, g2, alpha, kappa, w0, w)
                    if xf <= 0.0 or xf >= 1.0:
                        tf[r] = (2 * n + 2) * h
            if tc[r] < 0.0:
                xc = _step(xc, sdt, dt, (g1 + g2) / math.sqrt(2.0), alpha, kappa, w0, w)
                if xc <= 0.0 or xc >= 1.0:
                    tc[r] = (n + 1) * dt
            n += 1
    return tc, tf


@njit(nogil=True, cache=True)
def _observe_pair_batch(reps, x0, dt, nsteps, alpha, kappa, w0, w, rng):
    # values at time nsteps*dt of coupled coarse (dt) and fine (dt/2) paths
    out = np.empty((reps, 2))
    h = 0.5 * dt
    sh = math.sqrt(h)
    sdt = math.sqrt(dt)
    for r in range(reps):
        xc = x0
        xf = x0
        for n in range(nsteps):
            g1 = rng.standard_normal()
            g2 = rng.standard_normal()
            xf = _step(xf, sh, h, g1, alpha, kappa, w0, w)
            xf = _step(xf, sh, h, g2, alpha, kappa, w0, w)
            xc = _step(xc, sdt, dt, (g1 + g2) / math.sqrt(2.0), alpha, kappa, w0, w)
        out[r, 0] = xc
        out[r, 1] = xf
    return out


# --------------------------------------------------------------------------
# pointwise API


def drift(spec: DiffusionSpec, x: float) -> float:
    alpha, kappa, w0, w = spec.kernel_args()
    return float(_drift(float(x), alpha, kappa, w0, w))


def noise_coef(spec: DiffusionSpec, x: float) -> float:
    return float(_noise(float(x), spec.kappa))


def generator_apply(spec: DiffusionSpec, f: Callable, df: Callable, d2f: Callable, x: float) -> float:
    """``A f(x) = mu(x) f'(x) + sigma(x)**2 f''(x) / 2``; ``f`` itself is
    accepted for signature symmetry but only its derivatives enter."""
    sig = noise_coef(spec, x)
    return drift(spec, x) * df(x) + 0.5 * sig * sig * d2f(x)


def em_step(spec: DiffusionSpec, x: float, dt: float, gaussian: float) -> float:
    """One Euler-Maruyama step with the boundary clamp applied."""
    if dt <= 0:
        raise InvalidArgument("dt must be positive")
    alpha, kappa, w0, w = spec.kernel_args()
    return float(_step(float(x), math.sqrt(dt), dt, float(gaussian), alpha, kappa, w0, w))


@dataclass
class DiffusionPath:
    times: np.ndarray
    values: np.ndarray
    absorbed: Optional[tuple] = None  # (Boundary, time)

    def csv_rows(self):
        for t, x in zip(self.times, self.values):
            yield repr(float(t)), repr(float(x))


def _check_x0(x0):
    if not 0 <= x0 <= 1:
        raise InvalidArgument("x0 must lie in [0, 1]")


def simulate_path(
    spec: DiffusionSpec,
    x0: float,
    dt: float = 1e-3,
    horizon: Optional[float] = None,
    rng=None,
    until_absorption: bool = False,
    max_time: float = 1e4,
) -> DiffusionPath:
    """Euler-Maruyama path on ``[0, horizon]``.

    With ``until_absorption`` the path is cut at the absorption step (or at
    ``horizon`` / ``max_time`` if that comes first).
    """
    _check_x0(x0)
    if dt <= 0:
        raise InvalidArgument("dt must be positive")
    if horizon is None and not until_absorption:
        raise InvalidArgument("give a horizon or ask for until_absorption")
    if rng is None:
        raise InvalidArgument("an rng stream is required")
    if spec.kappa >= 1 and x0 >= 1:
        raise BoundaryInaccessible("x0 = 1 is outside the state space when kappa = 1")
    alpha, kappa, w0, w = spec.kernel_args()
    x0 = min(float(x0), ONE_CEILING) if kappa >= 1 else float(x0)
    t_end = horizon if horizon is not None else max_time
    nsteps = int(round(t_end / dt))
    if not until_absorption:
        xs, hit = _path(x0, dt, nsteps, alpha, kappa, w0, w, rng)
    else:
        # grow in chunks so an early absorption does not allocate the full horizon
        chunks = []
        done = 0
        hit = -1
        x = x0
        chunk = min(nsteps, 1 << 16)
        while done < nsteps:
            n = min(chunk, nsteps - done)
            xs_c, h = _path(x, dt, n, alpha, kappa, w0, w, rng)
            chunks.append(xs_c if not chunks else xs_c[1:])
            if h >= 0:
                hit = done + h
                break
            x = float(xs_c[-1])
            done += n
        xs = np.concatenate(chunks)
        if hit >= 0:
            xs = xs[: hit + 1]
    times = np.arange(xs.size) * dt
    absorbed = None
    if hit >= 0:
        absorbed = (Boundary.ONE if xs[hit] >= 1.0 else Boundary.ZERO, hit * dt)
    return DiffusionPath(times, xs, absorbed)


def absorption_trial(spec: DiffusionSpec, x0: float, dt: float, rng, max_time: float = 1e4):
    """Boundary reached and hitting time of a single path.

    Returns ``(None, max_time)`` if neither boundary is hit by ``max_time``.
    """
    _check_x0(x0)
    if spec.kappa >= 1:
        raise BoundaryInaccessible(
            "boundary 1 is inaccessible for kappa = 1; use simulate_path with a horizon"
        )
    alpha, kappa, w0, w = spec.kernel_args()
    where, steps = _absorb_batch(1, float(x0), dt, int(max_time / dt), alpha, kappa, w0, w, rng)
    b = int(where[0])
    if b < 0:
        return None, float(steps[0]) * dt
    return Boundary(b), float(steps[0]) * dt


@dataclass(frozen=True)
class AbsorptionStudy:
    replicates: int
    hits_one: int
    censored: int
    time: McSummary
    fix_one: McSummary
    boundaries: np.ndarray = field(repr=False, compare=False)
    times: np.ndarray = field(repr=False, compare=False)


def absorption_study(
    spec: DiffusionSpec,
    x0: float,
    dt: float,
    replicates: int,
    seed: RngSpec,
    threads: Optional[int] = None,
    max_time: float = 1e4,
) -> AbsorptionStudy:
    """Many absorption trials in fixed-size blocks, one random stream per
    block (``seed.child(block)``), so results do not depend on ``threads``."""
    _check_x0(x0)
    if spec.kappa >= 1:
        raise BoundaryInaccessible("boundary 1 is inaccessible for kappa = 1")
    alpha, kappa, w0, w = spec.kernel_args()
    max_steps = int(max_time / dt)
    sizes = block_sizes(replicates)

    def run(i):
        rng = derive_rng_stream(seed.child(i))
        return _absorb_batch(sizes[i], float(x0), dt, max_steps, alpha, kappa, w0, w, rng)

    parts = parallel_map(run, list(range(len(sizes))), threads)
    where = np.concatenate([p[0] for p in parts]) if parts else np.empty(0, np.int8)
    steps = np.concatenate([p[1] for p in parts]) if parts else np.empty(0, np.int64)
    times = steps * dt
    done = where >= 0
    return AbsorptionStudy(
        replicates=int(replicates),
        hits_one=int(np.sum(where == 1)),
        censored=int(np.sum(~done)),
        time=McSummary.from_samples(times[done]),
        fix_one=McSummary.from_samples((where[done] == 1).astype(float)),
        boundaries=where,
        times=times,
    )


def _pairs(run_block, replicates, threads):
    sizes = block_sizes(replicates)
    return parallel_map(lambda i: run_block(i, sizes[i]), list(range(len(sizes))), threads)


def coupled_absorption_times(
    spec: DiffusionSpec, x0: float, dt: float, replicates: int, seed: RngSpec,
    threads: Optional[int] = None, max_time: float = 1e4,
) -> tuple[np.ndarray, np.ndarray]:
    """Absorption times with step ``dt`` and ``dt/2`` on shared Brownian
    increments; entries are -1 where ``max_time`` ran out."""
    if spec.kappa >= 1:
        raise BoundaryInaccessible("boundary 1 is inaccessible for kappa = 1")
    alpha, kappa, w0, w = spec.kernel_args()
    steps = int(max_time / dt)
    parts = _pairs(
        lambda i, n: _absorb_pair_batch(n, float(x0), dt, steps, alpha, kappa, w0, w,
                                        derive_rng_stream(seed.child(i))),
        replicates, threads,
    )
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def coupled_values(
    spec: DiffusionSpec, x0: float, dt: float, t: float, replicates: int, seed: RngSpec,
    threads: Optional[int] = None,
) -> np.ndarray:
    """``X_t`` with step ``dt`` (column 0) and ``dt/2`` (column 1) on shared
    Brownian increments."""
    alpha, kappa, w0, w = spec.kernel_args()
    x0 = min(float(x0), ONE_CEILING) if kappa >= 1 else float(x0)
    nsteps = int(round(t / dt))
    parts = _pairs(
        lambda i, n: _observe_pair_batch(n, x0, dt, nsteps, alpha, kappa, w0, w,
                                         derive_rng_stream(seed.child(i))),
        replicates, threads,
    )
    return np.vstack(parts)


def observe_batch(
    spec: DiffusionSpec,
    x0: float,
    dt: float,
    times: Sequence[float],
    replicates: int,
    seed: RngSpec,
    threads: Optional[int] = None,
) -> np.ndarray:
    """Values of ``replicates`` independent paths at each of ``times``.

    Row ``r`` is one path observed at all times, so functionals at several
    times are correlated by design. Returns shape ``(replicates, len(times))``.
    """
    _check_x0(x0)
    t = np.asarray(times, dtype=float)
    if np.any(t < 0) or np.any(np.diff(t) < 0):
        raise InvalidArgument("observation times must be non-negative and sorted")
    obs = np.rint(t / dt).astype(np.int64)
    alpha, kappa, w0, w = spec.kernel_args()
    x0 = min(float(x0), ONE_CEILING) if kappa >= 1 else float(x0)
    sizes = block_sizes(replicates)

    def run(i):
        rng = derive_rng_stream(seed.child(i))
        return _observe_batch(sizes[i], x0, dt, obs, alpha, kappa, w0, w, rng)

    parts = parallel_map(run, list(range(len(sizes))), threads)
    if not parts:
        return np.empty((0, t.size))
    return np.vstack(parts)
