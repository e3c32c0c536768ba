"""Shared numeric foundations: exact rationals, seeded random streams,
adaptive quadrature and mergeable Monte Carlo summaries."""
from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Sequence, TypeVar, Union

import numpy as np
from scipy import integrate

__all__ = [
    "InvalidArgument",
    "QuadratureFailure",
    "reduce_rational",
    "as_fraction",
    "RngSpec",
    "derive_rng_stream",
    "QuadratureSpec",
    "adaptive_quadrature",
    "McSummary",
    "mc_merge",
    "default_threads",
    "parallel_map",
    "block_sizes",
]

T = TypeVar("T")
R = TypeVar("R")

Rational = Fraction
KappaLike = Union[Fraction, float, int, str]


class InvalidArgument(ValueError):
    """A parameter violates the documented domain of an operation."""


class QuadratureFailure(RuntimeError):
    """Adaptive integration did not reach the requested tolerance.

    ``partial`` holds the best value obtained and ``err_estimate`` its
    error estimate, both possibly infinite.
    """

    def __init__(self, message: str, partial: float, err_estimate: float):
        super().__init__(message)
        self.partial = partial
        self.err_estimate = err_estimate


# --------------------------------------------------------------------------
# rationals


def reduce_rational(num: int, den: int) -> Fraction:
    """Return ``num/den`` in lowest terms with a positive denominator."""
    if den == 0:
        raise InvalidArgument("zero denominator")
    return Fraction(int(num), int(den))


def as_fraction(value: KappaLike) -> Fraction:
    """Parse ``"a/b"`` strings, ints and Fractions exactly.

    Floats are rejected: callers that accept real-valued parameters must
    decide for themselves how to treat them.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise InvalidArgument(f"not a rational: {value!r}")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        text = value.strip()
        if "/" in text:
            num, den = text.split("/", 1)
            try:
                return reduce_rational(int(num), int(den))
            except ValueError as exc:
                raise InvalidArgument(f"cannot parse rational {value!r}") from exc
        try:
            # decimal literals such as "0.3" are exact decimals, not binary floats
            return Fraction(text)
        except ValueError as exc:
            raise InvalidArgument(f"cannot parse rational {value!r}") from exc
    raise InvalidArgument(f"expected an exact rational, got {type(value).__name__}")


# --------------------------------------------------------------------------
# random streams


@dataclass(frozen=True)
class RngSpec:
    """Identifies one random stream.

    ``stream_id`` is a non-negative integer or a tuple of them; tuples let
    callers address hierarchical streams such as (cell, side, block).
    """

    master_seed: int
    stream_id: Union[int, tuple] = 0

    def key(self) -> tuple:
        sid = self.stream_id if isinstance(self.stream_id, tuple) else (self.stream_id,)
        for part in sid:
            if int(part) < 0 or int(part) >= 2**64:
                raise InvalidArgument("stream ids must be 64-bit unsigned integers")
        return tuple(int(p) for p in sid)

    def child(self, *path: int) -> "RngSpec":
        return RngSpec(self.master_seed, self.key() + tuple(int(p) for p in path))


def derive_rng_stream(spec: RngSpec) -> np.random.Generator:
    """Build the generator for ``spec``.

    The bit generator is NumPy's Philox-4x64-10 (counter based), keyed by
    ``SeedSequence(master_seed, spawn_key=stream_id)``. Both the key
    derivation and the generator are stable across NumPy >= 1.17; the
    package pins numpy>=1.26.
    """
    if not 0 <= int(spec.master_seed) < 2**64:
        raise InvalidArgument("master_seed must be a 64-bit unsigned integer")
    seq = np.random.SeedSequence(int(spec.master_seed), spawn_key=spec.key())
    return np.random.Generator(np.random.Philox(seq))


# --------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class QuadratureSpec:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    max_subdivisions: int = 10_000

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise InvalidArgument("quadrature tolerances must be positive")
        if self.max_subdivisions < 1:
            raise InvalidArgument("max_subdivisions must be positive")


DEFAULT_QUAD = QuadratureSpec()


class _NonFinite(Exception):
    pass


def adaptive_quadrature(
    f: Callable[[float], float],
    a: float,
    b: float,
    spec: QuadratureSpec = DEFAULT_QUAD,
    points: Sequence[float] | None = None,
) -> tuple[float, float]:
    """Integrate ``f`` over ``[a, b]`` with adaptive Gauss-Kronrod.

    Thin wrapper over QUADPACK (``scipy.integrate.quad``) that turns every
    non-converged outcome, including non-finite integrand values, into
    :class:`QuadratureFailure`. Integrable endpoint singularities are fine
    as long as ``f`` is finite on the open interval.

    Returns
    -------
    value, err_estimate
    """
    if not a <= b:
        raise InvalidArgument("require a <= b")
    if a == b:
        return 0.0, 0.0

    def g(u):
        with np.errstate(all="ignore"):
            try:
                v = float(f(u))
            except ZeroDivisionError:
                raise _NonFinite(u)
        if not math.isfinite(v):
            raise _NonFinite(u)
        return v

    inner = None
    if points is not None:
        inner = [p for p in points if a < p < b] or None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        try:
            out = integrate.quad(
                g, a, b,
                epsabs=spec.abs_tol, epsrel=spec.rel_tol,
                limit=spec.max_subdivisions, points=inner, full_output=1,
            )
        except _NonFinite as exc:
            raise QuadratureFailure(
                f"integrand not finite at u={exc.args[0]!r}", math.inf, math.inf
            ) from None
    value, err = out[0], out[1]
    if len(out) > 3:  # QUADPACK reported ier != 0
        raise QuadratureFailure(str(out[3]).split("\n")[0], value, err)
    return value, err


# --------------------------------------------------------------------------
# Monte Carlo summaries


@dataclass(frozen=True)
class McSummary:
    """Count, mean and centred second moment of a sample."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    @classmethod
    def from_samples(cls, values) -> "McSummary":
        arr = np.asarray(values, dtype=np.float64).ravel()
        if arr.size == 0:
            return cls()
        mean = float(arr.mean())
        return cls(int(arr.size), mean, float(np.sum((arr - mean) ** 2)))

    @classmethod
    def exact(cls, value: float, count: int) -> "McSummary":
        """Summary of ``count`` copies of one value (zero spread)."""
        return cls(int(count), float(value), 0.0)

    @property
    def variance(self) -> float:
        if self.count < 2:
            return math.nan
        return self.m2 / (self.count - 1)

    @property
    def se(self) -> float:
        if self.count < 2:
            return math.nan
        return math.sqrt(self.variance / self.count)


def mc_merge(a: McSummary, b: McSummary) -> McSummary:
    """Chan et al. pairwise combination of two summaries."""
    if a.count == 0:
        return b
    if b.count == 0:
        return a
    n = a.count + b.count
    delta = b.mean - a.mean
    mean = a.mean + delta * (b.count / n)
    m2 = a.m2 + b.m2 + delta * delta * (a.count * b.count / n)
    return McSummary(n, mean, m2)


def merge_all(parts: Iterable[McSummary]) -> McSummary:
    out = McSummary()
    for p in parts:
        out = mc_merge(out, p)
    return out


# --------------------------------------------------------------------------
# replicate blocks and threads

BLOCK = 2048


def block_sizes(replicates: int, block: int = BLOCK) -> list[int]:
    """Split ``replicates`` into fixed-size blocks (last one may be short).

    The split depends only on ``replicates``, never on the thread count,
    so every block keeps its random stream whatever the parallelism.
    """
    if replicates < 0:
        raise InvalidArgument("replicates must be non-negative")
    full, rest = divmod(int(replicates), block)
    return [block] * full + ([rest] if rest else [])


def default_threads() -> int:
    env = os.environ.get("WFEFF_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise InvalidArgument(f"WFEFF_THREADS must be an integer, got {env!r}")
    return 1


def parallel_map(fn: Callable[[T], R], items: Sequence[T], threads: int | None = None) -> list[R]:
    """Ordered map over ``items``; kernels release the GIL so threads overlap."""
    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
