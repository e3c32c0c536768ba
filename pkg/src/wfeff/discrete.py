"""Discrete-generation Wright-Fisher model with a fixed resource budget.

Each generation is grown one individual at a time. An efficient (type 0)
individual costs ``1 - kappa`` resource units and an inefficient (type 1)
one costs a full unit; production stops once the budget ``N`` is used up,
under one of two rules:

* ``Rule.M1`` keeps the individual whose cost first reaches or exceeds
  the budget, then stops.
* ``Rule.M2`` keeps an individual only if the total stays within budget;
  the first one that would overshoot is discarded and production stops.

When ``kappa = a/b`` is an exact fraction, costs are tracked as integers in
units of ``1/b`` so that every stopping decision is exact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Optional, Union

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
    "Rule",
    "Absorption",
    "DiscreteConfig",
    "Generation",
    "DiscreteTrajectory",
    "FixationResult",
    "LeftoverChain",
    "DegenerateChainError",
    "effective_size_nx",
    "initial_generation",
    "parent_type_prob",
    "next_generation",
    "simulate_trajectory",
    "fixation_trial",
    "fixation_study",
    "FixationStudy",
    "leftover_distribution",
    "leftover_overshoot_law",
    "leftover_chain_stationary",
    "concentration_probe",
    "chebyshev_bound",
    "one_step_increment",
]

FLOAT_GUARD = 1e-12


class Rule(Enum):
    M1 = "m1"
    M2 = "m2"


class Absorption(Enum):
    ALL_EFFICIENT = "AllEfficient"
    ALL_INEFFICIENT = "AllInefficient"
    CENSORED = "Censored"


class DegenerateChainError(ValueError):
    """The leftover chain is not irreducible-aperiodic for these parameters."""


def _exact(v) -> Fraction:
    if isinstance(v, float):
        return Fraction(repr(v))
    return as_fraction(v)


@dataclass(frozen=True)
class DiscreteConfig:
    """Parameters of the discrete model.

    ``kappa`` may be a float only under ``Rule.M1``; strings such as
    ``"3/10"`` are parsed into exact fractions.
    """

    resource_n: int
    kappa: Union[Fraction, float]
    s: float = 0.0
    rule: Rule = Rule.M1
    x0: float = 0.5
    max_generations: Optional[int] = None

    def __post_init__(self):
        if int(self.resource_n) != self.resource_n or self.resource_n < 1:
            raise InvalidArgument("resource_n must be a positive integer")
        object.__setattr__(self, "resource_n", int(self.resource_n))
        rule = Rule(self.rule) if not isinstance(self.rule, Rule) else self.rule
        object.__setattr__(self, "rule", rule)
        kappa = self.kappa
        if isinstance(kappa, (str, int)) and not isinstance(kappa, bool):
            kappa = as_fraction(kappa)
        if isinstance(kappa, float) and rule is Rule.M2:
            raise InvalidArgument(
                "rule M2 needs an exact rational kappa (pass Fraction or 'a/b')"
            )
        if not 0 <= kappa <= 1:
            raise InvalidArgument("kappa must lie in [0, 1]")
        object.__setattr__(self, "kappa", kappa)
        if not 0 <= self.s < 1:
            raise InvalidArgument("s must lie in [0, 1)")
        if not 0 <= self.x0 <= 1:
            raise InvalidArgument("x0 must lie in [0, 1]")
        if self.max_generations is None:
            object.__setattr__(self, "max_generations", 100 * self.resource_n)
        elif self.max_generations < 1:
            raise InvalidArgument("max_generations must be positive")

    @property
    def exact(self) -> bool:
        return isinstance(self.kappa, Fraction)

    def ledger(self):
        """(cost of type 1, saving of type 0, budget, guard, scale) in kernel units."""
        n = self.resource_n
        if self.exact:
            a, b = self.kappa.numerator, self.kappa.denominator
            return np.int64(b), np.int64(a), np.int64(n * b), np.int64(0), b
        return 1.0, float(self.kappa), float(n), FLOAT_GUARD * n, 1

    def consumed(self, m: int, k: int) -> Fraction:
        return m - _exact(self.kappa) * k


@dataclass(frozen=True)
class Generation:
    size_m: int
    count_type0: int
    consumed: Fraction

    @property
    def frequency(self) -> float:
        return self.count_type0 / self.size_m


@dataclass
class DiscreteTrajectory:
    """Per-generation record; ``absorbed_at`` is None when the run hit
    ``max_generations`` before fixation."""

    sizes: np.ndarray
    counts: np.ndarray
    config: DiscreteConfig
    absorbed_at: Optional[int] = None
    absorbed_state: Optional[Absorption] = None
    generations: list = field(init=False, repr=False)

    def __post_init__(self):
        self.generations = [
            Generation(int(m), int(k), self.config.consumed(int(m), int(k)))
            for m, k in zip(self.sizes, self.counts)
        ]

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / self.sizes

    def csv_rows(self):
        for g, gen in enumerate(self.generations):
            c = gen.consumed
            yield (g, gen.size_m, gen.count_type0, repr(gen.frequency), c.numerator, c.denominator)


CSV_HEADER = ("generation", "pop_size", "count_type0", "frequency", "consumed_num", "consumed_den")


@dataclass(frozen=True)
class FixationResult:
    winner: Absorption
    generations: int

    @property
    def censored(self) -> bool:
        return self.winner is Absorption.CENSORED


# --------------------------------------------------------------------------
# kernels


@njit(nogil=True, cache=True)
def _generation(p, cost1, delta, budget, guard, m2, rng):
    # returns (M, type-0 count, M and count at the first time C > N - 1)
    m = 0
    k = 0
    mc = -1
    kc = -1
    while True:
        eff = rng.random() < p
        m1 = m + 1
        k1 = k + 1 if eff else k
        c1 = m1 * cost1 - k1 * delta
        if m2 and c1 > budget + guard:
            break
        m = m1
        k = k1
        if mc < 0 and c1 > budget - cost1 + guard:
            mc = m
            kc = k
        if c1 >= budget - guard:
            break
    return m, k, mc, kc


@njit(nogil=True, cache=True)
def _trajectory(m0, k0, s, cost1, delta, budget, guard, m2, max_gen, record, rng):
    cap = 1
    if record:
        cap = min(max_gen + 1, 4096)
    ms = np.empty(cap, np.int64)
    ks = np.empty(cap, np.int64)
    ms[0] = m0
    ks[0] = k0
    m = m0
    k = k0
    n = 0
    while n < max_gen and 0 < k < m:
        x = k / m
        p = (1.0 - s) * x / (1.0 - s * x)
        m, k, _, _ = _generation(p, cost1, delta, budget, guard, m2, rng)
        n += 1
        if record:
            if n >= cap:
                cap = min(2 * cap, max_gen + 1)
                ms2 = np.empty(cap, np.int64)
                ks2 = np.empty(cap, np.int64)
                ms2[:n] = ms[:n]
                ks2[:n] = ks[:n]
                ms = ms2
                ks = ks2
            ms[n] = m
            ks[n] = k
    if record:
        return n, m, k, ms[: n + 1].copy(), ks[: n + 1].copy()
    return n, m, k, ms, ks


@njit(nogil=True, cache=True)
def _fixation_batch(reps, m0, k0, s, cost1, delta, budget, guard, m2, max_gen, rng):
    # winner: 1 efficient, 0 inefficient, -1 censored
    win = np.empty(reps, np.int8)
    gens = np.empty(reps, np.int64)
    for r in range(reps):
        n, m, k, _, _ = _trajectory(m0, k0, s, cost1, delta, budget, guard, m2, max_gen, False, rng)
        gens[r] = n
        if k == 0:
            win[r] = 0
        elif k == m:
            win[r] = 1
        else:
            win[r] = -1
    return win, gens


@njit(nogil=True, cache=True)
def _generation_batch(reps, p, cost1, delta, budget, guard, m2, rng):
    out = np.empty((reps, 4), np.int64)
    for r in range(reps):
        m, k, mc, kc = _generation(p, cost1, delta, budget, guard, m2, rng)
        out[r, 0] = m
        out[r, 1] = k
        out[r, 2] = mc
        out[r, 3] = kc
    return out


# --------------------------------------------------------------------------
# operations


def effective_size_nx(resource_n: int, kappa: float, x: float) -> float:
    """Population size ``N / (1 - kappa*x)`` that spends exactly ``N`` units
    when a fraction ``x`` of it is efficient."""
    kx = float(kappa) * x
    if kx >= 1:
        raise InvalidArgument("need kappa*x < 1")
    return resource_n / (1.0 - kx)


def initial_generation(config: DiscreteConfig) -> Generation:
    """Generation 0: ``floor(N_x)`` individuals, ``floor(x0*N_x)`` of them
    efficient (computed in exact arithmetic)."""
    kappa = _exact(config.kappa)
    x = _exact(config.x0)
    if kappa * x >= 1:
        raise InvalidArgument("need kappa*x0 < 1")
    nx = config.resource_n / (1 - kappa * x)
    size = math.floor(nx)
    count = min(math.floor(x * nx), size)
    return Generation(size, count, size - kappa * count)


def parent_type_prob(x, s):
    """Probability that a new individual picks a type-0 parent."""
    return (1.0 - s) * x / (1.0 - s * x)


def _check_finite_generation(config: DiscreteConfig, p: float):
    if config.kappa == 1 and p >= 1:
        raise InvalidArgument(
            "kappa = 1 with an all-efficient parent pool never exhausts the budget"
        )


def next_generation(prev_freq: float, config: DiscreteConfig, rng) -> Generation:
    if not 0 <= prev_freq <= 1:
        raise InvalidArgument("prev_freq must lie in [0, 1]")
    p = parent_type_prob(prev_freq, config.s)
    _check_finite_generation(config, p)
    cost1, delta, budget, guard, _ = config.ledger()
    m, k, _, _ = _generation(p, cost1, delta, budget, guard, config.rule is Rule.M2, rng)
    return Generation(int(m), int(k), config.consumed(int(m), int(k)))


def _run(config: DiscreteConfig, rng, record: bool):
    g0 = initial_generation(config)
    cost1, delta, budget, guard, _ = config.ledger()
    return g0, _trajectory(
        g0.size_m, g0.count_type0, float(config.s), cost1, delta, budget, guard,
        config.rule is Rule.M2, int(config.max_generations), record, rng,
    )


def _winner(m: int, k: int) -> Absorption:
    if k == 0:
        return Absorption.ALL_INEFFICIENT
    if k == m:
        return Absorption.ALL_EFFICIENT
    return Absorption.CENSORED


def simulate_trajectory(config: DiscreteConfig, rng) -> DiscreteTrajectory:
    """Iterate generations until fixation or ``max_generations``."""
    _, (n, m, k, ms, ks) = _run(config, rng, record=True)
    state = _winner(m, k)
    if state is Absorption.CENSORED:
        return DiscreteTrajectory(ms, ks, config)
    return DiscreteTrajectory(ms, ks, config, absorbed_at=int(n), absorbed_state=state)


def fixation_trial(config: DiscreteConfig, rng) -> FixationResult:
    """Winner and absorption time; a run that exhausts ``max_generations``
    comes back as ``Absorption.CENSORED`` with the generation count."""
    _, (n, m, k, _, _) = _run(config, rng, record=False)
    return FixationResult(_winner(int(m), int(k)), int(n))


@dataclass(frozen=True)
class FixationStudy:
    replicates: int
    efficient: int
    inefficient: int
    censored: int
    generations: McSummary

    @property
    def efficient_fraction(self) -> McSummary:
        """Indicator summary of efficient fixation over absorbed runs."""
        done = self.efficient + self.inefficient
        if done == 0:
            return McSummary()
        p = self.efficient / done
        return McSummary(done, p, p * (1 - p) * done)


def fixation_study(config: DiscreteConfig, replicates: int, seed: RngSpec, threads: Optional[int] = None) -> FixationStudy:
    """Many fixation trials in fixed-size blocks, one stream per block."""
    g0 = initial_generation(config)
    cost1, delta, budget, guard, _ = config.ledger()
    sizes = block_sizes(replicates)

    def run(i):
        rng = derive_rng_stream(seed.child(i))
        return _fixation_batch(
            sizes[i], g0.size_m, g0.count_type0, float(config.s), cost1, delta, budget, guard,
            config.rule is Rule.M2, int(config.max_generations), rng,
        )

    parts = parallel_map(run, list(range(len(sizes))), threads)
    win = np.concatenate([p[0] for p in parts]) if parts else np.empty(0, np.int8)
    gens = np.concatenate([p[1] for p in parts]) if parts else np.empty(0, np.int64)
    done = win >= 0
    return FixationStudy(
        int(replicates), int(np.sum(win == 1)), int(np.sum(win == 0)), int(np.sum(~done)),
        McSummary.from_samples(gens[done]),
    )


def _exact_kappa_for_leftover(config: DiscreteConfig) -> Fraction:
    if not config.exact:
        raise InvalidArgument("leftover analysis needs an exact rational kappa")
    if not 0 < config.kappa < 1:
        raise InvalidArgument("leftover analysis needs 0 < kappa < 1")
    return config.kappa


def leftover_distribution(config: DiscreteConfig, prev_freq: float, replicates: int, rng) -> np.ndarray:
    """Empirical law of ``N - C`` at the first individual that pushes the
    cost past ``N - 1``.

    Returns masses on ``{0, 1/b, ..., (b-1)/b}`` indexed by numerator.
    """
    kappa = _exact_kappa_for_leftover(config)
    b = kappa.denominator
    p = parent_type_prob(prev_freq, config.s)
    cost1, delta, budget, guard, _ = config.ledger()
    out = _generation_batch(int(replicates), p, cost1, delta, budget, guard, True, rng)
    left = budget - (out[:, 2] * cost1 - out[:, 3] * delta)
    return np.bincount(left, minlength=b)[:b] / float(replicates)


def leftover_overshoot_law(kappa, x: float) -> np.ndarray:
    """Large-``N`` law of the same leftover from renewal theory.

    In units of ``1/b`` the cost walk takes steps ``b - a`` (prob ``x``) or
    ``b`` and visits each far level with frequency ``1/(b - a x)``. The
    leftover equals ``j`` when the walk lands on ``bN - j`` from at or
    below ``b(N-1)``, which gives mass ``((1 - x) + x [j >= a]) / (b - a x)``.
    """
    kappa = as_fraction(kappa)
    if not 0 < kappa < 1 or not 0 < x < 1:
        raise InvalidArgument("need 0 < kappa < 1 and 0 < x < 1")
    a, b = kappa.numerator, kappa.denominator
    j = np.arange(b)
    return ((1.0 - x) + x * (j >= a)) / (b - a * x)


@dataclass(frozen=True)
class LeftoverChain:
    """Fractional-part chain of the running cost on ``{j/b}``.

    An efficient individual moves the state ``a`` steps down (mod ``b``);
    an inefficient one leaves it in place.
    """

    a: int
    b: int
    x: float

    @classmethod
    def from_kappa(cls, kappa, x: float) -> "LeftoverChain":
        k = as_fraction(kappa)
        return cls(k.numerator, k.denominator, x)

    def matrix(self) -> np.ndarray:
        P = np.zeros((self.b, self.b))
        for j in range(self.b):
            P[j, (j - self.a) % self.b] += self.x
            P[j, j] += 1.0 - self.x
        return P


def leftover_chain_stationary(chain: LeftoverChain) -> np.ndarray:
    if math.gcd(chain.a, chain.b) != 1 or not 0 < chain.a < chain.b:
        raise InvalidArgument("need 0 < a < b with gcd(a, b) = 1")
    if chain.x <= 0 or chain.x >= 1:
        raise DegenerateChainError(f"x = {chain.x} gives a degenerate chain")
    P = chain.matrix()
    A = P.T - np.eye(chain.b)
    A[-1, :] = 1.0
    rhs = np.zeros(chain.b)
    rhs[-1] = 1.0
    return np.linalg.solve(A, rhs)


def chebyshev_bound(resource_n: int, a_exponent: float) -> float:
    """Upper bound on the probability that one generation's size leaves the
    window ``N_x [1 - N^a, 1 + N^a]``."""
    n = float(resource_n)
    return n * (1 + n**a_exponent) / (n ** (1 + a_exponent) + 1) ** 2


def concentration_probe(config: DiscreteConfig, x: float, a_exponent: float, replicates: int, rng) -> float:
    """Fraction of single generations (grown from frequency ``x``) whose
    size lands in ``N_x [1 - N^a, 1 + N^a]``."""
    if config.s != 0:
        raise InvalidArgument("the concentration probe is defined for s = 0")
    if not -0.5 < a_exponent < 0:
        raise InvalidArgument("a_exponent must lie in (-1/2, 0)")
    _check_finite_generation(config, x)
    nx = effective_size_nx(config.resource_n, float(config.kappa), x)
    width = config.resource_n**a_exponent
    cost1, delta, budget, guard, _ = config.ledger()
    out = _generation_batch(int(replicates), float(x), cost1, delta, budget, guard,
                            config.rule is Rule.M2, rng)
    ratio = out[:, 0] / nx
    inside = (ratio >= 1 - width) & (ratio <= 1 + width)
    return float(inside.mean())


def one_step_increment(config: DiscreteConfig, x: float, replicates: int, rng) -> McSummary:
    """Summary of ``X_1 - x`` for one generation grown from frequency ``x``."""
    p = parent_type_prob(x, config.s)
    _check_finite_generation(config, p)
    cost1, delta, budget, guard, _ = config.ledger()
    out = _generation_batch(int(replicates), p, cost1, delta, budget, guard,
                            config.rule is Rule.M2, rng)
    return McSummary.from_samples(out[:, 1] / out[:, 0] - x)
