"""Moment duality between the rule-M1 diffusion and the ASEG count process,
``E_x[X_t^n] = E_n[x^{Z_t}]``, checked exactly at the generator level and by
Monte Carlo on both sides."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .aseg import DEFAULT_CEILING, AsegParams, count_study, pgf_values
from .core import InvalidArgument, McSummary, RngSpec
from .diffusion import DiffusionSpec, Variant, observe_batch

__all__ = [
    "generator_duality_check",
    "generator_duality_grid",
    "moment_estimate_diffusion",
    "DualityCell",
    "duality_grid_report",
    "DEFAULT_GRID",
    "SMALL_GRID",
    "REPORT_HEADER",
    "Z_FLAG",
]

Z_FLAG = 4.0


def _lhs_generator(x, n, kappa, alpha):
    # A x^n with A f = mu f' + sigma^2 f'' / 2
    d1 = n * x ** (n - 1)
    d2 = n * (n - 1) * x ** (n - 2) if n >= 2 else 0.0
    return -alpha * x * (1 - x) * d1 + 0.5 * x * (1 - x) * (1 - kappa * x) * d2


def _rhs_generator(x, n, kappa, alpha):
    # Q acting on n -> x^n for the count process
    pairs = n * (n - 1) / 2.0
    return (alpha * n + kappa * pairs) * (x ** (n + 1) - x**n) + pairs * (x ** (n - 1) - x**n)


def generator_duality_check(x: float, n: int, kappa: float, alpha: float) -> float:
    """``|A h(., n)(x) - Q h(x, .)(n)|`` for ``h(x, n) = x**n``."""
    if not 0 <= x <= 1:
        raise InvalidArgument("x must lie in [0, 1]")
    if n < 1:
        raise InvalidArgument("n must be at least 1")
    return abs(_lhs_generator(x, n, kappa, alpha) - _rhs_generator(x, n, kappa, alpha))


def generator_duality_grid(
    xs: Iterable[float] = tuple(i / 10 for i in range(11)),
    ns: Iterable[int] = range(1, 11),
    kappas: Iterable[float] = (0.0, 0.5, 1.0),
    alphas: Iterable[float] = (0.0, 0.25, 1.0),
) -> float:
    """Largest discrepancy over the cross product."""
    return max(
        generator_duality_check(x, n, k, a)
        for x, n, k, a in itertools.product(xs, ns, kappas, alphas)
    )


def moment_estimate_diffusion(
    spec: DiffusionSpec,
    x: float,
    n: int,
    t: float,
    dt: float,
    replicates: int,
    seed: RngSpec,
    threads: Optional[int] = None,
) -> McSummary:
    """Monte Carlo summary of ``X_t ** n`` over Euler-Maruyama paths."""
    if n < 1 or t < 0:
        raise InvalidArgument("need n >= 1 and t >= 0")
    if t == 0:
        return McSummary.exact(x**n, replicates)
    vals = observe_batch(spec, x, dt, [t], replicates, seed, threads)[:, 0]
    return McSummary.from_samples(vals**n)


@dataclass(frozen=True)
class DualityCell:
    kappa: float
    alpha: float
    x: float
    n: int
    t: float
    lhs: McSummary
    rhs: McSummary
    exploded: int = 0

    @property
    def z_score(self) -> float:
        diff = self.lhs.mean - self.rhs.mean
        se2 = _se2(self.lhs) + _se2(self.rhs)
        if se2 == 0:
            return 0.0 if diff == 0 else math.copysign(math.inf, diff)
        return diff / math.sqrt(se2)

    @property
    def flag(self) -> str:
        if self.exploded:
            return "exploded"
        if abs(self.z_score) > Z_FLAG:
            return "z_gt_4"
        return ""

    def row(self):
        return (
            repr(self.kappa), repr(self.alpha), repr(self.x), self.n, repr(self.t),
            repr(self.lhs.mean), repr(_se(self.lhs)), repr(self.rhs.mean), repr(_se(self.rhs)),
            repr(self.z_score), self.flag,
        )


def _se2(s: McSummary) -> float:
    v = _se(s)
    return v * v


def _se(s: McSummary) -> float:
    return 0.0 if s.count < 2 else s.se


REPORT_HEADER = (
    "kappa", "alpha", "x", "n", "t", "lhs_mean", "lhs_se", "rhs_mean", "rhs_se", "z_score", "flag",
)

DEFAULT_GRID = dict(
    kappa=(0.0, 0.3, 1.0),
    alpha=(0.0, 0.25),
    x=(0.2, 0.5, 0.8),
    n=(1, 2, 3),
    t=(0.1, 0.5, 1.0),
)

SMALL_GRID = dict(kappa=(0.3, 1.0), alpha=(0.25,), x=(0.5,), n=(2,), t=(0.0, 0.5))


def duality_grid_report(
    grid: dict,
    replicates: int,
    dt: float,
    seed: RngSpec,
    threads: Optional[int] = None,
    ceiling: int = DEFAULT_CEILING,
) -> list[DualityCell]:
    """Both sides of the duality on every cell of ``grid`` (a dict of
    value lists keyed ``kappa, alpha, x, n, t``).

    Diffusion paths are shared across ``n`` and ``t`` within each
    ``(kappa, alpha, x)`` and count paths across ``x`` and ``t`` within each
    ``(kappa, alpha, n)``; every such group has its own stream
    (``seed.child(side, group)``), so the two sides are independent.
    """
    kappas, alphas = list(grid["kappa"]), list(grid["alpha"])
    xs, ns = list(grid["x"]), [int(n) for n in grid["n"]]
    ts = sorted(set(float(t) for t in grid["t"]))
    pos = [t for t in ts if t > 0]

    lhs = {}
    for g, (k, a, x) in enumerate(itertools.product(kappas, alphas, xs)):
        spec = DiffusionSpec.m1(k, a)
        vals = observe_batch(spec, x, dt, pos, replicates, seed.child(0, g), threads) if pos else None
        for n in ns:
            for t in ts:
                if t == 0:
                    lhs[k, a, x, n, t] = McSummary.exact(x**n, replicates)
                else:
                    lhs[k, a, x, n, t] = McSummary.from_samples(vals[:, pos.index(t)] ** n)

    rhs = {}
    boom = {}
    for g, (k, a, n) in enumerate(itertools.product(kappas, alphas, ns)):
        st = None
        if pos:
            params = AsegParams(n, a, k, max(pos))
            st = count_study(params, pos, replicates, seed.child(1, g), threads, ceiling)
        for x in xs:
            for t in ts:
                if t == 0:
                    rhs[k, a, x, n, t] = McSummary.exact(x**n, replicates)
                    boom[k, a, x, n, t] = 0
                else:
                    col = st.counts[:, pos.index(t)]
                    rhs[k, a, x, n, t] = McSummary.from_samples(pgf_values(col, x))
                    boom[k, a, x, n, t] = int(np.sum(st.exploded))

    return [
        DualityCell(k, a, x, n, t, lhs[k, a, x, n, t], rhs[k, a, x, n, t], boom[k, a, x, n, t])
        for k, a, x, n, t in itertools.product(kappas, alphas, xs, ns, ts)
    ]
