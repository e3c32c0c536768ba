"""Ancestral selection/efficiency graph (ASEG) and its vertex-counting
process ``Z``.

From ``j`` active vertices the graph sees coalescences at rate
``j(j-1)/2``, branchings at rate ``alpha j`` and pairwise branchings at rate
``kappa j(j-1)/2``. ``Z`` is the birth-death process of the active count.

Count simulations are exact Gillespie by default. For long horizons at
``kappa`` near 1 the expected number of events is unbounded (the count
has a heavy-tailed stationary law and rates grow like ``j**2``), so the
batch samplers accept ``leap_above``: at or above that count the process
advances by tau-leaps (Poisson births and deaths over a step sized so the
count moves by about ``leap_eps * j``), and exact events resume below it.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .core import (
    InvalidArgument,
    McSummary,
    RngSpec,
    block_sizes,
    derive_rng_stream,
    parallel_map,
)

__all__ = [
    "AsegParams",
    "VertexCountPath",
    "CountStudy",
    "EventKind",
    "AsegGraph",
    "transition_rates",
    "jump_chain_probs",
    "simulate_vertex_count",
    "count_study",
    "pgf_estimate",
    "stationary_sample",
    "empirical_pmf",
    "pgf_values",
    "simulate_graph",
    "color_and_propagate",
    "DEFAULT_CEILING",
    "STATIONARY_LEAP_ABOVE",
]

DEFAULT_CEILING = 10**6
STATIONARY_LEAP_ABOVE = 256
LEAP_EPS = 0.03


@dataclass(frozen=True)
class AsegParams:
    n0: int
    alpha: float
    kappa: float
    horizon: float
    x: float = 0.5

    def __post_init__(self):
        if int(self.n0) != self.n0 or self.n0 < 1:
            raise InvalidArgument("n0 must be a positive integer")
        if self.alpha < 0:
            raise InvalidArgument("alpha must be non-negative")
        if not 0 <= self.kappa <= 1:
            raise InvalidArgument("kappa must lie in [0, 1]")
        if not self.horizon >= 0:
            raise InvalidArgument("horizon must be non-negative")
        if not 0 <= self.x <= 1:
            raise InvalidArgument("x must lie in [0, 1]")


def transition_rates(j: int, alpha: float, kappa: float) -> tuple[float, float]:
    """``(up, down)`` jump rates of the count process from ``j``."""
    if j < 1:
        raise InvalidArgument("j must be at least 1")
    pairs = j * (j - 1) / 2.0
    return alpha * j + kappa * pairs, pairs


def jump_chain_probs(k: int, alpha: float, kappa: float = 1.0) -> tuple[float, float]:
    """Up/down probabilities of the embedded jump chain at state ``k``."""
    if k < 2:
        raise InvalidArgument("k must be at least 2")
    up, down = transition_rates(k, alpha, kappa)
    tot = up + down
    return up / tot, down / tot


# --------------------------------------------------------------------------
# kernels


@njit(nogil=True, cache=True)
def _count_path(n0, alpha, kappa, horizon, ceiling, rng):
    cap = 64
    ts = np.empty(cap)
    zs = np.empty(cap, np.int64)
    j = n0
    t = 0.0
    n = 0
    exploded = False
    while True:
        pairs = j * (j - 1) / 2.0
        up = alpha * j + kappa * pairs
        tot = up + pairs
        if tot <= 0.0:
            break
        t += rng.exponential(1.0 / tot)
        if t > horizon:
            break
        if rng.random() * tot < up:
            j += 1
        else:
            j -= 1
        if n >= cap:
            cap *= 2
            ts2 = np.empty(cap)
            zs2 = np.empty(cap, np.int64)
            ts2[:n] = ts[:n]
            zs2[:n] = zs[:n]
            ts = ts2
            zs = zs2
        ts[n] = t
        zs[n] = j
        n += 1
        if j > ceiling:
            exploded = True
            break
    return ts[:n].copy(), zs[:n].copy(), exploded


@njit(nogil=True, cache=True)
def _poisson(lam, rng):
    if lam <= 0.0:
        return 0.0
    if lam > 1e7:
        return math.floor(lam + math.sqrt(lam) * rng.standard_normal() + 0.5)
    return float(rng.poisson(lam))


@njit(nogil=True, cache=True)
def _count_obs(n0, alpha, kappa, obs, ceiling, leap_above, leap_eps, mark_time, target, rng):
    # count at each sorted time in obs; also whether the count sat at
    # `target` after `mark_time`, whether it blew past `ceiling`, and
    # how many exact events / leaps were used
    nobs = obs.size
    z = np.empty(nobs, np.int64)
    j = n0
    t = 0.0
    oi = 0
    while oi < nobs and obs[oi] <= 0.0:
        z[oi] = j
        oi += 1
    returned = False
    exploded = False
    events = 0
    leaps = 0
    while oi < nobs:
        if j > ceiling:
            exploded = True
            while oi < nobs:
                z[oi] = j
                oi += 1
            break
        pairs = j * (j - 1) / 2.0
        up = alpha * j + kappa * pairs
        tot = up + pairs
        if leap_above > 0 and j >= leap_above:
            tau = (leap_eps * j) ** 2 / tot
            land = False
            if t + tau >= obs[oi]:
                tau = obs[oi] - t
                land = True
            nj = j + int(_poisson(up * tau, rng) - _poisson(pairs * tau, rng))
            j = nj if nj > 1 else 1
            leaps += 1
            if land:
                t = obs[oi]
                while oi < nobs and obs[oi] <= t:
                    z[oi] = j
                    oi += 1
            else:
                t += tau
            continue
        if tot <= 0.0:
            while oi < nobs:
                z[oi] = j
                oi += 1
            break
        t_next = t + rng.exponential(1.0 / tot)
        while oi < nobs and obs[oi] < t_next:
            z[oi] = j
            oi += 1
        if oi >= nobs:
            break
        t = t_next
        if rng.random() * tot < up:
            j += 1
        else:
            j -= 1
        events += 1
        if j == target and t > mark_time:
            returned = True
    return z, returned, exploded, events, leaps


@njit(nogil=True, cache=True)
def _count_obs_batch(reps, n0, alpha, kappa, obs, ceiling, leap_above, leap_eps, mark_time, target, rng):
    z = np.empty((reps, obs.size), np.int64)
    ret = np.empty(reps, np.bool_)
    exp_ = np.empty(reps, np.bool_)
    work = np.zeros(2, np.int64)
    for r in range(reps):
        zr, rr, er, ev, lp = _count_obs(
            n0, alpha, kappa, obs, ceiling, leap_above, leap_eps, mark_time, target, rng
        )
        z[r, :] = zr
        ret[r] = rr
        exp_[r] = er
        work[0] += ev
        work[1] += lp
    return z, ret, exp_, work


# --------------------------------------------------------------------------
# count-process API


@dataclass
class VertexCountPath:
    n0: int
    event_times: np.ndarray
    counts: np.ndarray
    horizon: float
    exploded: bool = False

    def value_at(self, t: float) -> int:
        i = int(np.searchsorted(self.event_times, t, side="right"))
        return self.n0 if i == 0 else int(self.counts[i - 1])

    @property
    def final(self) -> int:
        return int(self.counts[-1]) if self.counts.size else self.n0

    def csv_rows(self):
        yield repr(0.0), self.n0
        for t, z in zip(self.event_times, self.counts):
            yield repr(float(t)), int(z)


def simulate_vertex_count(params: AsegParams, rng, ceiling: int = DEFAULT_CEILING) -> VertexCountPath:
    """Exact Gillespie path of ``Z`` on ``[0, horizon]``.

    Stops early with ``exploded=True`` once the count exceeds ``ceiling``.
    """
    ts, zs, exploded = _count_path(
        int(params.n0), float(params.alpha), float(params.kappa),
        float(params.horizon), int(ceiling), rng,
    )
    return VertexCountPath(int(params.n0), ts, zs, float(params.horizon), bool(exploded))


@dataclass(frozen=True)
class CountStudy:
    """Counts of many independent replicates at each observation time."""

    times: np.ndarray
    counts: np.ndarray  # shape (replicates, len(times))
    returned: np.ndarray = field(repr=False)
    exploded: np.ndarray = field(repr=False)
    events: int = 0
    leaps: int = 0


def count_study(
    params: AsegParams,
    times: Sequence[float],
    replicates: int,
    seed: RngSpec,
    threads: Optional[int] = None,
    ceiling: int = DEFAULT_CEILING,
    leap_above: Optional[int] = None,
    leap_eps: float = LEAP_EPS,
    mark_time: float = math.inf,
    target: int = 0,
) -> CountStudy:
    """Replicates of ``Z`` observed at ``times`` (sorted), in fixed blocks
    with one stream per block (``seed.child(block)``).

    ``returned[r]`` records whether replicate ``r`` jumped to ``target``
    after ``mark_time``. ``leap_above=None`` keeps the simulation exact.
    """
    obs = np.asarray(times, dtype=float)
    if obs.ndim != 1 or np.any(np.diff(obs) < 0) or np.any(obs < 0):
        raise InvalidArgument("times must be a sorted list of non-negative reals")
    if leap_above is not None and leap_above < 2:
        raise InvalidArgument("leap_above must be at least 2")
    sizes = block_sizes(replicates)
    la = 0 if leap_above is None else int(leap_above)

    def run(i):
        rng = derive_rng_stream(seed.child(i))
        return _count_obs_batch(
            sizes[i], int(params.n0), float(params.alpha), float(params.kappa), obs,
            int(ceiling), la, float(leap_eps), float(mark_time), int(target), rng,
        )

    parts = parallel_map(run, list(range(len(sizes))), threads)
    if not parts:
        e = np.empty(0, bool)
        return CountStudy(obs, np.empty((0, obs.size), np.int64), e, e)
    return CountStudy(
        obs,
        np.vstack([p[0] for p in parts]),
        np.concatenate([p[1] for p in parts]),
        np.concatenate([p[2] for p in parts]),
        int(sum(p[3][0] for p in parts)),
        int(sum(p[3][1] for p in parts)),
    )


def pgf_values(counts: np.ndarray, x: float) -> np.ndarray:
    """``x ** Z`` elementwise, with ``0 ** 0`` never arising since ``Z >= 1``."""
    return np.power(float(x), counts.astype(float))


def pgf_estimate(
    params: AsegParams,
    replicates: int,
    seed: RngSpec,
    threads: Optional[int] = None,
    ceiling: int = DEFAULT_CEILING,
    leap_above: Optional[int] = None,
) -> McSummary:
    """Monte Carlo summary of ``x ** Z_T``."""
    if replicates < 1:
        raise InvalidArgument("replicates must be positive")
    if params.horizon == 0:
        return McSummary.exact(params.x ** params.n0, replicates)
    st = count_study(params, [params.horizon], replicates, seed, threads, ceiling, leap_above)
    return McSummary.from_samples(pgf_values(st.counts[:, 0], params.x))


def stationary_sample(
    alpha: float,
    horizon: float,
    n0: int,
    replicates: int,
    seed: RngSpec,
    threads: Optional[int] = None,
    leap_above: Optional[int] = STATIONARY_LEAP_ABOVE,
    ceiling: int = 10**12,
) -> np.ndarray:
    """Values of ``Z_T`` at ``kappa = 1`` across replicates."""
    if not 0 <= alpha < 0.5:
        raise InvalidArgument("the stationary regime needs 0 <= alpha < 1/2")
    params = AsegParams(n0, alpha, 1.0, horizon)
    st = count_study(params, [horizon], replicates, seed, threads, ceiling, leap_above)
    return st.counts[:, 0]


def empirical_pmf(values: np.ndarray, kmax: int) -> np.ndarray:
    """Empirical masses of ``1..kmax`` (index 0 is ``k = 1``)."""
    values = np.asarray(values)
    return np.array([np.mean(values == k) for k in range(1, kmax + 1)])


# --------------------------------------------------------------------------
# full graph


class EventKind(Enum):
    COALESCENCE = "Coalescence"
    BRANCHING = "Branching"
    PAIRWISE_BRANCHING = "PairwiseBranching"


@dataclass
class AsegGraph:
    """Vertices are dense ids in creation order; edges point from the
    vertex that produced to the vertex produced."""

    horizon: float
    birth: list = field(default_factory=list)
    death: list = field(default_factory=list)  # nan while active
    edges: list = field(default_factory=list)
    events: list = field(default_factory=list)  # (time, EventKind, participants)
    types: Optional[np.ndarray] = None
    exploded: bool = False

    def add_vertex(self, t: float) -> int:
        self.birth.append(t)
        self.death.append(math.nan)
        return len(self.birth) - 1

    @property
    def n_vertices(self) -> int:
        return len(self.birth)

    def active(self) -> list[int]:
        return [v for v, d in enumerate(self.death) if math.isnan(d)]

    def active_count_at(self, t: float) -> int:
        return sum(1 for b, d in zip(self.birth, self.death) if b <= t and (math.isnan(d) or d > t))

    def count_path(self) -> tuple[np.ndarray, np.ndarray]:
        n = sum(1 for b in self.birth if b == 0.0)
        times, counts = [], []
        for t, kind, _ in self.events:
            n += -1 if kind is EventKind.COALESCENCE else 1
            times.append(t)
            counts.append(n)
        return np.array(times), np.array(counts, dtype=np.int64)

    def edge_rows(self):
        yield from self.edges

    def vertex_rows(self):
        for v in range(self.n_vertices):
            d = self.death[v]
            typ = "" if self.types is None else int(self.types[v])
            yield v, repr(self.birth[v]), ("" if math.isnan(d) else repr(d)), int(math.isnan(d)), typ


def simulate_graph(params: AsegParams, rng, ceiling: int = DEFAULT_CEILING, max_events: Optional[int] = None) -> AsegGraph:
    """Build the graph on ``[0, horizon]`` event by event.

    Participants are drawn uniformly from the active vertices. With
    ``max_events`` the construction stops after that many events.
    """
    g = AsegGraph(float(params.horizon))
    active = [g.add_vertex(0.0) for _ in range(params.n0)]
    t = 0.0
    a, k = float(params.alpha), float(params.kappa)
    while max_events is None or len(g.events) < max_events:
        j = len(active)
        pairs = j * (j - 1) / 2.0
        rates = np.array([pairs, a * j, k * pairs])
        tot = rates.sum()
        if tot <= 0:
            break
        t += rng.exponential(1.0 / tot)
        if t > params.horizon:
            break
        kind = list(EventKind)[int(np.searchsorted(np.cumsum(rates), rng.random() * tot, side="right"))]
        if kind is EventKind.COALESCENCE:
            i1, i2 = rng.choice(j, size=2, replace=False)
            p1, p2 = active[i1], active[i2]
            for i in sorted((i1, i2), reverse=True):
                active.pop(i)
            c = g.add_vertex(t)
            g.death[p1] = g.death[p2] = t
            g.edges += [(p1, c), (p2, c)]
            active.append(c)
            g.events.append((t, kind, (p1, p2, c)))
        else:
            i = int(rng.integers(j))
            p = active.pop(i)
            c1, c2 = g.add_vertex(t), g.add_vertex(t)
            g.death[p] = t
            g.edges += [(p, c1), (p, c2)]
            active += [c1, c2]
            g.events.append((t, kind, (p, c1, c2)))
        if len(active) > ceiling:
            g.exploded = True
            break
    return g


def color_and_propagate(graph: AsegGraph, x: float, rng, tip_types: Optional[Sequence[int]] = None) -> AsegGraph:
    """Type every vertex.

    Active vertices get type 0 with probability ``x`` (or the given
    ``tip_types``, in ``graph.active()`` order). An inactive vertex is type
    1 exactly when some directed path leads from it to a type-1 vertex;
    that set is found by a reverse breadth-first search from the type-1 tips.
    """
    tips = graph.active()
    if tip_types is None:
        tip_types = (rng.random(len(tips)) >= x).astype(np.int8)
    elif len(tip_types) != len(tips):
        raise InvalidArgument("need one type per active vertex")
    types = np.zeros(graph.n_vertices, np.int8)
    back: list[list[int]] = [[] for _ in range(graph.n_vertices)]
    for src, dst in graph.edges:
        back[dst].append(src)
    queue = deque()
    for v, tp in zip(tips, tip_types):
        if tp:
            types[v] = 1
            queue.append(v)
    while queue:
        v = queue.popleft()
        for u in back[v]:
            if not types[u]:
                types[u] = 1
                queue.append(u)
    graph.types = types
    return graph
