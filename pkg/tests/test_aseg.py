import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wfeff.aseg import (
    AsegParams,
    EventKind,
    color_and_propagate,
    count_study,
    empirical_pmf,
    jump_chain_probs,
    pgf_estimate,
    simulate_graph,
    simulate_vertex_count,
    stationary_sample,
    transition_rates,
)
from wfeff.core import InvalidArgument, RngSpec, derive_rng_stream
from wfeff.diffusion import DiffusionSpec, observe_batch


def test_rates_examples():
    assert transition_rates(1, 0.3, 0.7) == (0.3, 0.0)
    assert transition_rates(2, 0.3, 0.7) == pytest.approx((0.6 + 0.7, 1.0))
    assert transition_rates(4, 0.0, 1.0) == (6.0, 6.0)
    with pytest.raises(InvalidArgument):
        transition_rates(0, 0.1, 0.1)


def test_jump_chain_examples():
    for k in (2, 5, 50):
        assert jump_chain_probs(k, 0.0) == (0.5, 0.5)
    assert jump_chain_probs(10, 0.25)[0] == pytest.approx(47.5 / 92.5, abs=1e-15)


def test_jump_chain_asymptotics():
    a = 0.25
    errs = [abs(jump_chain_probs(k, a)[0] - 0.5 - a / (2 * k)) for k in (10**2, 10**3, 10**4)]
    for e, k in zip(errs, (10**2, 10**3, 10**4)):
        assert e * k * k == pytest.approx(errs[0] * 1e4, rel=0.02)


def test_params_validation():
    with pytest.raises(InvalidArgument):
        AsegParams(0, 0.1, 0.1, 1.0)
    with pytest.raises(InvalidArgument):
        AsegParams(2, -0.1, 0.1, 1.0)
    with pytest.raises(InvalidArgument):
        AsegParams(2, 0.1, 1.1, 1.0)


def test_constant_path_alpha_zero(rng):
    p = simulate_vertex_count(AsegParams(1, 0.0, 0.7, 100.0), rng)
    assert p.counts.size == 0 and p.final == 1


@given(st.integers(1, 8), st.floats(0, 2), st.floats(0, 1), st.integers(0, 2**32))
@settings(max_examples=60, deadline=None)
def test_count_path_invariants(n0, a, k, seed):
    p = simulate_vertex_count(AsegParams(n0, a, k, 5.0), derive_rng_stream(RngSpec(seed, 0)), ceiling=2000)
    z = np.concatenate([[n0], p.counts])
    assert np.all(np.abs(np.diff(z)) == 1)
    assert np.all(z >= 1)
    assert np.all(np.diff(p.event_times) > 0)
    if a == 0:
        ones = np.flatnonzero(z == 1)
        if ones.size:
            assert np.all(z[ones[0]:] == 1)


def test_kingman_pair_time():
    rng = derive_rng_stream(RngSpec(51, 0))
    times = []
    for _ in range(10_000):
        p = simulate_vertex_count(AsegParams(2, 0.0, 0.0, 1e9), rng)
        times.append(p.event_times[0])
    t = np.array(times)
    se = t.std(ddof=1) / math.sqrt(t.size)
    assert abs(t.mean() - 1.0) <= 3 * se


def test_transient_growth_example():
    # exact paths need about j^2 / (2 alpha) events to reach j, so the
    # guard sits at 1e3 here
    rng = derive_rng_stream(RngSpec(52, 0))
    finals = []
    boom = 0
    for _ in range(100):
        p = simulate_vertex_count(AsegParams(2, 1.0, 1.0, 50.0), rng, ceiling=10**3)
        finals.append(p.final)
        boom += p.exploded
    assert boom > 0 or np.median(finals) > 100


def test_pgf_trivial_cases():
    s = pgf_estimate(AsegParams(3, 0.4, 0.4, 0.0, x=0.3), 10, RngSpec(1, 0))
    assert s.mean == pytest.approx(0.027) and s.count == 10
    s = pgf_estimate(AsegParams(1, 0.0, 0.6, 3.0, x=0.3), 500, RngSpec(1, 0))
    assert s.mean == pytest.approx(0.3, abs=1e-15) and s.m2 == pytest.approx(0, abs=1e-20)


def test_pgf_two_state_closed_form():
    s = pgf_estimate(AsegParams(2, 0.0, 0.0, 1.0, x=0.5), 20_000, RngSpec(53, 0))
    exact = 0.5 + (0.25 - 0.5) * math.exp(-1)
    assert abs(exact - 0.40803) < 1e-5
    assert abs(s.mean - exact) <= 3 * s.se


def test_count_study_thread_invariance():
    p = AsegParams(3, 0.25, 1.0, 20.0)
    a = count_study(p, [5.0, 20.0], 5000, RngSpec(9, 0), threads=1, leap_above=64)
    b = count_study(p, [5.0, 20.0], 5000, RngSpec(9, 0), threads=3, leap_above=64)
    assert np.array_equal(a.counts, b.counts)


def test_count_study_exact_matches_path_sampler():
    # exact batch kernel against the single-path kernel: same law at T = 2
    p = AsegParams(3, 0.3, 0.6, 2.0)
    batch = count_study(p, [2.0], 20_000, RngSpec(54, 0)).counts[:, 0]
    rng = derive_rng_stream(RngSpec(54, 1))
    single = np.array([simulate_vertex_count(p, rng).final for _ in range(20_000)])
    k = 8
    pa = np.bincount(np.minimum(batch, k), minlength=k + 1)[1:] / batch.size
    pb = np.bincount(np.minimum(single, k), minlength=k + 1)[1:] / single.size
    assert 0.5 * np.abs(pa - pb).sum() < 0.02


def test_hybrid_leaping_close_to_exact():
    # the exact count has heavy tails; a ceiling keeps single runs short and
    # leaves the masses on 1..10 untouched
    p = AsegParams(5, 0.25, 1.0, 10.0)
    exact = count_study(p, [10.0], 4000, RngSpec(55, 0), ceiling=2000).counts[:, 0]
    hyb = count_study(p, [10.0], 4000, RngSpec(55, 1), ceiling=2000, leap_above=64).counts[:, 0]
    pa, pb = empirical_pmf(exact, 10), empirical_pmf(hyb, 10)
    assert 0.5 * np.abs(pa - pb).sum() < 0.04


def test_stationary_alpha_zero_point_mass():
    z = stationary_sample(0.0, 200.0, 5, 500, RngSpec(56, 0))
    assert np.all(z == 1)


def test_stationary_p1():
    z = stationary_sample(0.25, 200.0, 5, 4000, RngSpec(57, 0))
    p1 = np.mean(z == 1)
    se = math.sqrt(0.25 / z.size)
    assert abs(p1 - 0.5) <= 3 * se


def test_stationary_rejects_transient():
    with pytest.raises(InvalidArgument):
        stationary_sample(0.5, 10.0, 2, 10, RngSpec(1, 0))


def test_single_coalescence_graph(rng):
    g = simulate_graph(AsegParams(2, 0.0, 0.0, 1e9), rng, max_events=1)
    assert g.n_vertices == 3
    assert len(g.edges) == 2
    assert g.events[0][1] is EventKind.COALESCENCE


def test_graph_figure_four_setup(rng):
    g = simulate_graph(AsegParams(4, 0.5, 0.5, 1.0), rng)
    assert sum(1 for b in g.birth if b == 0.0) == 4
    assert {e[1] for e in g.events} <= set(EventKind)


@given(st.integers(1, 6), st.floats(0, 1.5), st.floats(0, 1), st.integers(0, 2**32))
@settings(max_examples=50, deadline=None)
def test_graph_invariants(n0, a, k, seed):
    rng = derive_rng_stream(RngSpec(seed, 0))
    g = simulate_graph(AsegParams(n0, a, k, 2.0), rng, ceiling=300)
    assert len(g.edges) == 2 * len(g.events)
    times, counts = g.count_path()
    for t, z in zip(times, counts):
        assert g.active_count_at(t) == z
    assert len(g.active()) == (counts[-1] if counts.size else n0)
    kinds = {e[1] for e in g.events}
    if k == 0:
        assert EventKind.PAIRWISE_BRANCHING not in kinds
    if a == 0:
        assert EventKind.BRANCHING not in kinds
    for t, kind, part in g.events:
        if kind is EventKind.COALESCENCE:
            p1, p2, c = part
            assert g.death[p1] == g.death[p2] == t == g.birth[c]
            assert (p1, c) in g.edges and (p2, c) in g.edges
        else:
            p, c1, c2 = part
            assert g.death[p] == t == g.birth[c1] == g.birth[c2]


def test_event_kind_frequencies():
    # one event from state j = 5, many times
    rng = derive_rng_stream(RngSpec(58, 0))
    a, k, j = 0.4, 0.7, 5
    n = 100_000
    seen = {kind: 0 for kind in EventKind}
    for _ in range(n):
        g = simulate_graph(AsegParams(j, a, k, 1e9), rng, max_events=1)
        seen[g.events[0][1]] += 1
    pairs = j * (j - 1) / 2
    rates = np.array([pairs, a * j, k * pairs])
    p = rates / rates.sum()
    for kind, pk in zip(EventKind, p):
        se = math.sqrt(pk * (1 - pk) / n)
        assert abs(seen[kind] / n - pk) <= 3 * se


def _reaches_type_one(g, v):
    out = {}
    for s, d in g.edges:
        out.setdefault(s, []).append(d)
    stack, seen = [v], set()
    while stack:
        u = stack.pop()
        if g.types[u] == 1 and u in g.active():
            return True
        for w in out.get(u, []):
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return False


def test_coloring_trivial(rng):
    g = color_and_propagate(simulate_graph(AsegParams(3, 0.5, 0.5, 1.0), rng), 1.0, rng)
    assert np.all(g.types == 0)


def test_single_branching_coloring(rng):
    g = simulate_graph(AsegParams(1, 1.0, 0.0, 1e9), rng, max_events=1)
    assert g.events[0][1] is EventKind.BRANCHING
    color_and_propagate(g, 0.5, rng, tip_types=[0, 1])
    assert g.types[0] == 1


@given(st.integers(1, 5), st.floats(0, 1), st.integers(0, 2**32))
@settings(max_examples=40, deadline=None)
def test_coloring_rule_and_monotonicity(n0, x, seed):
    rng = derive_rng_stream(RngSpec(seed, 0))
    g = simulate_graph(AsegParams(n0, 0.6, 0.6, 1.5), rng, ceiling=200)
    tips = g.active()
    base = (rng.random(len(tips)) >= x).astype(int)
    color_and_propagate(g, x, rng, tip_types=base)
    first = g.types.copy()
    for v in range(g.n_vertices):
        if v not in tips:
            assert first[v] == int(_reaches_type_one(g, v))
    zeros = np.flatnonzero(base == 0)
    if zeros.size:
        flipped = base.copy()
        flipped[zeros[0]] = 1
        color_and_propagate(g, x, rng, tip_types=flipped)
        assert np.all(g.types >= first)


@pytest.mark.slow
def test_roots_all_type_zero_matches_diffusion_moment():
    n = 10_000
    p = AsegParams(2, 0.25, 0.5, 0.5, x=0.6)
    rng = derive_rng_stream(RngSpec(59, 0))
    hits = np.empty(n)
    for r in range(n):
        g = color_and_propagate(simulate_graph(p, rng), p.x, rng)
        hits[r] = float(np.all(g.types[: p.n0] == 0))
    vals = observe_batch(DiffusionSpec.m1(0.5, 0.25), 0.6, 1e-4, [0.5], n, RngSpec(59, 1))[:, 0] ** 2
    se = math.sqrt(hits.var(ddof=1) / n + vals.var(ddof=1) / n)
    assert abs(hits.mean() - vals.mean()) <= 3 * se
