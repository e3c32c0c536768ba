import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from wfeff.core import InvalidArgument, RngSpec, derive_rng_stream
from wfeff.diffusion import (
    Boundary,
    BoundaryInaccessible,
    DiffusionSpec,
    M2Case,
    absorption_study,
    absorption_trial,
    classify_m2_case,
    coupled_absorption_times,
    drift,
    em_step,
    generator_apply,
    noise_coef,
    simulate_path,
)


def test_classify_examples():
    c = classify_m2_case("1/5")
    assert (c.case_tag, c.a, c.b) == (M2Case.CASE_I, 1, 5)
    c = classify_m2_case("9/10")
    assert (c.case_tag, c.b) == (M2Case.CASE_II, 10)
    c = classify_m2_case("7/10")
    assert (c.case_tag, c.a, c.b, c.m) == (M2Case.CASE_III, 3, 10, 3)
    assert c.c == (Fraction(3, 10), Fraction(3, 10), Fraction(1, 10))
    c = classify_m2_case("72/83")
    assert (c.case_tag, c.a, c.b, c.m) == (M2Case.CASE_III, 11, 83, 7)
    assert c.c[-1] == Fraction(6, 83)
    with pytest.raises(InvalidArgument):
        classify_m2_case("1")
    with pytest.raises(InvalidArgument):
        classify_m2_case(0)


@given(st.integers(1, 60), st.integers(2, 61))
def test_classify_case_iii_weights(a, b):
    if a >= b:
        return
    k = Fraction(a, b)
    c = classify_m2_case(k)
    assert c.kappa == k
    if c.case_tag is M2Case.CASE_III:
        assert c.a >= 2
        assert sum(c.c) + Fraction(c.a, c.b) == 1
        assert all(ci >= 0 for ci in c.c)
        assert c.m == math.floor(1 / (1 - k))


def test_spec_validation():
    with pytest.raises(InvalidArgument):
        DiffusionSpec.m2(0.4)
    with pytest.raises(InvalidArgument):
        DiffusionSpec.m2("1")
    with pytest.raises(InvalidArgument):
        DiffusionSpec.m1(0.3, -1.0)
    with pytest.raises(InvalidArgument):
        DiffusionSpec.m1(1.5)


def test_drift_examples():
    m1 = DiffusionSpec.m1(0.3, 0.7)
    assert drift(m1, 0.0) == 0 and drift(m1, 1.0) == 0
    assert drift(m1, 0.4) == pytest.approx(-0.7 * 0.24)
    assert drift(DiffusionSpec.m2("2/5"), 0.5) == pytest.approx(0.08, abs=1e-15)
    assert drift(DiffusionSpec.m2("2/5", 0.3), 0.625) == pytest.approx(0, abs=1e-15)


def test_drift_case_ii_and_iii_formulas():
    x = 0.37
    s = DiffusionSpec.m2("9/10", 0.2)
    expect = (-0.2 + 0.1 * (1 - 0.9 * x) * sum(1 - x**r for r in range(2, 10))) * x * (1 - x)
    assert drift(s, x) == pytest.approx(expect, rel=1e-13)
    s1 = DiffusionSpec.m2("9/10", 0.2, caseii_sum_from=1)
    expect1 = expect + 0.1 * (1 - 0.9 * x) * (1 - x) * x * (1 - x)
    assert drift(s1, x) == pytest.approx(expect1, rel=1e-13)
    s = DiffusionSpec.m2("7/10", 0.1)
    c = (0.3, 0.3, 0.1)
    expect = (-0.1 + (1 - 0.7 * x) * sum(ci * (1 - x ** (i + 1)) for i, ci in enumerate(c))) * x * (1 - x)
    assert drift(s, x) == pytest.approx(expect, rel=1e-13)


def test_noise_examples():
    s = DiffusionSpec.m1(0.0)
    assert noise_coef(s, 0.0) == 0 and noise_coef(s, 1.0) == 0
    assert noise_coef(s, 0.5) == 0.5
    assert noise_coef(DiffusionSpec.m1(1.0), 0.9) == pytest.approx(math.sqrt(0.9 * 0.1 * 0.1))


all_specs = [
    DiffusionSpec.m1(0.0, 0.5),
    DiffusionSpec.m1(0.3, 0.0),
    DiffusionSpec.m1(1.0, 0.25),
    DiffusionSpec.m2("1/5", 0.1),
    DiffusionSpec.m2("9/10", 0.3),
    DiffusionSpec.m2("9/10", 0.3, caseii_sum_from=1),
    DiffusionSpec.m2("7/10", 0.2),
    DiffusionSpec.m2("1/2"),
]


@pytest.mark.parametrize("spec", all_specs, ids=lambda s: s.label())
def test_coefficients_vanish_at_boundaries(spec):
    for x in (0.0, 1.0):
        assert drift(spec, x) == 0
        assert noise_coef(spec, x) == 0


m2_kappas = ["1/10", "1/5", "2/5", "49/100", "1/2", "3/5", "7/10", "9/10", "13/14"]


@pytest.mark.parametrize("kappa", m2_kappas)
def test_m2_neutral_drift_positive_inside(kappa):
    spec = DiffusionSpec.m2(kappa)
    xs = np.linspace(0, 1, 201)[1:-1]
    assert all(drift(spec, x) > 0 for x in xs)


@given(st.floats(0.05, 0.49), st.floats(0, 1))
@settings(max_examples=60)
def test_case_i_root_sign_change(k, a):
    kappa = Fraction(k).limit_denominator(1000)
    if not 0 < kappa < Fraction(1, 2):
        return
    kf = float(kappa)
    root = (kf - a) / kf**2
    # keep the root away from the grid ends so the grid can resolve it
    assume(abs(root) > 0.01 and abs(root - 1) > 0.01)
    spec = DiffusionSpec.m2(kappa, a)
    xs = np.linspace(0.001, 0.999, 999)
    vals = np.array([drift(spec, x) for x in xs])
    has_root = a < kf and root < 1
    flips = np.flatnonzero(np.diff(np.sign(vals)) != 0)
    if has_root:
        assert flips.size == 1
        assert xs[flips[0]] <= root + 1e-12 and root <= xs[flips[0] + 1] + 1e-12
    else:
        assert flips.size == 0


@pytest.mark.parametrize("spec", [DiffusionSpec.m2("0", 0.7), DiffusionSpec.m1(0.0, 0.7)])
def test_kappa_zero_reduces_to_classical(spec):
    for x in np.linspace(0, 1, 11):
        assert drift(spec, x) == pytest.approx(-0.7 * x * (1 - x), abs=1e-16)
        assert noise_coef(spec, x) == pytest.approx(math.sqrt(x * (1 - x)), abs=1e-16)


def test_generator_examples():
    s = DiffusionSpec.m1(0.3)
    zero = lambda x: 0.0
    assert generator_apply(s, lambda x: 5.0, zero, zero, 0.4) == 0
    assert generator_apply(s, lambda x: x, lambda x: 1.0, zero, 0.4) == 0
    s0 = DiffusionSpec.m1(0.0)
    assert generator_apply(s0, lambda x: x * x, lambda x: 2 * x, lambda x: 2.0, 0.5) == pytest.approx(0.25)


def test_em_step_examples():
    s = DiffusionSpec.m1(0.0)
    assert em_step(s, 0.0, 0.01, 3.0) == 0
    assert em_step(DiffusionSpec.m1(0.3), 0.42, 0.01, 0.0) == 0.42
    assert em_step(s, 0.5, 0.01, 1.0) == pytest.approx(0.55)
    assert em_step(s, 0.99, 0.01, 10.0) == 1.0
    assert em_step(s, 0.01, 0.01, -10.0) == 0.0
    assert em_step(DiffusionSpec.m1(1.0), 0.999, 0.01, 50.0) == 1 - 1e-12
    with pytest.raises(InvalidArgument):
        em_step(s, 0.5, 0.0, 1.0)


def test_path_arguments(rng):
    s = DiffusionSpec.m1(0.3)
    with pytest.raises(InvalidArgument):
        simulate_path(s, 0.5, rng=rng)
    with pytest.raises(InvalidArgument):
        simulate_path(s, 1.5, horizon=1.0, rng=rng)


def test_path_absorbed_at_one(rng):
    p = simulate_path(DiffusionSpec.m1(0.3), 1.0, horizon=1.0, rng=rng, until_absorption=True)
    assert p.absorbed == (Boundary.ONE, 0.0)
    assert p.values.size == 1


@pytest.mark.parametrize("spec", all_specs, ids=lambda s: s.label())
def test_path_values_stay_put_after_absorption(spec):
    rng = derive_rng_stream(RngSpec(9, 0))
    for _ in range(20):
        p = simulate_path(spec, 0.3, dt=1e-3, horizon=5.0, rng=rng)
        assert np.all((p.values >= 0) & (p.values <= 1))
        assert np.all(np.diff(p.times) > 0)
        if p.absorbed is not None:
            _, t = p.absorbed
            i = int(round(t / 1e-3))
            assert np.all(p.values[i:] == p.values[i])
        if spec.kappa >= 1:
            assert p.values.max() <= 1 - 1e-12


def test_figure_style_absorption_mostly_done_by_three():
    s = DiffusionSpec.m1(0.3, 0.1)
    st_ = absorption_study(s, 0.5, 1e-3, 2000, RngSpec(77, 0), max_time=3.0)
    assert st_.censored / 2000 < 0.5


def test_absorption_trial_refuses_kappa_one(rng):
    with pytest.raises(BoundaryInaccessible):
        absorption_trial(DiffusionSpec.m1(1.0), 0.5, 1e-3, rng)


def test_absorption_trial_at_zero(rng):
    assert absorption_trial(DiffusionSpec.m1(0.3), 0.0, 1e-3, rng) == (Boundary.ZERO, 0.0)


def test_neutral_fixation_half():
    st_ = absorption_study(DiffusionSpec.m1(0.3), 0.5, 1e-3, 10_000, RngSpec(78, 0))
    f = st_.fix_one
    assert st_.censored == 0
    assert abs(f.mean - 0.5) <= 3 * f.se


def test_study_thread_invariance():
    s = DiffusionSpec.m2("2/5", 0.2)
    a = absorption_study(s, 0.5, 1e-3, 3000, RngSpec(5, 0), threads=1)
    b = absorption_study(s, 0.5, 1e-3, 3000, RngSpec(5, 0), threads=2)
    assert np.array_equal(a.boundaries, b.boundaries)
    assert np.array_equal(a.times, b.times)


@pytest.mark.slow
def test_dt_halving_absorption_time():
    # acceptance settings: kappa = 0.3, x = 0.5, dt = 1e-4, 1e4 paths
    tc, tf = coupled_absorption_times(DiffusionSpec.m1(0.3), 0.5, 1e-4, 10_000, RngSpec(79, 0))
    assert np.all(tc >= 0) and np.all(tf >= 0)
    se = tc.std(ddof=1) / math.sqrt(tc.size)
    assert abs(tc.mean() - tf.mean()) < se
