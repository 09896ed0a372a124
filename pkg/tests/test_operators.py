import math
import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import dense
from dyadicweights.construction import build_w0
from dyadicweights.dyadic import (DyadicInterval, StepFunction, common_refinement, haar_coefficient,
                                  integrate_product, pointwise)
from dyadicweights.operators import (SignPattern, a1_characteristic, a2_characteristic, maximal_function,
                                     maximal_norm_lower_estimate, maximal_norm_upper_bound,
                                     maximal_testing_constant, martingale_transform, alternating_sign_pattern,
                                     rubio_de_francia, rubio_de_francia_tail, square_function,
                                     weak_distribution, weighted_norm)
from dyadicweights.operators import testing_integral as interval_testing
from strategies import partitions, positive_rationals, step_functions, weights_st

I = DyadicInterval.from_path
ROOT = DyadicInterval.root()


def half_indicator():
    return StepFunction([(I("0"), Fraction(0)), (I("1"), Fraction(1))])


@st.composite
def sign_patterns(draw, max_depth=5):
    nodes = draw(partitions(max_depth))
    internal = set()
    for c in nodes:
        internal.update(c.ancestors())
    return SignPattern({iv: draw(st.sampled_from([-1, 0, 1])) for iv in internal})


def signs_as_dense(s):
    return {(iv.depth, iv.index): v for iv, v in s.signs.items()}


def test_sign_pattern_basics():
    s = SignPattern({I("1"): -1, I("0"): 0, ROOT: 1})
    assert len(s) == 2 and s[I("0")] == 0 and s[I("1")] == -1
    assert SignPattern.from_text(s.to_text()) == s
    with pytest.raises(ValueError):
        SignPattern({ROOT: 2})


def test_alternating_sign_pattern(weights):
    s = alternating_sign_pattern(weights(3, 1))
    assert len(s) == 2 and set(s.signs.values()) == {-1}
    assert len(alternating_sign_pattern(weights(2, 3))) == 2
    for k, L in [(2, 6), (3, 3), (4, 2)]:
        aw = weights(k, L)
        s = alternating_sign_pattern(aw)
        even = sum(len(js) for lvl, js in aw.specials.items() if lvl % 2 == 0)
        assert len(s) <= even * (k - 1) and set(s.signs.values()) <= {-1}


def test_transform_examples():
    assert martingale_transform(StepFunction.constant(Fraction(4)), SignPattern({ROOT: 1})).values == [0]
    f = half_indicator()
    assert all(v == 0 for v in martingale_transform(f, SignPattern({})).values)
    out = martingale_transform(f, SignPattern({ROOT: -1}))
    assert list(out.leaves) == [(I("0"), Fraction(1, 2)), (I("1"), Fraction(-1, 2))]


@settings(max_examples=60)
@given(step_functions(max_depth=5), sign_patterns())
def test_transform_matches_dense_oracle(f, s):
    depth = max(f.depth, 1)
    inside = SignPattern({iv: v for iv, v in s.signs.items() if iv.depth < f.depth})
    ref = dense.transform(dense.sample(f, depth), signs_as_dense(inside))
    got = dense.sample(martingale_transform(f, inside), depth)
    assert np.allclose(got, ref, atol=1e-12)


@given(step_functions(max_depth=5), sign_patterns())
def test_parseval(f, s):
    Tf = martingale_transform(f, s)
    nodes = set(f.internal_nodes)
    expected = sum(haar_coefficient(f, R) ** 2 for R in s.support if R in nodes)
    assert integrate_product(Tf, Tf) == expected


@given(step_functions(max_depth=4), step_functions(max_depth=4), sign_patterns(max_depth=4))
def test_transform_self_adjoint(f, g, s):
    assert integrate_product(martingale_transform(f, s), g) == integrate_product(f, martingale_transform(g, s))


def test_square_examples():
    assert square_function(StepFunction.constant(Fraction(2))).values == [0]
    S = square_function(half_indicator())
    assert S.values == [Fraction(1, 4), Fraction(1, 4)]


@given(step_functions())
def test_square_parseval(f):
    mean = sum(v * iv.length for iv, v in f.leaves)
    centered = f.map(lambda v: v - mean)
    assert sum(v * iv.length for iv, v in square_function(f).leaves) == integrate_product(centered, centered)


@settings(max_examples=60)
@given(step_functions(max_depth=6))
def test_square_matches_dense_oracle(f):
    depth = max(f.depth, 1)
    assert np.allclose(dense.sample(square_function(f), depth), dense.square_function(dense.sample(f, depth)),
                       atol=1e-12)


def test_maximal_examples():
    c = StepFunction.constant(Fraction(3))
    assert maximal_function(c).values == [3]
    left = StepFunction([(I("0"), Fraction(1)), (I("1"), Fraction(0))])
    assert maximal_function(left).values == [1, Fraction(1, 2)]
    with pytest.raises(ValueError, match="maximal function expects nonnegative input"):
        maximal_function(StepFunction([(I("0"), Fraction(-1)), (I("1"), Fraction(1))]))


@given(weights_st(max_depth=6))
def test_maximal_matches_dense_oracle(f):
    depth = f.depth
    assert np.allclose(dense.sample(maximal_function(f), depth), dense.maximal(dense.sample(f, depth)))


@given(weights_st(max_depth=5), st.integers(0, 31))
def test_maximal_localized_matches_dense(f, j):
    J = DyadicInterval(5, j) if f.depth >= 5 else DyadicInterval(min(f.depth, 2), j % (1 << min(f.depth, 2)))
    M = maximal_function(f, J)
    depth = max(f.depth, J.depth)
    arr = dense.sample(f, depth)
    mask = np.zeros_like(arr)
    lo = int(J.left * 2 ** depth)
    mask[lo:lo + (len(arr) >> J.depth)] = 1
    assert np.allclose(dense.sample(M, depth), dense.maximal(arr * mask))


@given(weights_st(max_depth=5), weights_st(max_depth=5), positive_rationals)
def test_maximal_monotone_homogeneous_dominant(f, g, c):
    Mf = maximal_function(f)
    for cell in common_refinement(f, Mf):
        assert Mf.value_on(cell) >= f.value_on(cell)
    fg = StepFunction([(cell, max(f.value_on(cell), g.value_on(cell)))
                       for cell in common_refinement(f, g)])
    Mfg = maximal_function(fg)
    for cell in Mfg.intervals:
        assert Mfg.value_on(cell) >= Mf.value_on(cell)
    assert maximal_function(pointwise(f, "scale", by=c)) == pointwise(Mf, "scale", by=c)
    MMf = maximal_function(Mf)
    for cell in MMf.intervals:
        assert MMf.value_on(cell) >= Mf.value_on(cell)


def test_a2_examples(weights):
    assert a2_characteristic(StepFunction.constant(Fraction(5))) == 1
    p = Fraction(19, 7)
    assert a2_characteristic(build_w0(1, p, ROOT, p)) == p
    aw = weights(3, 2)
    prm = aw.params
    assert a2_characteristic(aw.weight) > prm.p / prm.tau_w * Fraction(4, 32)


@given(weights_st(), positive_rationals)
def test_a2_invariances(w, c):
    a = a2_characteristic(w)
    assert a == a2_characteristic(pointwise(w, "invert"))
    assert a == a2_characteristic(pointwise(w, "scale", by=c))
    assert abs(float(a) - dense.a2(dense.sample(w))) < 1e-9 * float(a)


def test_a1_examples():
    assert a1_characteristic(StepFunction.constant(Fraction(2))) == 1
    w = StepFunction([(I("0"), Fraction(2)), (I("1"), Fraction(1))])
    assert a1_characteristic(w) == Fraction(3, 2)


@given(weights_st())
def test_a1_at_least_one(w):
    assert a1_characteristic(w) >= 1


def test_weak_distribution_examples(weights):
    zero = StepFunction.constant(Fraction(0))
    one = StepFunction.constant(Fraction(1))
    assert weak_distribution(zero, one, 1) == 0
    assert weak_distribution(StepFunction.constant(Fraction(2)), one, 1) == 1
    aw = weights(3, 2)
    S = square_function(pointwise(aw.weight, "invert"))
    big = max(S.values) + 1
    assert weak_distribution(S, aw.weight, big) == 0


def test_rubio_de_francia_constant():
    g = StepFunction.constant(Fraction(1))
    R = rubio_de_francia(g, g, Fraction(3), 4)
    assert R.values == [sum(Fraction(1, 6 ** j) for j in range(5))]
    with pytest.raises(ValueError):
        rubio_de_francia(g, g, 3, -1)


@pytest.mark.parametrize("k,levels", [(2, 3), (3, 2)])
def test_rubio_de_francia_properties(weights, k, levels):
    w = weights(k, levels).weight.map(float)
    winv = pointwise(w, "invert")
    M = maximal_norm_upper_bound(w)
    rng = random.Random(3)
    for _ in range(5):
        g = StepFunction([(iv, rng.random()) for iv in w.intervals])
        R = rubio_de_francia(g, w, M, 10)
        assert all(r >= v for (_, r), (_, v) in zip(R.leaves, g.leaves))
        assert weighted_norm(R, winv) <= 2 * weighted_norm(g, winv)
        MR = maximal_function(R)
        tail = rubio_de_francia_tail(g, M, 10)
        for cell in MR.intervals:
            assert MR.value_on(cell) <= 2 * M * R.value_on(cell) + tail.value_on(cell) + 1e-12


@pytest.mark.parametrize("k,levels", [(2, 3), (2, 5), (3, 2)])
def test_maximal_norm_bounds_bracket_random_ratios(weights, k, levels):
    w = weights(k, levels).weight.map(float)
    winv = pointwise(w, "invert")
    upper = maximal_norm_upper_bound(w)
    lower = maximal_norm_lower_estimate(w)
    assert 1 <= lower <= upper
    assert maximal_testing_constant(w) <= upper
    rng = np.random.default_rng(0)
    for _ in range(30):
        g = StepFunction([(iv, float(x)) for iv, x in zip(w.intervals, rng.exponential(size=len(w.intervals)))])
        assert weighted_norm(maximal_function(g), winv) <= upper * weighted_norm(g, winv)


def test_interval_testing_constant():
    one = StepFunction.constant(Fraction(1))
    assert interval_testing(one, ROOT) == 1
    assert interval_testing(one, I("01")) == Fraction(1, 4)
