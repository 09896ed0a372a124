from fractions import Fraction

import numpy as np
import pytest

import dense
from dyadicweights.construction import solve_parameters
from dyadicweights.dyadic import DyadicInterval, integrate_product, pointwise
from dyadicweights.ledger import KINDS, ledger, row_terms, spine_squares
from dyadicweights.operators import martingale_transform, alternating_sign_pattern, square_function

# exact-mode values computed once on the tree and frozen
GOLDEN_MART_K2_L8 = Fraction(187083, 38912)
GOLDEN_SQ_K3_L4 = Fraction(541065305, 5723136)


def brute(aw):
    w = aw.weight
    winv = pointwise(w, "invert")
    T = martingale_transform(w, alternating_sign_pattern(aw))
    return integrate_product(pointwise(T, "square"), winv), integrate_product(square_function(w), winv)


@pytest.mark.parametrize("k,levels", [(2, 1), (2, 4), (2, 7), (3, 2), (3, 3), (4, 2)])
def test_ledger_equals_tree_exactly(weights, k, levels):
    aw = weights(k, levels)
    led = ledger(aw.params)
    mart, sq = brute(aw)
    assert led.transform_integral == mart
    assert led.square_integral == sq


@pytest.mark.parametrize("k,levels", [(2, 4), (3, 2)])
def test_ledger_matches_dense_oracle(weights, k, levels):
    aw = weights(k, levels)
    arr = dense.sample(aw.weight)
    signs = {(iv.depth, iv.index): s for iv, s in alternating_sign_pattern(aw).signs.items()}
    T = dense.transform(arr, signs)
    led = ledger(aw.params)
    assert abs(float(led.transform_integral) - dense.integral(T * T / arr)) < 1e-9 * float(led.transform_integral)
    S2 = dense.square_function(arr)
    assert abs(float(led.square_integral) - dense.integral(S2 / arr)) < 1e-9 * float(led.square_integral)


def test_ledger_per_level_matches_tags(weights):
    aw = weights(3, 3)
    led = ledger(aw.params)
    w = aw.weight
    winv = pointwise(w, "invert")
    S = square_function(w)
    per = {}
    for iv, v in S.leaves:
        key = aw.leaf_tags[iv]
        per[key] = per.get(key, 0) + v * winv.value_on(iv) * iv.length
    for kind in KINDS:
        for lvl, v in enumerate(led.square[kind]):
            assert per.get((kind, lvl), 0) == v


def test_inverse_mass_is_sigma():
    prm = solve_parameters(3).with_levels(5)
    led = ledger(prm)
    total = sum(sum(v) for v in led.inverse_mass.values())
    assert total == prm.sigma


def test_golden_values():
    assert ledger(solve_parameters(2).with_levels(8)).transform_integral == GOLDEN_MART_K2_L8
    assert ledger(solve_parameters(3).with_levels(4)).square_integral == GOLDEN_SQ_K3_L4


def test_truncation_monotone_in_levels():
    prm = solve_parameters(3)
    prev_t = prev_s = Fraction(0)
    for L in range(0, 12):
        led = ledger(prm.with_levels(L))
        assert led.transform_integral >= prev_t and led.square_integral >= prev_s
        prev_t, prev_s = led.transform_integral, led.square_integral


def test_row_terms_match_tree(weights):
    for k in (2, 3, 4):
        aw = weights(k, 2)
        K = DyadicInterval.root()
        w = aw.weight
        terms = row_terms(aw.params)
        for m, th in enumerate(terms):
            R = K.child("11" * m + "1")
            assert (w.node_averages[R.minus] - w.node_averages[R.plus]) / 2 == th
        chain, rows = spine_squares(aw.params)
        for m in range(k - 1):
            R = K.child("11" * m)
            d = w.node_averages[R.plus] - w.node_averages[R.minus]
            assert d * d / 4 == chain[m]


def test_omega_scaling():
    prm = solve_parameters(2).with_levels(3)
    a = ledger(prm)
    b = ledger(prm.with_levels(3, omega=Fraction(5)))
    assert b.transform_integral == 5 * a.transform_integral
    assert b.square_integral == 5 * a.square_integral


def test_negative_levels_rejected():
    with pytest.raises(ValueError):
        ledger(solve_parameters(2), -1)
