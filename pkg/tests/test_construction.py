import json
from fractions import Fraction

import numpy as np
import pytest

import dense
from dyadicweights.construction import (BudgetError, auto_levels, base_values, build_majorant, build_w0,
                                        build_weight, chain_averages, forming_count, interval_chain, leaf_depth,
                                        solve_parameters, special_measure, special_measure_closed_form,
                                        special_measure_stated)
from dyadicweights.dyadic import DepthLimitError, DyadicInterval, average, integral, pointwise
from dyadicweights.scalar import QuadraticNumber

I = DyadicInterval.from_path
ROOT = DyadicInterval.root()


@pytest.mark.parametrize("k", range(2, 9))
def test_parameters_solve_both_equations(k):
    prm = solve_parameters(k)
    eps = Fraction(1, 4 ** k)
    assert prm.eps == eps
    assert prm.tau_w == 9 * eps / (1 + 5 * eps)
    assert prm.residuals() == (0, 0)
    assert prm.p == (Fraction(2, 3) * (1 - eps) + 2 * eps * prm.tau_w) / (4 * eps)


def test_parameter_values():
    k2, k3 = solve_parameters(2), solve_parameters(3)
    assert (k2.tau_w, k2.p) == (Fraction(3, 7), Fraction(19, 7))
    assert 2 * k2.p == 5 + k2.tau_w
    assert (k3.eps, k3.tau_w, k3.p) == (Fraction(1, 64), Fraction(3, 23), Fraction(243, 23))
    for k in range(3, 9):
        prm = solve_parameters(k)
        assert abs(6 * prm.eps * prm.p - 1) <= Fraction(15, 100)
    with pytest.raises(ValueError):
        solve_parameters(1)


def test_w0_values_and_averages():
    p = Fraction(19, 7)
    w0 = build_w0(1, p, ROOT, p)
    lo, hi = w0.values
    assert abs(float(lo) - 0.20528) < 1e-5 and abs(float(hi) - 1.79472) < 1e-5
    assert average(w0, ROOT) == 1
    assert average(pointwise(w0, "invert"), ROOT) == p
    assert abs(float(lo) - (1 - (12 / 19) ** 0.5)) < 1e-15
    with pytest.raises(ValueError, match="degenerate base weight"):
        build_w0(1, 1, ROOT, 1)
    with pytest.raises(ValueError):
        build_w0(1, 2, ROOT, p)


def test_w0_float_mode_matches_exact():
    p = Fraction(1233, 29)
    lo_e, hi_e = base_values(Fraction(7), p)
    lo_f, hi_f = base_values(7.0, p, "float")
    assert abs(lo_f / float(lo_e) - 1) < 1e-14 and abs(hi_f / float(hi_e) - 1) < 1e-14


def test_k2_one_level_leaves(weights):
    aw = weights(2, 1)
    prm = aw.params
    p, tau = prm.p, prm.tau_w
    lo, hi = base_values(3, p)
    assert list(aw.weight.leaves) == [(I("0"), 1 / p), (I("100"), lo), (I("101"), hi), (I("110"), 1 / p),
                                (I("111"), tau / p)]


@pytest.mark.parametrize("k,levels", [(2, 0), (2, 3), (2, 6), (3, 2), (3, 4), (4, 2), (4, 3)])
def test_averages_exact_on_every_forming_interval(weights, k, levels):
    aw = weights(k, levels)
    w, winv = aw.weight, pointwise(aw.weight, "invert")
    prm = aw.params
    for level, items in aw.forming.items():
        for K, mult in items:
            assert mult == 3 ** level
            assert average(w, K) == prm.omega * mult
            assert average(winv, K) == prm.sigma / mult


@pytest.mark.parametrize("k,levels", [(2, 4), (3, 3)])
def test_float_mode_averages(weights, k, levels):
    aw = weights(k, levels, "float")
    assert abs(float(integral(aw.weight)) - 1) < 1e-12
    assert abs(float(integral(pointwise(aw.weight, "invert"))) / float(aw.params.p) - 1) < 1e-12


def test_omega_scaling():
    prm = solve_parameters(3).with_levels(2, omega=Fraction(5, 2))
    aw = build_weight(prm)
    assert average(aw.weight, ROOT) == Fraction(5, 2)
    assert average(pointwise(aw.weight, "invert"), ROOT) == prm.p / Fraction(5, 2)


def test_specials_and_rows(weights):
    aw = weights(3, 2)
    assert len(aw.specials[1]) == 2
    for level, js in aw.specials.items():
        for J in js:
            K = aw.special_owner[J]
            assert (K, 3 ** level) in aw.forming[level]
            assert J == interval_chain(K, 3)[-1].plus
            assert len(aw.rows[J]) == aw.k - 1
            assert aw.rows[J] == [K.plus, K.child("111")]


def test_special_measure(weights):
    for k in (2, 3, 4):
        aw = weights(k, 2)
        assert special_measure(aw, 0) == Fraction(2, 4 ** k)
    # the enumeration for k = 3 at level 1
    assert special_measure(weights(3, 2), 1) == Fraction(5, 512)
    assert special_measure_closed_form(3, 1) == Fraction(5, 512)
    assert special_measure_stated(3, 1) == Fraction(1, 128)
    # k = 2 keeps one special per level, of length 2**-3 * 4**-level
    assert special_measure(weights(2, 3), 2) == Fraction(1, 128)
    with pytest.raises(ValueError, match="level not constructed"):
        special_measure(weights(3, 2), 2)


@pytest.mark.parametrize("k,levels", [(2, 5), (3, 4), (4, 3)])
def test_special_measure_matches_enumeration_closed_form(weights, k, levels):
    aw = weights(k, levels)
    for level in range(levels):
        assert special_measure(aw, level) == special_measure_closed_form(k, level)


def test_special_value_and_inverse(weights):
    aw = weights(3, 3)
    prm = aw.params
    for level, js in aw.specials.items():
        for J in js:
            v = aw.weight.value_on(J)
            assert v == 3 ** level * prm.omega * prm.tau_w / prm.p
            assert 1 / v == prm.sigma / 3 ** level * (1 + 5 * prm.eps) / (9 * prm.eps)


def test_mass_split(weights):
    aw = weights(3, 2)
    prm = aw.params
    for level, items in aw.forming.items():
        if level == aw.levels:
            continue
        for K, _ in items:
            own = [iv for iv, (kind, lvl) in aw.leaf_tags.items() if lvl == level and K.contains(iv)]
            const = sum(iv.length for iv in own if aw.leaf_tags[iv][0] == "const")
            spec = sum(iv.length for iv in own if aw.leaf_tags[iv][0] == "special")
            assert const / K.length == Fraction(2, 3) * (1 - prm.eps)
            assert spec / K.length == 2 * prm.eps


def test_annotations_cover_each_leaf_once(weights):
    aw = weights(3, 3)
    assert set(aw.leaf_tags) == set(aw.weight.intervals)
    kinds = {kind for kind, _ in aw.leaf_tags.values()}
    assert kinds == {"const", "special", "base"}


def test_chain_averages_match_tree(weights):
    for k in (2, 3, 4):
        aw = weights(k, 2)
        a = chain_averages(aw.params)
        for m, Im in enumerate(interval_chain(ROOT, k)):
            assert average(aw.weight, Im) == a[m]


def test_majorant(weights):
    aw = weights(2, 3)
    wt = build_majorant(aw)
    assert wt.value_on(I("0")) == 1
    assert wt.value_on(I("100")) == 3
    assert wt.value_on(I("10100")) == 9
    for (iv, w), (_, t) in zip(aw.weight.leaves, wt.leaves):
        kind, _ = aw.leaf_tags[iv]
        # base blocks reach (1 + sqrt((p-1)/p)) times the level value, hence the factor 2 there
        assert w <= (2 * t if kind == "base" else t)


def test_sizes_and_budget():
    assert forming_count(3, 2) == 1 + 2 + 4
    assert leaf_depth(2, 3) == 7
    assert auto_levels(2, 2000) == 16
    assert auto_levels(3, 2000) == 9
    assert auto_levels(4, 2000) == 6
    with pytest.raises(BudgetError):
        build_weight(solve_parameters(3).with_levels(12), max_forming=100)
    with pytest.raises(DepthLimitError):
        build_weight(solve_parameters(5).with_levels(9))


def test_dense_oracle_agrees_with_tree_averages(weights):
    aw = weights(2, 4)
    arr = dense.sample(aw.weight)
    assert abs(arr.mean() - 1) < 1e-12
    assert abs((1 / arr).mean() - float(aw.params.p)) < 1e-12


def test_sidecar_json(weights):
    aw = weights(3, 1)
    side = json.loads(aw.sidecar_json())
    assert side["params"]["p"] == "243/23"
    assert side["specials"]["0"] == ["11111"]
    assert side["rows"]["11111"] == ["1", "111"]
