"""Dyadic operators on step functions: martingale transforms, square and maximal functions,
A2/A1 characteristics, weak-type distributions, and the Rubio de Francia iteration."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Mapping

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.linalg import svds

from .construction import AnnotatedWeight
from .dyadic import (DyadicInterval, StepFunction, average, common_refinement, haar_difference,
                     integral, partition_around, pointwise)
from .scalar import is_exact, total


def _zero(f: StepFunction):
    return Fraction(0) if f.is_exact else 0.0


@dataclass(frozen=True)
class SignPattern:
    """Finitely supported map from dyadic intervals to {-1, 0, +1}."""

    signs: Mapping[DyadicInterval, int]

    def __post_init__(self):
        clean = {}
        for iv, s in self.signs.items():
            if s not in (-1, 0, 1):
                raise ValueError(f"sign {s} not in {{-1, 0, 1}}")
            if s:
                clean[iv] = s
        object.__setattr__(self, "signs", dict(sorted(clean.items(), key=lambda kv: (kv[0].left, kv[0].depth))))

    def __getitem__(self, I: DyadicInterval) -> int:
        return self.signs.get(I, 0)

    def __len__(self):
        return len(self.signs)

    @property
    def support(self) -> list[DyadicInterval]:
        return list(self.signs)

    def to_text(self) -> str:
        return "".join(f"{iv.path or '-'}\t{s}\n" for iv, s in self.signs.items())

    @classmethod
    def from_text(cls, text: str) -> SignPattern:
        signs = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            path, s = line.split("\t")
            signs[DyadicInterval.from_path(path)] = int(s)
        return cls(signs)


def alternating_sign_pattern(aw: AnnotatedWeight) -> SignPattern:
    """-1 on every row interval of every special created at an even level."""
    signs = {}
    for level, js in aw.specials.items():
        if level % 2:
            continue
        for J in js:
            for R in aw.rows[J]:
                signs[R] = -1
    return SignPattern(signs)


def accumulate_down(f: StepFunction, contrib: Callable, zero=None) -> dict:
    """For each leaf, the sum over strict tree ancestors R of ``contrib(R, side)``.

    ``side`` is -1 when the leaf lies in R- and +1 when it lies in R+.
    """
    if zero is None:
        zero = _zero(f)
    nodes = sorted(f.internal_nodes, key=lambda iv: iv.depth)
    acc = {DyadicInterval.root(): zero}
    for R in nodes:
        base = acc[R]
        cm, cp = contrib(R)
        acc[R.minus] = base + cm
        acc[R.plus] = base + cp
    return {iv: acc[iv] for iv, _ in f.leaves}


def martingale_transform(f: StepFunction, s: SignPattern) -> StepFunction:
    """``sum_R s(R) (f, h_R) h_R`` on the leaf partition of ``f``."""
    zero = _zero(f)

    def contrib(R):
        sign = s[R]
        if not sign:
            return zero, zero
        t = haar_difference(f, R) / 2
        return -sign * t, sign * t

    acc = accumulate_down(f, contrib, zero)
    return StepFunction(((iv, acc[iv]) for iv, _ in f.leaves), check=False)


def square_function(f: StepFunction) -> StepFunction:
    """``S^2 f = sum_I (f, h_I)^2 chi_I / |I| = sum_I (Delta_I f)^2 chi_I / 4``."""

    def contrib(R):
        d = haar_difference(f, R)
        q = d * d / 4
        return q, q

    acc = accumulate_down(f, contrib)
    return StepFunction(((iv, acc[iv]) for iv, _ in f.leaves), check=False)


def delta_square_sum(f: StepFunction, J: DyadicInterval | None = None, scale=1) -> StepFunction:
    """``sum_{I subset J} (<f>_{I+} - <f>_{I-})^2 chi_I`` times ``scale``; zero outside J."""
    if J is None:
        J = DyadicInterval.root()
    zero = _zero(f)

    def contrib(R):
        if not J.contains(R):
            return zero, zero
        d = haar_difference(f, R)
        return d * d * scale, d * d * scale

    acc = accumulate_down(f, contrib, zero)
    return StepFunction(((iv, acc[iv]) for iv, _ in f.leaves), check=False)


def _check_nonnegative(f: StepFunction):
    for _, v in f.leaves:
        if v < 0:
            raise ValueError("maximal function expects nonnegative input")


def maximal_function(f: StepFunction, J: DyadicInterval | None = None) -> StepFunction:
    """Dyadic maximal function of ``f chi_J`` over intervals inside [0, 1)."""
    if J is None:
        J = DyadicInterval.root()
    _check_nonnegative(f)
    avgs = f.node_averages
    cells = []
    hit = f.leaf_containing(J)
    if hit is not None:
        cells.append((J, hit[1]))
    else:
        # running max of averages from J down to each leaf
        best = {J: avgs[J]}
        for R in sorted((n for n in f.internal_nodes if J.contains(n)), key=lambda iv: iv.depth):
            for c in R.children():
                a = avgs[c]
                best[c] = a if a > best[R] else best[R]
        for iv, _ in f.leaves:
            if J.contains(iv):
                cells.append((iv, best[iv]))
    mass = integral(f, J)
    exact = is_exact(mass)
    for cell in partition_around(J):
        if cell == J:
            continue
        size = cell.parent.length
        cells.append((cell, mass / size if exact else float(mass) / float(size)))
    return StepFunction(cells, check=False)


def a2_characteristic(w: StepFunction):
    """``max_I <w>_I <w^{-1}>_I`` over every dyadic interval of the tree."""
    winv = pointwise(w, "invert")
    aw, av = w.node_averages, winv.node_averages
    best = None
    for I in w.nodes:
        v = aw[I] * av[I]
        if best is None or v > best:
            best = v
    return best


def a2_argmax(w: StepFunction) -> DyadicInterval:
    winv = pointwise(w, "invert")
    aw, av = w.node_averages, winv.node_averages
    return max(w.nodes, key=lambda I: float(aw[I] * av[I]))


def a1_characteristic(w: StepFunction):
    """``max_I <w>_I / min_I w``."""
    mins: dict = {iv: v for iv, v in w.leaves}
    for R in sorted(w.internal_nodes, key=lambda iv: -iv.depth):
        a, b = mins[R.minus], mins[R.plus]
        mins[R] = a if a < b else b
    avgs = w.node_averages
    best = None
    for I in w.nodes:
        v = avgs[I] / mins[I]
        if best is None or v > best:
            best = v
    return best


def weak_distribution(f: StepFunction, w: StepFunction, lam) -> object:
    """w-measure of ``{f > lam}``."""
    terms = []
    for c in common_refinement(f, w):
        if f.value_on(c) > lam:
            wv = w.value_on(c)
            terms.append(wv * c.length if is_exact(wv) else float(wv) * float(c.length))
    return total(terms) if terms else _zero(w)


def rubio_de_francia(g: StepFunction, w: StepFunction, M_norm, terms: int) -> StepFunction:
    """Truncated ``sum_{j=0}^{terms} (M^d)^j g / (2 M_norm)^j``."""
    if terms < 0:
        raise ValueError("terms must be nonnegative")
    acc = g
    cur = g
    for j in range(1, terms + 1):
        cur = maximal_function(cur)
        acc = acc + pointwise(cur, "scale", by=1 / (2 * M_norm) ** j)
    return acc


def rubio_de_francia_tail(g: StepFunction, M_norm, terms: int) -> StepFunction:
    """Pointwise slack in ``M(Rg) <= 2 M_norm Rg + tail`` from truncating the series."""
    cur = g
    for _ in range(terms + 1):
        cur = maximal_function(cur)
    return pointwise(cur, "scale", by=2 * M_norm / (2 * M_norm) ** (terms + 1))


def weighted_norm(f: StepFunction, weight: StepFunction) -> float:
    """``(int f^2 weight)^{1/2}``."""
    cells = common_refinement(f, weight)
    s = math.fsum(float(f.value_on(c)) ** 2 * float(weight.value_on(c)) * float(c.length) for c in cells)
    return math.sqrt(s)


def testing_integral(w: StepFunction, J: DyadicInterval, winv: StepFunction | None = None,
                     over_all: bool = False):
    """``int_J M^d(w chi_J)^2 w^{-1}`` (or over [0,1) with ``over_all``)."""
    if winv is None:
        winv = pointwise(w, "invert")
    m = maximal_function(w, J)
    terms = []
    for c in common_refinement(m, winv):
        if over_all or J.contains(c):
            mv, iv = m.value_on(c), winv.value_on(c)
            if is_exact(mv) and is_exact(iv):
                terms.append(mv * mv * iv * c.length)
            else:
                terms.append(float(mv) ** 2 * float(iv) * float(c.length))
    return total(terms)


def maximal_testing_constant(w: StepFunction) -> float:
    """Sawyer-type surrogate ``max_J (int_J M(w chi_J)^2 w^{-1} / w(J))^{1/2}`` (an estimate)."""
    winv = pointwise(w, "invert")
    best = 0.0
    for J in w.nodes:
        r = float(testing_integral(w, J, winv)) / float(integral(w, J))
        best = max(best, r)
    return math.sqrt(best)


def maximal_norm_lower_estimate(w: StepFunction) -> float:
    """``max_J ||M(w chi_J)||_{w^{-1}} / ||w chi_J||_{w^{-1}}``: a lower bound on the norm."""
    winv = pointwise(w, "invert")
    best = 1.0
    for J in w.nodes:
        r = float(testing_integral(w, J, winv, over_all=True)) / float(integral(w, J))
        best = max(best, r)
    return math.sqrt(best)


def maximal_norm_upper_bound(w: StepFunction) -> float:
    """Rigorous upper bound for ``||M^d : L^2(w^{-1}) -> L^2(w^{-1})||``.

    Below leaf scale the weight is constant and Doob gives 2; above it,
    ``max_I <f>_I <= (sum_I <f>_I^2)^{1/2}`` turns the coarse part into a linear map
    whose spectral norm is computed.  The two parts combine in quadrature.
    """
    winv = pointwise(w, "invert")
    leaves = w.intervals
    col = {iv: j for j, iv in enumerate(leaves)}
    wi_int = winv.node_integrals
    rows, cols, vals = [], [], []
    nodes = w.nodes
    for r, I in enumerate(nodes):
        mass = float(wi_int[I])
        for iv in leaves if I.depth == 0 else _leaves_in(w, I):
            q = float(iv.length)
            wq = float(winv.value_on(iv))
            rows.append(r)
            cols.append(col[iv])
            vals.append(math.sqrt(q) * math.sqrt(mass) / (float(I.length) * math.sqrt(wq)))
    A = csr_matrix((vals, (rows, cols)), shape=(len(nodes), len(leaves)))
    if min(A.shape) <= 2:
        smax = float(np.linalg.norm(A.toarray(), 2))
    else:
        smax = float(svds(A, k=1, return_singular_vectors=False, random_state=0)[0])
    return math.sqrt(4.0 + smax * smax) * (1 + 1e-9)


def _leaves_in(f: StepFunction, I: DyadicInterval) -> list[DyadicInterval]:
    import bisect
    lo = bisect.bisect_left(f._starts, I.left)
    hi = bisect.bisect_left(f._starts, I.right)
    return [f.leaves[j][0] for j in range(lo, hi)]
