"""Dyadic intervals of [0, 1) and piecewise-constant functions on finite dyadic partitions."""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Callable, Iterable, Iterator, Sequence

from .scalar import QuadraticNumber, format_scalar, is_exact, parse_scalar, total

DEFAULT_MAX_DEPTH = 64


class DepthLimitError(ValueError):
    pass


class PartitionError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class DyadicInterval:
    """``[index * 2**-depth, (index + 1) * 2**-depth)``."""

    depth: int
    index: int

    def __post_init__(self):
        if self.depth < 0 or not 0 <= self.index < (1 << self.depth):
            raise ValueError(f"invalid dyadic interval ({self.depth}, {self.index})")

    @classmethod
    def root(cls) -> DyadicInterval:
        return cls(0, 0)

    @classmethod
    def from_path(cls, path: str) -> DyadicInterval:
        path = path.strip()
        if path in ("", "-", "root"):
            return cls(0, 0)
        return cls(len(path), int(path, 2))

    @property
    def path(self) -> str:
        if self.depth == 0:
            return ""
        return format(self.index, f"0{self.depth}b")

    @property
    def length(self) -> Fraction:
        return Fraction(1, 1 << self.depth)

    @property
    def left(self) -> Fraction:
        return Fraction(self.index, 1 << self.depth)

    @property
    def right(self) -> Fraction:
        return Fraction(self.index + 1, 1 << self.depth)

    @property
    def minus(self) -> DyadicInterval:
        return DyadicInterval(self.depth + 1, 2 * self.index)

    @property
    def plus(self) -> DyadicInterval:
        return DyadicInterval(self.depth + 1, 2 * self.index + 1)

    def children(self) -> tuple[DyadicInterval, DyadicInterval]:
        return self.minus, self.plus

    @property
    def parent(self) -> DyadicInterval:
        if self.depth == 0:
            raise ValueError("[0,1) has no parent")
        return DyadicInterval(self.depth - 1, self.index >> 1)

    def child(self, bits: str) -> DyadicInterval:
        """Descend along ``bits`` ('0' = left, '1' = right, also '-'/'+')."""
        d, j = self.depth, self.index
        for b in bits:
            j = 2 * j + (1 if b in "1+" else 0)
            d += 1
        return DyadicInterval(d, j)

    def ancestors(self) -> Iterator[DyadicInterval]:
        """Strict ancestors from the parent up to [0, 1)."""
        d, j = self.depth, self.index
        while d > 0:
            d -= 1
            j >>= 1
            yield DyadicInterval(d, j)

    def contains(self, other: DyadicInterval) -> bool:
        if other.depth < self.depth:
            return False
        return (other.index >> (other.depth - self.depth)) == self.index

    def is_right_child(self) -> bool:
        return self.depth > 0 and self.index & 1 == 1

    def __str__(self):
        return f"[{self.left}, {self.right})"


def _check_partition(intervals: Sequence[DyadicInterval]) -> None:
    if not intervals:
        raise PartitionError("empty partition")
    depth = max(i.depth for i in intervals)
    pos = 0
    for iv in intervals:
        shift = depth - iv.depth
        start = iv.index << shift
        if start != pos:
            raise PartitionError(f"leaves do not tile [0,1) at {iv}")
        pos = start + (1 << shift)
    if pos != 1 << depth:
        raise PartitionError("leaves do not cover [0,1)")


class StepFunction:
    """Immutable piecewise-constant function on a finite dyadic partition of [0, 1).

    Leaves are kept sorted by left endpoint so every reduction runs in address order.
    """

    def __init__(self, leaves: Iterable[tuple[DyadicInterval, object]], *, max_depth: int = DEFAULT_MAX_DEPTH,
                 check: bool = True):
        items = sorted(leaves, key=lambda kv: kv[0].left)
        if check:
            _check_partition([iv for iv, _ in items])
            for iv, _ in items:
                if iv.depth > max_depth:
                    raise DepthLimitError(f"leaf depth {iv.depth} exceeds cap {max_depth}")
        self.leaves: tuple[tuple[DyadicInterval, object], ...] = tuple(items)
        self._starts = [iv.left for iv, _ in self.leaves]

    # construction helpers
    @classmethod
    def constant(cls, value) -> StepFunction:
        return cls([(DyadicInterval.root(), value)])

    @classmethod
    def indicator(cls, I: DyadicInterval, inside=Fraction(1), outside=Fraction(0)) -> StepFunction:
        return cls([(iv, inside if iv == I else outside) for iv in partition_around(I)])

    def __len__(self):
        return len(self.leaves)

    def __iter__(self):
        return iter(self.leaves)

    def __eq__(self, other):
        if not isinstance(other, StepFunction):
            return NotImplemented
        cells = common_refinement(self, other)
        return all(self.value_on(c) == other.value_on(c) for c in cells)

    __hash__ = None

    def __repr__(self):
        return f"StepFunction({len(self.leaves)} leaves)"

    @property
    def intervals(self) -> list[DyadicInterval]:
        return [iv for iv, _ in self.leaves]

    @property
    def values(self) -> list:
        return [v for _, v in self.leaves]

    @property
    def depth(self) -> int:
        return max(iv.depth for iv, _ in self.leaves)

    @property
    def is_exact(self) -> bool:
        return all(is_exact(v) for _, v in self.leaves)

    def leaf_containing(self, I: DyadicInterval) -> tuple[DyadicInterval, object] | None:
        """The leaf that contains ``I`` (or equals it); None if ``I`` is strictly coarser."""
        pos = bisect.bisect_right(self._starts, I.left) - 1
        leaf, value = self.leaves[pos]
        if leaf.contains(I):
            return leaf, value
        return None

    def value_on(self, I: DyadicInterval):
        hit = self.leaf_containing(I)
        if hit is None:
            raise ValueError(f"{I} is not inside a single leaf")
        return hit[1]

    def __call__(self, x) -> object:
        x = Fraction(x)
        if not 0 <= x < 1:
            raise ValueError("point outside [0,1)")
        pos = bisect.bisect_right(self._starts, x) - 1
        return self.leaves[pos][1]

    # tree data
    @cached_property
    def node_integrals(self) -> dict[DyadicInterval, object]:
        """Integral of f over every leaf and every strict ancestor of a leaf."""
        integrals: dict[DyadicInterval, object] = {}
        by_depth: dict[int, list[DyadicInterval]] = {}
        for iv, v in self.leaves:
            integrals[iv] = v * iv.length if is_exact(v) else float(v) * float(iv.length)
            by_depth.setdefault(iv.depth, []).append(iv)
        for d in range(self.depth, 0, -1):
            for iv in by_depth.get(d, ()):
                par = iv.parent
                if par in integrals:
                    continue
                a, b = integrals[par.minus], integrals[par.plus]
                integrals[par] = a + b
                by_depth.setdefault(d - 1, []).append(par)
        return integrals

    @cached_property
    def node_averages(self) -> dict[DyadicInterval, object]:
        out = {}
        for iv, s in self.node_integrals.items():
            out[iv] = s * (1 << iv.depth) if is_exact(s) else float(s) * float(1 << iv.depth)
        return out

    @cached_property
    def internal_nodes(self) -> list[DyadicInterval]:
        """Strict ancestors of leaves in address order (parents before children at equal left)."""
        leafset = {iv for iv, _ in self.leaves}
        nodes = [iv for iv in self.node_integrals if iv not in leafset]
        nodes.sort(key=lambda iv: (iv.left, iv.depth))
        return nodes

    @cached_property
    def nodes(self) -> list[DyadicInterval]:
        nodes = list(self.node_integrals)
        nodes.sort(key=lambda iv: (iv.left, iv.depth))
        return nodes

    def map(self, fn: Callable) -> StepFunction:
        return StepFunction(((iv, fn(v)) for iv, v in self.leaves), check=False)

    def refine(self, partition: Sequence[DyadicInterval]) -> StepFunction:
        return StepFunction(((iv, self.value_on(iv)) for iv in partition), check=False)

    # arithmetic conveniences; all return new functions
    def __add__(self, other):
        return combine(self, other, lambda a, b: a + b)

    def __sub__(self, other):
        return combine(self, other, lambda a, b: a - b)

    def __mul__(self, other):
        if isinstance(other, StepFunction):
            return combine(self, other, lambda a, b: a * b)
        return self.map(lambda v: v * other)

    __rmul__ = __mul__

    def __neg__(self):
        return self.map(lambda v: -v)

    def to_text(self) -> str:
        return "".join(f"{iv.path or '-'}\t{format_scalar(v)}\n" for iv, v in self.leaves)

    @classmethod
    def from_text(cls, text: str) -> StepFunction:
        leaves = []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            path, value = line.split("\t")
            leaves.append((DyadicInterval.from_path(path), parse_scalar(value)))
        return cls(leaves)


def partition_around(I: DyadicInterval) -> list[DyadicInterval]:
    """Coarsest dyadic partition of [0,1) containing ``I`` as a cell."""
    cells = [I]
    cur = I
    while cur.depth > 0:
        par = cur.parent
        cells.append(par.plus if cur == par.minus else par.minus)
        cur = par
    return sorted(cells, key=lambda iv: iv.left)


def common_refinement(f: StepFunction, g: StepFunction) -> list[DyadicInterval]:
    """Coarsest dyadic partition refining the leaf partitions of both functions."""
    out = []
    a, b = f.intervals, g.intervals
    i = j = 0
    while i < len(a) and j < len(b):
        x, y = a[i], b[j]
        if x.depth >= y.depth:
            out.append(x)
            i += 1
            if x.right == y.right:
                j += 1
        else:
            out.append(y)
            j += 1
            if y.right == x.right:
                i += 1
    return out


def combine(f: StepFunction, g: StepFunction, op: Callable) -> StepFunction:
    cells = common_refinement(f, g)
    return StepFunction(((c, op(f.value_on(c), g.value_on(c))) for c in cells), check=False)


def average(f: StepFunction, I: DyadicInterval):
    """Mean of ``f`` over ``I``; ``I`` may be coarser or finer than the leaves."""
    avg = f.node_averages.get(I)
    if avg is not None:
        return avg
    return f.value_on(I)


def integral(f: StepFunction, I: DyadicInterval | None = None):
    if I is None:
        return total(v * iv.length if is_exact(v) else float(v) * float(iv.length) for iv, v in f.leaves)
    s = f.node_integrals.get(I)
    if s is not None:
        return s
    v = f.value_on(I)
    return v * I.length if is_exact(v) else float(v) * float(I.length)


def haar_difference(f: StepFunction, I: DyadicInterval):
    """``<f>_{I+} - <f>_{I-}``."""
    return average(f, I.plus) - average(f, I.minus)


def haar_term(f: StepFunction, I: DyadicInterval):
    """Value of ``(f, h_I) h_I`` on ``I+``; its negative is the value on ``I-``."""
    return haar_difference(f, I) / 2


def haar_coefficient(f: StepFunction, I: DyadicInterval):
    """``(f, h_I)`` with ``h_I = |I|^{-1/2} (chi_{I+} - chi_{I-})``.

    For odd depth ``sqrt|I|`` is irrational; an exact result is returned only when it
    stays inside a quadratic field (rational difference), otherwise a float.
    """
    diff = haar_difference(f, I)
    if I.depth % 2 == 0:
        scale = Fraction(1, 1 << (I.depth // 2))
        return diff * scale / 2 if is_exact(diff) else float(diff) * float(scale) / 2
    if is_exact(diff):
        q = diff.a if isinstance(diff, QuadraticNumber) and diff.is_rational else diff
        if not isinstance(q, QuadraticNumber):
            return QuadraticNumber(0, Fraction(q) / (1 << ((I.depth + 1) // 2)) / 2, 2)
    return float(diff) * float(I.length) ** 0.5 / 2


def integrate_product(f: StepFunction, g: StepFunction):
    """Integral over [0,1) of ``f * g`` on the common refinement."""
    terms = []
    for c in common_refinement(f, g):
        fv, gv = f.value_on(c), g.value_on(c)
        if is_exact(fv) and is_exact(gv):
            terms.append(fv * gv * c.length)
        else:
            terms.append(float(fv) * float(gv) * float(c.length))
    return total(terms)


def pointwise(f: StepFunction, op: str, by=None) -> StepFunction:
    """Apply one of ``invert``, ``square``, ``abs``, ``scale`` leafwise."""
    if op == "invert":
        for _, v in f.leaves:
            if v == 0:
                raise ZeroDivisionError("non-invertible step function")
        return f.map(lambda v: 1 / v if is_exact(v) else 1.0 / float(v))
    if op == "square":
        return f.map(lambda v: v * v)
    if op == "abs":
        return f.map(abs)
    if op == "scale":
        if by is None:
            raise ValueError("scale needs a factor")
        return f.map(lambda v: v * by)
    raise ValueError(f"unknown pointwise op {op!r}")


def to_float_function(f: StepFunction) -> StepFunction:
    return f.map(float)


def restrict(f: StepFunction, J: DyadicInterval, outside=Fraction(0)) -> StepFunction:
    """``f * chi_J`` on a partition that has J as a union of cells."""
    cells = []
    for iv in partition_around(J):
        if iv == J:
            for leaf, v in f.leaves:
                if J.contains(leaf):
                    cells.append((leaf, v))
            hit = f.leaf_containing(J)
            if hit is not None:
                cells.append((J, hit[1]))
        else:
            cells.append((iv, outside))
    return StepFunction(cells, check=False)
