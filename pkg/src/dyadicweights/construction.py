"""Recursive extremal A2 weights, their construction annotations, and the level majorant."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

from .dyadic import DEFAULT_MAX_DEPTH, DepthLimitError, DyadicInterval, StepFunction
from .scalar import QuadraticNumber, format_scalar, is_exact


class BudgetError(ValueError):
    pass


@dataclass(frozen=True)
class WeightParams:
    """Parameters of the construction.

    ``levels`` is the implemented recursion depth; the base two-valued block sits at
    that level so the averages of the truncated weight are still exactly omega, sigma.
    """

    k: int
    eps: Fraction
    tau_w: Fraction
    p: Fraction
    omega: object = Fraction(1)
    sigma: object = None
    levels: int = 0

    def __post_init__(self):
        if self.sigma is None:
            object.__setattr__(self, "sigma", self.p / self.omega)

    @property
    def full_depth(self) -> int:
        """The depth n = 4**k used for the untruncated weights."""
        return 4 ** self.k

    def with_levels(self, levels: int, omega=None) -> WeightParams:
        omega = self.omega if omega is None else omega
        return WeightParams(self.k, self.eps, self.tau_w, self.p, omega, self.p / omega, levels)

    def residuals(self) -> tuple[Fraction, Fraction]:
        """Left-hand sides minus right-hand sides of the two averaging equations (sigma = 1)."""
        eps, tau, p = self.eps, self.tau_w, self.p
        r1 = (Fraction(2, 3) * (1 - eps) + 2 * eps * tau) / p - 4 * eps
        r2 = (Fraction(1, 3) - Fraction(4, 3) * eps) / 3 + Fraction(2, 3) * (1 - eps) + 2 * eps / tau - 1
        return r1, r2

    def as_json(self) -> dict:
        return {
            "k": self.k,
            "eps": format_scalar(self.eps),
            "tau_w": format_scalar(self.tau_w),
            "p": format_scalar(self.p),
            "omega": format_scalar(self.omega),
            "sigma": format_scalar(self.sigma),
            "levels": self.levels,
        }


def solve_parameters(k: int) -> WeightParams:
    """Exact eps, tau_w, p making both averages of the recursion reproduce themselves."""
    if k < 2:
        raise ValueError("k must be at least 2")
    eps = Fraction(1, 4 ** k)
    # average of w^{-1}: (1/3 - 4eps/3)/3 + 2(1-eps)/3 + 2eps/tau = 1
    inv_tau = (1 - (Fraction(1, 3) - Fraction(4, 3) * eps) / 3 - Fraction(2, 3) * (1 - eps)) / (2 * eps)
    tau = 1 / inv_tau
    # average of w: (2(1-eps)/3 + 2 eps tau)/p = 4 eps
    p = (Fraction(2, 3) * (1 - eps) + 2 * eps * tau) / (4 * eps)
    params = WeightParams(k, eps, tau, p)
    assert params.residuals() == (0, 0)
    return params


def base_radicand(p: Fraction) -> Fraction:
    return Fraction(p) * (Fraction(p) - 1)


def base_values(omega, p: Fraction, mode: str = "exact"):
    """Left/right values ``omega (1 -+ sqrt((p-1)/p))`` of the two-valued block."""
    p = Fraction(p)
    if p <= 1:
        raise ValueError("degenerate base weight")
    if mode == "exact" and is_exact(omega):
        d = base_radicand(p)
        lo = QuadraticNumber(1, -1 / p, d) * omega
        hi = QuadraticNumber(1, 1 / p, d) * omega
        return lo, hi
    x = math.sqrt((p - 1) / p)
    om = float(omega)
    # 1 - x = (1/p) / (1 + x) avoids cancellation for large p
    return om * float(1 / p) / (1 + x), om * (1 + x)


def build_w0(omega, sigma, I: DyadicInterval, p, mode: str = "exact") -> StepFunction:
    """Two-valued base block on ``I`` with averages omega and sigma (needs omega*sigma = p)."""
    p = Fraction(p)
    if p <= 1:
        raise ValueError("degenerate base weight")
    if is_exact(omega) and is_exact(sigma) and omega * sigma != p:
        raise ValueError("omega * sigma must equal p")
    lo, hi = base_values(omega, p, mode)
    if I.depth == 0:
        return StepFunction([(I.minus, lo), (I.plus, hi)])
    return StepFunction([(I.minus, lo), (I.plus, hi)], check=False)


@dataclass(frozen=True)
class AnnotatedWeight:
    weight: StepFunction
    params: WeightParams
    forming: dict = field(repr=False)
    specials: dict = field(repr=False)
    rows: dict = field(repr=False)
    special_owner: dict = field(repr=False)
    leaf_tags: dict = field(repr=False)
    mode: str = "exact"

    @property
    def k(self) -> int:
        return self.params.k

    @property
    def levels(self) -> int:
        return self.params.levels

    def special_level(self, J: DyadicInterval) -> int | None:
        for lvl, js in self.specials.items():
            if J in js:
                return lvl
        return None

    def forming_intervals(self) -> list[tuple[int, DyadicInterval]]:
        return [(lvl, K) for lvl in sorted(self.forming) for K, _ in self.forming[lvl]]

    def sidecar(self) -> dict:
        return {
            "params": self.params.as_json(),
            "mode": self.mode,
            "forming": {str(l): [[K.path, format_scalar(m)] for K, m in v] for l, v in sorted(self.forming.items())},
            "specials": {str(l): [J.path for J in v] for l, v in sorted(self.specials.items())},
            "rows": {J.path: [R.path for R in rs] for J, rs in self.rows.items()},
        }

    def sidecar_json(self) -> str:
        return json.dumps(self.sidecar(), indent=2, sort_keys=True)


def forming_count(k: int, levels: int) -> int:
    """Number of forming intervals across levels 0..levels."""
    return sum((k - 1) ** l for l in range(levels + 1))


def leaf_depth(k: int, levels: int) -> int:
    """Depth of the deepest leaf of the truncated weight built on [0,1)."""
    return levels * (2 * k - 2) + 1


def build_weight(params: WeightParams, I: DyadicInterval | None = None, *, mode: str = "exact",
                 max_depth: int = DEFAULT_MAX_DEPTH, max_forming: int | None = None) -> AnnotatedWeight:
    """Truncated recursive weight on ``I`` with ``params.levels`` construction levels."""
    if I is None:
        I = DyadicInterval.root()
    k, L, p, tau = params.k, params.levels, params.p, params.tau_w
    if L < 0:
        raise ValueError("levels must be nonnegative")
    if I.depth + leaf_depth(k, L) > max_depth:
        raise DepthLimitError(f"weight depth {I.depth + leaf_depth(k, L)} exceeds cap {max_depth}")
    if max_forming is not None and forming_count(k, L) > max_forming:
        raise BudgetError(f"{forming_count(k, L)} forming intervals exceed budget {max_forming}")
    omega = params.omega
    exact = mode == "exact" and is_exact(omega)
    if not exact:
        omega = float(omega)

    leaves: list = []
    forming: dict = {l: [] for l in range(L + 1)}
    specials: dict = {l: [] for l in range(L)}
    rows: dict = {}
    owner: dict = {}
    tags: dict = {}

    def scale(level: int):
        return 3 ** level if exact else float(3 ** level)

    def const(level: int, factor=1):
        om = omega * scale(level)
        if exact:
            return om * Fraction(factor) / p
        return om * float(factor) / float(p)

    stack = [(I, 0)]
    while stack:
        K, level = stack.pop()
        forming[level].append((K, 3 ** level))
        if level == L:
            lo, hi = base_values(omega * scale(level), p, "exact" if exact else "float")
            leaves += [(K.minus, lo), (K.plus, hi)]
            tags[K.minus] = tags[K.plus] = ("base", level)
            continue
        for m in range(k - 1):
            Km = K.child("11" * m)
            leaves.append((Km.minus, const(level)))
            tags[Km.minus] = ("const", level)
            stack.append((Km.plus.minus, level + 1))
        last = K.child("11" * (k - 1))
        J = last.plus
        leaves += [(last.minus, const(level)), (J, const(level, tau))]
        tags[last.minus] = ("const", level)
        tags[J] = ("special", level)
        specials[level].append(J)
        rows[J] = [K.child("11" * m + "1") for m in range(k - 1)]
        owner[J] = K

    for lvl in forming:
        forming[lvl].sort(key=lambda kv: kv[0].left)
    for lvl in specials:
        specials[lvl].sort(key=lambda iv: iv.left)
    if I.depth == 0:
        weight = StepFunction(leaves, max_depth=max_depth)
    else:
        weight = StepFunction(leaves, check=False)
    return AnnotatedWeight(weight, params, forming, specials, rows, owner, tags, "exact" if exact else "float")


def build_majorant(aw: AnnotatedWeight) -> StepFunction:
    """Level majorant: omega 3**l on the constant region of level l, omega 3**L on base blocks."""
    omega = aw.params.omega
    exact = aw.mode == "exact"
    out = []
    for iv, _ in aw.weight.leaves:
        _, level = aw.leaf_tags[iv]
        val = omega * 3 ** level if exact else float(omega) * 3.0 ** level
        out.append((iv, val))
    return StepFunction(out, check=False)


def special_measure(aw: AnnotatedWeight, level: int):
    """Total length of the specials created at ``level``, by enumeration."""
    if level >= aw.levels or level < 0:
        raise ValueError("level not constructed")
    return sum((J.length for J in aw.specials[level]), Fraction(0))


def special_measure_stated(k: int, level: int) -> Fraction:
    """Closed form with the ratio (1 - 4**-(k-2))/3 per level."""
    return (Fraction(1, 3) * (1 - Fraction(1, 4 ** (k - 2)))) ** level * Fraction(2, 4 ** k)


def special_measure_closed_form(k: int, level: int) -> Fraction:
    """Closed form matching the construction: each level keeps (1 - 4**-(k-1))/3 of the length."""
    return (Fraction(1, 3) * (1 - Fraction(1, 4 ** (k - 1)))) ** level * Fraction(2, 4 ** k)


def interval_chain(I: DyadicInterval, k: int) -> list[DyadicInterval]:
    """``I_0 = I, I_1 = I^{++}, ..., I_{k-1}``."""
    return [I.child("11" * m) for m in range(k)]


def chain_averages(params: WeightParams) -> list[Fraction]:
    """Averages of w over I_0..I_{k-1} of a forming interval, in units of its local omega.

    Computed from the construction rule alone (sub-forming averages are 3), with no tree.
    """
    k, p, tau = params.k, params.p, params.tau_w
    a = [Fraction(0)] * k
    a[k - 1] = (1 + tau) / (2 * p)
    for m in range(k - 2, -1, -1):
        a[m] = 1 / (2 * p) + Fraction(3, 4) + a[m + 1] / 4
    return a


def auto_levels(k: int, budget_forming: int, cap: int | None = None, max_depth: int = DEFAULT_MAX_DEPTH) -> int:
    """Largest level count within the forming-interval budget, depth cap, and n = 4**k."""
    n = 4 ** k if cap is None else min(cap, 4 ** k)
    L = 0
    while L + 1 <= n and forming_count(k, L + 1) <= budget_forming and leaf_depth(k, L + 1) <= max_depth:
        L += 1
    return L
