"""Self-similar moment recursion for the recursive weights.

A forming interval with ``r`` remaining levels carries, after normalizing its length and
local omega to 1, the same weight regardless of where it sits.  Writing ``T`` (resp.
``S2``) for the part of the transform (resp. square function) generated inside it,

    m0 = int W^{-1},  m1 = int T W^{-1},  m2 = int T^2 W^{-1},  s1 = int S2 W^{-1}

satisfy a recursion in ``r`` that only needs the chain averages of the construction.
Everything is rational, so the integrals over [0,1) come out exactly at any depth,
including the full depth 4**k that cannot be materialized as a tree.

Each moment is kept per (region kind, relative level) so that level-by-level
contributions can be compared with a brute-force tree computation.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .construction import WeightParams, chain_averages

KINDS = ("const", "special", "base")


def _zeros(n: int) -> dict[str, list[Fraction]]:
    return {kind: [Fraction(0)] * n for kind in KINDS}


@dataclass
class _Moments:
    m0: dict
    m1: dict
    m2: dict
    s1: dict


@dataclass(frozen=True)
class LedgerResult:
    """Per-level contributions, indexed ``[kind][absolute level]``, for a root of omega = params.omega."""

    params: WeightParams
    transform_sq: dict
    square: dict
    inverse_mass: dict

    def level_total(self, table: dict, level: int) -> Fraction:
        return sum((table[kind][level] for kind in KINDS), Fraction(0))

    @property
    def transform_integral(self) -> Fraction:
        """``int (Tw)^2 w^{-1}`` over [0,1)."""
        return sum((sum(v, Fraction(0)) for v in self.transform_sq.values()), Fraction(0))

    @property
    def square_integral(self) -> Fraction:
        """``int S^2 w . w^{-1}`` over [0,1)."""
        return sum((sum(v, Fraction(0)) for v in self.square.values()), Fraction(0))

    def special_transform(self, level: int) -> Fraction:
        return self.transform_sq["special"][level]

    def special_square(self, level: int) -> Fraction:
        return self.square["special"][level]


def row_terms(params: WeightParams) -> list[Fraction]:
    """``theta_m = (3 - a_{m+1})/2``: size of the m-th row Haar term, in local-omega units."""
    a = chain_averages(params)
    return [(3 - a[m + 1]) / 2 for m in range(params.k - 1)]


def spine_squares(params: WeightParams) -> tuple[list[Fraction], list[Fraction]]:
    """``(Delta/2)^2`` at the chain nodes K_m and at the row nodes K_m^+ (local units)."""
    k, p, tau = params.k, params.p, params.tau_w
    a = chain_averages(params)
    chain = [((3 + a[m + 1]) / 2 - 1 / p) ** 2 / 4 for m in range(k - 1)]
    chain.append(((tau - 1) / p) ** 2 / 4)
    rows = [(a[m + 1] - 3) ** 2 / 4 for m in range(k - 1)]
    return chain, rows


def _regions(params: WeightParams, signed: bool):
    """Yield (kind, length, w-value or None for a sub-forming interval, T offset, S2 offset)."""
    k, p, tau = params.k, params.p, params.tau_w
    theta = row_terms(params)
    chain, rows = spine_squares(params)
    t_acc = Fraction(0)
    s_acc = Fraction(0)
    for m in range(k - 1):
        s_acc += chain[m]
        yield "const", Fraction(1, 2 ** (2 * m + 1)), 1 / p, t_acc, s_acc
        s_sub = s_acc + rows[m]
        t_sub = t_acc - theta[m] if signed else t_acc
        yield "sub", Fraction(1, 2 ** (2 * m + 2)), None, t_sub, s_sub
        if signed:
            t_acc += theta[m]
        s_acc = s_sub
    s_acc += chain[k - 1]
    half = Fraction(1, 2 ** (2 * k - 1))
    yield "const", half, 1 / p, t_acc, s_acc
    yield "special", half, tau / p, t_acc, s_acc


def ledger(params: WeightParams, levels: int | None = None) -> LedgerResult:
    """Exact per-level integrals of ``(Tw)^2 w^{-1}`` and ``S^2 w . w^{-1}`` at depth ``levels``.

    The transform uses sign -1 on the rows of specials created at even levels.
    """
    L = params.levels if levels is None else levels
    if L < 0:
        raise ValueError("levels must be nonnegative")
    p = params.p
    base = _Moments(_zeros(1), _zeros(1), _zeros(1), _zeros(1))
    base.m0["base"][0] = p
    base.s1["base"][0] = p - 1
    cur = base
    for r in range(1, L + 1):
        signed = (L - r) % 2 == 0
        n = r + 1
        nxt = _Moments(_zeros(n), _zeros(n), _zeros(n), _zeros(n))
        for kind, length, value, o, so in _regions(params, signed):
            if value is not None:
                inv = 1 / value
                nxt.m0[kind][0] += length * inv
                nxt.m1[kind][0] += length * o * inv
                nxt.m2[kind][0] += length * o * o * inv
                nxt.s1[kind][0] += length * so * inv
                continue
            # sub-forming copy with local omega 3 relative to this one
            for kk in KINDS:
                for j in range(r):
                    m0, m1, m2, s1 = cur.m0[kk][j], cur.m1[kk][j], cur.m2[kk][j], cur.s1[kk][j]
                    if not (m0 or m1 or m2 or s1):
                        continue
                    nxt.m0[kk][j + 1] += length * m0 / 3
                    nxt.m1[kk][j + 1] += length * (o * m0 / 3 + m1)
                    nxt.m2[kk][j + 1] += length * (o * o * m0 / 3 + 2 * o * m1 + 3 * m2)
                    nxt.s1[kk][j + 1] += length * (so * m0 / 3 + 3 * s1)
        cur = nxt
    omega = Fraction(params.omega)
    scale = lambda table, f: {kk: [f * v for v in vals] for kk, vals in table.items()}
    return LedgerResult(params.with_levels(L), scale(cur.m2, omega), scale(cur.s1, omega),
                        scale(cur.m0, 1 / omega))
