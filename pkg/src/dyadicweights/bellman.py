"""The weak-type Bellman candidate min(gamma, K phi(tau)) and numerical certification of its properties.

Here ``phi(t) = exp(-t^2/2) int_0^t exp(s^2/2) ds`` solves ``phi' = 1 - t phi``, ``phi(0) = 0``.
The Bellman coordinate is called ``tau_coord`` and the transformed coordinate ``T_coord``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import mpmath
import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .construction import AnnotatedWeight
from .dyadic import DyadicInterval, StepFunction, haar_difference, pointwise

SERIES_CUTOFF = 2.0
ASYMPTOTIC_CUTOFF = 8.0
_ANCHOR_STEP = 0.125
_TAYLOR_TERMS = 30


class CertificateError(ArithmeticError):
    pass


# --- phi ---------------------------------------------------------------------------------------

def _phi_series(t: float) -> float:
    # exp(-t^2/2) * sum t^(2n+1) / (2^n n! (2n+1)); all terms positive
    u = t * t / 2
    term = t
    terms = [t]
    n = 0
    while True:
        n += 1
        term *= u / n
        nxt = term / (2 * n + 1)
        terms.append(nxt)
        if nxt <= 1e-18 * terms[0]:
            break
    return math.exp(-u) * math.fsum(terms)


def _phi_quad(t: float) -> float:
    # with r = t - s the integrand exp(-r t + r^2/2) <= exp(-r t / 2) lives within ~1/t of r = 0
    upper = min(t, 80.0 / t)
    val, _ = quad(lambda r: math.exp(-r * t + r * r / 2), 0.0, upper, epsabs=0.0, epsrel=1e-13, limit=200)
    return val


def phi(tau_coord: float) -> float:
    """``phi(tau)`` to about 1e-13 relative: series up to 2, adaptive quadrature beyond."""
    t = float(tau_coord)
    if t < 0:
        raise ValueError("phi expects a nonnegative argument")
    if t == 0:
        return 0.0
    if t <= SERIES_CUTOFF:
        return _phi_series(t)
    return _phi_quad(t)


def phi_prime(tau_coord: float) -> float:
    return 1.0 - tau_coord * phi(tau_coord)


def phi_second(tau_coord: float) -> float:
    f = phi(tau_coord)
    return -f - tau_coord * (1.0 - tau_coord * f)


@lru_cache(maxsize=4096)
def _anchor(j: int) -> float:
    return phi(SERIES_CUTOFF + j * _ANCHOR_STEP)


def phi_array(tau_coord) -> np.ndarray:
    """Vectorized phi: series for small arguments, Taylor expansion from quadrature anchors beyond."""
    t = np.asarray(tau_coord, dtype=float)
    out = np.empty_like(t)
    small = t <= SERIES_CUTOFF
    ts = t[small]
    u = ts * ts / 2
    term = ts.copy()
    acc = ts.copy()
    for n in range(1, 60):
        term = term * u / n
        acc = acc + term / (2 * n + 1)
    out[small] = np.exp(-u) * acc
    far = t >= ASYMPTOTIC_CUTOFF
    if far.any():
        # phi(t) ~ sum (2n-1)!! / t^(2n+1), truncated before the terms start to grow
        tf = t[far]
        inv2 = 1.0 / (tf * tf)
        term = 1.0 / tf
        acc = term.copy()
        for n in range(1, 200):
            nxt = term * (2 * n - 1) * inv2
            grow = nxt >= term
            if grow.all():
                break
            term = np.where(grow, 0.0, nxt)
            acc = acc + term
        out[far] = acc
    big = ~small & ~far
    if big.any():
        tb = t[big]
        j = np.rint((tb - SERIES_CUTOFF) / _ANCHOR_STEP).astype(int)
        t0 = SERIES_CUTOFF + j * _ANCHOR_STEP
        c_prev = np.array([_anchor(int(i)) for i in j])
        c_cur = 1.0 - t0 * c_prev
        h = tb - t0
        acc = c_prev + c_cur * h
        hp = h.copy()
        # c_{n+1} = (-t0 c_n - c_{n-1}) / (n+1)
        for n in range(1, _TAYLOR_TERMS):
            c_next = (-t0 * c_cur - c_prev) / (n + 1)
            hp = hp * h
            acc = acc + c_next * hp
            c_prev, c_cur = c_cur, c_next
        out[big] = acc
    return out


def phi_mp(tau_coord, dps: int = 30):
    """High-precision phi through the imaginary error function (independent route)."""
    with mpmath.workdps(dps):
        t = mpmath.mpf(tau_coord)
        return mpmath.sqrt(mpmath.pi / 2) * mpmath.exp(-t * t / 2) * mpmath.erfi(t / mpmath.sqrt(2))


def ode_residual(grid=None, h: float = 1e-3) -> float:
    """``max |phi' + tau phi - 1|`` with phi' from 5-point central differences."""
    if grid is None:
        grid = np.linspace(0.0, 10.0, 1001)
    worst = 0.0
    for t in grid:
        t = float(t)
        if t < 2 * h:
            pts = [phi(abs(t + k * h)) * (1 if t + k * h >= 0 else -1) for k in (-2, -1, 1, 2)]
        else:
            pts = [phi(t + k * h) for k in (-2, -1, 1, 2)]
        d = (pts[0] - 8 * pts[1] + 8 * pts[2] - pts[3]) / (12 * h)
        worst = max(worst, abs(d + t * phi(t) - 1))
    return worst


# --- parameters and domain ---------------------------------------------------------------------

@dataclass(frozen=True)
class BellmanParams:
    Q: float = 10.0
    K: float | None = None
    c_drift: float = 0.125
    delta: float | None = None
    a0: float = 1.0
    tau0: float = 0.001

    def __post_init__(self):
        if self.Q < 1:
            raise ValueError("Q must be at least 1")
        if self.K is None:
            object.__setattr__(self, "K", self.Q / (self.a0 * phi(self.a0)))
        if self.delta is None:
            object.__setattr__(self, "delta", 1.0 / self.a0 ** 2)
        for name in ("K", "c_drift", "delta", "a0", "tau0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def as_json(self) -> dict:
        return {"Q": self.Q, "K": self.K, "c_drift": self.c_drift, "delta": self.delta, "a0": self.a0,
                "tau0": self.tau0}


@dataclass(frozen=True)
class HyperbolicDomain:
    Q: float
    rtol: float = 1e-12

    def contains(self, gamma: float, tau_coord: float) -> bool:
        prod = gamma * tau_coord
        return gamma > 0 and tau_coord > 0 and 1 - self.rtol <= prod <= self.Q * (1 + self.rtol)

    def contains_uvl(self, u: float, v: float, lam: float) -> bool:
        prod = u * v
        return lam >= 0 and 1 - self.rtol <= prod <= self.Q * (1 + self.rtol)


def theta(gamma: float, tau_coord: float, params: BellmanParams) -> float:
    """``min(gamma, K phi(tau))`` on the hyperbolic strip."""
    if not HyperbolicDomain(params.Q).contains(gamma, tau_coord):
        raise ValueError("outside hyperbolic domain")
    return min(gamma, params.K * phi(tau_coord))


def theta_array(gamma, tau_coord, params: BellmanParams) -> np.ndarray:
    return np.minimum(gamma, params.K * phi_array(tau_coord))


def bfun(u: float, v: float, lam: float, params: BellmanParams) -> float:
    """``lam^{-1/2} Theta(u sqrt(lam), v / sqrt(lam))``; the obstacle value ``u`` at ``lam = 0``."""
    if not HyperbolicDomain(params.Q).contains_uvl(u, v, lam):
        raise ValueError("outside hyperbolic domain")
    if lam == 0:
        return u
    r = math.sqrt(lam)
    # equals min(u, K r^{-1} phi(v/r)) and avoids a round trip through gamma
    return min(u, params.K * phi(v / r) / r)


def bfun_array(u, v, lam, params: BellmanParams) -> np.ndarray:
    u, v, lam = (np.asarray(a, dtype=float) for a in (u, v, lam))
    r = np.sqrt(np.where(lam > 0, lam, 1.0))
    val = np.minimum(u, params.K * phi_array(v / r) / r)
    return np.where(lam > 0, val, u)


# --- reports -----------------------------------------------------------------------------------

@dataclass
class CheckReport:
    name: str
    passed: bool
    stats: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)

    def as_json(self) -> dict:
        return {"name": self.name, "passed": self.passed, "stats": self.stats,
                "violations": self.violations[:20]}


def _grid_H(Q: float, n: int, tau_range=(0.02, 5.0)) -> tuple[np.ndarray, np.ndarray]:
    """n x n grid: log-spaced tau, products gamma*tau spread over [1, Q]."""
    taus = np.geomspace(tau_range[0], tau_range[1], n)
    prods = np.linspace(1.0, Q, n)
    T, P = np.meshgrid(taus, prods, indexing="ij")
    return P / T, T


# --- drift Hessian -----------------------------------------------------------------------------

def drift_matrix_analytic(gamma: float, tau_coord: float, params: BellmanParams) -> np.ndarray:
    """Branch formulas for ``[[Th_gg, Th_gt], [Th_gt, Th_tt + Th + t Th_t - g Th_g]]``."""
    K = params.K
    f = phi(tau_coord)
    if gamma <= K * f:
        # Theta = gamma: gamma + 0 - gamma
        return np.zeros((2, 2))
    d1 = 1.0 - tau_coord * f
    d2 = -f - tau_coord * d1
    return np.array([[0.0, 0.0], [0.0, K * (d2 + f + tau_coord * d1)]])


def _drift_fd_column(gamma_vals: np.ndarray, tau_coord: float, K: float, h_scale: float, dps: int = 30):
    """Richardson-extrapolated central differences of Theta at fixed tau for many gammas (mpmath)."""
    out = []
    with mpmath.workdps(dps):
        K = mpmath.mpf(K)
        t = mpmath.mpf(tau_coord)
        hs = [mpmath.mpf(h_scale), mpmath.mpf(h_scale) / 2]
        stencil = {}
        for h in hs:
            for a in (-1, 0, 1):
                stencil[(h, a)] = K * phi_mp(t + a * h, dps)
        for g in gamma_vals:
            g = mpmath.mpf(g)
            ests = []
            for h in hs:
                def th(da, db):
                    return min(g + da * h, stencil[(h, db)])
                c = th(0, 0)
                gg = (th(1, 0) - 2 * c + th(-1, 0)) / h ** 2
                tt = (th(0, 1) - 2 * c + th(0, -1)) / h ** 2
                gt = (th(1, 1) - th(1, -1) - th(-1, 1) + th(-1, -1)) / (4 * h * h)
                d_t = (th(0, 1) - th(0, -1)) / (2 * h)
                d_g = (th(1, 0) - th(-1, 0)) / (2 * h)
                ests.append((gg, gt, tt + c + t * d_t - g * d_g))
            (a1, b1, c1), (a2, b2, c2) = ests
            rich = [(4 * y - x) / 3 for x, y in ((a1, a2), (b1, b2), (c1, c2))]
            out.append(np.array([[float(rich[0]), float(rich[1])], [float(rich[1]), float(rich[2])]]))
    return out


def check_hessian_drift(params: BellmanParams, n: int = 200, tau_range=(0.02, 5.0),
                        h_rel: float = 1e-5, tol: float = 1e-8) -> CheckReport:
    """Max eigenvalue of the drift matrix over an n x n grid on H minus a corner band."""
    G, T = _grid_H(params.Q, n, tau_range)
    K = params.K
    worst_an = -math.inf
    worst_fd = -math.inf
    max_gap = 0.0
    excluded = 0
    viol = []
    for i in range(n):
        t = float(T[i, 0])
        h = h_rel * max(t, 1e-3)
        corner = K * phi(t)
        gs = G[i, :]
        keep = np.abs(gs - corner) >= 10 * h * (1 + K)
        excluded += int((~keep).sum())
        gs = gs[keep]
        if not gs.size:
            continue
        fds = _drift_fd_column(gs, t, K, h)
        for g, fd in zip(gs, fds):
            an = drift_matrix_analytic(float(g), t, params)
            e_an = float(np.linalg.eigvalsh(an).max())
            e_fd = float(np.linalg.eigvalsh(fd).max())
            worst_an = max(worst_an, e_an)
            worst_fd = max(worst_fd, e_fd)
            max_gap = max(max_gap, float(np.abs(an - fd).max()))
            if max(e_an, e_fd) > tol:
                viol.append({"gamma": float(g), "tau_coord": t, "eig_analytic": e_an, "eig_fd": e_fd})
    # one-sided second differences in tau across the corner curve
    corner_worst = -math.inf
    for t in np.geomspace(tau_range[0], min(tau_range[1], 1.2), 50):
        t = float(t)
        g = K * phi(t)
        if not HyperbolicDomain(params.Q).contains(g, t):
            continue
        h = 1e-4 * t
        vals = [min(g, K * phi(t + a * h)) for a in (-1, 0, 1)]
        corner_worst = max(corner_worst, vals[0] - 2 * vals[1] + vals[2])
    stats = {"max_eig_analytic": worst_an, "max_eig_fd": worst_fd, "max_abs_gap": max_gap,
             "excluded_near_corner": excluded, "points": n * n, "corner_second_diff_max": corner_worst}
    passed = not viol and (corner_worst <= 1e-12 or corner_worst == -math.inf)
    return CheckReport("hessian", passed, stats, viol)


# --- main inequality ---------------------------------------------------------------------------

def main_inequality_gap_theta(gm, tm, gp, tp, params: BellmanParams, c=None) -> np.ndarray:
    """LHS - RHS of the drift-concavity inequality for Theta (vectorized)."""
    c = params.c_drift if c is None else c
    s = np.sqrt(1 + c * (tp - tm) ** 2)
    gbar = (gm + gp) / 2
    tbar = (tm + tp) / 2
    lhs = theta_array(s * gbar, tbar / s, params) / s
    rhs = (theta_array(gm, tm, params) + theta_array(gp, tp, params)) / 2
    return lhs - rhs


def main_inequality_gap_b(um, vm, up, vp, lam_child, params: BellmanParams, c=None) -> np.ndarray:
    """``B(u, v, lam_child + c dv^2) - (B(P_-) + B(P_+))/2`` with u, v the midpoints."""
    c = params.c_drift if c is None else c
    u = (um + up) / 2
    v = (vm + vp) / 2
    lam = lam_child + c * (vp - vm) ** 2
    return bfun_array(u, v, lam, params) - (bfun_array(um, vm, lam_child, params) +
                                            bfun_array(up, vp, lam_child, params)) / 2


def _sample_pairs(rng: np.random.Generator, Q: float, n: int, tau_lo=1e-3, tau_hi=6.0):
    """(gamma, tau) pairs in H whose midpoint product also stays within Q."""
    out = []
    need = n
    while need > 0:
        m = 2 * need + 16
        tm = np.exp(rng.uniform(math.log(tau_lo), math.log(tau_hi), m))
        tp = np.exp(rng.uniform(math.log(tau_lo), math.log(tau_hi), m))
        tm, tp = np.minimum(tm, tp), np.maximum(tm, tp)
        pm = rng.uniform(1, Q, m)
        pp = rng.uniform(1, Q, m)
        gm, gp = pm / tm, pp / tp
        mid = (gm + gp) / 2 * (tm + tp) / 2
        ok = (mid <= Q) & (mid >= 1)
        out.append(np.stack([gm[ok], tm[ok], gp[ok], tp[ok]], axis=1))
        need -= int(ok.sum())
    return np.concatenate(out)[:n]


def _structured_pairs(params: BellmanParams, n_side: int = 40):
    """Equality cases, pure-gamma branch, points hugging the corner curve, and the hyperbola edges."""
    Q, K = params.Q, params.K
    rows = []
    for t in np.geomspace(1e-3, 3.0, n_side):
        for prod in np.linspace(1, Q, 6):
            g = prod / t
            rows.append((g, t, g, t))
        gc = K * phi(float(t))
        for dt in (1e-4, 1e-2, 0.1):
            t2 = t + dt
            for g1 in (gc * (1 - 1e-6), gc * (1 + 1e-6)):
                g2 = max(1 / t2, min(Q / t2, g1))
                rows.append((g1, t, g2, t2))
    arr = np.array(rows, dtype=float)
    prod_ok = (arr[:, 0] * arr[:, 1] >= 1) & (arr[:, 0] * arr[:, 1] <= Q) & \
              (arr[:, 2] * arr[:, 3] >= 1) & (arr[:, 2] * arr[:, 3] <= Q)
    mid = (arr[:, 0] + arr[:, 2]) / 2 * (arr[:, 1] + arr[:, 3]) / 2
    return arr[prod_ok & (mid <= Q) & (mid >= 1)]


def check_main_inequality(params: BellmanParams, samples: int = 100_000, seed: int = 0,
                          tol: float = 1e-12) -> CheckReport:
    """Both forms of the main inequality on random and structured samples."""
    rng = np.random.default_rng(seed)
    pts = np.concatenate([_sample_pairs(rng, params.Q, samples), _structured_pairs(params)])
    gm, tm, gp, tp = pts.T
    gap = main_inequality_gap_theta(gm, tm, gp, tp, params)
    scale = np.maximum(1.0, np.abs((theta_array(gm, tm, params) + theta_array(gp, tp, params)) / 2))
    bad = gap < -tol * scale
    viol = [{"gamma_minus": float(a), "tau_minus": float(b), "gamma_plus": float(c), "tau_plus": float(d),
             "gap": float(e)} for a, b, c, d, e in zip(gm[bad], tm[bad], gp[bad], tp[bad], gap[bad])]
    # B form: independent (u, v, lambda) sampling
    m = samples
    lam = np.exp(rng.uniform(math.log(1e-2), math.log(1e2), m))
    pairs = _sample_pairs(rng, params.Q, m)
    r = np.sqrt(lam)
    um, vm = pairs[:, 0] / r, pairs[:, 1] * r
    up, vp = pairs[:, 2] / r, pairs[:, 3] * r
    gap_b = main_inequality_gap_b(um, vm, up, vp, lam, params)
    scale_b = np.maximum(1.0, np.abs(bfun_array((um + up) / 2, (vm + vp) / 2, lam, params)))
    bad_b = gap_b < -tol * scale_b
    viol += [{"u_minus": float(a), "v_minus": float(b), "u_plus": float(c), "v_plus": float(d),
              "lambda": float(e), "gap": float(f)}
             for a, b, c, d, e, f in zip(um[bad_b], vm[bad_b], up[bad_b], vp[bad_b], lam[bad_b], gap_b[bad_b])]
    stats = {"samples_theta": int(len(gm)), "samples_b": int(m),
             "violations_theta": int(bad.sum()), "violations_b": int(bad_b.sum()),
             "worst_gap_theta": float(gap.min()), "worst_gap_b": float(gap_b.min())}
    return CheckReport("main", not viol, stats, viol)


# --- obstacle -----------------------------------------------------------------------------------

def check_obstacle(params: BellmanParams, n: int = 400, tau_max: float = 50.0) -> CheckReport:
    """Theta = gamma on {tau >= a0} in H, and B = u on {lam <= delta v^2}."""
    Q, K, a0 = params.Q, params.K, params.a0
    taus = np.concatenate([np.geomspace(a0, tau_max, n), a0 * (1 + np.geomspace(1e-9, 1e-2, 20))])
    viol = []
    worst = math.inf
    for t in taus:
        t = float(t)
        # the largest gamma in H at this tau is the binding one
        g = Q / t
        margin = K * phi(t) - g
        worst = min(worst, margin / g)
        if margin < 0:
            viol.append({"tau_coord": t, "gamma": g, "K_phi": K * phi(t)})
    # the same region in (u, v, lam) coordinates
    rng = np.random.default_rng(1)
    v = np.exp(rng.uniform(-3, 3, 2000))
    u = rng.uniform(1, Q, 2000) / v
    lam = params.delta * v * v * rng.uniform(0, 1, 2000)
    b = bfun_array(u, v, lam, params)
    bad_b = np.abs(b - u) > 1e-12 * u
    for a, c, d in zip(u[bad_b], v[bad_b], lam[bad_b]):
        viol.append({"u": float(a), "v": float(c), "lambda": float(d)})
    # the region where Theta = gamma, as a fraction of a grid over H
    G, T = _grid_H(Q, 100, (1e-3, tau_max))
    pinned = float((G <= K * phi_array(T)).mean())
    obstacle_ok = not viol
    stats = {"min_relative_margin": worst, "pinned_fraction": pinned, "a0": a0, "K": K, "delta": params.delta,
             "sufficient_K": Q / (a0 * phi(a0)), "b_violations": int(bad_b.sum())}
    return CheckReport("obstacle", obstacle_ok, stats, viol)


# --- change of variables --------------------------------------------------------------------------

def T_of_tau(tau_coord: float) -> float:
    return math.exp(tau_coord * tau_coord / 2) * phi(tau_coord)


def tau_of_T(T_coord: float) -> float:
    if T_coord == 0:
        return 0.0
    hi = 1.0
    while T_of_tau(hi) < T_coord:
        hi *= 2
    return brentq(lambda t: T_of_tau(t) - T_coord, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)


def change_of_variables(gamma: float, tau_coord: float) -> tuple[float, float]:
    """``(gamma e^{tau^2/2}, int_0^tau e^{s^2/2} ds)``."""
    if gamma < 0 or tau_coord < 0:
        raise ValueError("change of variables expects nonnegative coordinates")
    return gamma * math.exp(tau_coord * tau_coord / 2), T_of_tau(tau_coord)


def inverse_change_of_variables(Gamma: float, T_coord: float) -> tuple[float, float]:
    t = tau_of_T(T_coord)
    return Gamma * math.exp(-t * t / 2), t


def _tau_of_T_mp(T, dps=30):
    with mpmath.workdps(dps):
        T = mpmath.mpf(T)
        f = lambda t: mpmath.exp(t * t / 2) * phi_mp(t, dps) - T
        return mpmath.findroot(f, mpmath.mpf(tau_of_T(float(T))))


def check_change_of_variables(samples: int = 200, seed: int = 0) -> CheckReport:
    """Round trip, and linearity in T of ``e^{tau^2/2} y(tau)`` for solutions y of the drift ODE."""
    rng = np.random.default_rng(seed)
    worst_rt = 0.0
    for g, t in zip(rng.uniform(0.01, 50, samples), rng.uniform(0, 4, samples)):
        G, T = change_of_variables(float(g), float(t))
        g2, t2 = inverse_change_of_variables(G, T)
        worst_rt = max(worst_rt, abs(g2 - g) / g, abs(t2 - t) / max(t, 1e-300))
    # curves y = e^{-tau^2/2}(C T + D) solve y'' + tau y' + y = 0; second differences in T vanish
    worst_lin = 0.0
    with mpmath.workdps(30):
        for C, D in rng.uniform(-2, 2, (20, 2)):
            for T in np.linspace(0.2, 3.0, 15):
                h = mpmath.mpf("1e-6")
                vals = []
                for a in (-1, 0, 1):
                    Tc = mpmath.mpf(T) + a * h
                    t = _tau_of_T_mp(Tc)
                    y = mpmath.exp(-t * t / 2) * (C * Tc + D)
                    vals.append(mpmath.exp(t * t / 2) * y)
                worst_lin = max(worst_lin, abs(float((vals[0] - 2 * vals[1] + vals[2]) / h ** 2)))
        # the phi family itself is linear in T
        for T in np.linspace(0.2, 3.0, 15):
            h = mpmath.mpf("1e-6")
            vals = []
            for a in (-1, 0, 1):
                t = _tau_of_T_mp(mpmath.mpf(T) + a * h)
                vals.append(mpmath.exp(t * t / 2) * phi_mp(t))
            worst_lin = max(worst_lin, abs(float((vals[0] - 2 * vals[1] + vals[2]) / h ** 2)))
    stats = {"round_trip_max_rel": worst_rt, "max_abs_TT": worst_lin}
    return CheckReport("change_of_variables", worst_rt <= 1e-12 and worst_lin <= 1e-8, stats)


def check_line_concavity(params: BellmanParams, samples: int = 100, seed: int = 0,
                         per_line: int = 20) -> CheckReport:
    """Concavity of ``T -> min(C T + D, K T)`` along lines meeting the transformed domain.

    The same second derivative is recomputed from Theta in the original coordinates
    (``e^{tau^2/2} Theta`` along the pulled-back curve) and compared with the drift
    quadratic form ``[y', 1] M [y', 1]^T e^{-tau^2/2}`` at smooth points.
    """
    rng = np.random.default_rng(seed)
    Q, K = params.Q, params.K
    dom = HyperbolicDomain(Q)
    worst_sd = -math.inf
    worst_gap = 0.0
    lines = 0
    points = 0
    with mpmath.workdps(30):
        Kmp = mpmath.mpf(K)
        while lines < samples:
            t0 = float(np.exp(rng.uniform(math.log(0.02), math.log(3.0))))
            g0 = float(rng.uniform(1, Q)) / t0
            C = float(rng.uniform(-3, 3)) * K
            G0, T0 = change_of_variables(g0, t0)
            D = G0 - C * T0
            lines += 1
            for T in T0 * (1 + np.linspace(-0.05, 0.05, per_line)):
                if T <= 0:
                    continue
                gamma, tau = inverse_change_of_variables(C * T + D, T)
                if not dom.contains(gamma, tau):
                    continue
                points += 1
                h = 1e-4 * T
                f = [min(C * (T + a * h) + D, K * (T + a * h)) for a in (-1, 0, 1)]
                # second difference relative to the function scale (rounding sits near 1e-16)
                worst_sd = max(worst_sd, (f[0] - 2 * f[1] + f[2]) / max(1.0, abs(f[1])))
                # pulled back in high precision
                if abs(gamma - K * phi(tau)) < 1e-3 * gamma:
                    continue
                hm = mpmath.mpf(h) / 100
                vals = []
                for a in (-1, 0, 1):
                    Tm = mpmath.mpf(T) + a * hm
                    tm = _tau_of_T_mp(Tm)
                    gm = (C * Tm + D) * mpmath.exp(-tm * tm / 2)
                    th = min(gm, Kmp * phi_mp(tm))
                    vals.append(mpmath.exp(tm * tm / 2) * th)
                h_TT = float((vals[0] - 2 * vals[1] + vals[2]) / hm ** 2)
                M = drift_matrix_analytic(gamma, tau, params)
                yp = C - tau * gamma
                vec = np.array([yp, 1.0])
                quad_form = float(vec @ M @ vec) * math.exp(-tau * tau / 2)
                worst_gap = max(worst_gap, abs(h_TT - quad_form))
    stats = {"lines": lines, "points": points, "max_second_diff": worst_sd, "max_pullback_gap": worst_gap}
    return CheckReport("lines", worst_sd <= 1e-13 and worst_gap <= 1e-8, stats)


# --- scalar inequalities ---------------------------------------------------------------------------

def phi_inequality_gap(t1, t2, constant: float = 100.0) -> np.ndarray:
    t1, t2 = np.asarray(t1, float), np.asarray(t2, float)
    s = np.sqrt(1 + (t2 - t1) ** 2 / constant)
    return phi_array((t1 + t2) / (2 * s)) / s - (phi_array(t1) + phi_array(t2)) / 2


def _phi_grid_ok(tau0: float, constant: float, n: int, tol: float) -> tuple[bool, float]:
    g = np.linspace(tau0 / n, tau0, n)
    A, B = np.meshgrid(g, g, indexing="ij")
    mask = A <= B
    gap = phi_inequality_gap(A[mask], B[mask], constant)
    return bool((gap >= -tol).all()), float(gap.min())


def check_phi_inequality(params: BellmanParams, constant: float = 100.0, n: int = 200, samples: int = 20000,
                         seed: int = 0, tol: float = 1e-12) -> CheckReport:
    tau0 = params.tau0
    ok_grid, worst_grid = _phi_grid_ok(tau0, constant, n, tol)
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, tau0, samples)
    b = rng.uniform(0, tau0, samples)
    t1, t2 = np.minimum(a, b), np.maximum(a, b)
    gap = phi_inequality_gap(t1, t2, constant)
    ok_rand = bool((gap >= -tol).all())
    # concavity on (0, tau0]
    ts = np.linspace(tau0 / n, tau0, n)
    f = phi_array(ts)
    second = -f - ts * (1 - ts * f)
    # empirical largest tau0 on a coarse grid
    star = 0.0
    for cand in np.geomspace(1e-3, 20.0, 60):
        ok, _ = _phi_grid_ok(float(cand), constant, 60, tol)
        if not ok:
            break
        star = float(cand)
    stats = {"tau0": tau0, "worst_gap_grid": worst_grid, "worst_gap_random": float(gap.min()),
             "max_phi_second": float(second.max()), "empirical_tau0_star": star}
    return CheckReport("phi", ok_grid and ok_rand and bool((second < 0).all()), stats)


def U_fn(p, q) -> np.ndarray:
    p, q = np.asarray(p, float), np.asarray(q, float)
    return phi_array(p / q) / q


def u_second_derivative_stated(p: float, t: float) -> float:
    x = p / math.sqrt(t)
    return 0.75 * t ** -2.5 * ((1 - 3 * x * x + x ** 4) * phi(x) + 2 * x - x ** 3)


def u_second_derivative(p: float, t: float) -> float:
    """``d^2/dt^2 [t^{-1/2} phi(p / sqrt(t))]`` from ``phi' = 1 - x phi``."""
    x = p / math.sqrt(t)
    return 0.25 * t ** -2.5 * ((3 - 6 * x * x + x ** 4) * phi(x) + 5 * x - x ** 3)


def _u_second_fd(p: float, t: float, dps: int = 30) -> float:
    with mpmath.workdps(dps):
        p, t = mpmath.mpf(p), mpmath.mpf(t)
        h = t * mpmath.mpf("1e-6")
        g = lambda s: phi_mp(p / mpmath.sqrt(s), dps) / mpmath.sqrt(s)
        return float((g(t + h) - 2 * g(t) + g(t - h)) / h ** 2)


def check_U_inequality(samples: int = 50000, seed: int = 0, tol: float = 1e-12, ratio: float = 1000.0,
                       constant: float = 100.0) -> CheckReport:
    rng = np.random.default_rng(seed)
    q = np.exp(rng.uniform(math.log(0.1), math.log(10), samples))
    p = q / ratio * rng.uniform(0, 1, samples)
    a = p * rng.uniform(0, 1, samples)
    # grid part: a on a lattice including the equality case a = 0
    qg = np.ones(41 * 41)
    P, A = np.meshgrid(np.linspace(0, 1 / ratio, 41), np.linspace(0, 1, 41), indexing="ij")
    pg = P.ravel()
    ag = (A * P).ravel()
    q, p, a = np.concatenate([q, qg]), np.concatenate([p, pg]), np.concatenate([a, ag])
    q2 = np.sqrt(q * q - a * a / constant)
    lhs = U_fn(p, q)
    rhs = (U_fn(p + a, q2) + U_fn(p - a, q2)) / 2
    gap = lhs - rhs
    bad = gap < -tol * np.maximum(1.0, np.abs(lhs))
    viol = [{"p": float(x), "q": float(y), "a": float(z), "gap": float(g)}
            for x, y, z, g in zip(p[bad], q[bad], a[bad], gap[bad])]
    # convexity of t -> U(p, sqrt t) on [q^2/4, q^2]
    worst_sd = math.inf
    fd_err_stated = 0.0
    fd_err_derived = 0.0
    for qq, pp in zip(np.geomspace(0.1, 10, 12), np.linspace(0.05, 1, 8)):
        pp = pp * qq / ratio
        for t in np.linspace(qq * qq / 4, qq * qq, 9):
            h = 1e-3 * t
            vals = [float(U_fn(pp, math.sqrt(t + s * h))) for s in (-1, 0, 1)]
            sd = vals[0] - 2 * vals[1] + vals[2]
            worst_sd = min(worst_sd, sd)
            ref = _u_second_fd(pp, t)
            fd_err_stated = max(fd_err_stated, abs(u_second_derivative_stated(pp, t) - ref) / abs(ref))
            fd_err_derived = max(fd_err_derived, abs(u_second_derivative(pp, t) - ref) / abs(ref))
    # the auxiliary ratio bound used along the way
    a_q = np.linspace(0, 1 / ratio, 101)
    r09 = np.sqrt(1 - a_q ** 2 / 50) / np.sqrt(1 - a_q ** 2 / 100)
    stats = {"samples": int(len(p)), "violations": int(bad.sum()), "worst_gap": float(gap.min()),
             "convexity_min_second_diff": worst_sd,
             "stated_second_derivative_max_rel_err": fd_err_stated,
             "derived_second_derivative_max_rel_err": fd_err_derived,
             "stated_formula_agrees": fd_err_stated <= 1e-6,
             "derived_formula_agrees": fd_err_derived <= 1e-6,
             "ratio_bound_09_min": float(r09.min()), "ratio_bound_09_holds": bool((r09 <= 0.9).all())}
    passed = not viol and worst_sd >= -1e-12
    return CheckReport("U", passed, stats, viol)


# --- homogeneity and growth -------------------------------------------------------------------------

def check_homogeneity_growth(params: BellmanParams, samples: int = 20000, seed: int = 0) -> CheckReport:
    rng = np.random.default_rng(seed)
    v = np.exp(rng.uniform(-4, 4, samples))
    u = rng.uniform(1, params.Q, samples) / v
    lam = np.exp(rng.uniform(-6, 6, samples))
    t = np.exp(rng.uniform(-3, 3, samples))
    b = bfun_array(u, v, lam, params)
    bt = bfun_array(u * t, v / t, lam / t ** 2, params)
    hom = float(np.max(np.abs(bt - t * b) / np.maximum(t * b, 1e-300)))
    growth = float(np.max(b * lam / (params.K * v)))
    # B is nonincreasing in lambda
    b2 = bfun_array(u, v, lam * 1.01, params)
    mono = float(np.max(b2 - b))
    stats = {"homogeneity_max_rel": hom, "growth_max": growth, "lambda_monotone_max_increase": mono}
    return CheckReport("homogeneity", hom <= 1e-12 and growth <= 1 + 1e-12 and mono <= 1e-12, stats)


# --- tree certificate --------------------------------------------------------------------------------

@dataclass
class Certificate:
    lam: float
    bound: float
    actual: float
    nodes_checked: int
    stopped: int
    worst_margin: float
    growth_bound: float

    @property
    def dominates(self) -> bool:
        return self.bound >= self.actual * (1 - 1e-12)

    def as_json(self) -> dict:
        return dict(self.__dict__, dominates=self.dominates)


def bellman_induction_certificate(w: StepFunction | AnnotatedWeight, lam: float, params: BellmanParams,
                                  tol: float = 1e-10) -> Certificate:
    """Stopping-time walk certifying ``w{c sum Delta_I(w^{-1})^2 chi_I > lam} <= B(<w>, <w^{-1}>, lam)``."""
    if isinstance(w, AnnotatedWeight):
        w = w.weight
    if lam <= 0:
        raise ValueError("lambda must be positive")
    fw = w.map(float)
    winv = pointwise(fw, "invert")
    uav, vav = fw.node_averages, winv.node_averages
    c = params.c_drift
    internal = set(fw.internal_nodes)
    root = DyadicInterval.root()
    b_root = bfun(uav[root], vav[root], lam, params)
    stopped_mass = []
    checked = 0
    worst = math.inf
    stack = [(root, lam)]
    while stack:
        I, lam_I = stack.pop()
        if I not in internal:
            continue
        d = float(haar_difference(winv, I))
        if lam_I < c * d * d:
            # obstacle must pin B to u here
            b = bfun(uav[I], vav[I], lam_I, params)
            if abs(b - uav[I]) > tol * max(1.0, uav[I]):
                raise CertificateError(f"obstacle not active at {I.path or '-'}")
            stopped_mass.append(uav[I] * float(I.length))
            continue
        lam_c = lam_I - c * d * d
        parent = bfun(uav[I], vav[I], lam_I, params)
        kids = [bfun(uav[ch], vav[ch], lam_c, params) for ch in I.children()]
        margin = parent - (kids[0] + kids[1]) / 2
        checked += 1
        worst = min(worst, margin / max(1.0, abs(parent)))
        if margin < -tol * max(1.0, abs(parent)):
            raise CertificateError(f"main inequality violated at node {I.path or '-'} by {margin}")
        stack += [(ch, lam_c) for ch in I.children()]
    # the direct distribution on the same tree
    acc = {root: 0.0}
    for R in sorted(internal, key=lambda iv: iv.depth):
        d = float(haar_difference(winv, R))
        acc[R.minus] = acc[R] + c * d * d
        acc[R.plus] = acc[R] + c * d * d
    actual = math.fsum(float(v) * float(iv.length) for iv, v in fw.leaves if acc[iv] > lam)
    growth = params.K * vav[root] / lam
    return Certificate(lam, b_root, actual, checked, len(stopped_mass), worst, growth)


def default_params_for(w: StepFunction, **kw) -> BellmanParams:
    """Parameters with Q set to the weight's A2 characteristic (rounded up slightly)."""
    from .operators import a2_characteristic
    q = float(a2_characteristic(w)) * (1 + 1e-9)
    return BellmanParams(Q=max(q, 1.0), **kw)
