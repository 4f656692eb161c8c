"""Harnack-type inequalities and their consequences, checked on grid functions.

Covers the power decay of superlevel sets, Harnack constants (Orlicz and L^p
forms), the oscillation iteration lemma, oscillation decay and Hoelder fits,
the local maximum principle and the logarithmic modulus of continuity.
Empirical constants are tested for finiteness, mesh stability and spread over
instance families.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from cplxv.estimates import C_CAP, MESH_TOL, PreconditionError, orlicz_A
from cplxv.grid import GridFunction, ball, cube, integrate, lp_norm
from cplxv.report import EstimateReport, family_spread, mesh_stable

FAMILY_RATIO = 10.0


@dataclass
class DecayFit:
    """Least-squares fit of ``log y = log C - exponent * log x`` (or ``+ exponent`` for growth).

    ``constant`` is the smallest C making the fitted power law an upper bound at
    every sample; ``residual`` is the RMS of the log-log regression.
    """

    samples: list
    exponent: float
    constant: float
    residual: float
    degenerate: bool = False
    passed: bool = True


def _loglog_fit(x, y):
    lx, ly = np.log(x), np.log(y)
    A = np.stack([np.ones_like(lx), lx], axis=1)
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - ly) ** 2)))
    return float(coef[0]), float(coef[1]), resid


def _ball_values(u: GridFunction, r: float, center=None) -> np.ndarray:
    n = u.domain.n
    shape = ball(n, r, center)
    if r > u.domain.shape.half_extent + 1e-12 and center is None:
        raise ValueError(f"radius {r} leaves the domain")
    vals = u.values[u.domain.region_mask(shape)]
    if vals.size == 0:
        raise ValueError(f"no nodes in the ball of radius {r}")
    return vals


def _osc(u: GridFunction, r: float, center=None) -> float:
    vals = _ball_values(u, r, center)
    return float(vals.max() - vals.min())


# -- level sets ---------------------------------------------------------------------------------

def level_set_decay(u: GridFunction, t_values) -> DecayFit:
    """|{u >= t} cap Q_1| (Lebesgue, node counting) against t, fitted as C t^{-c1}.

    Checked preconditions: u >= 0 on the nodes of B_{2 sqrt(2n)} and inf over Q_3 <= 1.
    Passes when c1 > 0 and ``C t^{-c1}`` bounds every sample; a step-shaped
    measure (fewer than two distinct positive values) is flagged degenerate.
    """
    dom = u.domain
    n, h = dom.n, dom.h
    big = dom.region_mask(ball(n, 2.0 * math.sqrt(2 * n)))
    if (u.values[big] < -1e-12 * (1.0 + u.max_abs())).any():
        raise PreconditionError("u must be nonnegative on B_{2 sqrt(2n)}")
    q3 = dom.region_mask(cube(n, 3.0))
    per_axis = 2 * int(math.floor(1.5 / h + 1e-9)) + 1
    if int(q3.sum()) < per_axis ** dom.d:
        raise PreconditionError("domain does not cover Q_3")
    if u.values[q3].min() > 1.0:
        raise PreconditionError("inf over Q_3 must be at most 1")
    w = dom.region_weights(cube(n, 1.0))
    vals = np.nan_to_num(u.values, nan=-np.inf)
    t_values = np.sort(np.asarray(t_values, dtype=float))
    meas = np.array([float(w[vals >= t].sum()) * h ** dom.d for t in t_values])
    samples = list(zip(t_values.tolist(), meas.tolist()))
    use = (t_values > 0) & (meas > 0)
    if len(np.unique(meas[use])) < 2:
        top = float(meas.max(initial=0.0))
        return DecayFit(samples, 0.0, top, 0.0, degenerate=True, passed=True)
    logC, slope, resid = _loglog_fit(t_values[use], meas[use])
    c1 = -slope
    pos = t_values > 0
    C = float(np.max(meas[pos] * t_values[pos] ** c1))
    return DecayFit(samples, c1, C, resid, degenerate=False, passed=bool(c1 > 0 and math.isfinite(C)))


# -- Harnack --------------------------------------------------------------------------------

@dataclass
class HarnackReport:
    """sup and inf of u over B_{1/2}, the f-term and C = sup / (inf + term)."""

    sup_half: float
    inf_half: float
    orlicz_or_lp_term: float
    empirical_C: float
    mode: str = "lp"
    metadata: dict = field(default_factory=dict)

    def to_report(self, passed: bool = True) -> EstimateReport:
        rhs = self.inf_half + self.orlicz_or_lp_term
        return EstimateReport("harnack_" + self.mode, self.sup_half, rhs, self.empirical_C, MESH_TOL, passed,
                              dict(self.metadata))


def harnack_constant(u: GridFunction, f: GridFunction, mode: str = "lp", p_exp: float = 4.0,
                     c0: float = 1.0, lam: float = 1.0, Lam: float = 1.0) -> HarnackReport:
    """Empirical C in sup_{B_1/2} u <= C (inf_{B_1/2} u + term).

    ``mode = "lp"``: term = ||f||_{L^p(B_1)}.  ``mode = "orlicz"``: term = A(c0, f, B_1).
    u must be nonnegative on the closed unit ball.  When both sides vanish, C = 1.
    """
    dom = u.domain
    n = dom.n
    unit = ball(n, 1.0)
    if (u.values[dom.region_mask(unit)] < 0).any():
        raise PreconditionError("u must be nonnegative on B_1")
    half = _ball_values(u, 0.5)
    sup_h, inf_h = float(half.max()), float(half.min())
    if mode == "lp":
        term = lp_norm(f, p_exp, unit)
    elif mode == "orlicz":
        term = orlicz_A(f, unit, c0, p_exp, n)
    else:
        raise ValueError("mode must be 'lp' or 'orlicz'")
    den = inf_h + term
    if den > 0:
        C = sup_h / den
    else:
        C = 1.0 if sup_h == 0 else math.inf
    meta = {"n": n, "h": dom.h, "lam": lam, "Lam": Lam, "p": p_exp, "c0": c0 if mode == "orlicz" else None}
    return HarnackReport(sup_h, inf_h, term, C, mode, meta)


def harnack_family_check(fine: list, coarse: list | None = None, ratio: float = FAMILY_RATIO) -> EstimateReport:
    """Finite constants, spread max/min <= ``ratio`` and (given coarse partners) mesh stability."""
    consts = [r.empirical_C for r in fine]
    spread = family_spread(consts)
    ok = all(math.isfinite(c) and c > 0 for c in consts) and spread <= ratio
    stable = True
    if coarse is not None:
        stable = all(mesh_stable(a.empirical_C, b.empirical_C, MESH_TOL) for a, b in zip(coarse, fine))
    meta = dict(fine[0].metadata) if fine else {}
    meta.update(spread=spread, members=len(fine))
    return EstimateReport("harnack_family", max(consts), min(consts) * ratio, spread, MESH_TOL,
                          bool(ok and stable), meta)


# -- oscillation iteration ------------------------------------------------------------------------

def lemma_constant(gamma: float, tau: float) -> float:
    """C(gamma, tau) = max(1/gamma, 1/(1 - gamma)) from the iteration proof."""
    return max(1.0 / gamma, 1.0 / (1.0 - gamma))


def _check_lemma_params(gamma, tau, mu, r, R):
    if not (0 < gamma < 1 and 0 < tau < 1):
        raise ValueError("need 0 < gamma, tau < 1")
    if not (0 <= mu < 1):
        raise ValueError("need 0 <= mu < 1")
    if not (0 < r <= R):
        raise ValueError("need 0 < r <= R")


def oscillation_lemma_bound(omega_R: float, gamma: float, tau: float, mu: float, r: float, R: float,
                            sigma: Callable[[float], float] = lambda r: 0.0):
    """(alpha, bound) with alpha = (1 - mu) ln gamma / ln tau and
    bound = C(gamma, tau) [(r/R)^alpha omega(R) + sigma(r^mu R^{1-mu})]."""
    _check_lemma_params(gamma, tau, mu, r, R)
    alpha = (1.0 - mu) * math.log(gamma) / math.log(tau)
    C = lemma_constant(gamma, tau)
    return alpha, C * ((r / R) ** alpha * omega_R + sigma(r ** mu * R ** (1.0 - mu)))


def oscillation_lemma_iterate(omega_R: float, gamma: float, tau: float, mu: float, r: float, R: float,
                              sigma: Callable[[float], float] = lambda r: 0.0) -> float:
    """Bound on omega(r) obtained by running omega(tau s) <= gamma omega(s) + sigma(s) from R1 = r^mu R^{1-mu}.

    With tau^m R1 < r <= tau^{m-1} R1, returns W_{m-1} where W_0 = omega(R) and
    W_{j+1} = gamma W_j + sigma(tau^j R1) (monotonicity gives omega(r) <= W_{m-1}).
    """
    _check_lemma_params(gamma, tau, mu, r, R)
    R1 = r ** mu * R ** (1.0 - mu)
    # largest j with tau^j R1 >= r, guarded against round-off at exact powers
    m1 = int(math.floor(math.log(r / R1) / math.log(tau) + 1e-12))
    W = omega_R
    for j in range(m1):
        W = gamma * W + sigma(tau ** j * R1)
    return W


def oscillation_decay(u: GridFunction, radii, center=None) -> DecayFit:
    """osc over B_r(center) for decreasing radii, fitted as C r^alpha.

    Constant functions are flagged degenerate (alpha = 0).  ``constant`` is the
    smallest C with osc <= C r^alpha at every radius.
    """
    radii = np.asarray(radii, dtype=float)
    if radii.size < 3:
        raise ValueError("need at least 3 radii")
    if np.any(np.diff(radii) >= 0):
        raise ValueError("radii must be strictly decreasing")
    osc = np.array([_osc(u, r, center) for r in radii])
    samples = list(zip(radii.tolist(), osc.tolist()))
    if not (osc > 0).all():
        return DecayFit(samples, 0.0, float(osc.max()), 0.0, degenerate=True, passed=False)
    _, alpha, resid = _loglog_fit(radii, osc)
    C = float(np.max(osc / radii ** alpha))
    return DecayFit(samples, alpha, C, resid, degenerate=False, passed=alpha > 0)


def holder_exponent(u: GridFunction, radii, centers=(None,)) -> float:
    """Smallest fitted oscillation exponent over the given centers, capped at 1."""
    fits = [oscillation_decay(u, radii, c) for c in centers]
    alphas = [f.exponent for f in fits if not f.degenerate]
    return min(min(alphas), 1.0) if alphas else 1.0


def sample_pairs(domain, count: int, seed: int = 0, radius: float = 0.5):
    """``count`` random pairs of distinct nodes of the closed ball B_radius, as flat indices."""
    rng = np.random.default_rng(seed)
    flat = np.flatnonzero(domain.region_mask(ball(domain.n, radius)))
    a = rng.choice(flat, size=count)
    b = rng.choice(flat, size=count)
    keep = a != b
    return np.stack([a[keep], b[keep]], axis=1)


def holder_ratios(u: GridFunction, f: GridFunction, p_exp: float, pairs, alpha: float) -> np.ndarray:
    """|u(z) - u(w)| / (|z - w|^alpha (||u||_{L^2(B_1)} + ||f||_{L^p(B_1)})) per pair."""
    dom = u.domain
    unit = ball(dom.n, 1.0)
    scale = lp_norm(u, 2.0, unit) + lp_norm(f, p_exp, unit)
    vals = u.values.reshape(-1)
    x = dom.positions(np.unravel_index(pairs.reshape(-1), dom.dims)).reshape(len(pairs), 2, dom.d)
    dist = np.linalg.norm(x[:, 0] - x[:, 1], axis=1)
    diff = np.abs(vals[pairs[:, 0]] - vals[pairs[:, 1]])
    if scale == 0:
        return np.where(diff > 0, np.inf, 0.0)
    return diff / (dist ** alpha * scale)


def holder_check(u: GridFunction, f: GridFunction, p_exp: float, pairs, alpha: float,
                 C_hat: float | None = None, coarse: EstimateReport | None = None, c_cap: float = C_CAP,
                 lam: float = 1.0, Lam: float = 1.0) -> EstimateReport:
    """Hoelder inequality at every sampled pair.

    Without ``C_hat`` the constant is fitted as the largest ratio; with a
    family-wide ``C_hat`` every ratio must stay below it.
    """
    ratios = holder_ratios(u, f, p_exp, pairs, alpha)
    top = float(ratios.max(initial=0.0))
    C = top if C_hat is None else float(C_hat)
    ok = math.isfinite(top) and top <= C * (1 + 1e-12) and C <= c_cap
    meta = {"n": u.domain.n, "h": u.domain.h, "lam": lam, "Lam": Lam, "p": p_exp, "alpha": alpha,
            "pairs": len(pairs)}
    if coarse is not None:
        meta["coarse_constant"] = coarse.empirical_constant
        ok = ok and mesh_stable(coarse.empirical_constant, top, MESH_TOL)
    return EstimateReport("holder", top, C, top, MESH_TOL, bool(ok), meta)


# -- local maximum principle and modulus of continuity -------------------------------------------

def local_max_principle_check(u: GridFunction, f: GridFunction, q: float, p_exp: float,
                              coarse: EstimateReport | None = None, c_cap: float = C_CAP,
                              lam: float = 1.0, Lam: float = 1.0) -> EstimateReport:
    """sup_{B_1/2} u against ||u^+||_{L^q(B_3/4)} + ||f||_{L^p(B_1)}."""
    n = u.domain.n
    if q <= 0 or p_exp <= 0:
        raise ValueError("exponents must be positive")
    lhs = float(_ball_values(u, 0.5).max())
    rhs = lp_norm(u.map(lambda x: np.maximum(x, 0.0)), q, ball(n, 0.75)) + lp_norm(f, p_exp, ball(n, 1.0))
    meta = {"n": n, "h": u.domain.h, "lam": lam, "Lam": Lam, "p": p_exp, "q": q}
    if lhs <= 0:
        return EstimateReport("max_principle", lhs, rhs, 0.0, MESH_TOL, True, meta)
    C = lhs / rhs if rhs > 0 else math.inf
    ok = math.isfinite(C) and C <= c_cap
    if coarse is not None:
        meta["coarse_constant"] = coarse.empirical_constant
        ok = ok and mesh_stable(coarse.empirical_constant, C, MESH_TOL)
    return EstimateReport("max_principle", lhs, rhs, C, MESH_TOL, bool(ok), meta)


def modulus_of_continuity_check(u: GridFunction, f: GridFunction, k: float, p_exp: float, radii=None,
                                c_cap: float = C_CAP, lam: float = 1.0, Lam: float = 1.0) -> EstimateReport:
    """max over r <= 1/2 of osc_{B_r} u (-ln r)^k / (osc_{B_1} u + int |f|^n ln^p(1+|f|^n) + 1)."""
    dom = u.domain
    n = dom.n
    kmax = (p_exp - n) / n
    if not (0 < k < kmax):
        raise ValueError(f"need 0 < k < (p - n)/n = {kmax}")
    if radii is None:
        radii = [r for r in (0.5, 0.4, 0.3, 0.2, 0.15, 0.1) if r >= 2 * dom.h]
    radii = [float(r) for r in radii if r <= 0.5]
    if not radii:
        raise ValueError("no admissible radii (need r <= 1/2)")
    fn = f.map(lambda x: np.abs(x) ** n)
    denom = _osc(u, 1.0) + integrate(fn.map(lambda x: x * np.log1p(x) ** p_exp), ball(n, 1.0)) + 1.0
    vals = [_osc(u, r) * (-math.log(r)) ** k / denom for r in radii]
    C = max(vals)
    meta = {"n": n, "h": dom.h, "lam": lam, "Lam": Lam, "p": p_exp, "k": k}
    return EstimateReport("modulus", C * denom, denom, C, 0.0, bool(math.isfinite(C) and C <= c_cap), meta)
