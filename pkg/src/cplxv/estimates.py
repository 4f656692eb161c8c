"""Numerical checks of the sup bounds for Pucci supersolutions and of their auxiliary objects.

Contents: the L^p and logarithmic sup bounds, the sublevel sets Omega_s with
their weights A_s, the comparison function built from an auxiliary complex
Monge-Ampere solve, exponential integrability of that solve, the De Giorgi
vanishing threshold, the radial barrier ``g = -M (1 - |z|^2 / 8n)^gamma`` and
the Orlicz gauge ``A(c0, f, Omega)``.

Constants in the bounds are not known numerically, so the checks report an
empirical constant and test it for boundedness, mesh stability and scaling.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from cplxv.grid import Domain, GridFunction, integrate, to_complex
from cplxv.hermitian import HermitianMatrix, PucciParams, pucci_plus_eigs
from cplxv.report import EstimateReport, mesh_stable
from cplxv.solver import SolveConfig, solve_cma_dirichlet

log = logging.getLogger(__name__)

C_CAP = 1e3
MESH_TOL = 0.2
EPS_DEFAULT = 1e-8
EXP_CAP = 700.0


class PreconditionError(ValueError):
    """Inputs violate the hypotheses of the estimate being checked."""


def _meta(u: GridFunction, p: PucciParams, p_exp=None, **extra):
    dom = u.domain
    m = {"n": dom.n, "h": dom.h, "lam": p.lam, "Lam": p.Lam, "p": p_exp}
    m.update(extra)
    return m


def _require_nonnegative_boundary(u: GridFunction):
    dom = u.domain
    vals = u.values[dom.boundary]
    slack = 1e-12 * (1.0 + u.max_abs())
    if vals.size and vals.min() < -slack:
        raise PreconditionError(f"u < 0 on the boundary (min {vals.min():.3e})")


def _negative_set(u: GridFunction) -> np.ndarray:
    """Closed-ball nodes where u < 0."""
    return u.domain.region_mask() & (np.nan_to_num(u.values, nan=0.0) < 0)


def _positive_part_power(f: GridFunction, q: float) -> GridFunction:
    return f.map(lambda x: np.maximum(x, 0.0) ** q)


def sup_negative_part(u: GridFunction) -> float:
    """sup over the closed shape of (-u)^+."""
    vals = u.values[u.domain.region_mask()]
    return float(max(0.0, -vals.min())) if vals.size else 0.0


# -- L^p and logarithmic sup bounds ---------------------------------------------------------

def _finish(name, u, f, p, p_exp, lhs, rhs, c_cap, coarse, **extra):
    meta = _meta(u, p, p_exp, **extra)
    if rhs > 0:
        const = lhs / rhs
        ok = math.isfinite(const) and const <= c_cap
    else:
        # a vanishing right side forces the maximum principle, up to discretization
        const = 0.0 if lhs == 0 else math.inf
        ok = lhs <= 10.0 * u.domain.h
        meta["maximum_principle"] = True
    if coarse is not None:
        meta["coarse_constant"] = coarse.empirical_constant
        ok = ok and mesh_stable(coarse.empirical_constant, const, MESH_TOL)
    return EstimateReport(name, lhs, rhs, const, MESH_TOL, bool(ok), meta)


def abp_check(u: GridFunction, f: GridFunction, p_exp: float, p: PucciParams, c_cap: float = C_CAP,
              coarse: EstimateReport | None = None, label: str = "") -> EstimateReport:
    """``sup (-u)^+`` against ``(1/lambda) (int_{u<0} (f^+)^p beta^n)^{1/p}``.

    The empirical constant is lambda * lhs / (int ...)^{1/p}.  It passes when it
    is at most ``c_cap`` and, if the same check on the next coarser mesh is
    given as ``coarse``, when it moved by at most 20% under refinement.
    """
    n = u.domain.n
    if not p_exp > n:
        raise ValueError(f"exponent must exceed n = {n}")
    _require_nonnegative_boundary(u)
    lhs = sup_negative_part(u)
    neg = _negative_set(u)
    norm = integrate(_positive_part_power(f, p_exp), neg) ** (1.0 / p_exp) if neg.any() else 0.0
    return _finish("abp", u, f, p, p_exp, lhs, norm / p.lam, c_cap, coarse, instance=label)


def log_abp_check(u: GridFunction, f: GridFunction, p_exp: float, p: PucciParams, c_cap: float = C_CAP,
                  coarse: EstimateReport | None = None, label: str = "") -> EstimateReport:
    """``sup (-u)^+`` against the logarithmic Orlicz form of the sup bound.

    rhs = (1/lambda) (int (f^+)^n ln^p(1 + (f^+)^n) + 1)^{1/p} (int (f^+)^n)^{1/n - 1/p},
    both integrals over {u < 0}.  When rhs = 0 (f^+ vanishes there) the check
    requires ``lhs <= 10 h``.  Unlike :func:`abp_check` this form is not
    invariant under joint scaling of (u, f) because of the additive 1.
    """
    n = u.domain.n
    if not p_exp > n:
        raise ValueError(f"exponent must exceed n = {n}")
    _require_nonnegative_boundary(u)
    lhs = sup_negative_part(u)
    neg = _negative_set(u)
    if neg.any():
        fn = _positive_part_power(f, n)
        log_term = integrate(fn.map(lambda x: x * np.log1p(x) ** p_exp), neg)
        mass = integrate(fn, neg)
    else:
        log_term = mass = 0.0
    rhs = (log_term + 1.0) ** (1.0 / p_exp) * mass ** (1.0 / n - 1.0 / p_exp) / p.lam
    return _finish("log_abp", u, f, p, p_exp, lhs, rhs, c_cap, coarse, instance=label)


# -- sublevel sets and the comparison function -----------------------------------------------

@dataclass
class SublevelData:
    """Omega_s = {-u > s} (interior nodes) and A_s = int_{Omega_s} (-u - s)((f^+)^n + eps) beta^n.

    ``A_s_tenth`` repeats the integral with eps / 10 to expose the eps sensitivity.
    """

    s: float
    omega: np.ndarray
    A_s: float
    eps: float
    A_s_tenth: float

    @property
    def empty(self) -> bool:
        return not self.omega.any()


def sublevel_data(u: GridFunction, f: GridFunction, s: float, eps: float = EPS_DEFAULT) -> SublevelData:
    dom = u.domain
    vals = np.nan_to_num(u.values, nan=0.0)
    omega = dom.interior & (-vals > s)
    if not omega.any():
        return SublevelData(float(s), omega, 0.0, eps, 0.0)
    depth = u.map(lambda x: -x - s)
    fn = _positive_part_power(f, dom.n)
    A = integrate(GridFunction(dom, depth.values * (fn.values + eps)), omega)
    A10 = integrate(GridFunction(dom, depth.values * (fn.values + eps / 10)), omega)
    return SublevelData(float(s), omega, A, eps, A10)


def comparison_density(u: GridFunction, f: GridFunction, sub: SublevelData) -> GridFunction:
    """(-u - s)^+ ((f^+)^n + eps) / A_s, the right side of the auxiliary Monge-Ampere problem."""
    dom = u.domain
    if sub.A_s <= 0:
        raise PreconditionError("A_s = 0: the sublevel set is empty")
    depth = np.maximum(-u.values - sub.s, 0.0)
    fn = np.maximum(f.values, 0.0) ** dom.n
    vals = np.where(sub.omega, depth * (fn + sub.eps) / sub.A_s, 0.0)
    return GridFunction(dom, np.where(dom.active, vals, np.nan))


def comparison_function(u: GridFunction, psi: GridFunction, s: float, A_s: float,
                        p: PucciParams) -> GridFunction:
    """Phi = -(n^2 lam / (n+1))^{-n/(n+1)} A_s^{1/(n+1)} (-psi)^{n/(n+1)} - u - s."""
    n = u.domain.n
    coef = (n * n * p.lam / (n + 1)) ** (-n / (n + 1)) * A_s ** (1.0 / (n + 1))
    return GridFunction(u.domain, -coef * np.maximum(-psi.values, 0.0) ** (n / (n + 1)) - u.values - s)


def comparison_function_check(u: GridFunction, psi: GridFunction, s: float, A_s: float,
                              p: PucciParams, label: str = "") -> EstimateReport:
    """max of Phi over the closed ball; passes when it is at most 10 h.

    An empty sublevel set (A_s = 0) is a vacuous pass.
    """
    dom = u.domain
    tol = 10.0 * dom.h
    if A_s <= 0:
        return EstimateReport("comparison", 0.0, tol, 0.0, 0.0, True,
                              _meta(u, p, None, s=s, vacuous=True, instance=label))
    phi = comparison_function(u, psi, s, A_s, p)
    region = dom.region_mask()
    vals = np.where(region, phi.values, -np.inf)
    k = int(np.argmax(vals))
    top = float(vals.reshape(-1)[k])
    where = to_complex(dom.point(np.unravel_index(k, dom.dims)))
    return EstimateReport("comparison", top, tol, top / tol, 0.0, top <= tol,
                          _meta(u, p, None, s=s, A_s=A_s, argmax=tuple(complex(c) for c in where),
                                instance=label))


@dataclass
class ComparisonResult:
    report: EstimateReport
    sublevel: SublevelData
    psi: GridFunction | None
    phi: GridFunction | None


def comparison_pipeline(u: GridFunction, f: GridFunction, s: float, p: PucciParams,
                        eps: float = EPS_DEFAULT, cfg: SolveConfig = SolveConfig(),
                        label: str = "") -> ComparisonResult:
    """Sublevel data, auxiliary Monge-Ampere solve with zero boundary data, then Phi.

    ``u`` must be nonnegative on the boundary nodes (else PreconditionError).
    """
    _require_nonnegative_boundary(u)
    sub = sublevel_data(u, f, s, eps)
    if sub.empty:
        return ComparisonResult(comparison_function_check(u, u, s, 0.0, p, label), sub, None, None)
    g = comparison_density(u, f, sub)
    psi = solve_cma_dirichlet(u.domain, g, cfg)
    rep = comparison_function_check(u, psi, s, sub.A_s, p, label)
    rep.metadata["A_s_tenth"] = sub.A_s_tenth
    return ComparisonResult(rep, sub, psi, comparison_function(u, psi, s, sub.A_s, p))


# -- exponential integrability -----------------------------------------------------------------

def exp_integrability_check(psi: GridFunction, alpha: float) -> float:
    """int over the closed shape of exp(-alpha psi) beta^n.

    Returns ``inf`` when the exponent exceeds ``EXP_CAP`` somewhere (overflow guard).
    """
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    dom = psi.domain
    region = dom.region_mask()
    vals = psi.values[region]
    if vals.size and vals.max() > 1e-9 * (1.0 + np.abs(vals).max()):
        raise PreconditionError("psi must be nonpositive")
    expo = -alpha * psi.values
    if vals.size and np.nanmax(np.where(region, expo, -np.inf)) > EXP_CAP:
        log.warning("exp integrand capped (exponent > %g)", EXP_CAP)
        return math.inf
    return integrate(GridFunction(dom, np.exp(np.where(dom.active, expo, np.nan))), region)


def calibrate_alpha(psis, C: float, alpha_max: float = 100.0, iters: int = 60) -> float:
    """Largest alpha (bisection) with int exp(-alpha psi) <= C for every psi of the family."""
    def worst(a):
        return max(exp_integrability_check(psi, a) for psi in psis)

    if worst(0.0) > C:
        raise ValueError("C is below the volume of the domain; no alpha >= 0 works")
    if worst(alpha_max) <= C:
        return alpha_max
    lo, hi = 0.0, alpha_max
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if worst(mid) <= C else (lo, mid)
    return lo


# -- De Giorgi iteration -----------------------------------------------------------------------

def de_giorgi_threshold(C0: float, delta: float, phi_s0: float, s0: float = 0.0) -> float:
    """d = 2^{(1+delta)/delta} C0 phi(s0)^delta; phi vanishes at s0 + d."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    if C0 < 0 or phi_s0 < 0:
        raise ValueError("C0 and phi(s0) must be nonnegative")
    return 2.0 ** ((1.0 + delta) / delta) * C0 * phi_s0 ** delta


def de_giorgi_levels(C0: float, delta: float, phi_s0: float, s0: float = 0.0, levels: int = 60):
    """Levels s_k = s0 + d (1 - 2^-k) and the recursive bounds b_k on phi(s_k).

    b_{k+1} = C0 b_k^{1+delta} / (s_{k+1} - s_k), b_0 = phi(s0).  In exact arithmetic
    b_k = b_0 2^{-k/delta}; in floating point the relative error grows like (1+delta)^k,
    so deep levels may underflow to 0 or overflow to inf.
    """
    d = de_giorgi_threshold(C0, delta, phi_s0, s0)
    s = s0 + d * (1.0 - 2.0 ** -np.arange(levels + 1, dtype=float))
    b = np.empty(levels + 1)
    b[0] = phi_s0
    with np.errstate(over="ignore"):
        for k in range(levels):
            step = d * 2.0 ** -(k + 1)
            b[k + 1] = C0 * np.float64(b[k]) ** (1.0 + delta) / step if d > 0 else 0.0
    return s, b


def de_giorgi_constant(phi, delta: float, s0: float, s_max: float, samples: int = 400) -> float:
    """Smallest C0 with s' phi(s + s') <= C0 phi(s)^{1+delta} for s0 <= s, s + s' <= s_max.

    Brute force: a grid over s and a grid-then-bounded-scalar search over s'.
    ``phi`` must vanish from ``s_max`` on for the bound to be global.
    """
    from scipy.optimize import minimize_scalar

    best = 0.0
    for s in np.linspace(s0, s_max, samples, endpoint=False):
        base = phi(s)
        if base <= 0:
            continue
        span = s_max - s
        grid = np.linspace(0.0, span, 201)[1:]
        vals = grid * np.array([phi(s + t) for t in grid])
        j = int(np.argmax(vals))
        lo, hi = grid[max(j - 1, 0)] if j > 0 else 0.0, grid[min(j + 1, len(grid) - 1)]
        res = minimize_scalar(lambda t: -t * phi(s + t), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-12 * max(span, 1.0)})
        top = max(vals[j], -res.fun)
        best = max(best, top / base ** (1.0 + delta))
    return best


# -- radial barrier ---------------------------------------------------------------------------

def barrier_gamma(n: int, lam: float, Lam: float) -> float:
    return (128 * n - 1) * (n - 1) * Lam / lam + 128 * n


def choose_log_M(n: int, lam: float, Lam: float) -> float:
    """log M for M = 2 (1 - max_{Q_3}|z|^2 / 8n)^{-gamma}, where max_{Q_3}|z|^2 = 9n/2."""
    gamma = barrier_gamma(n, lam, Lam)
    return math.log(2.0) - gamma * math.log(1.0 - 4.5 * n / (8.0 * n))


def choose_M(n: int, lam: float, Lam: float) -> float:
    """M itself; ``inf`` when it exceeds the float range (use :func:`choose_log_M`)."""
    lm = choose_log_M(n, lam, Lam)
    return math.exp(lm) if lm < 709.0 else math.inf


@dataclass(frozen=True)
class BarrierParams:
    n: int
    lam: float
    Lam: float
    gamma: float
    log_M: float

    @classmethod
    def make(cls, n: int, lam: float = 1.0, Lam: float = 1.0, log_M: float | None = None) -> "BarrierParams":
        if not (0 < lam <= Lam):
            raise ValueError("need 0 < lambda <= Lambda")
        lm = choose_log_M(n, lam, Lam) if log_M is None else float(log_M)
        return cls(int(n), float(lam), float(Lam), barrier_gamma(n, lam, Lam), lm)

    @property
    def M(self) -> float:
        return math.exp(self.log_M) if self.log_M < 709.0 else math.inf


@dataclass
class BarrierValue:
    """Closed-form barrier data at one point; ``exp(log_scale)`` multiplies every normalized field.

    The normalized fields are divided by M so they stay finite for any gamma.
    """

    g: float
    hessian: HermitianMatrix
    eigenvalues: np.ndarray
    M_plus: float
    log_scale: float


def _barrier_radial(bp: BarrierParams, t):
    """(g, phi', phi'') divided by M as functions of t = |z|^2."""
    n, gm = bp.n, bp.gamma
    t = np.asarray(t, dtype=float)
    if np.any(t >= 8 * n):
        raise ValueError("barrier is defined only for |z|^2 < 8n")
    w = 1.0 - t / (8 * n)
    g = -w ** gm
    d1 = gm / (8 * n) * w ** (gm - 1)
    d2 = -gm * (gm - 1) / (64 * n * n) * w ** (gm - 2)
    return g, d1, d2


def barrier_eval(bp: BarrierParams, z, normalized: bool = False) -> BarrierValue:
    """g(z) = -M (1 - |z|^2/8n)^gamma with its complex Hessian, spectrum and M^+.

    Hessian: phi' I + phi'' conj(z) z^T; spectrum: phi' (n-1 times) and
    (M gamma / 8n)(1 - t/8n)^{gamma-2}(1 - gamma t / 8n).  With ``normalized``
    everything is divided by M (``log_scale`` = 0), otherwise ``log_scale`` = log M
    and the fields are multiplied out.
    """
    z = np.asarray(z, dtype=complex).reshape(-1)
    n = bp.n
    if z.size != n:
        raise ValueError(f"expected a point of C^{n}")
    t = float(np.sum(np.abs(z) ** 2))
    g, d1, d2 = _barrier_radial(bp, t)
    w = 1.0 - t / (8 * n)
    top = bp.gamma / (8 * n) * w ** (bp.gamma - 2) * (1.0 - bp.gamma * t / (8 * n))
    eigs = np.sort(np.array([float(d1)] * (n - 1) + [float(top)]))
    H = float(d1) * np.eye(n) + float(d2) * np.outer(np.conj(z), z)
    Mp = float(pucci_plus_eigs(eigs, bp.lam, bp.Lam))
    if normalized:
        return BarrierValue(float(g), HermitianMatrix(H), eigs, Mp, 0.0)
    M = bp.M
    return BarrierValue(float(g) * M, HermitianMatrix(H * M), eigs * M, Mp * M, bp.log_M)


def barrier_sample(bp: BarrierParams, domain: Domain, normalized: bool = True) -> GridFunction:
    """g (or g / M) at the active nodes of ``domain``."""
    scale = 1.0 if normalized else bp.M

    def fn(z):
        return scale * _barrier_radial(bp, np.sum(np.abs(z) ** 2, axis=-1))[0]

    return domain.sample(fn)


def barrier_M_plus(bp: BarrierParams, t) -> np.ndarray:
    """M^+(i ddbar g) / M for an array of t = |z|^2 (vectorized closed form)."""
    n, gm = bp.n, bp.gamma
    t = np.asarray(t, dtype=float)
    _, d1, _ = _barrier_radial(bp, t)
    w = 1.0 - t / (8 * n)
    top = gm / (8 * n) * w ** (gm - 2) * (1.0 - gm * t / (8 * n))
    pos = lambda x: bp.Lam * np.maximum(x, 0) + bp.lam * np.minimum(x, 0)
    return (n - 1) * pos(d1) + pos(top)


def barrier_bound_check(bp: BarrierParams, h: float = 0.05, sign_tol: float = 1e-9) -> EstimateReport:
    """Node sweep of |z|^2 < 8n on h Z^{2n}: M^+(i ddbar g)^+ <= M gamma Lambda / 8 everywhere,
    M^+(i ddbar g) <= sign_tol wherever |z| >= 1/4.

    lhs and rhs are reported divided by M.  The sweep enumerates lattice radii
    rather than nodes, which is exact because every quantity is radial.
    """
    n = bp.n
    R2 = 8 * n
    t = _lattice_radii(n, h, math.sqrt(R2), R2)
    mp = barrier_M_plus(bp, t)
    bound = bp.gamma * bp.Lam / 8.0
    k = int(np.argmax(mp))
    upper_ok = bool(max(mp[k], 0.0) <= bound * (1 + 1e-9))
    outer = t >= 1.0 / 16.0 - 1e-12
    M = bp.M
    outer_vals = mp[outer] * (M if math.isfinite(M) else 1.0)
    worst_outer = float(outer_vals.max()) if outer_vals.size else -math.inf
    ok = upper_ok and worst_outer <= sign_tol
    return EstimateReport("barrier", float(mp[k]), bound, float(mp[k]) / bound, 1e-9, ok,
                          {"n": n, "h": h, "lam": bp.lam, "Lam": bp.Lam, "p": None, "log_M": bp.log_M,
                           "argmax_abs_z_sq": float(t[k]), "max_outer": worst_outer})


# -- Orlicz gauge ------------------------------------------------------------------------------

def orlicz_integral(f: GridFunction, region, K: float, p_exp: float, n: int) -> float:
    """int_region (|f|^n / K^n) ln^p(1 + |f|^n / K^n) beta^n."""
    with np.errstate(over="ignore"):
        x = f.map(lambda v: (np.abs(v) / K) ** n)
        return integrate(x.map(lambda v: v * np.log1p(v) ** p_exp), region)


def orlicz_A(f: GridFunction, region, c0: float, p_exp: float, n: int, iters: int = 60) -> float:
    """inf{K > 0 : int (|f|^n/K^n) ln^p(1 + |f|^n/K^n) beta^n <= c0}, by bisection on log K.

    Returns the upper end of the final bracket, so the integral there is <= c0.
    """
    if not c0 > 0:
        raise ValueError("c0 must be positive")
    mask = f.domain.region_mask(region)
    fmax = float(np.abs(f.values[mask]).max()) if mask.any() else 0.0
    if fmax == 0.0:
        return 0.0
    vol = integrate(f.domain.constant(1.0), region)
    lo = 1e-12 * fmax + 1e-300
    hi = fmax * (vol / c0 + 1.0)
    while orlicz_integral(f, region, lo, p_exp, n) <= c0:
        lo *= 1e-3
    while orlicz_integral(f, region, hi, p_exp, n) > c0:
        hi *= 10.0
    a, b = math.log(lo), math.log(hi)
    for _ in range(iters):
        mid = 0.5 * (a + b)
        if orlicz_integral(f, region, math.exp(mid), p_exp, n) <= c0:
            b = mid
        else:
            a = mid
    return math.exp(b)


def _lattice_radii(n: int, h: float, axis_max: float, t_max: float = math.inf) -> np.ndarray:
    """Distinct values of |z|^2 over nodes of h Z^{2n} with |coordinate| <= axis_max and |z|^2 < t_max."""
    kmax = int(math.floor(axis_max / h + 1e-9))
    sq = np.arange(kmax + 1) ** 2
    sums = np.zeros(1, dtype=np.int64)
    for _ in range(2 * n):
        sums = np.unique((sums[:, None] + sq[None, :]).reshape(-1))
        sums = sums[sums * h * h < t_max]
    return sums * h * h


def barrier_q3_check(bp: BarrierParams, h: float = 0.05) -> EstimateReport:
    """g <= -2 at every node of the closed cube Q_3 (side 3), evaluated as log(-g) >= log 2.

    g is radial, so the nodes are enumerated through their distinct values of |z|^2.
    """
    t = _lattice_radii(bp.n, h, 1.5)
    log_neg_g = bp.log_M + bp.gamma * np.log1p(-t / (8 * bp.n))
    worst = float(log_neg_g.min())
    return EstimateReport("barrier_q3", -worst, -math.log(2.0), worst - math.log(2.0), 0.0,
                          worst >= math.log(2.0) - 1e-12,
                          {"n": bp.n, "h": h, "lam": bp.lam, "Lam": bp.Lam, "p": None, "log_M": bp.log_M,
                           "max_abs_z_sq": float(t.max())})


def barrier_reports(bp: BarrierParams, h: float = 0.05) -> list:
    """The Q_3 check, the upper bound on M^+ and the sign check on |z| >= 1/4 as separate rows."""
    full = barrier_bound_check(bp, h)
    meta = dict(full.metadata)
    upper = EstimateReport("barrier_bound", full.lhs, full.rhs, full.empirical_constant, 1e-9,
                           full.lhs <= full.rhs * (1 + 1e-9), meta)
    sign = EstimateReport("barrier_sign", meta["max_outer"], 1e-9, 0.0, 0.0, meta["max_outer"] <= 1e-9, meta)
    return [barrier_q3_check(bp, h), upper, sign]
