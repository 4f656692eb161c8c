import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.optimize import brentq

from cplxv.estimates import (
    BarrierParams, PreconditionError, abp_check, barrier_bound_check, barrier_eval, barrier_gamma,
    barrier_M_plus, barrier_q3_check, barrier_reports, barrier_sample, calibrate_alpha, choose_log_M, choose_M,
    comparison_density, comparison_function_check, comparison_pipeline, de_giorgi_constant, de_giorgi_levels,
    de_giorgi_threshold, exp_integrability_check, log_abp_check, orlicz_A, orlicz_integral, sublevel_data,
)
from cplxv.grid import Domain, ball, complex_hessian, integrate
from cplxv.hermitian import PucciParams
from cplxv.solver import solve_cma_dirichlet

P = PucciParams(1.0, 2.0)


def sq(z):
    return np.sum(np.abs(z) ** 2, axis=-1)


@pytest.fixture(scope="module")
def d1():
    return Domain(ball(1, 1.0), 0.05)


@pytest.fixture(scope="module")
def quad1(d1):
    return d1.sample(lambda z: sq(z) - 1), d1.constant(1.0)


# -- sup bounds -------------------------------------------------------------------------------

def test_abp_zero_u(d1):
    r = abp_check(d1.constant(0.0), d1.constant(3.0), 2.0, P)
    assert r.lhs == 0 and r.passed


def test_abp_quadratic_matches_quadrature_oracle(d1, quad1):
    u, f = quad1
    p_exp = 3.0
    r = abp_check(u, f, p_exp, P)
    # interior of the unit disc carries u < 0; beta-volume 2 pi, f = n lambda = 1
    vol = integrate(d1.constant(1.0), d1.region_mask() & (u.values < 0))
    assert vol == pytest.approx(2 * math.pi, rel=0.05)
    assert r.lhs == pytest.approx(1.0)
    assert r.rhs == pytest.approx(vol ** (1 / p_exp) / P.lam, rel=1e-12)
    assert r.empirical_constant == pytest.approx(P.lam * r.lhs / vol ** (1 / p_exp), rel=1e-12)
    assert r.passed and r.row()["name"] == "abp"


def test_abp_mesh_stability_and_cap(quad1):
    reps = []
    for h in (0.1, 0.05):
        dom = Domain(ball(1, 1.0), h)
        coarse = reps[-1] if reps else None
        reps.append(abp_check(dom.sample(lambda z: sq(z) - 1), dom.constant(1.0), 2.0, P, coarse=coarse))
    assert reps[1].passed and reps[1].metadata["coarse_constant"] == reps[0].empirical_constant
    u, f = quad1
    assert not abp_check(u, f, 2.0, P, c_cap=1e-3).passed


@settings(max_examples=20)
@given(st.floats(1e-3, 1e3), st.sampled_from([2.0, 3.0]))
def test_abp_scale_invariance(t, p_exp):
    dom = Domain(ball(1, 1.0), 0.1)
    u = dom.sample(lambda z: np.exp(sq(z)) - math.e)
    f = dom.sample(lambda z: (1 + sq(z)) * np.exp(sq(z)))
    a = abp_check(u, f, p_exp, P).empirical_constant
    b = abp_check(u * t, f * t, p_exp, P).empirical_constant
    assert b == pytest.approx(a, rel=1e-9)


def test_abp_rejects_negative_boundary(d1):
    with pytest.raises(PreconditionError):
        abp_check(d1.constant(-1.0), d1.constant(0.0), 2.0, P)
    with pytest.raises(ValueError):
        abp_check(d1.constant(0.0), d1.constant(0.0), 1.0, P)


def test_log_abp_examples(d1, quad1):
    assert log_abp_check(d1.constant(0.0), d1.constant(1.0), 2.0, P).passed
    u, f = quad1
    r = log_abp_check(u, f, 2.0, P)
    vol = integrate(d1.constant(1.0), d1.region_mask() & (u.values < 0))
    # f = 1, n = 1: rhs = (vol ln^2 2 + 1)^{1/2} vol^{1 - 1/2} / lam
    assert r.rhs == pytest.approx((vol * math.log(2) ** 2 + 1) ** 0.5 * vol ** 0.5, rel=1e-12)
    assert r.passed and math.isfinite(r.empirical_constant)


def test_log_abp_maximum_principle_branch(d1):
    # f = 0 on {u < 0} forces lhs <= 10 h
    u = d1.sample(lambda z: 0.2 * h_bump(z))
    r = log_abp_check(u, d1.constant(0.0), 2.0, P)
    assert r.rhs == 0 and r.metadata["maximum_principle"] and r.passed == (r.lhs <= 0.5)
    deep = d1.sample(lambda z: sq(z) - 1)
    assert not log_abp_check(deep, d1.constant(0.0), 2.0, P).passed


def h_bump(z):
    return -np.maximum(0, 0.5 - sq(z))


# -- sublevel sets and comparison ---------------------------------------------------------------

@settings(max_examples=25)
@given(st.floats(0, 1.2), st.floats(0, 1.2))
def test_sublevel_monotone(s1, s2):
    dom = Domain(ball(1, 1.0), 0.1)
    u = dom.sample(lambda z: sq(z) - 1)
    f = dom.sample(lambda z: 1 + sq(z))
    lo, hi = sorted((s1, s2))
    a, b = sublevel_data(u, f, lo), sublevel_data(u, f, hi)
    assert not (b.omega & ~a.omega).any()
    assert b.A_s <= a.A_s
    assert a.A_s_tenth <= a.A_s


def test_comparison_density_integrates_to_one(d1, quad1):
    u, f = quad1
    sub = sublevel_data(u, f, 0.0)
    g = comparison_density(u, f, sub)
    assert integrate(g, sub.omega) == pytest.approx(1.0, rel=1e-12)
    assert (g.values[d1.active] >= 0).all()


def test_comparison_vacuous_when_empty(d1, quad1):
    u, f = quad1
    res = comparison_pipeline(u, f, 2.0, P)
    assert res.report.passed and res.report.metadata["vacuous"] and res.psi is None
    with pytest.raises(PreconditionError):
        comparison_density(u, f, sublevel_data(u, f, 2.0))


def test_comparison_rejects_negative_constant(d1):
    with pytest.raises(PreconditionError):
        comparison_pipeline(d1.constant(-0.5), d1.constant(1.0), 0.0, P)


def test_comparison_pipeline_quadratic():
    dom = Domain(ball(1, 1.0), 0.05)
    u = dom.sample(lambda z: sq(z) - 1)
    res = comparison_pipeline(u, dom.constant(1.0), 0.0, P)
    assert res.report.passed and res.report.lhs <= 10 * dom.h
    assert res.phi.at(np.zeros(1, dtype=complex)) < 0
    assert res.report.metadata["A_s_tenth"] <= res.sublevel.A_s


def test_comparison_check_flags_large_phi(d1, quad1):
    u, f = quad1
    r = comparison_function_check(u, d1.constant(0.0), 0.0, 1.0, P)
    # psi = 0 leaves Phi = -u, which reaches 1 at the centre
    assert r.lhs == pytest.approx(1.0) and not r.passed


# -- exponential integrability ------------------------------------------------------------------

def test_exp_integrability_examples(d1):
    vol = integrate(d1.constant(1.0))
    assert exp_integrability_check(d1.constant(0.0), 3.0) == pytest.approx(vol)
    psi = d1.sample(lambda z: sq(z) - 1)
    assert exp_integrability_check(psi, 0.0) == pytest.approx(vol)
    oracle = 2 * 2 * math.pi * quad(lambda r: math.exp(1 - r * r) * r, 0, 1)[0]
    assert exp_integrability_check(psi, 1.0) == pytest.approx(oracle, rel=0.05)
    assert exp_integrability_check(psi, 1e4) == math.inf
    with pytest.raises(PreconditionError):
        exp_integrability_check(d1.constant(1.0), 1.0)


def test_calibrate_alpha():
    dom = Domain(ball(1, 1.0), 0.1)
    psis = [solve_cma_dirichlet(dom, dom.constant(c)) for c in (0.5, 1.0, 2.0)]
    C = 3 * integrate(dom.constant(1.0))
    a = calibrate_alpha(psis, C)
    assert 0 < a < 100
    assert max(exp_integrability_check(p, a) for p in psis) <= C
    assert max(exp_integrability_check(p, a * 1.01) for p in psis) > C * 0.999
    with pytest.raises(ValueError):
        calibrate_alpha(psis, 1.0)


# -- De Giorgi ----------------------------------------------------------------------------------

def test_de_giorgi_examples():
    assert de_giorgi_threshold(1, 1, 1) == 4
    assert de_giorgi_threshold(2, 1, 1) == 8
    with pytest.raises(ValueError):
        de_giorgi_threshold(1, 0, 1)


@given(st.floats(0.01, 10), st.floats(0.1, 4), st.floats(0.01, 10), st.floats(1.0, 2.0))
def test_de_giorgi_monotone(C0, delta, phi, k):
    d = de_giorgi_threshold(C0, delta, phi)
    assert de_giorgi_threshold(C0 * k, delta, phi) >= d
    assert de_giorgi_threshold(C0, delta, phi * k) >= d


@given(st.floats(0.05, 10), st.floats(0.25, 4), st.floats(0.05, 10))
def test_de_giorgi_recursion_closed_form(C0, delta, phi):
    # the recursion rides the critical trajectory b0 2^{-k/delta}; rounding grows like (1+delta)^k,
    # so compare only the levels where that growth stays below 1e9
    s, b = de_giorgi_levels(C0, delta, phi, levels=40)
    k = np.arange(len(b))
    keep = (1 + delta) ** k <= 1e9
    assert np.allclose(b[keep], phi * 2.0 ** (-k[keep] / delta), rtol=1e-6, atol=0)
    assert b[1] == pytest.approx(phi * 2.0 ** (-1 / delta), rel=1e-12)
    assert s[-1] < de_giorgi_threshold(C0, delta, phi)


@settings(max_examples=15)
@given(st.floats(0.2, 5), st.floats(0.5, 3), st.floats(0.5, 3))
def test_de_giorgi_synthetic_family(a, q, L):
    # phi = a (L - s)_+^q is decreasing with delta = 1 / q and an explicit optimal C0
    phi = lambda s: a * max(L - s, 0.0) ** q
    delta = 1 / q
    C0 = q ** q / ((q + 1) ** (q + 1) * a ** delta)
    assert de_giorgi_constant(phi, delta, 0.0, L, samples=40) == pytest.approx(C0, rel=1e-6)
    d = de_giorgi_threshold(C0, delta, phi(0.0))
    # q = 1 is the sharp case d = L, so allow one rounding step
    assert phi(d * (1 + 1e-12)) == 0.0 and d >= L * (1 - 1e-12)


# -- barrier ------------------------------------------------------------------------------------

def test_barrier_gamma_and_M():
    assert barrier_gamma(1, 1, 1) == 128
    assert barrier_gamma(2, 1, 2) == 255 * 2 + 256
    assert choose_log_M(1, 1, 1) == pytest.approx(math.log(2) + 128 * math.log(16 / 7), rel=1e-15)
    assert choose_M(1, 1, 1) == pytest.approx(2 * (16 / 7) ** 128, rel=1e-12)
    assert choose_M(3, 1, 4) == math.inf and math.isfinite(choose_log_M(3, 1, 4))


def test_barrier_at_origin():
    bp = BarrierParams.make(1, 1.0, 1.0)
    v = barrier_eval(bp, [0j])
    assert v.g == pytest.approx(-bp.M)
    assert np.allclose(v.eigenvalues, bp.M * bp.gamma / 8)
    assert v.M_plus == pytest.approx(bp.M * bp.gamma * bp.Lam / 8, rel=1e-12)
    vn = barrier_eval(bp, [0j], normalized=True)
    assert vn.g == -1.0 and vn.log_scale == 0.0


@pytest.mark.parametrize("n,lam,Lam", [(1, 1, 1), (2, 1, 1), (2, 0.5, 1)])
def test_barrier_sign_at_quarter(n, lam, Lam):
    bp = BarrierParams.make(n, lam, Lam)
    z = np.zeros(n, dtype=complex)
    z[0] = 0.5
    v = barrier_eval(bp, z, normalized=True)
    assert v.eigenvalues.min() < 0
    assert v.M_plus <= 0
    t = np.linspace(0.25, 8 * n - 1e-6, 2000)
    assert (barrier_M_plus(bp, t) <= 1e-12).all()


def test_barrier_domain_error():
    bp = BarrierParams.make(1)
    with pytest.raises(ValueError):
        barrier_eval(bp, [3.0 + 0j])


def test_barrier_hessian_second_order():
    bp = BarrierParams.make(1, 1.0, 1.0)
    z0 = np.array([0.5 + 0.25j])
    exact = barrier_eval(bp, z0, normalized=True).hessian.entries
    errs = []
    for h in (0.05, 0.025, 0.0125):
        dom = Domain(ball(1, 1.0), h)
        g = barrier_sample(bp, dom)
        node = dom.index_of(z0)
        errs.append(np.abs(complex_hessian(g, node).entries - exact).max())
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert (orders > 1.8).all(), errs


def test_barrier_closed_form_matches_matrix(rng):
    bp = BarrierParams.make(2, 1.0, 1.0)
    for _ in range(20):
        z = rng.normal(size=2) + 1j * rng.normal(size=2)
        z *= rng.uniform(0, 2.8) / np.linalg.norm(z)
        v = barrier_eval(bp, z, normalized=True)
        assert np.allclose(np.linalg.eigvalsh(v.hessian.entries), v.eigenvalues, rtol=1e-9, atol=1e-12)


def test_barrier_reports_pass():
    bp = BarrierParams.make(1, 1.0, 1.0)
    reps = barrier_reports(bp, 0.05)
    assert [r.name for r in reps] == ["barrier_q3", "barrier_bound", "barrier_sign"]
    assert all(r.passed for r in reps)
    full = barrier_bound_check(bp, 0.05)
    assert full.lhs == pytest.approx(full.rhs, rel=1e-9) and full.metadata["argmax_abs_z_sq"] == 0.0


def test_barrier_q3_includes_corners():
    bp = BarrierParams.make(2, 1.0, 1.0)
    r = barrier_q3_check(bp, 0.25)
    assert r.metadata["max_abs_z_sq"] == pytest.approx(9.0) and r.passed
    # a smaller M fails on the corners
    weak = BarrierParams.make(2, 1.0, 1.0, log_M=bp.log_M - 1.0)
    assert not barrier_q3_check(weak, 0.25).passed


# -- Orlicz gauge -------------------------------------------------------------------------------

def test_orlicz_examples(d1):
    assert orlicz_A(d1.constant(0.0), None, 1.0, 2.0, 1) == 0.0
    f = d1.constant(1.0)
    vol = integrate(f)
    for p_exp in (1.0, 2.0):
        K = orlicz_A(f, None, vol * math.log(2) ** p_exp, p_exp, 1)
        assert K == pytest.approx(1.0, rel=1e-9)


def test_orlicz_matches_root_finder(d1):
    f = d1.sample(lambda z: 1 + 3 * sq(z))
    c0 = 2.5
    K = orlicz_A(f, None, c0, 2.0, 1)
    ref = math.exp(brentq(lambda lk: orlicz_integral(f, None, math.exp(lk), 2.0, 1) - c0, -20, 20, xtol=1e-14))
    assert K == pytest.approx(ref, rel=1e-9)
    assert orlicz_integral(f, None, K, 2.0, 1) <= c0


@settings(max_examples=15)
@given(st.floats(0.1, 10), st.floats(1.0, 4.0), st.floats(0.2, 1.0))
def test_orlicz_monotone(c0, k, r):
    dom = Domain(ball(1, 1.0), 0.1)
    f = dom.sample(lambda z: 2 + np.cos(3 * z.real[:, 0]))
    big = orlicz_A(f, None, c0, 2.0, 1)
    assert orlicz_A(f, ball(1, r), c0, 2.0, 1) <= big * (1 + 1e-9)
    assert orlicz_A(f, None, c0 * k, 2.0, 1) <= big * (1 + 1e-9)
    with pytest.raises(ValueError):
        orlicz_A(f, None, 0.0, 2.0, 1)
