import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cplxv.estimates import BarrierParams, barrier_M_plus, barrier_sample
from cplxv.grid import Domain, ball
from cplxv.hermitian import OperatorSpec, PucciParams
from cplxv.solver import manufacture
from cplxv.viscosity import (
    VIOLATION_FIELDS, CheckSummary, check_pucci_class, check_subsolution, check_supersolution, default_tol,
    violations_to_csv,
)

P12 = PucciParams(1.0, 2.0)
PM = OperatorSpec.pucci_minus(1, 2)


def sq(z):
    return np.sum(np.abs(z) ** 2, axis=-1)


@pytest.fixture(scope="module")
def dom2():
    return Domain(ball(2, 1.0), 0.2)


def test_classical_quadratic_passes(dom2):
    u = dom2.sample(lambda z: sq(z) - 1)
    f = dom2.constant(2.0)
    assert check_subsolution(u, PM, f) == []
    assert check_supersolution(u, PM, f) == []
    assert check_pucci_class(u, P12, f, "both") == []


def test_zero_passes(dom2):
    z = dom2.constant(0.0)
    for spec in (PM, OperatorSpec.pucci_plus(1, 2), OperatorSpec("trace")):
        assert check_subsolution(z, spec, z) == [] and check_supersolution(z, spec, z) == []
    assert check_pucci_class(z, P12, z) == []


def test_concave_fails_subsolution_everywhere(dom2):
    u = dom2.sample(lambda z: -sq(z))
    bad = check_subsolution(u, PM, dom2.constant(1.0))
    assert {r.node for r in bad} == {tuple(int(i) for i in x) for x in zip(*np.nonzero(dom2.interior))}
    # the bare jet already gives M^-(-I) - 1 = -5
    assert min(r.margin for r in bad) <= -5 + 1e-9
    assert all(r.direction == "above" for r in bad)


def test_convex_fails_supersolution_everywhere(dom2):
    u = dom2.sample(sq)
    bad = check_supersolution(u, PM, dom2.constant(0.0))
    assert len({r.node for r in bad}) == int(dom2.interior.sum())
    r = bad[0]
    # margin = f - operator value at the witness
    assert r.margin == pytest.approx(r.f_value - r.operator_value)


def test_default_tolerance(dom2):
    u = dom2.sample(lambda z: 3 * sq(z))
    assert default_tol(u) == pytest.approx(10 * 0.04 * u.max_abs())


def test_barrier_in_upper_class():
    bp = BarrierParams.make(1, 1.0, 1.0)
    dom = Domain(ball(1, 2.5), 0.05)
    g = barrier_sample(bp, dom, normalized=True)
    fp = dom.sample(lambda z: barrier_M_plus(bp, sq(z)))
    assert check_pucci_class(g, bp_p(bp), fp, "upper_S") == []


def bp_p(bp):
    return PucciParams(bp.lam, bp.Lam)


@pytest.mark.parametrize("u_star", ["quadratic", "quartic", "gaussian", "cone", "pluriharmonic", "hermitian_quadratic"])
@pytest.mark.parametrize("kind", ["pucci_minus", "pucci_plus"])
def test_manufactured_solutions_pass_both(u_star, kind):
    for n, h in ((1, 0.05), (2, 0.2)):
        dom = Domain(ball(n, 1.0), h)
        inst = manufacture(dom, u_star, OperatorSpec(kind, P12))
        u = inst.exact
        assert check_subsolution(u, inst.operator, inst.f) == []
        assert check_supersolution(u, inst.operator, inst.f) == []


@settings(max_examples=10)
@given(st.integers(0, 2**31), st.sampled_from(["upper_S", "lower_S"]))
def test_compositional_class(seed, which):
    dom = Domain(ball(1, 1.0), 0.2)
    r = np.random.default_rng(seed)
    u = dom.sample(lambda z: r.normal(size=len(z)) * 0.05 + sq(z))
    f = dom.constant(float(r.uniform(0, 3)))
    both = check_pucci_class(u, P12, f, "both")
    sub = check_subsolution(u, OperatorSpec.pucci_plus(1, 2), f)
    sup = check_supersolution(u, PM, f)
    assert (both == []) == (sub == [] and sup == [])
    assert len(both) == len(sub) + len(sup)
    part = check_pucci_class(u, P12, f, which)
    assert len(part) == len(sup if which == "upper_S" else sub)


@settings(max_examples=10)
@given(st.integers(0, 2**31), st.sampled_from(["sub", "super"]))
def test_dictionary_monotone(seed, side):
    dom = Domain(ball(1, 1.0), 0.2)
    r = np.random.default_rng(seed)
    u = dom.sample(lambda z: r.normal(size=len(z)) * 0.1 + 0.5 * sq(z))
    f = dom.constant(float(r.uniform(0, 2)))
    check = check_subsolution if side == "sub" else check_supersolution
    nodes = []
    for mult in ((), (1,), (1, 2)):
        s = CheckSummary()
        nodes.append({v.node for v in check(u, PM, f, tol=1e-6, summary=s, multipliers=mult)})
        assert len(s.dictionary) == 1 + 2 * len(mult) * dom.n ** 2
    assert nodes[0] <= nodes[1] <= nodes[2]


def test_invalid_class_name(dom2):
    with pytest.raises(ValueError):
        check_pucci_class(dom2.constant(0.0), P12, dom2.constant(0.0), "middle")


def test_violations_csv(dom2):
    u = dom2.sample(sq)
    bad = check_supersolution(u, PM, dom2.constant(0.0))
    text = violations_to_csv(bad)
    lines = text.strip().split("\n")
    assert lines[0] == ",".join(VIOLATION_FIELDS)
    assert len(lines) == len(bad) + 1
    assert "below" in lines[1]
