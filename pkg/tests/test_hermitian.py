import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cplxv.hermitian import (
    OUTSIDE_DOMAIN, HermitianMatrix, NotHermitianError, OperatorSpec, PucciParams, UnsupportedOperatorError,
    batch_eigenvalues, bellman_dictionary, bellman_inf, bellman_sup, check_csubsolution_pointwise,
    csubsolution_constants, eigenvalues, elementary_symmetric, evaluate_operator, evaluate_spectrum,
    hermitian_basis, operator_values, pucci_minus, pucci_plus, random_hermitian, random_unitary,
)

P12 = PucciParams(1.0, 2.0)

dims = st.integers(min_value=1, max_value=3)
seeds = st.integers(min_value=0, max_value=2**32 - 1)
params = st.tuples(st.floats(0.1, 3.0), st.floats(1.0, 4.0)).map(lambda t: PucciParams(t[0], t[0] * t[1]))


def herm(n, seed, scale=1.0):
    return random_hermitian(n, np.random.default_rng(seed), scale)


# -- construction and eigenvalues -------------------------------------------------------------

def test_non_hermitian_rejected():
    with pytest.raises(NotHermitianError):
        HermitianMatrix(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(NotHermitianError):
        HermitianMatrix(np.array([[1j]]))


def test_eigenvalue_examples():
    assert np.allclose(eigenvalues(HermitianMatrix.identity(2)).values, [1, 1])
    assert np.allclose(eigenvalues(HermitianMatrix.diag([3, -1])).values, [-1, 3])
    H = HermitianMatrix(np.array([[0, 1j], [-1j, 0]]))
    # closed-form 2x2 oracle: (a + d)/2 -+ sqrt(((a - d)/2)^2 + |b|^2)
    assert np.allclose(eigenvalues(H).values, [-1, 1], atol=1e-14)


@given(dims, seeds)
def test_jacobi_reconstruction_and_oracle(n, seed):
    H = herm(n, seed, 3.0)
    sp = eigenvalues(H)
    V = sp.vectors
    recon = V @ np.diag(sp.values) @ V.conj().T
    assert np.abs(recon - H.entries).max() <= 1e-10 * (1 + H.norm())
    assert np.all(np.diff(sp.values) >= 0)
    # independent LAPACK oracle
    assert np.allclose(sp.values, np.linalg.eigvalsh(H.entries), atol=1e-10 * (1 + H.norm()))
    assert abs(sp.values.sum() - H.trace()) <= 1e-10 * (1 + H.norm())


@given(dims, seeds)
def test_psd_spectrum_nonnegative(n, seed):
    A = herm(n, seed).entries
    H = HermitianMatrix(A @ A.conj().T)
    assert eigenvalues(H).values.min() >= -1e-10 * (1 + H.norm())


def test_batch_eigenvalues_match(rng):
    for n in (1, 2, 3):
        Hs = np.array([random_hermitian(n, rng).entries for _ in range(50)])
        ref = np.array([eigenvalues(HermitianMatrix(h)).values for h in Hs])
        assert np.allclose(batch_eigenvalues(Hs), ref, atol=1e-10)


def test_random_unitary_is_unitary(rng):
    U = random_unitary(3, rng)
    assert np.allclose(U @ U.conj().T, np.eye(3), atol=1e-12)


# -- Pucci operators --------------------------------------------------------------------------

def test_pucci_examples():
    Z = HermitianMatrix(np.zeros((2, 2)))
    I = HermitianMatrix.identity(2)
    D = HermitianMatrix.diag([1, -1])
    assert pucci_minus(Z, P12) == 0 and pucci_plus(Z, P12) == 0
    assert pucci_minus(I, P12) == pytest.approx(2)
    assert pucci_plus(I, P12) == pytest.approx(4)
    assert pucci_minus(D, P12) == pytest.approx(-1)
    assert pucci_plus(D, P12) == pytest.approx(1)


def test_pucci_grid_search_over_diagonal_A():
    # inf / sup of tr(A H) over diagonal lam <= A <= Lam, brute force on a grid
    D = np.diag([1.0, -1.0])
    grid = np.linspace(1.0, 2.0, 11)
    vals = [a * 1.0 - b * 1.0 for a in grid for b in grid]
    assert min(vals) == pytest.approx(pucci_minus(HermitianMatrix(D), P12))
    assert max(vals) == pytest.approx(pucci_plus(HermitianMatrix(D), P12))


@given(dims, seeds, params, st.floats(0.01, 100.0))
def test_homogeneity(n, seed, p, t):
    H = herm(n, seed)
    for F in (pucci_minus, pucci_plus):
        assert F(H * t, p) == pytest.approx(t * F(H, p), rel=1e-9, abs=1e-12)


@given(dims, seeds, params)
def test_duality_and_ordering(n, seed, p):
    H = herm(n, seed)
    assert pucci_plus(H, p) == pytest.approx(-pucci_minus(-H, p), rel=1e-12, abs=1e-12)
    assert pucci_minus(H, p) <= pucci_plus(H, p) + 1e-12
    if p.lam < p.Lam:
        assert pucci_minus(H, p) < pucci_plus(H, p)


@given(dims, seeds, seeds, params)
def test_uniform_ellipticity(n, s1, s2, p):
    H = herm(n, s1)
    A = herm(n, s2).entries
    N = HermitianMatrix(A @ A.conj().T)
    inc = pucci_minus(H + N, p) - pucci_minus(H, p)
    tol = 1e-10 * (1 + H.norm() + N.norm())
    assert p.lam * N.norm() <= inc + tol
    assert inc <= p.Lam * N.trace() + tol


@given(dims, seeds, params)
def test_bellman_representation(n, seed, p):
    H = herm(n, seed)
    dic = bellman_dictionary(n, p, levels=2)
    # diagonal extremes in the eigenbasis attain the Pucci values
    V = eigenvalues(H).vectors
    rot = np.array([V @ a @ V.conj().T for a in dic])
    assert bellman_inf(H, rot) == pytest.approx(pucci_minus(H, p), rel=1e-9, abs=1e-9)
    assert bellman_sup(H, rot) == pytest.approx(pucci_plus(H, p), rel=1e-9, abs=1e-9)
    # any admissible A lies between them
    extra = bellman_dictionary(n, p, levels=3, rotations=10, seed=seed % 1000)
    assert bellman_inf(H, extra) >= pucci_minus(H, p) - 1e-9 * (1 + H.norm())
    assert bellman_sup(H, extra) <= pucci_plus(H, p) + 1e-9 * (1 + H.norm())


SPECS = [OperatorSpec.pucci_minus(1, 2), OperatorSpec.pucci_plus(1, 2), OperatorSpec("trace"),
         OperatorSpec("monge_ampere_root"), OperatorSpec("hessian_sigma_k", 1)]


@given(dims, seeds)
def test_permutation_symmetry(n, seed):
    e = np.random.default_rng(seed).uniform(-1, 2, size=n)
    for spec in SPECS:
        vals = {repr(evaluate_spectrum(spec, np.array(perm))) for perm in itertools.permutations(e)}
        ref = evaluate_spectrum(spec, e)
        for perm in itertools.permutations(e):
            v = evaluate_spectrum(spec, np.array(perm))
            assert (v is OUTSIDE_DOMAIN) == (ref is OUTSIDE_DOMAIN)
            if v is not OUTSIDE_DOMAIN:
                assert v == pytest.approx(ref, rel=1e-12, abs=1e-12)
        assert vals


def test_evaluate_operator_examples():
    assert evaluate_operator(OperatorSpec("monge_ampere_root"), HermitianMatrix.identity(2)) == pytest.approx(1)
    assert evaluate_operator(OperatorSpec("trace"), HermitianMatrix.diag([2, 3])) == pytest.approx(5)
    assert evaluate_operator(OperatorSpec("monge_ampere_root"), HermitianMatrix.diag([1, -1])) is OUTSIDE_DOMAIN


def test_sigma_k_and_elementary_symmetric():
    e = np.array([1.0, 2.0, 3.0])
    assert elementary_symmetric(e, 1) == 6 and elementary_symmetric(e, 2) == 11 and elementary_symmetric(e, 3) == 6
    assert evaluate_spectrum(OperatorSpec("hessian_sigma_k", 2), e) == pytest.approx(math.sqrt(11))


def test_operator_values_vectorized_agree(rng):
    for n in (1, 2, 3):
        Hs = [random_hermitian(n, rng) for _ in range(30)] + [HermitianMatrix.identity(n)]
        stack = np.array([h.entries for h in Hs])
        for spec in SPECS:
            vec = operator_values(spec, stack)
            for h, v in zip(Hs, vec):
                ref = evaluate_operator(spec, h)
                if ref is OUTSIDE_DOMAIN:
                    assert np.isnan(v)
                else:
                    assert v == pytest.approx(ref, rel=1e-10, abs=1e-12)


def test_operator_spec_validation():
    with pytest.raises(ValueError):
        OperatorSpec("cubic")
    with pytest.raises(ValueError):
        OperatorSpec("pucci_minus")
    with pytest.raises(ValueError):
        PucciParams(2.0, 1.0)


def test_hermitian_basis_spans():
    for n in (1, 2, 3):
        basis = hermitian_basis(n)
        assert len(basis) == n * n
        flat = np.array([np.concatenate([E.real.ravel(), E.imag.ravel()]) for _, E in basis])
        assert np.linalg.matrix_rank(flat) == n * n


# -- C-subsolution checker --------------------------------------------------------------------

def test_csub_trace_and_root():
    for n in (1, 2, 3):
        c, C = csubsolution_constants(OperatorSpec("trace"), n)
        r = check_csubsolution_pointwise(OperatorSpec("trace"), c, C, float(n), 1000, seed=1, n=n)
        assert r.passed and r.lhs == 0 and r.metadata["premises"] > 0
        c, C = csubsolution_constants(OperatorSpec("monge_ampere_root"), n)
        r = check_csubsolution_pointwise(OperatorSpec("monge_ampere_root"), c, C, 1.0, 1000, seed=2, n=n)
        assert r.passed and r.metadata["premises"] > 0


def test_csub_zero_f_only_degenerate_premises():
    # with f = 0 only the rescaled-to-zero copies satisfy the premise; det 0 <= exp(0)
    r = check_csubsolution_pointwise(OperatorSpec("trace"), 1.0, 1.0, 0.0, 200, seed=0, n=2)
    assert r.passed and r.lhs == 0 and r.empirical_constant < 0


def test_csub_rejects_pucci():
    with pytest.raises(UnsupportedOperatorError):
        csubsolution_constants(OperatorSpec.pucci_minus(1, 2), 2)
    with pytest.raises(UnsupportedOperatorError):
        check_csubsolution_pointwise(OperatorSpec.pucci_plus(1, 2), 1.0, 1.0, 1.0, 10, seed=0)


@pytest.mark.parametrize("kind", ["trace", "monge_ampere_root"])
def test_csub_exhaustive_coarse_grid(kind):
    # exhaustive oracle over a geometric eigenvalue grid: premise => det <= exp(F)
    n = 2
    spec = OperatorSpec(kind)
    c, C = csubsolution_constants(spec, n)
    for f_val in (0.5, 1.0, 2.0):
        F = (1.0 / c) * (C * f_val / n) ** n
        for e in itertools.product(np.geomspace(1e-3, 1e3, 25), repeat=n):
            val = evaluate_spectrum(spec, np.array(e))
            if val <= f_val:
                assert np.log(np.prod(e)) <= F + 1e-12
