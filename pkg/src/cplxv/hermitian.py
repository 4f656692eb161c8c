"""Hermitian linear algebra, complex Pucci operators and symmetric eigenvalue operators.

Conventions
-----------
Complex Hessians are stored as ``H[i, j] = d_i dbar_j u``.  Eigenvalues are
always returned in ascending order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from cplxv.report import EstimateReport

HERMITIAN_TOL = 1e-12
JACOBI_SWEEPS = 50
JACOBI_THRESHOLD = 1e-13


class EigenSolverError(RuntimeError):
    pass


class NotHermitianError(ValueError):
    pass


@dataclass(frozen=True)
class HermitianMatrix:
    """Dense n x n complex Hermitian matrix (immutable)."""

    entries: np.ndarray

    def __post_init__(self):
        a = np.array(self.entries, dtype=complex)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise NotHermitianError(f"expected a square matrix, got shape {a.shape}")
        scale = 1.0 + np.abs(a).max()
        if np.abs(a - a.conj().T).max() > HERMITIAN_TOL * scale:
            raise NotHermitianError("matrix is not Hermitian")
        # exact symmetrization so later algebra sees a Hermitian matrix
        a = 0.5 * (a + a.conj().T)
        a[np.diag_indices_from(a)] = a.diagonal().real
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def diag(cls, values) -> "HermitianMatrix":
        return cls(np.diag(np.asarray(values, dtype=float)))

    @classmethod
    def identity(cls, n: int) -> "HermitianMatrix":
        return cls(np.eye(n))

    def __add__(self, other: "HermitianMatrix") -> "HermitianMatrix":
        return HermitianMatrix(self.entries + other.entries)

    def __sub__(self, other: "HermitianMatrix") -> "HermitianMatrix":
        return HermitianMatrix(self.entries - other.entries)

    def __neg__(self) -> "HermitianMatrix":
        return HermitianMatrix(-self.entries)

    def __mul__(self, t: float) -> "HermitianMatrix":
        return HermitianMatrix(float(t) * self.entries)

    __rmul__ = __mul__

    def trace(self) -> float:
        return float(self.entries.diagonal().real.sum())

    def norm(self) -> float:
        """Operator norm (largest absolute eigenvalue)."""
        e = eigenvalues(self).values
        return float(np.abs(e).max())


@dataclass(frozen=True)
class Spectrum:
    values: np.ndarray
    vectors: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class PucciParams:
    lam: float
    Lam: float

    def __post_init__(self):
        if not (self.lam > 0 and self.Lam >= self.lam):
            raise ValueError(f"need 0 < lambda <= Lambda, got ({self.lam}, {self.Lam})")


def _jacobi_hermitian(a: np.ndarray):
    """Cyclic Jacobi for a complex Hermitian matrix.  Returns (eigs, V) with a = V diag V*."""
    a = np.array(a, dtype=complex)
    n = a.shape[0]
    v = np.eye(n, dtype=complex)
    scale = max(np.abs(a).max(), 1e-300)
    for _ in range(JACOBI_SWEEPS):
        off = math.sqrt(sum(abs(a[p, q]) ** 2 for p in range(n) for q in range(p + 1, n)))
        if off <= JACOBI_THRESHOLD * scale:
            return a.diagonal().real.copy(), v
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                r = abs(apq)
                if r <= 1e-300:
                    continue
                # phase rotation reduces the (p, q) block to a real symmetric one
                phase = apq / r
                app, aqq = a[p, p].real, a[q, q].real
                theta = 0.5 * math.atan2(2.0 * r, aqq - app)
                c, s = math.cos(theta), math.sin(theta)
                g = np.eye(n, dtype=complex)
                g[p, p] = c
                g[q, q] = c
                g[p, q] = s * phase
                g[q, p] = -s * np.conj(phase)
                # columns p, q of g are orthonormal; a <- g* a g zeros the (p, q) entry
                a = g.conj().T @ a @ g
                a[p, q] = 0.0
                a[q, p] = 0.0
                v = v @ g
    off = math.sqrt(sum(abs(a[p, q]) ** 2 for p in range(n) for q in range(p + 1, n)))
    if off <= JACOBI_THRESHOLD * scale * 10:
        return a.diagonal().real.copy(), v
    raise EigenSolverError(f"Jacobi did not converge in {JACOBI_SWEEPS} sweeps (off={off:.3e})")


def eigenvalues(H: HermitianMatrix) -> Spectrum:
    """Sorted eigenvalues (and eigenvectors) by cyclic Jacobi rotations."""
    if H.dim > 8:
        raise ValueError("dense Jacobi path supports n <= 8")
    e, v = _jacobi_hermitian(H.entries)
    order = np.argsort(e)
    return Spectrum(e[order], v[:, order])


def batch_eigenvalues(H: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues for a stack of Hermitian matrices of shape (..., n, n)."""
    H = np.asarray(H)
    n = H.shape[-1]
    if n == 1:
        return H[..., 0, 0].real[..., None].copy()
    if n == 2:
        a = H[..., 0, 0].real
        d = H[..., 1, 1].real
        b = np.abs(H[..., 0, 1])
        m = 0.5 * (a + d)
        r = np.hypot(0.5 * (a - d), b)
        return np.stack([m - r, m + r], axis=-1)
    return np.linalg.eigvalsh(H)


# -- Pucci operators on eigenvalue vectors ----------------------------------------------

def pucci_minus_eigs(e, lam: float, Lam: float):
    e = np.asarray(e, dtype=float)
    return lam * np.where(e > 0, e, 0.0).sum(axis=-1) + Lam * np.where(e < 0, e, 0.0).sum(axis=-1)


def pucci_plus_eigs(e, lam: float, Lam: float):
    e = np.asarray(e, dtype=float)
    return Lam * np.where(e > 0, e, 0.0).sum(axis=-1) + lam * np.where(e < 0, e, 0.0).sum(axis=-1)


def pucci_minus(H: HermitianMatrix, p: PucciParams) -> float:
    return float(pucci_minus_eigs(eigenvalues(H).values, p.lam, p.Lam))


def pucci_plus(H: HermitianMatrix, p: PucciParams) -> float:
    return float(pucci_plus_eigs(eigenvalues(H).values, p.lam, p.Lam))


def bellman_dictionary(n: int, p: PucciParams, levels: int = 5, rotations: int = 0, seed: int = 0):
    """Finite set of Hermitian matrices A with lam*I <= A <= Lam*I.

    Diagonal matrices with entries on an even grid in [lam, Lam], optionally
    conjugated by random unitaries.
    """
    grid = np.linspace(p.lam, p.Lam, levels)
    diags = np.array(np.meshgrid(*([grid] * n), indexing="ij")).reshape(n, -1).T
    mats = [np.diag(d).astype(complex) for d in diags]
    rng = np.random.default_rng(seed)
    for _ in range(rotations):
        u = random_unitary(n, rng)
        d = diags[rng.integers(len(diags))]
        mats.append(u @ np.diag(d) @ u.conj().T)
    return np.array(mats)


def bellman_inf(H: HermitianMatrix, dictionary: np.ndarray) -> float:
    """inf over the dictionary of tr(A H)."""
    vals = np.einsum("kij,ji->k", dictionary, H.entries).real
    return float(vals.min())


def bellman_sup(H: HermitianMatrix, dictionary: np.ndarray) -> float:
    vals = np.einsum("kij,ji->k", dictionary, H.entries).real
    return float(vals.max())


def random_unitary(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed unitary from the QR factorization of a complex Gaussian matrix."""
    z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / math.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    return q * (d / np.abs(d))


def random_hermitian(n: int, rng: np.random.Generator, scale: float = 1.0) -> HermitianMatrix:
    z = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return HermitianMatrix(scale * 0.5 * (z + z.conj().T))


# -- symmetric operators f(lambda) ---------------------------------------------------------

class _OutsideDomain:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "OUTSIDE_DOMAIN"

    def __bool__(self):
        return False


OUTSIDE_DOMAIN = _OutsideDomain()

OPERATOR_KINDS = ("pucci_minus", "pucci_plus", "trace", "monge_ampere_root", "hessian_sigma_k")


@dataclass(frozen=True)
class OperatorSpec:
    """An operator F(H) = f(lambda(H)) symmetric in the eigenvalues."""

    kind: str
    params: Union[PucciParams, int, None] = None

    def __post_init__(self):
        if self.kind not in OPERATOR_KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}; valid: {OPERATOR_KINDS}")
        if self.kind in ("pucci_minus", "pucci_plus") and not isinstance(self.params, PucciParams):
            raise ValueError(f"{self.kind} needs PucciParams")
        if self.kind == "hessian_sigma_k" and not (isinstance(self.params, int) and self.params >= 1):
            raise ValueError("hessian_sigma_k needs an integer k >= 1")

    @classmethod
    def pucci_minus(cls, lam, Lam):
        return cls("pucci_minus", PucciParams(lam, Lam))

    @classmethod
    def pucci_plus(cls, lam, Lam):
        return cls("pucci_plus", PucciParams(lam, Lam))

    @property
    def degree_one(self) -> bool:
        return True


def elementary_symmetric(e, k: int):
    """sigma_k of the last axis."""
    e = np.asarray(e, dtype=float)
    n = e.shape[-1]
    # recurrence on polynomial coefficients of prod (1 + e_i t)
    coeffs = [np.ones(e.shape[:-1])] + [np.zeros(e.shape[:-1]) for _ in range(n)]
    for i in range(n):
        for j in range(min(i + 1, n), 0, -1):
            coeffs[j] = coeffs[j] + e[..., i] * coeffs[j - 1]
    return coeffs[k] if k <= n else np.zeros(e.shape[:-1])


def _cone_tol(e):
    return 1e-12 * (1.0 + np.abs(e).max())


def in_cone(spec: OperatorSpec, e) -> bool:
    """Whether the eigenvalue vector lies in the closure of the operator's cone."""
    e = np.asarray(e, dtype=float)
    if spec.kind in ("pucci_minus", "pucci_plus", "trace"):
        return True
    tol = _cone_tol(e)
    if spec.kind == "monge_ampere_root":
        return bool((e >= -tol).all())
    k = spec.params
    return all(elementary_symmetric(e, j) >= -tol for j in range(1, k + 1))


def evaluate_spectrum(spec: OperatorSpec, e):
    e = np.sort(np.asarray(e, dtype=float))
    if not in_cone(spec, e):
        return OUTSIDE_DOMAIN
    n = len(e)
    if spec.kind == "pucci_minus":
        return float(pucci_minus_eigs(e, spec.params.lam, spec.params.Lam))
    if spec.kind == "pucci_plus":
        return float(pucci_plus_eigs(e, spec.params.lam, spec.params.Lam))
    if spec.kind == "trace":
        return float(e.sum())
    if spec.kind == "monge_ampere_root":
        return float(np.prod(np.clip(e, 0.0, None)) ** (1.0 / n))
    k = spec.params
    if k > n:
        raise ValueError(f"sigma_{k} undefined for n={n}")
    return float(max(elementary_symmetric(e, k), 0.0) ** (1.0 / k))


def evaluate_operator(spec: OperatorSpec, H: HermitianMatrix):
    """Operator value, or ``OUTSIDE_DOMAIN`` when the spectrum leaves the cone."""
    return evaluate_spectrum(spec, eigenvalues(H).values)


def operator_values(spec: OperatorSpec, H: np.ndarray) -> np.ndarray:
    """Vectorized operator values on a stack (..., n, n); NaN where the spectrum leaves the cone."""
    e = batch_eigenvalues(H)
    n = e.shape[-1]
    if spec.kind == "pucci_minus":
        return pucci_minus_eigs(e, spec.params.lam, spec.params.Lam)
    if spec.kind == "pucci_plus":
        return pucci_plus_eigs(e, spec.params.lam, spec.params.Lam)
    if spec.kind == "trace":
        return e.sum(axis=-1)
    tol = 1e-12 * (1.0 + np.abs(e).max(axis=-1))
    if spec.kind == "monge_ampere_root":
        ok = (e >= -tol[..., None]).all(axis=-1)
        val = np.prod(np.clip(e, 0.0, None), axis=-1) ** (1.0 / n)
        return np.where(ok, val, np.nan)
    k = spec.params
    if k > n:
        raise ValueError(f"sigma_{k} undefined for n={n}")
    ok = np.ones(e.shape[:-1], dtype=bool)
    for j in range(1, k + 1):
        ok &= elementary_symmetric(e, j) >= -tol
    val = np.maximum(elementary_symmetric(e, k), 0.0) ** (1.0 / k)
    return np.where(ok, val, np.nan)


def hermitian_basis(n: int):
    """Real basis of the n x n Hermitian matrices: E_jj, E_jk + E_kj, i(E_jk - E_kj)."""
    out = []
    for j in range(n):
        E = np.zeros((n, n), dtype=complex)
        E[j, j] = 1.0
        out.append((f"E{j}{j}", E))
    for j in range(n):
        for k in range(j + 1, n):
            S = np.zeros((n, n), dtype=complex)
            S[j, k] = S[k, j] = 1.0
            A = np.zeros((n, n), dtype=complex)
            A[j, k] = 1j
            A[k, j] = -1j
            out.append((f"S{j}{k}", S))
            out.append((f"A{j}{k}", A))
    return out


# -- C-subsolution condition ----------------------------------------------------------------

class UnsupportedOperatorError(ValueError):
    pass


def csubsolution_constants(spec: OperatorSpec, n: int) -> tuple[float, float]:
    """Constants (c, C) of the structural conditions prod f_i >= c and sum f_i l_i <= C f.

    Only operators for which the five structural conditions are known to hold
    are accepted; Pucci operators are not differentiable and are rejected.
    """
    if spec.kind == "trace" or (spec.kind == "hessian_sigma_k" and spec.params == 1):
        return 1.0, 1.0
    if spec.kind == "monge_ampere_root" or (spec.kind == "hessian_sigma_k" and spec.params == n):
        return float(n) ** (-n), 1.0
    raise UnsupportedOperatorError(
        f"{spec.kind}: the structural conditions (smooth symmetric f on a convex cone with "
        "prod df/dl_i >= c and sum l_i df/dl_i <= C f) are not established for this operator"
    )


def check_csubsolution_pointwise(spec: OperatorSpec, c: float, Cbig: float, f_val: float,
                                 samples: int, seed: int, n: int = 2,
                                 sharp: bool = False) -> EstimateReport:
    """Sample chi >= 0 and test: f(lambda(chi)) <= f_val  =>  det(chi) <= bound.

    The bound is ``exp(F)`` with ``F = (1/c)(C f_val / n)^n``; ``sharp=True``
    uses ``F`` itself, which is what the structural conditions imply directly.
    Each raw draw is paired with a rescaled copy whose operator value is a
    uniform fraction of ``f_val`` so the premise is actually exercised.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    csubsolution_constants(spec, n)  # raises for unsupported operators
    F = (1.0 / c) * (Cbig * f_val / n) ** n
    log_bound = math.log(F) if sharp else F
    if sharp and F <= 0:
        log_bound = -math.inf
    rng = np.random.default_rng(seed)
    violations = premises = 0
    worst = -math.inf
    for _ in range(samples):
        e = np.exp(rng.uniform(math.log(1e-3), math.log(1e3), size=n))
        u = random_unitary(n, rng)
        chi = HermitianMatrix(u @ np.diag(e) @ u.conj().T)
        spec_e = eigenvalues(chi).values
        val = evaluate_spectrum(spec, spec_e)
        candidates = [spec_e]
        if val is not OUTSIDE_DOMAIN and val > 0:
            candidates.append(spec_e * (rng.uniform() * f_val / val))
        for ev in candidates:
            fv = evaluate_spectrum(spec, ev)
            if fv is OUTSIDE_DOMAIN or fv > f_val * (1 + 1e-12):
                continue
            premises += 1
            logdet = float(np.sum(np.log(np.clip(ev, 1e-300, None))))
            margin = logdet - log_bound
            worst = max(worst, margin)
            if margin > 1e-9 * (1.0 + abs(log_bound)):
                violations += 1
    return EstimateReport(
        name=f"csub:{spec.kind}",
        lhs=float(violations),
        rhs=0.0,
        empirical_constant=float(worst) if premises else 0.0,
        tolerance=1e-9,
        passed=violations == 0,
        metadata={"n": n, "samples": samples, "premises": premises, "f_val": f_val,
                  "c": c, "C": Cbig, "sharp": sharp, "seed": seed},
    )
