"""Falsifiers for viscosity sub/supersolutions and Pucci classes on grid functions.

At each interior node the checker builds a finite dictionary of quadratic test
functions from the central-difference jet (value, gradient, real Hessian) plus
perturbations ``+-delta * E`` of the complex Hessian, with ``E`` running over a
real basis of Hermitian matrices and ``delta`` in ``{0, h, 2h}``.  A test
function is used only if it touches ``u`` (from above for subsolutions, from
below for supersolutions) on the active part of the ``3^{2n}`` neighbourhood.
The dictionary is finite, so a clean report is evidence, not proof.
"""
from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field

import numpy as np

from cplxv.grid import GridFunction, complexify, real_derivatives, realify, to_complex
from cplxv.hermitian import OperatorSpec, PucciParams, hermitian_basis, operator_values

TOUCH_RTOL = 1e-12
CHUNK = 4096


@dataclass
class TouchingReport:
    """One failed test: ``margin < -tol`` for the witness quadratic ``phi``.

    ``phi(x) = value + grad . (x - x0) + 0.5 (x - x0)^T hessian (x - x0)`` in real
    coordinates ``(x1, y1, ...)`` around the node position ``x0``.
    """

    node: tuple
    point: tuple
    direction: str
    value: float
    grad: np.ndarray
    hessian: np.ndarray
    perturbation: str
    operator_value: float
    f_value: float
    margin: float


@dataclass
class CheckSummary:
    """Bookkeeping for one checker run (what was tested, not only what failed)."""

    nodes: int = 0
    touched_nodes: int = 0
    tests: int = 0
    dictionary: list = field(default_factory=list)


def default_tol(u: GridFunction) -> float:
    """10 h^2 |u|_inf (with a 1e-12 absolute floor for round-off)."""
    return max(10.0 * u.domain.h ** 2 * u.max_abs(), 1e-12)


MULTIPLIERS = (1, 2)


def _dictionary(n: int, h: float, multipliers=MULTIPLIERS):
    """(label, complex perturbation, real perturbation) triples."""
    out = [("jet", np.zeros((n, n), dtype=complex), np.zeros((2 * n, 2 * n)))]
    for (name, E), mult, sign in itertools.product(hermitian_basis(n), multipliers, (1, -1)):
        delta = sign * mult * h
        lab = f"{'+' if sign > 0 else '-'}{mult}h*{name}"
        out.append((lab, delta * E, realify(delta * E)))
    return out


def _check(u: GridFunction, spec: OperatorSpec, f: GridFunction, tol, direction: str,
           where=None, summary: CheckSummary | None = None, multipliers=MULTIPLIERS):
    if u.domain is not f.domain and not (u.domain.same_lattice(f.domain) and u.domain.dims == f.domain.dims):
        raise ValueError("u and f must live on the same domain")
    dom = u.domain
    tol = default_tol(u) if tol is None else float(tol)
    n, d, h = dom.n, dom.d, dom.h
    where = dom.interior if where is None else (where & dom.interior)
    nodes = np.nonzero(where)
    flat = np.ravel_multi_index(nodes, dom.dims)
    offs = np.array([o for o in itertools.product((-1, 0, 1), repeat=d) if any(o)])
    off_flat = offs @ dom.strides
    vals = u.values.reshape(-1)
    act = dom.active.reshape(-1)
    fv = f.values.reshape(-1)
    book = _dictionary(n, h, multipliers)
    Pc = np.stack([b[1] for b in book])
    Pr = np.stack([b[2] for b in book])
    # quadratic forms of the perturbations on the neighbourhood offsets, (K, O)
    qP = 0.5 * h * h * np.einsum("oa,kab,ob->ko", offs, Pr, offs)
    sign = 1.0 if direction == "above" else -1.0
    scale = TOUCH_RTOL * (1.0 + u.max_abs())
    out = []
    summary = summary if summary is not None else CheckSummary()
    summary.dictionary = [b[0] for b in book]
    summary.nodes += len(flat)
    for start in range(0, len(flat), CHUNK):
        fl = flat[start:start + CHUNK]
        grad, D = real_derivatives(u, fl)
        u0 = vals[fl]
        nb = fl[:, None] + off_flat[None, :]
        ok = act[nb]
        unb = np.where(ok, vals[np.where(ok, nb, fl[:, None])], 0.0)
        lin = h * grad @ offs.T
        qD = 0.5 * h * h * np.einsum("oa,mab,ob->mo", offs, D, offs)
        base = unb - u0[:, None] - lin - qD                                # u - jet, (M, O)
        gap = base[:, None, :] - qP[None, :, :]                              # u - phi, (M, K, O)
        gap = np.where(ok[:, None, :], gap, -sign * np.inf)
        touch = (sign * gap <= scale).all(axis=2)                            # (M, K)
        Hc = complexify(D)
        Hk = Hc[:, None] + Pc[None]
        F = operator_values(spec, Hk)
        fl_f = fv[fl]
        if direction == "above":
            inside = np.isfinite(F)
            margin = np.where(inside, F - fl_f[:, None], -np.inf)
            tested = touch
        else:
            margin = np.where(np.isfinite(F), fl_f[:, None] - F, np.inf)
            tested = touch & np.isfinite(F)
        summary.touched_nodes += int(tested.any(axis=1).sum())
        summary.tests += int(tested.sum())
        bad = tested & (margin < -tol)
        for i in np.flatnonzero(bad.any(axis=1)):
            k = int(np.argmin(np.where(bad[i], margin[i], np.inf)))
            node = tuple(int(a[start + i]) for a in nodes)
            x0 = dom.point(node)
            out.append(TouchingReport(
                node=node, point=tuple(complex(c) for c in to_complex(x0)), direction=direction,
                value=float(u0[i]), grad=grad[i].copy(), hessian=D[i] + Pr[k], perturbation=book[k][0],
                operator_value=float(F[i, k]) if np.isfinite(F[i, k]) else float("nan"),
                f_value=float(fl_f[i]), margin=float(margin[i, k])))
    return out


def check_subsolution(u: GridFunction, spec: OperatorSpec, f: GridFunction, tol=None,
                      where=None, summary: CheckSummary | None = None, multipliers=MULTIPLIERS):
    """Violations of ``F(i ddbar phi) >= f - tol`` for test functions touching ``u`` from above.

    Test Hessians outside the operator's cone count as violations.  ``multipliers``
    lists the perturbation sizes in units of h (empty: the bare jet only).
    """
    return _check(u, spec, f, tol, "above", where, summary, multipliers)


def check_supersolution(u: GridFunction, spec: OperatorSpec, f: GridFunction, tol=None,
                        where=None, summary: CheckSummary | None = None, multipliers=MULTIPLIERS):
    """Violations of ``F(i ddbar phi) <= f + tol`` for test functions touching ``u`` from below.

    Test Hessians outside the operator's cone impose no condition.
    """
    return _check(u, spec, f, tol, "below", where, summary, multipliers)


PUCCI_CLASSES = ("upper_S", "lower_S", "both")


def check_pucci_class(u: GridFunction, p: PucciParams, f: GridFunction, which: str = "both", tol=None,
                      where=None):
    """Membership in the Pucci classes.

    ``upper_S``: ``M^-(i ddbar u) <= f`` (supersolution check).
    ``lower_S``: ``M^+(i ddbar u) >= f`` (subsolution check).  ``both``: the union of violations.
    """
    if which not in PUCCI_CLASSES:
        raise ValueError(f"which must be one of {PUCCI_CLASSES}")
    out = []
    if which in ("upper_S", "both"):
        out += check_supersolution(u, OperatorSpec("pucci_minus", p), f, tol, where)
    if which in ("lower_S", "both"):
        out += check_subsolution(u, OperatorSpec("pucci_plus", p), f, tol, where)
    return out


VIOLATION_FIELDS = ("node", "point", "direction", "perturbation", "operator_value", "f_value", "margin")


def violations_to_csv(reports, fh=None) -> str:
    """Node indices and positions, direction, witness label and margin; floats with 17 digits."""
    from cplxv.report import fmt

    out = fh if fh is not None else io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(VIOLATION_FIELDS)
    for r in reports:
        pt = " ".join(f"{fmt(c.real)}{'+' if c.imag >= 0 else '-'}{fmt(abs(c.imag))}j" for c in r.point)
        w.writerow([" ".join(str(i) for i in r.node), pt, r.direction, r.perturbation,
                    fmt(r.operator_value), fmt(r.f_value), fmt(r.margin)])
    return out.getvalue() if fh is None else ""
