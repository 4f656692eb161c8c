"""Dirichlet solvers for Pucci and complex Monge-Ampere equations, and manufactured instances.

Both solvers relax the residual ``F(i ddbar u) - f`` with Jacobi pseudo-time
steps on the central-difference complex Hessian, boundary data frozen.  With
``SolveConfig.accel = "fas"`` (the default) the same relaxation is used as the
smoother of a nonlinear full-approximation-scheme multigrid cycle on the nested
lattices h, 2h, 4h, ...; ``accel = "none"`` runs plain pseudo-time stepping.

The scheme is not monotone.  Convergence claims are restricted to smooth
manufactured solutions and radially symmetric Monge-Ampere data.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from cplxv import kernels
from cplxv.grid import (BOUNDARY, INTERIOR, Ball, Domain, GridFunction,
                        load_fields, save_fields, to_complex)
from cplxv.hermitian import OperatorSpec, PucciParams, operator_values

log = logging.getLogger(__name__)

PSH_FLOOR = 1e-10
DENSITY_FLOOR = 1e-8
PENALTY_FACTOR = 10.0
DIVERGENCE_WINDOW = 100


class SolveFailure(RuntimeError):
    """Raised when relaxation stalls or diverges; carries the last residual."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


class ConfigError(ValueError):
    pass


# Boundary closures.  "node": Dirichlet values at the lattice boundary nodes.
# "shortley_weller": pure second differences of boundary-adjacent nodes use the
# exact crossing with the boundary.  "layer": interior nodes whose stencil
# leaves the closed shape become Dirichlet nodes carrying the data at their
# nearest boundary point.  "auto": node for Pucci solves; Shortley-Weller
# (n = 1) or layer (n >= 2) for Monge-Ampere solves.
CLOSURES = ("auto", "node", "shortley_weller", "layer")


@dataclass(frozen=True)
class SolveConfig:
    """Relaxation settings.

    ``dt=None`` picks 0.9 of the explicit stability bound ``h^2 / (4 n Lam)``;
    ``residual_tol=None`` picks ``tol_factor * h^2 * max(1, |f|_inf)``.
    ``max_iters`` counts fine-level sweeps for plain stepping and cycles for FAS.
    """

    dt: Optional[float] = None
    residual_tol: Optional[float] = None
    max_iters: int = 200_000
    damping: float = 1.0
    accel: str = "fas"
    omega: float = 1.0
    pre_sweeps: int = 2
    post_sweeps: int = 2
    coarse_sweeps: int = 400
    closure: str = "auto"
    tol_factor: float = 1e-2

    def __post_init__(self):
        if self.dt is not None and not self.dt > 0:
            raise ConfigError("dt must be positive")
        if self.residual_tol is not None and not self.residual_tol > 0:
            raise ConfigError("residual_tol must be positive")
        if not 0 < self.damping <= 1:
            raise ConfigError("damping must lie in (0, 1]")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if self.accel not in ("fas", "none"):
            raise ConfigError(f"accel must be 'fas' or 'none', got {self.accel!r}")
        if self.closure not in CLOSURES:
            raise ConfigError(f"closure must be one of {CLOSURES}, got {self.closure!r}")
        if not 0 < self.omega <= 1:
            raise ConfigError("omega must lie in (0, 1]")

    @staticmethod
    def stability_number(dt: float, h: float, n: int, Lam: float) -> float:
        return dt * 4.0 * n * Lam / (h * h)

    def resolve(self, h: float, n: int, Lam: float, f_scale: float) -> "SolveConfig":
        """Fill the automatic fields and check the stability invariant."""
        dt = self.dt if self.dt is not None else 0.9 * h * h / (4.0 * n * Lam)
        if self.stability_number(dt, h, n, Lam) >= 1.0:
            raise ConfigError(
                f"dt={dt:g} violates dt*4n*Lam/h^2 < 1 (value {self.stability_number(dt, h, n, Lam):.3f})")
        tol = self.residual_tol if self.residual_tol is not None else \
            self.tol_factor * h * h * max(1.0, f_scale)
        return replace(self, dt=dt, residual_tol=tol)


@dataclass
class Instance:
    """One Dirichlet problem F(i ddbar u) = f on a lattice domain.

    ``boundary`` carries the Dirichlet values at boundary nodes (values at other
    active nodes are ignored).  ``boundary_fn`` maps complex points (m, n) to
    values and is needed for the Shortley-Weller closure.
    """

    domain: Domain
    operator: OperatorSpec
    f: GridFunction
    boundary: GridFunction
    exact: Optional[GridFunction] = None
    boundary_fn: Optional[Callable] = None
    label: str = ""

    def __post_init__(self):
        b = self.boundary.values[self.domain.boundary]
        if not np.isfinite(b).all():
            raise ValueError("boundary values missing at some boundary nodes")

    def save(self, path):
        op = self.operator
        meta = {"operator": op.kind, "label": self.label}
        if isinstance(op.params, PucciParams):
            meta.update(lam=op.params.lam, Lam=op.params.Lam)
        fields = {"f": self.f, "boundary": self.boundary}
        if self.exact is not None:
            fields["exact"] = self.exact
        save_fields(path, self.domain, fields, meta)

    @classmethod
    def load(cls, path) -> "Instance":
        dom, fields, meta = load_fields(path)
        kind = meta["operator"]
        params = PucciParams(meta["lam"], meta["Lam"]) if "lam" in meta else None
        exact = GridFunction(dom, fields["exact"]) if "exact" in fields else None
        return cls(dom, OperatorSpec(kind, params), GridFunction(dom, fields["f"]),
                   GridFunction(dom, fields["boundary"]), exact, label=meta.get("label", ""))


@dataclass
class SolveStats:
    iterations: int = 0
    sweeps: int = 0
    residual: float = math.inf
    history: list = field(default_factory=list)


# -- manufactured catalog ------------------------------------------------------------------

def _radial(phi, dphi, ddphi):
    """u = phi(|z|^2) with complex Hessian phi' I + phi'' conj(z) z^T."""

    def value(z):
        return phi(np.sum(np.abs(z) ** 2, axis=-1))

    def hessian(z):
        t = np.sum(np.abs(z) ** 2, axis=-1)
        n = z.shape[-1]
        H = dphi(t)[:, None, None] * np.eye(n)[None]
        H = H + ddphi(t)[:, None, None] * np.conj(z)[:, :, None] * z[:, None, :]
        return H

    return value, hessian


def _hermitian_form_matrix(n):
    A = np.eye(n, dtype=complex) * (1.0 + 0.5 * np.arange(n))
    for j in range(n - 1):
        A[j, j + 1] = 0.3 + 0.2j
        A[j + 1, j] = 0.3 - 0.2j
    return A


def _hermitian_quadratic():
    def value(z):
        A = _hermitian_form_matrix(z.shape[-1])
        return np.real(np.einsum("mk,kl,ml->m", np.conj(z), A, z)) - 1.0

    def hessian(z):
        A = _hermitian_form_matrix(z.shape[-1])
        # d_i dbar_j sum A_kl conj(z_k) z_l = A_ji
        return np.broadcast_to(A.T, (z.shape[0],) + A.shape).copy()

    return value, hessian


def _pluriharmonic():
    def value(z):
        return np.real(z[:, 0] ** 2)

    def hessian(z):
        n = z.shape[-1]
        return np.zeros((z.shape[0], n, n), dtype=complex)

    return value, hessian


def _affine():
    def value(z):
        return 2.0 + np.real(z[:, 0])

    def hessian(z):
        n = z.shape[-1]
        return np.zeros((z.shape[0], n, n), dtype=complex)

    return value, hessian


def _zero():
    def value(z):
        return np.zeros(z.shape[0])

    def hessian(z):
        n = z.shape[-1]
        return np.zeros((z.shape[0], n, n), dtype=complex)

    return value, hessian


GAUSS_WIDTH = 0.5
CONE_SMOOTHING = 0.4

CATALOG = {
    "zero": _zero(),
    "quadratic": _radial(lambda t: t - 1.0, lambda t: np.ones_like(t), lambda t: np.zeros_like(t)),
    "hermitian_quadratic": _hermitian_quadratic(),
    "quartic": _radial(lambda t: t * t, lambda t: 2.0 * t, lambda t: 2.0 * np.ones_like(t)),
    "pluriharmonic": _pluriharmonic(),
    "gaussian": _radial(lambda t: np.exp(-t / GAUSS_WIDTH),
                        lambda t: -np.exp(-t / GAUSS_WIDTH) / GAUSS_WIDTH,
                        lambda t: np.exp(-t / GAUSS_WIDTH) / GAUSS_WIDTH ** 2),
    "cone": _radial(lambda t: np.sqrt(t + CONE_SMOOTHING ** 2),
                    lambda t: 0.5 / np.sqrt(t + CONE_SMOOTHING ** 2),
                    lambda t: -0.25 / (t + CONE_SMOOTHING ** 2) ** 1.5),
    "affine": _affine(),
}


def manufacture(domain: Domain, u_star: str, operator: OperatorSpec, p: PucciParams | None = None,
                scale: float = 1.0, shift: float = 0.0) -> Instance:
    """Instance with known solution ``scale * u_star + shift``.

    ``f`` is the operator applied to the closed-form complex Hessian and the
    boundary data is the exact solution itself (exact extension outside the shape).
    """
    if u_star not in CATALOG:
        raise KeyError(f"unknown catalog id {u_star!r}; available: {sorted(CATALOG)}")
    if p is not None and operator.kind in ("pucci_minus", "pucci_plus"):
        operator = OperatorSpec(operator.kind, p)
    value, hessian = CATALOG[u_star]

    def exact_fn(z):
        return scale * value(z) + shift

    def f_fn(z):
        return operator_values(operator, scale * hessian(z))

    exact = domain.sample(exact_fn)
    f = domain.sample(f_fn)
    return Instance(domain, operator, f, exact, exact, exact_fn, label=u_star)


# -- multigrid hierarchy -----------------------------------------------------------------------

_EMPTY_ROWS = np.empty(0, dtype=np.int64)
_EMPTY_SW = np.ones((1, 1))


class _Level:
    """Flat-array view of one lattice level."""

    def __init__(self, domain: Domain, boundary_fn=None, closure="node"):
        self.dom = domain
        self.h = domain.h
        self.n = domain.n
        self.d = domain.d
        self.closure = closure
        mask = domain.mask.reshape(-1)
        self.strides = domain.strides.astype(np.int64)
        self.size = mask.size
        self.idx = np.flatnonzero(mask == INTERIOR).astype(np.int64)
        self.bidx = np.flatnonzero(mask == BOUNDARY).astype(np.int64)
        if closure == "layer":
            closed = domain.region_mask(domain.shape_).reshape(-1)
            keep = np.ones(len(self.idx), dtype=bool)
            for off in _offsets(self.d):
                keep &= closed[self.idx + int(np.dot(off, self.strides))]
            self.bidx = np.sort(np.concatenate([self.bidx, self.idx[~keep]]))
            self.idx = self.idx[keep]
        k = self.lattice_k(self.idx)
        parity = k.sum(axis=1) & 1
        self.colors = (np.flatnonzero(parity == 0).astype(np.int64),
                       np.flatnonzero(parity == 1).astype(np.int64))
        self.swrow = _EMPTY_ROWS
        self.hm = self.hp = self.vm = self.vp = _EMPTY_SW
        if closure == "shortley_weller":
            if boundary_fn is None:
                raise ValueError("the Shortley-Weller closure needs a boundary function")
            self._build_sw(boundary_fn)

    def _build_sw(self, boundary_fn):
        dom = self.dom
        shape = dom.shape_
        h = self.h
        interior = dom.interior.reshape(-1)
        near = np.zeros(len(self.idx), dtype=bool)
        for a in range(self.d):
            s = self.strides[a]
            near |= ~interior[self.idx + s] | ~interior[self.idx - s]
        rows = np.flatnonzero(near)
        k = len(rows)
        swrow = np.full(len(self.idx), -1, dtype=np.int64)
        swrow[rows] = np.arange(k)
        nodes = np.unravel_index(self.idx[rows], dom.dims)
        x = dom.positions(nodes) - dom.center_real
        hm = np.ones((k, self.d))
        hp = np.ones((k, self.d))
        vm = np.zeros((k, self.d))
        vp = np.zeros((k, self.d))
        for a in range(self.d):
            for sign, tarr, varr in ((1, hp, vp), (-1, hm, vm)):
                nb_int = interior[self.idx[rows] + sign * self.strides[a]]
                need = ~nb_int
                if not need.any():
                    continue
                xa = x[need, a]
                if isinstance(shape, Ball):
                    r2 = np.sum(x[need] ** 2, axis=1)
                    disc = np.maximum(xa * xa - (r2 - shape.radius ** 2), 0.0)
                    t = (-sign * xa + np.sqrt(disc)) / h
                else:
                    t = (shape.half_extent - sign * xa) / h
                t = np.clip(t, 1e-12, 1.0)
                t[t > 1.0 - 1e-12] = 1.0
                cross = x[need].copy()
                cross[:, a] += sign * t * h
                vals = np.asarray(boundary_fn(to_complex(cross + dom.center_real)), dtype=float)
                tarr[need, a] = t
                varr[need, a] = vals
        self.swrow, self.hm, self.hp, self.vm, self.vp = swrow, hm, hp, vm, vp

    def lattice_k(self, flat):
        nodes = np.unravel_index(flat, self.dom.dims)
        return np.stack([self.dom.klo[a] + nodes[a] for a in range(self.d)], axis=1).astype(np.int64)


def _op_args(op: OperatorSpec):
    if op.kind == "pucci_minus":
        return kernels.OP_PUCCI_MINUS, op.params.lam, op.params.Lam
    if op.kind == "pucci_plus":
        return kernels.OP_PUCCI_PLUS, op.params.lam, op.params.Lam
    if op.kind == "monge_ampere_root":
        return kernels.OP_CMA, 1.0, 1.0
    raise ValueError(f"operator {op.kind} is not supported by the solvers")


class _Relaxer:
    """Binds an operator to levels and runs sweeps, residuals and V-cycles."""

    def __init__(self, op: OperatorSpec, cfg: SolveConfig, Lam: float):
        self.opcode, self.lam, self.Lam = _op_args(op)
        self.kappa = PENALTY_FACTOR * Lam
        self.cfg = cfg
        self.ref_Lam = Lam
        self.sweeps = 0

    def sweep(self, lvl, u, f, work, omega, dt, rows=kernels._ALL):
        r = kernels.relax(u, work, f, lvl.idx, rows, lvl.strides, lvl.h, lvl.n, lvl.swrow,
                          lvl.hm, lvl.hp, lvl.vm, lvl.vp, self.opcode, self.lam, self.Lam,
                          self.kappa, PSH_FLOOR, dt, omega)
        self.sweeps += 1
        return r

    def residual(self, lvl, u, f):
        F = np.empty(len(lvl.idx))
        D = np.empty(len(lvl.idx))
        worst = kernels.residual_sweep(u, f, lvl.idx, lvl.strides, lvl.h, lvl.n, lvl.swrow,
                                       lvl.hm, lvl.hp, lvl.vm, lvl.vp, self.opcode, self.lam,
                                       self.Lam, self.kappa, PSH_FLOOR, F, D)
        return worst, F

    # -- FAS ------------------------------------------------------------------------------
    def build_hierarchy(self, fine: _Level, min_interior=16):
        self.fine = fine
        levels = [fine]
        shape = fine.dom.shape_
        while True:
            h2 = 2 * levels[-1].h
            try:
                dom = Domain(shape, h2)
            except ValueError:
                break
            lvl = _Level(dom, closure="layer" if fine.closure == "layer" else "node")
            if len(lvl.idx) < min_interior:
                break
            levels.append(lvl)
        self.levels = levels
        self.work = [np.zeros(lv.size) for lv in levels]
        self.maps = []
        for fl, cl in zip(levels[:-1], levels[1:]):
            fdom = fl.dom
            ck = cl.lattice_k(cl.idx)
            f_of_c = np.ravel_multi_index(tuple((2 * ck - fdom.klo).T), fdom.dims).astype(np.int64)
            bk = cl.lattice_k(cl.bidx)
            fk = 2 * bk - fdom.klo
            inside = np.all((fk >= 0) & (fk < np.array(fdom.dims)), axis=1)
            fb = np.full(len(cl.bidx), -1, dtype=np.int64)
            fb[inside] = np.ravel_multi_index(tuple(fk[inside].T), fdom.dims)
            act = fdom.active.reshape(-1)
            ok = fb >= 0
            ok[ok] = act[fb[ok]]
            # fallback for coarse boundary nodes outside the fine active set: the fine
            # node halfway towards the nearest coarse interior node
            fallback = np.full(len(cl.bidx), -1, dtype=np.int64)
            cint = cl.dom.interior.reshape(-1)
            for off in _offsets(cl.d):
                if (ok | (fallback >= 0)).all():
                    break
                todo = ~ok & (fallback < 0)
                nb = cl.bidx[todo] - np.dot(off, cl.strides)
                valid = (nb >= 0) & (nb < cl.size)
                hit = np.zeros(todo.sum(), dtype=bool)
                hit[valid] = cint[nb[valid]]
                mid = 2 * bk[todo] - np.asarray(off) - fdom.klo
                tgt = np.flatnonzero(todo)[hit]
                fallback[tgt] = np.ravel_multi_index(tuple(mid[hit].T), fdom.dims)
            src = np.where(ok, fb, fallback)
            if (src < 0).any():
                raise AssertionError("coarse boundary node without a fine source")
            self.maps.append({"f_of_c": f_of_c, "b_src": src, "fine_k": fl.lattice_k(fl.idx)})

    def _coarse_problem(self, l, u, f):
        """FAS coarse problem: restricted iterate and N_H(I u) + R(f - N_h u)."""
        lvl = self.levels[l]
        cl = self.levels[l + 1]
        mp = self.maps[l]
        _, F = self.residual(lvl, u, f)
        rfull = np.zeros(lvl.size)
        rfull[lvl.idx] = f - F
        rc = np.empty(len(cl.idx))
        kernels.restrict_full_weighting(rfull, np.array(lvl.dom.dims, dtype=np.int64),
                                        mp["f_of_c"], lvl.d, rc)
        del rfull
        uc = np.zeros(cl.size)
        uc[cl.idx] = u[mp["f_of_c"]]
        uc[cl.bidx] = u[mp["b_src"]]
        _, Fc = self.residual(cl, uc, rc)
        return uc, Fc + rc

    def _correct(self, l, u, uc, u0):
        cl = self.levels[l + 1]
        corr = uc - u0
        corr[cl.bidx] = 0.0
        kernels.prolong_add(u, self.levels[l].idx, self.maps[l]["fine_k"], corr,
                            np.array(cl.dom.dims, dtype=np.int64), cl.dom.klo.astype(np.int64),
                            self.levels[l].d)

    def _coarsest(self, u, f):
        lvl = self.levels[-1]
        tol = None
        for _ in range(self.cfg.coarse_sweeps):
            r = self.sweep(lvl, u, f, self.work[-1], self.cfg.omega, math.inf)
            if tol is None:
                tol = 1e-3 * r
            elif r <= tol:
                break

    def smooth(self, lvl, u, f, work):
        """Two-colour Jacobi: even then odd lattice parity, each reading the latest values."""
        for rows in lvl.colors:
            self.sweep(lvl, u, f, work, self.cfg.omega, math.inf, rows)

    def vcycle(self, l, u, f):
        if l == len(self.levels) - 1:
            self._coarsest(u, f)
            return
        lvl = self.levels[l]
        for _ in range(self.cfg.pre_sweeps):
            self.smooth(lvl, u, f, self.work[l])
        uc, fc = self._coarse_problem(l, u, f)
        u0 = uc.copy()
        self.vcycle(l + 1, uc, fc)
        self._correct(l, u, uc, u0)
        for _ in range(self.cfg.post_sweeps):
            self.smooth(lvl, u, f, self.work[l])

    def fmg(self, l, u, f):
        """Full multigrid: solve the coarse problem first, then one V-cycle here."""
        if l == len(self.levels) - 1:
            self._coarsest(u, f)
            return
        uc, fc = self._coarse_problem(l, u, f)
        u0 = uc.copy()
        self.fmg(l + 1, uc, fc)
        self._correct(l, u, uc, u0)
        self.vcycle(l, u, f)


def _offsets(d):
    """Stencil offsets, axis neighbours first."""
    from cplxv.grid import stencil_offsets
    return [np.array(o) for o in stencil_offsets(d)]


def _run(fine: _Level, op: OperatorSpec, u: np.ndarray, f: np.ndarray, cfg: SolveConfig,
         Lam: float, stats: SolveStats):
    rel = _Relaxer(op, cfg, Lam)
    rel.fine = fine
    work = np.empty_like(u) if cfg.accel == "none" else None
    prev = math.inf
    growth = 0
    if cfg.accel == "fas":
        rel.build_hierarchy(fine)
        log.info("FAS hierarchy h=%s", [lv.h for lv in rel.levels])
    for it in range(1, cfg.max_iters + 1):
        if cfg.accel == "fas":
            res, _ = rel.residual(fine, u, f)
        else:
            res = rel.sweep(fine, u, f, work, cfg.omega, cfg.damping * cfg.dt)
        stats.iterations = it - 1
        stats.residual = res
        stats.sweeps = rel.sweeps
        if not math.isfinite(res):
            raise SolveFailure("relaxation produced non-finite values", res, it)
        if cfg.accel == "fas":
            stats.history.append(res)
        if res <= cfg.residual_tol:
            if cfg.accel == "none":
                res, _ = rel.residual(fine, u, f)
                stats.residual = res
                if res > cfg.residual_tol:
                    continue
            return u
        growth = growth + 1 if res > prev else 0
        prev = res
        window = DIVERGENCE_WINDOW if cfg.accel == "none" else 10
        if growth >= window:
            raise SolveFailure("residual grew for %d consecutive iterations" % window, res, it)
        if cfg.accel == "fas":
            if it == 1:
                rel.fmg(0, u, f)
            else:
                rel.vcycle(0, u, f)
    res, _ = rel.residual(fine, u, f)
    raise SolveFailure("max_iters exceeded", res, cfg.max_iters)


def _project(domain: Domain, x: np.ndarray) -> np.ndarray:
    """Nearest points of the shape boundary for real coordinates ``x`` (m, 2n)."""
    shape = domain.shape_
    c = domain.center_real
    y = x - c
    if isinstance(shape, Ball):
        r = np.linalg.norm(y, axis=1)
        r = np.where(r > 0, r, 1.0)
        return c + shape.radius * y / r[:, None]
    half = shape.half_extent
    out = np.clip(y, -half, half)
    inside = np.all(np.abs(y) < half, axis=1)
    if inside.any():
        # push the coordinate closest to a face onto that face
        yi = out[inside]
        a = np.argmax(np.abs(yi), axis=1)
        rows = np.arange(len(yi))
        yi[rows, a] = np.where(yi[rows, a] >= 0, half, -half)
        out[inside] = yi
    return c + out


def _initial(lvl: _Level, boundary: np.ndarray, boundary_fn=None, interior_guess=None):
    """Starting iterate: Dirichlet data on the level's boundary nodes, guess (or 0) inside."""
    dom = lvl.dom
    u = np.zeros(lvl.size)
    if lvl.closure == "layer":
        if boundary_fn is None:
            raise ValueError("the layer closure needs a boundary function")
        x = dom.positions(np.unravel_index(lvl.bidx, dom.dims))
        u[lvl.bidx] = np.asarray(boundary_fn(to_complex(_project(dom, x))), dtype=float)
    else:
        u[lvl.bidx] = boundary.reshape(-1)[lvl.bidx]
    if interior_guess is not None:
        u[lvl.idx] = interior_guess.reshape(-1)[lvl.idx]
    return u


def _to_grid(domain: Domain, u: np.ndarray) -> GridFunction:
    return GridFunction(domain, u.reshape(domain.dims))


def solve_pucci_dirichlet(inst: Instance, p: PucciParams | None = None, cfg: SolveConfig = SolveConfig(),
                          stats: SolveStats | None = None, initial: GridFunction | None = None) -> GridFunction:
    """Solve M(i ddbar u) = f with the instance's Pucci operator and boundary data.

    ``p`` overrides the ellipticity constants carried by the instance operator.
    On success the interior residual is at most the resolved ``residual_tol``.
    """
    op = inst.operator
    if op.kind not in ("pucci_minus", "pucci_plus"):
        raise ValueError(f"expected a Pucci operator, got {op.kind}")
    if p is not None:
        op = OperatorSpec(op.kind, p)
    dom = inst.domain
    closure = "node" if cfg.closure == "auto" else cfg.closure
    fine = _Level(dom, inst.boundary_fn, closure)
    fvals = inst.f.values.reshape(-1)[fine.idx]
    cfg = cfg.resolve(dom.h, dom.n, op.params.Lam, float(np.abs(fvals).max(initial=0.0)))
    u = _initial(fine, inst.boundary.values, inst.boundary_fn,
                 None if initial is None else initial.values)
    stats = stats if stats is not None else SolveStats()
    u = _run(fine, op, u, np.ascontiguousarray(fvals), cfg, op.params.Lam, stats)
    log.info("pucci solve: %d iterations, %d sweeps, residual %.3e", stats.iterations, stats.sweeps,
             stats.residual)
    return _to_grid(dom, u)


def solve_cma_dirichlet(domain: Domain, g: GridFunction, cfg: SolveConfig = SolveConfig(),
                        stats: SolveStats | None = None, boundary_fn=None) -> GridFunction:
    """Solve det(i ddbar psi) = g with psi = 0 on the boundary (or ``boundary_fn``).

    Relaxes the concave root ``det_+(i ddbar psi)^{1/n} + kappa min(e_min, 0)``
    against ``max(g, 1e-8)^{1/n}``.  The residual is measured on that root form.
    """
    n = domain.n
    if (g.values[domain.interior] < 0).any():
        raise ValueError("density must be nonnegative")
    bfn = boundary_fn if boundary_fn is not None else (lambda z: np.zeros(z.shape[0]))
    closure = cfg.closure if cfg.closure != "auto" else ("shortley_weller" if n == 1 else "layer")
    fine = _Level(domain, bfn, closure)
    target = np.maximum(g.values.reshape(-1)[fine.idx], DENSITY_FLOOR) ** (1.0 / n)
    cfg = cfg.resolve(domain.h, n, 1.0, float(target.max(initial=0.0)))
    bvals = domain.sample(bfn).values
    # start below the solution: the constant-density solution for 1.5 x the largest root density
    c = 1.5 * float(target.max()) if len(target) else 0.0
    shape = domain.shape_
    rad = shape.radius if isinstance(shape, Ball) else shape.half_extent

    def guess(z):
        return c * (np.sum(np.abs(z - np.array(shape.center)) ** 2, axis=-1) - rad * rad) + bfn(z)

    init = domain.sample(guess).values
    u = _initial(fine, bvals, bfn, init)
    stats = stats if stats is not None else SolveStats()
    u = _run(fine, OperatorSpec("monge_ampere_root"), u, np.ascontiguousarray(target), cfg, 1.0, stats)
    log.info("cma solve: %d iterations, residual %.3e", stats.iterations, stats.residual)
    return _to_grid(domain, u)


def cma_radial_oracle(n: int, density: Callable, r_eval, radius: float = 1.0, steps: int = 20000):
    """psi(r) for the radial solution of det(i ddbar psi) = density(|z|), psi(radius) = 0.

    With t = |z|^2 and psi = phi(t): t^n phi'(t)^n = n int_0^t s^{n-1} g(s) ds, so
    phi'(t) = (G(t))^{1/n} / t with G(t) = n int_0^t s^{n-1} g ds.
    """
    from scipy.integrate import cumulative_trapezoid

    T = radius * radius
    t = np.linspace(0.0, T, steps + 1)
    gs = np.array([density(math.sqrt(v)) for v in t])
    G = n * cumulative_trapezoid(t ** (n - 1) * gs, t, initial=0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        dphi = np.where(t > 0, np.maximum(G, 0.0) ** (1.0 / n) / t, 0.0)
    dphi[0] = density(0.0) ** (1.0 / n) if n >= 1 else 0.0
    phi = cumulative_trapezoid(dphi, t, initial=0.0)
    phi = phi - phi[-1]
    return np.interp(np.asarray(r_eval) ** 2, t, phi)
