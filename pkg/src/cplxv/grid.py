"""Lattice domains in C^n, grid functions, finite-difference complex Hessians, quadrature.

Real coordinates are ordered ``(x1, y1, x2, y2, ...)`` with ``z_j = x_j + i y_j``.
All domains live on the single lattice ``h * Z^{2n}`` anchored at the origin,
so domains sharing ``h`` are exactly nested as node sets.

Integrals are taken against the volume form ``beta^n = 2^n n! dV`` where
``dV`` is Lebesgue measure on R^{2n}.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from cplxv.hermitian import HermitianMatrix

INTERIOR = 1
BOUNDARY = 2
EXTERIOR = 0

FORMAT_TAG = "cplxv-grid"
FORMAT_VERSION = 1


def to_real(z) -> np.ndarray:
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    out = np.empty(z.shape[:-1] + (2 * z.shape[-1],))
    out[..., 0::2] = z.real
    out[..., 1::2] = z.imag
    return out


def to_complex(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[..., 0::2] + 1j * x[..., 1::2]


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    kind = "ball"

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(complex(c) for c in np.atleast_1d(self.center)))
        if self.radius <= 0:
            raise ValueError("radius must be positive")

    @property
    def n(self):
        return len(self.center)

    @property
    def half_extent(self):
        return self.radius

    def to_dict(self):
        return {"kind": "ball", "center": [[c.real, c.imag] for c in self.center], "radius": self.radius}


@dataclass(frozen=True)
class Cube:
    """Cube of side ``side`` (so Q_r = [-r/2, r/2]^{2n} about the center)."""

    center: tuple
    side: float

    kind = "cube"

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(complex(c) for c in np.atleast_1d(self.center)))
        if self.side <= 0:
            raise ValueError("side must be positive")

    @property
    def n(self):
        return len(self.center)

    @property
    def half_extent(self):
        return 0.5 * self.side

    def to_dict(self):
        return {"kind": "cube", "center": [[c.real, c.imag] for c in self.center], "side": self.side}


def shape_from_dict(d):
    center = [complex(a, b) for a, b in d["center"]]
    if d["kind"] == "ball":
        return Ball(center, d["radius"])
    if d["kind"] == "cube":
        return Cube(center, d["side"])
    raise ValueError(f"unknown shape kind {d['kind']!r}")


def ball(n, radius, center=None):
    return Ball(center if center is not None else [0j] * n, radius)


def cube(n, side, center=None):
    return Cube(center if center is not None else [0j] * n, side)


@dataclass(frozen=True)
class VolumeElement:
    n: int

    @property
    def normalization(self) -> float:
        return 2.0 ** self.n * math.factorial(self.n)


def stencil_offsets(d: int):
    """Axis offsets and pairwise diagonal offsets used by the central-difference Hessian."""
    offs = []
    for a in range(d):
        for s in (1, -1):
            o = [0] * d
            o[a] = s
            offs.append(tuple(o))
    for a, b in itertools.combinations(range(d), 2):
        for sa, sb in itertools.product((1, -1), repeat=2):
            o = [0] * d
            o[a], o[b] = sa, sb
            offs.append(tuple(o))
    return offs


def _shift(arr, off):
    """out[i] = arr[i + off] with False/0 outside."""
    out = np.zeros_like(arr)
    src, dst = [], []
    for o, size in zip(off, arr.shape):
        if o >= 0:
            src.append(slice(o, size))
            dst.append(slice(0, size - o))
        else:
            src.append(slice(0, size + o))
            dst.append(slice(-o, size))
    out[tuple(dst)] = arr[tuple(src)]
    return out


class StencilError(IndexError):
    pass


class Domain:
    """Ball or cube in C^n sampled on the lattice h Z^{2n}.

    ``mask`` marks nodes INTERIOR (strictly inside the shape), BOUNDARY (outside
    or on the boundary of the shape but reached by the Hessian stencil of an
    interior node), or EXTERIOR.
    """

    def __init__(self, shape, h: float, pad: int = 1):
        self.shape_ = shape
        self.n = shape.n
        self.h = float(h)
        self.d = 2 * self.n
        c = to_real(np.array(shape.center))
        ext = shape.half_extent
        self.klo = np.floor((c - ext) / h + 1e-9).astype(int) - pad
        khi = np.ceil((c + ext) / h - 1e-9).astype(int) + pad
        self.dims = tuple(int(v) for v in (khi - self.klo + 1))
        if min(self.dims) < 5:
            raise ValueError(f"lattice too coarse: {self.dims} nodes per axis (need >= 5)")
        self.center_real = c
        self.mask = self._classify()
        self.mask.setflags(write=False)

    # -- geometry ----------------------------------------------------------------------
    def axis_coords(self, a: int) -> np.ndarray:
        return self.h * (self.klo[a] + np.arange(self.dims[a]))

    def _open_axes(self, center=None):
        c = self.center_real if center is None else center
        return [(self.axis_coords(a) - c[a]).reshape([-1 if b == a else 1 for b in range(self.d)])
                for a in range(self.d)]

    def _shape_masks(self, shape):
        """(open, closed) membership masks of a shape on this lattice."""
        c = to_real(np.array(shape.center))
        axes = self._open_axes(c)
        tol = 1e-9 * self.h
        if shape.kind == "ball":
            r2 = sum(ax * ax for ax in axes)
            R = shape.radius
            return r2 < (R - tol) ** 2, r2 <= (R + tol) ** 2
        half = shape.half_extent
        inside = np.ones(self.dims, dtype=bool)
        closed = np.ones(self.dims, dtype=bool)
        for ax in axes:
            inside = inside & (np.abs(ax) < half - tol)
            closed = closed & (np.abs(ax) <= half + tol)
        return inside, closed

    def _classify(self):
        interior, _ = self._shape_masks(self.shape_)
        reach = np.zeros(self.dims, dtype=bool)
        for off in stencil_offsets(self.d):
            reach |= _shift(interior, tuple(-o for o in off))
        mask = np.zeros(self.dims, dtype=np.int8)
        mask[reach & ~interior] = BOUNDARY
        mask[interior] = INTERIOR
        for a in range(self.d):
            edge = [slice(None)] * self.d
            for e in (0, -1):
                edge[a] = e
                if interior[tuple(edge)].any():
                    raise AssertionError("lattice padding too small for the stencil")
        return mask

    @property
    def shape(self):
        return self.shape_

    @cached_property
    def interior(self) -> np.ndarray:
        return self.mask == INTERIOR

    @cached_property
    def boundary(self) -> np.ndarray:
        return self.mask == BOUNDARY

    @cached_property
    def active(self) -> np.ndarray:
        return self.mask != EXTERIOR

    def region_mask(self, region=None) -> np.ndarray:
        """Closed-region node mask intersected with the active nodes."""
        if region is None:
            region = self.shape_
        if isinstance(region, np.ndarray):
            m = region.astype(bool)
        elif callable(region) and not isinstance(region, (Ball, Cube)):
            m = np.zeros(self.dims, dtype=bool)
            idx = np.nonzero(self.active)
            m[idx] = np.asarray(region(to_complex(self.positions(idx))), dtype=bool)
        else:
            m = self._shape_masks(region)[1]
        return m & self.active

    def region_weights(self, region=None) -> np.ndarray:
        """Per-node Lebesgue weights (in units of h^{2n}); trapezoid halves on lattice-aligned cube faces."""
        if region is None:
            region = self.shape_
        m = self.region_mask(region).astype(float)
        if isinstance(region, Cube):
            c = to_real(np.array(region.center))
            half = region.half_extent
            for a, ax in enumerate(self._open_axes(c)):
                on_face = np.abs(np.abs(ax) - half) <= 1e-9 * self.h
                m = m * np.where(on_face, 0.5, 1.0)
        return m

    def positions(self, idx) -> np.ndarray:
        """Real coordinates (m, 2n) of nodes given as a tuple of index arrays."""
        return np.stack([self.h * (self.klo[a] + np.asarray(idx[a])) for a in range(self.d)], axis=-1)

    def point(self, node) -> np.ndarray:
        return self.h * (self.klo + np.asarray(node))

    def index_of(self, z) -> tuple:
        """Nearest lattice node of a point given in complex coordinates."""
        x = to_real(z)
        return tuple(int(v) for v in np.rint(x / self.h - self.klo))

    def lattice_k(self, idx):
        return tuple(self.klo[a] + np.asarray(idx[a]) for a in range(self.d))

    @cached_property
    def strides(self) -> np.ndarray:
        s = np.ones(self.d, dtype=np.int64)
        for a in range(self.d - 2, -1, -1):
            s[a] = s[a + 1] * self.dims[a + 1]
        return s

    def sample(self, fn, where=None) -> "GridFunction":
        """GridFunction with ``fn(z)`` at active nodes; ``fn`` maps complex (m, n) arrays to (m,)."""
        where = self.active if where is None else where
        vals = np.full(self.dims, np.nan)
        idx = np.nonzero(where)
        vals[idx] = np.asarray(fn(to_complex(self.positions(idx))), dtype=float)
        return GridFunction(self, vals)

    def constant(self, c: float) -> "GridFunction":
        vals = np.where(self.active, float(c), np.nan)
        return GridFunction(self, vals)

    def same_lattice(self, other: "Domain") -> bool:
        return self.n == other.n and self.h == other.h

    def __repr__(self):
        return f"Domain(n={self.n}, shape={self.shape_}, h={self.h}, dims={self.dims})"

    def header(self) -> dict:
        return {"n": self.n, "h": self.h, "shape": self.shape_.to_dict(),
                "klo": [int(k) for k in self.klo], "dims": list(self.dims)}


class GridFunction:
    """Real values on the active nodes of a Domain (NaN elsewhere)."""

    def __init__(self, domain: Domain, values):
        values = np.asarray(values, dtype=float)
        if values.shape != domain.dims:
            raise ValueError(f"values shape {values.shape} != domain dims {domain.dims}")
        if not np.isfinite(values[domain.active]).all():
            raise ValueError("grid function must be finite at every active node")
        values = values.copy()
        values[~domain.active] = np.nan
        values.setflags(write=False)
        self.domain = domain
        self.values = values

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.domain, values)

    def map(self, fn) -> "GridFunction":
        v = np.full(self.domain.dims, np.nan)
        a = self.domain.active
        v[a] = fn(self.values[a])
        return GridFunction(self.domain, v)

    def __mul__(self, t):
        return self.map(lambda x: x * t)

    __rmul__ = __mul__

    def __add__(self, other):
        if isinstance(other, GridFunction):
            return GridFunction(self.domain, self.values + other.values)
        return self.map(lambda x: x + other)

    def __sub__(self, other):
        if isinstance(other, GridFunction):
            return GridFunction(self.domain, self.values - other.values)
        return self.map(lambda x: x - other)

    def __neg__(self):
        return self.map(lambda x: -x)

    def at(self, z) -> float:
        return float(self.values[self.domain.index_of(z)])

    def max_abs(self, region=None) -> float:
        m = self.domain.region_mask(region) if region is not None else self.domain.active
        return float(np.abs(self.values[m]).max())


# -- finite differences ------------------------------------------------------------------

def _flat(values):
    return np.ascontiguousarray(values).reshape(-1)


def _check_stencil(domain: Domain, flat_idx: np.ndarray):
    act = domain.active.reshape(-1)
    for off in stencil_offsets(domain.d):
        nb = flat_idx + int(np.dot(off, domain.strides))
        if not act[nb].all():
            bad = flat_idx[~act[nb]][0]
            node = np.unravel_index(bad, domain.dims)
            raise StencilError(f"stencil of node {tuple(int(i) for i in node)} leaves the domain")


def real_derivatives(u: GridFunction, flat_idx: np.ndarray):
    """Central-difference gradient (m, 2n) and real Hessian (m, 2n, 2n) at flat node indices."""
    dom = u.domain
    v = _flat(u.values)
    h = dom.h
    d = dom.d
    s = dom.strides
    c = v[flat_idx]
    grad = np.empty((len(flat_idx), d))
    hess = np.empty((len(flat_idx), d, d))
    for a in range(d):
        p, m = v[flat_idx + s[a]], v[flat_idx - s[a]]
        grad[:, a] = (p - m) / (2 * h)
        hess[:, a, a] = (p - 2 * c + m) / (h * h)
    for a, b in itertools.combinations(range(d), 2):
        pp = v[flat_idx + s[a] + s[b]]
        pm = v[flat_idx + s[a] - s[b]]
        mp = v[flat_idx - s[a] + s[b]]
        mm = v[flat_idx - s[a] - s[b]]
        val = (pp - pm - mp + mm) / (4 * h * h)
        hess[:, a, b] = val
        hess[:, b, a] = val
    return grad, hess


def complexify(D: np.ndarray) -> np.ndarray:
    """Complex Hessian d_i dbar_j from a real Hessian in (x1, y1, ...) ordering."""
    D = np.asarray(D, dtype=float)
    xx = D[..., 0::2, 0::2]
    yy = D[..., 1::2, 1::2]
    xy = D[..., 0::2, 1::2]
    yx = D[..., 1::2, 0::2]
    H = 0.25 * ((xx + yy) + 1j * (xy - yx))
    H = 0.5 * (H + np.conj(np.swapaxes(H, -1, -2)))
    return H


def realify(H: np.ndarray) -> np.ndarray:
    """Real Hessian (2n x 2n) of the quadratic form whose complex Hessian is ``H``.

    The quadratic q(w) = sum_jk H_kj conj(w_j) w_k has d_i dbar_j q = H_ij.
    """
    H = np.asarray(H, dtype=complex)
    n = H.shape[-1]
    d = 2 * n
    basis = np.eye(d)

    def q(x):
        w = to_complex(x)
        return float(np.real(np.conj(w) @ H.T @ w))

    D = np.empty((d, d))
    for a in range(d):
        D[a, a] = 2 * q(basis[a])
    for a, b in itertools.combinations(range(d), 2):
        val = q(basis[a] + basis[b]) - q(basis[a]) - q(basis[b])
        D[a, b] = D[b, a] = val
    return D


def hessian_field(u: GridFunction, where=None):
    """FD complex Hessians at the nodes of ``where`` (default: interior).

    Returns ``(idx, H)`` with ``idx`` a tuple of index arrays and ``H`` of shape (m, n, n).
    """
    dom = u.domain
    where = dom.interior if where is None else where
    idx = np.nonzero(where)
    flat = np.ravel_multi_index(idx, dom.dims)
    _check_stencil(dom, flat)
    _, D = real_derivatives(u, flat)
    return idx, complexify(D)


def complex_hessian(u: GridFunction, node) -> HermitianMatrix:
    """Central-difference complex Hessian at one lattice node (array index tuple)."""
    dom = u.domain
    node = tuple(int(i) for i in node)
    if any(i < 1 or i >= s - 1 for i, s in zip(node, dom.dims)):
        raise StencilError(f"stencil of node {node} leaves the lattice")
    flat = np.array([np.ravel_multi_index(node, dom.dims)])
    _check_stencil(dom, flat)
    _, D = real_derivatives(u, flat)
    return HermitianMatrix(complexify(D)[0])


# -- quadrature and extrema ------------------------------------------------------------------

def integrate(g: GridFunction, region=None) -> float:
    """Riemann sum of ``g beta^n`` over a closed region (cube faces carry trapezoid weights)."""
    dom = g.domain
    w = dom.region_weights(region)
    sel = w > 0
    if not sel.any():
        return 0.0
    vals = g.values[sel]
    if not np.isfinite(vals).all():
        raise ValueError("grid function undefined on part of the region")
    return float(np.dot(vals, w[sel]) * dom.h ** dom.d * VolumeElement(dom.n).normalization)


def lebesgue_measure(domain: Domain, region=None) -> float:
    return float(domain.region_weights(region).sum() * domain.h ** domain.d)


def sup_inf_osc(u: GridFunction, region=None):
    m = u.domain.region_mask(region)
    if not m.any():
        raise ValueError("empty region")
    vals = u.values[m]
    hi, lo = float(vals.max()), float(vals.min())
    return hi, lo, hi - lo


def lp_norm(g: GridFunction, p: float, region=None) -> float:
    return integrate(g.map(lambda x: np.abs(x) ** p), region) ** (1.0 / p)


# -- serialization ---------------------------------------------------------------------------

def save_fields(path, domain: Domain, fields: dict, meta: dict | None = None):
    """Write named grid fields on the active nodes.

    Layout: one line ``# cplxv-grid <json header>`` followed by CSV with columns
    ``k0..k{2n-1}`` (integer lattice coordinates, position = h*k) and one column
    per field, values printed with 17 significant digits.
    """
    names = list(fields)
    header = {"format": FORMAT_TAG, "version": FORMAT_VERSION, **domain.header(),
              "fields": names, "meta": meta or {}}
    idx = np.nonzero(domain.active)
    ks = domain.lattice_k(idx)
    cols = [np.asarray(fields[k].values if isinstance(fields[k], GridFunction) else fields[k])[idx]
            for k in names]
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"# {FORMAT_TAG} " + json.dumps(header, sort_keys=True) + "\n")
        fh.write(",".join([f"k{a}" for a in range(domain.d)] + names) + "\n")
        kmat = np.stack(ks, axis=1)
        vmat = np.stack(cols, axis=1) if cols else np.empty((len(kmat), 0))
        for krow, vrow in zip(kmat, vmat):
            fh.write(",".join([str(int(k)) for k in krow] + [format(float(x), ".17g") for x in vrow]) + "\n")


def load_fields(path):
    """Inverse of :func:`save_fields`.  Returns ``(domain, {name: ndarray}, meta)``."""
    path = Path(path)
    with path.open() as fh:
        first = fh.readline()
        if not first.startswith(f"# {FORMAT_TAG} "):
            raise ValueError(f"{path}: not a {FORMAT_TAG} file")
        header = json.loads(first[len(FORMAT_TAG) + 3:])
        fh.readline()
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    shape = shape_from_dict(header["shape"])
    dom = Domain(shape, header["h"])
    if list(dom.dims) != header["dims"] or [int(k) for k in dom.klo] != header["klo"]:
        raise ValueError(f"{path}: lattice header does not match the reconstructed domain")
    d = dom.d
    idx = tuple((data[:, a].astype(int) - dom.klo[a]) for a in range(d)) if len(data) else tuple([] for _ in range(d))
    out = {}
    for j, name in enumerate(header["fields"]):
        arr = np.full(dom.dims, np.nan)
        if len(data):
            arr[idx] = data[:, d + j]
        out[name] = arr
    return dom, out, header.get("meta", {})


def save_grid_function(path, u: GridFunction, meta=None):
    save_fields(path, u.domain, {"value": u}, meta)


def load_grid_function(path) -> GridFunction:
    dom, fields, _ = load_fields(path)
    return GridFunction(dom, fields["value"])
