"""Compiled per-node kernels for the Dirichlet solvers.

Arrays are flattened full-lattice arrays; ``idx`` lists the flat indices of the
nodes to update and ``strides`` the flat offsets of the 2n real axes.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

OP_PUCCI_MINUS = 0
OP_PUCCI_PLUS = 1
OP_CMA = 2

_ALL = np.empty(0, dtype=np.int64)


@njit(cache=True)
def _eigs(hr, hi, n, out):
    """Ascending eigenvalues of the Hermitian matrix hr + i hi (n <= 3) into ``out``."""
    if n == 1:
        out[0] = hr[0, 0]
        return
    if n == 2:
        a = hr[0, 0]
        d = hr[1, 1]
        m = 0.5 * (a + d)
        # sqrt rather than hypot: hypot is several times slower in the hot loop
        r = math.sqrt(0.25 * (a - d) * (a - d) + hr[0, 1] * hr[0, 1] + hi[0, 1] * hi[0, 1])
        out[0] = m - r
        out[1] = m + r
        return
    mat = np.empty((n, n), dtype=np.complex128)
    for i in range(n):
        for j in range(n):
            mat[i, j] = hr[i, j] + 1j * hi[i, j]
    ev = np.linalg.eigvalsh(mat)
    for i in range(n):
        out[i] = ev[i]


@njit(cache=True)
def _pucci_shift(ev, n, wpos, wneg, target):
    """Shift s with sum_j phi(ev_j - s) = target, phi(x) = wpos x (x > 0) or wneg x.

    The left side is decreasing and piecewise linear in s with kinks at the
    (ascending) eigenvalues, so the root is found by scanning the kinks.
    """
    prev = 0.0
    for j in range(n):
        g = 0.0
        for i in range(n):
            x = ev[i] - ev[j]
            g += wpos * x if x > 0 else wneg * x
        if g <= target:
            if j == 0:
                return ev[0] - (target - g) / (n * wpos)
            # linear between the kinks ev[j-1] and ev[j]
            return ev[j - 1] + (ev[j] - ev[j - 1]) * (prev - target) / (prev - g)
        prev = g
    return ev[n - 1] + (prev - target) / (n * wneg)


@njit(cache=True)
def _sweep(u, u_out, f, idx, rows, strides, h, n, swrow, hm, hp, vm, vp,
           opcode, lam, Lam, kappa, eps, dt, omega, relax_mode, F_out, D_out):
    """Shared node loop of :func:`relax` and :func:`residual_sweep`.

    ``rows`` restricts the loop to a subset of ``idx`` (all rows when empty).

    Everything is written inline: helper calls taking several arrays cost more
    in reference counting than the stencil arithmetic itself.
    """
    d = 2 * n
    hr = np.empty((n, n))
    hi = np.empty((n, n))
    ev = np.empty(n)
    D2 = np.empty(d)
    scale = np.empty(d)
    inv_h2 = 1.0 / (h * h)
    inv4h2 = 0.25 * inv_h2
    use_sw = swrow.shape[0] > 0
    worst = 0.0
    nrows = rows.shape[0] if rows.shape[0] > 0 else idx.shape[0]
    for q in range(nrows):
        row = rows[q] if rows.shape[0] > 0 else q
        c = idx[row]
        u0 = u[c]
        r = swrow[row] if use_sw else -1
        if r < 0 and n == 2:
            # unrolled interior path for C^2, the hot case
            sx1 = strides[0]
            sy1 = strides[1]
            sx2 = strides[2]
            sy2 = strides[3]
            a0 = 0.25 * (u[c + sx1] + u[c - sx1] + u[c + sy1] + u[c - sy1] - 4.0 * u0) * inv_h2
            d0 = 0.25 * (u[c + sx2] + u[c - sx2] + u[c + sy2] + u[c - sy2] - 4.0 * u0) * inv_h2
            dxx = u[c + sx1 + sx2] - u[c + sx1 - sx2] - u[c - sx1 + sx2] + u[c - sx1 - sx2]
            dyy = u[c + sy1 + sy2] - u[c + sy1 - sy2] - u[c - sy1 + sy2] + u[c - sy1 - sy2]
            dxy = u[c + sx1 + sy2] - u[c + sx1 - sy2] - u[c - sx1 + sy2] + u[c - sx1 - sy2]
            dyx = u[c + sy1 + sx2] - u[c + sy1 - sx2] - u[c - sy1 + sx2] + u[c - sy1 - sx2]
            re = 0.25 * (dxx + dyy) * inv4h2
            im = 0.25 * (dxy - dyx) * inv4h2
            m = 0.5 * (a0 + d0)
            rad = math.sqrt(0.25 * (a0 - d0) * (a0 - d0) + re * re + im * im)
            ev[0] = m - rad
            ev[1] = m + rad
            smax = 1.0
        elif r < 0 and n == 1:
            sx1 = strides[0]
            sy1 = strides[1]
            ev[0] = 0.25 * (u[c + sx1] + u[c - sx1] + u[c + sy1] + u[c - sy1] - 4.0 * u0) * inv_h2
            smax = 1.0
        else:
            # pure second differences; Shortley-Weller rows use the boundary crossing
            for a in range(d):
                s = strides[a]
                if r >= 0 and (hm[r, a] < 1.0 or hp[r, a] < 1.0):
                    tm = hm[r, a]
                    tp = hp[r, a]
                    um = vm[r, a] if tm < 1.0 else u[c - s]
                    up = vp[r, a] if tp < 1.0 else u[c + s]
                    D2[a] = 2.0 / (tm + tp) * ((up - u0) / tp - (u0 - um) / tm) * inv_h2
                    scale[a] = 1.0 / (tm * tp)
                else:
                    D2[a] = (u[c + s] - 2.0 * u0 + u[c - s]) * inv_h2
                    scale[a] = 1.0
            smax = 0.0
            for j in range(n):
                hr[j, j] = 0.25 * (D2[2 * j] + D2[2 * j + 1])
                hi[j, j] = 0.0
                sj = 0.5 * (scale[2 * j] + scale[2 * j + 1])
                if sj > smax:
                    smax = sj
            for j in range(n):
                xj = strides[2 * j]
                yj = strides[2 * j + 1]
                for k in range(j + 1, n):
                    xk = strides[2 * k]
                    yk = strides[2 * k + 1]
                    # mixed central differences (pp - pm - mp + mm) / (4 h^2)
                    dxx = u[c + xj + xk] - u[c + xj - xk] - u[c - xj + xk] + u[c - xj - xk]
                    dyy = u[c + yj + yk] - u[c + yj - yk] - u[c - yj + yk] + u[c - yj - yk]
                    dxy = u[c + xj + yk] - u[c + xj - yk] - u[c - xj + yk] + u[c - xj - yk]
                    dyx = u[c + yj + xk] - u[c + yj - xk] - u[c - yj + xk] + u[c - yj - xk]
                    re = 0.25 * (dxx + dyy) * inv4h2
                    im = 0.25 * (dxy - dyx) * inv4h2
                    hr[j, k] = re
                    hi[j, k] = im
                    hr[k, j] = re
                    hi[k, j] = -im
            if n == 1:
                ev[0] = hr[0, 0]
            elif n == 2:
                a0 = hr[0, 0]
                d0 = hr[1, 1]
                m = 0.5 * (a0 + d0)
                # sqrt rather than hypot: hypot is several times slower here
                rad = math.sqrt(0.25 * (a0 - d0) * (a0 - d0) + hr[0, 1] * hr[0, 1] + hi[0, 1] * hi[0, 1])
                ev[0] = m - rad
                ev[1] = m + rad
            else:
                _eigs(hr, hi, n, ev)
        F = 0.0
        W = 0.0
        if opcode == OP_PUCCI_MINUS:
            for j in range(n):
                if ev[j] > 0:
                    F += lam * ev[j]
                    W += lam
                else:
                    F += Lam * ev[j]
                    W += Lam
        elif opcode == OP_PUCCI_PLUS:
            for j in range(n):
                if ev[j] > 0:
                    F += Lam * ev[j]
                    W += Lam
                else:
                    F += lam * ev[j]
                    W += lam
        else:
            logp = 0.0
            for j in range(n):
                logp += math.log(max(ev[j], eps))
            P = math.exp(logp / n)
            F = P
            for j in range(n):
                W += P / (n * max(ev[j], eps))
            if ev[0] < 0.0:
                F += kappa * ev[0]
                W += kappa
        D = W * smax * inv_h2
        res = F - f[row]
        if abs(res) > worst:
            worst = abs(res)
        if relax_mode and opcode != OP_CMA and r < 0:
            # exact pointwise solve: moving u_c by delta shifts every eigenvalue by -delta / h^2
            if opcode == OP_PUCCI_MINUS:
                s = _pucci_shift(ev, n, lam, Lam, f[row])
            else:
                s = _pucci_shift(ev, n, Lam, lam, f[row])
            delta = omega * s * h * h
            cap = dt * abs(res)
            if abs(delta) > cap:
                delta = cap if delta > 0 else -cap
            u_out[c] = u0 + delta
        elif relax_mode:
            step = dt
            if D > 0 and omega / D < step:
                step = omega / D
            u_out[c] = u0 + step * res
        else:
            F_out[row] = F
            D_out[row] = D
    return worst


@njit(cache=True)
def residual_sweep(u, f, idx, strides, h, n, swrow, hm, hp, vm, vp,
                   opcode, lam, Lam, kappa, eps, F_out, D_out):
    """Evaluate F and the local diagonal weight D = dF/d(-u_c) at every listed node.

    Returns max |F - f|.
    """
    return _sweep(u, u, f, idx, _ALL, strides, h, n, swrow, hm, hp, vm, vp, opcode, lam, Lam,
                  kappa, eps, 0.0, 0.0, False, F_out, D_out)


@njit(cache=True)
def relax(u, work, f, idx, rows, strides, h, n, swrow, hm, hp, vm, vp,
          opcode, lam, Lam, kappa, eps, dt, omega):
    """One Jacobi pseudo-time step u <- u + min(dt, omega / D) (F(u) - f), in place.

    Pucci rows away from Shortley-Weller crossings instead take omega times the
    exact pointwise solve, clipped to dt |F(u) - f|.

    Only the nodes ``idx[rows]`` move (all of ``idx`` when ``rows`` is empty).
    New values are staged in ``work`` (same size as ``u``) so every node reads
    the previous iterate.  Returns the max residual measured before the update.
    """
    worst = _sweep(u, work, f, idx, rows, strides, h, n, swrow, hm, hp, vm, vp, opcode, lam, Lam,
                   kappa, eps, dt, omega, True, f, f)
    if rows.shape[0] > 0:
        for q in range(rows.shape[0]):
            u[idx[rows[q]]] = work[idx[rows[q]]]
    else:
        for row in range(idx.shape[0]):
            u[idx[row]] = work[idx[row]]
    return worst


@njit(cache=True)
def restrict_full_weighting(r_fine, fine_dims, fine_of_coarse, d, out):
    """Tensor (1/4, 1/2, 1/4) weighting of a fine nodal array at coarse nodes."""
    strides = np.empty(d, dtype=np.int64)
    strides[d - 1] = 1
    for a in range(d - 2, -1, -1):
        strides[a] = strides[a + 1] * fine_dims[a + 1]
    ntaps = 3 ** d
    offs = np.zeros(ntaps, dtype=np.int64)
    wts = np.ones(ntaps)
    for t in range(ntaps):
        rem = t
        for a in range(d):
            o = rem % 3 - 1
            rem //= 3
            offs[t] += o * strides[a]
            wts[t] *= 0.5 if o == 0 else 0.25
    for i in range(fine_of_coarse.shape[0]):
        c = fine_of_coarse[i]
        acc = 0.0
        for t in range(ntaps):
            acc += wts[t] * r_fine[c + offs[t]]
        out[i] = acc


@njit(cache=True)
def prolong_add(u_fine, fine_idx, fine_k, corr_coarse, coarse_dims, coarse_klo, d):
    """Add the multilinear interpolant of a coarse correction at the listed fine nodes.

    ``fine_k`` holds the integer lattice coordinates (rows) of the fine nodes;
    coarse node j sits at fine lattice coordinate 2 * (coarse_klo + j).
    """
    cstr = np.empty(d, dtype=np.int64)
    cstr[d - 1] = 1
    for a in range(d - 2, -1, -1):
        cstr[a] = cstr[a + 1] * coarse_dims[a + 1]
    odd_axes = np.empty(d, dtype=np.int64)
    for i in range(fine_idx.shape[0]):
        flat = 0
        nodd = 0
        for a in range(d):
            k = fine_k[i, a]
            flat += ((k - (k & 1)) // 2 - coarse_klo[a]) * cstr[a]
            if k & 1:
                odd_axes[nodd] = cstr[a]
                nodd += 1
        acc = 0.0
        for corner in range(1 << nodd):
            off = 0
            for b in range(nodd):
                if (corner >> b) & 1:
                    off += odd_axes[b]
            acc += corr_coarse[flat + off]
        u_fine[fine_idx[i]] += acc / (1 << nodd)
