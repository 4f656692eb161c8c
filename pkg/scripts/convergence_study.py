"""Mesh-refinement study for the Pucci Dirichlet solver on catalog profiles.

    python scripts/convergence_study.py --n 1 --profiles quartic gaussian --h 0.1 0.05 0.025

Prints one row per (profile, h): max error, observed order, iterations, wall time
and the empirical ABP constant at p = n + 1.
"""
from __future__ import annotations

import argparse
import math
import time
from dataclasses import dataclass

import numpy as np

from cplxv.estimates import abp_check
from cplxv.grid import Domain, ball
from cplxv.hermitian import OperatorSpec, PucciParams
from cplxv.solver import CATALOG, CONE_SMOOTHING, SolveStats, manufacture, solve_pucci_dirichlet

# (scale, shift) with zero boundary data on the unit sphere, so sup(-u)^+ is informative
ZERO_BOUNDARY = {
    "quadratic": (1.0, 0.0),
    "hermitian_quadratic": (1.0, 0.0),
    "quartic": (1.0, -1.0),
    "cone": (1.0, -math.sqrt(1.0 + CONE_SMOOTHING ** 2)),
    "gaussian": (-1.0, math.exp(-2.0)),
}


@dataclass(frozen=True)
class StudyConfig:
    n: int = 1
    lam: float = 1.0
    Lam: float = 2.0
    operator: str = "pucci_minus"
    profiles: tuple = ("quadratic", "quartic")
    h_levels: tuple = (0.1, 0.05, 0.025)


def run(cfg: StudyConfig):
    p = PucciParams(cfg.lam, cfg.Lam)
    rows = []
    for prof in cfg.profiles:
        prev = None
        for h in cfg.h_levels:
            t0 = time.perf_counter()
            dom = Domain(ball(cfg.n, 1.0), h)
            scale, shift = ZERO_BOUNDARY.get(prof, (1.0, 0.0))
            inst = manufacture(dom, prof, OperatorSpec(cfg.operator, p), scale=scale, shift=shift)
            stats = SolveStats()
            u = solve_pucci_dirichlet(inst, stats=stats)
            err = float(np.abs(u.values - inst.exact.values)[dom.active].max())
            order = math.log(prev[1] / err) / math.log(prev[0] / h) if prev and err > 0 else math.nan
            abp = abp_check(u, inst.f, cfg.n + 1.0, p).empirical_constant
            rows.append((prof, h, err, order, stats.iterations, time.perf_counter() - t0, abp))
            prev = (h, err)
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=1)
    ap.add_argument("--lam", type=float, default=1.0)
    ap.add_argument("--Lam", type=float, default=2.0)
    ap.add_argument("--operator", choices=("pucci_minus", "pucci_plus"), default="pucci_minus")
    ap.add_argument("--profiles", nargs="+", default=["quadratic", "quartic"], choices=sorted(CATALOG))
    ap.add_argument("--h", nargs="+", type=float, default=[0.1, 0.05, 0.025])
    a = ap.parse_args()
    cfg = StudyConfig(a.n, a.lam, a.Lam, a.operator, tuple(a.profiles), tuple(a.h))
    print(f"{'profile':<20}{'h':>8}{'error':>12}{'order':>8}{'iters':>7}{'sec':>8}{'abp C':>9}")
    for prof, h, err, order, its, sec, abp in run(cfg):
        print(f"{prof:<20}{h:>8g}{err:>12.3e}{order:>8.2f}{its:>7d}{sec:>8.2f}{abp:>9.4f}")


if __name__ == "__main__":
    main()
