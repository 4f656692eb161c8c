"""Batch runner: ``cplxv {gen,solve,verify,sweep,report}``.

Configuration is flat ``key = value`` text (``#`` starts a comment, lists are
comma separated).  Output files are written below ``--out``; every CSV uses a
header row, commas and floats with 17 significant digits, and carries no
timestamp, so equal configs and seeds give byte-identical files.  The exit code
is 0 iff every executed check passed.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from cplxv import estimates, harnack, viscosity
from cplxv.grid import Domain, GridFunction, ball, cube, load_grid_function, save_grid_function
from cplxv.hermitian import OperatorSpec, PucciParams, check_csubsolution_pointwise, csubsolution_constants
from cplxv.report import CSV_FIELDS, EstimateReport, fmt, mesh_stable
from cplxv.solver import CATALOG, ConfigError, Instance, SolveConfig, SolveFailure, SolveStats, manufacture, \
    solve_pucci_dirichlet

log = logging.getLogger("cplxv")

CHECKS = ("abp", "log_abp", "harnack", "holder", "barrier", "viscosity", "csub", "maxprinciple", "modulus")
# checks whose empirical constant must survive mesh halving
STABLE_CHECKS = ("abp", "log_abp", "harnack", "maxprinciple")


class MissingInputError(FileNotFoundError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    n: int = 1
    lam: float = 1.0
    Lam: float = 1.0
    p_exp: float | None = None
    q_exp: float = 2.0
    h_levels: tuple = (0.1, 0.05)
    shape: str = "ball"
    size: float = 1.0
    operator: str = "pucci_minus"
    catalog: tuple = ("quadratic",)
    checks: tuple = ("abp",)
    tol_factor: float = 1e-2
    dt: float | None = None
    c_cap: float = estimates.C_CAP
    c0: float = 1.0
    k_frac: float = 0.9
    pairs: int = 400
    csub_samples: int = 1000
    out: str = "out"
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if not (0 < self.lam <= self.Lam):
            raise ConfigError("need 0 < lambda <= Lambda")
        if self.p_exp is None:
            object.__setattr__(self, "p_exp", float(self.n + 1))
        if not self.p_exp > self.n:
            raise ConfigError(f"p_exp must exceed n = {self.n}")
        if not self.h_levels or any(h <= 0 for h in self.h_levels):
            raise ConfigError("h levels must be positive")
        if any(b >= a for a, b in zip(self.h_levels, self.h_levels[1:])):
            raise ConfigError("h levels must be strictly decreasing")
        if self.shape not in ("ball", "cube"):
            raise ConfigError("shape must be ball or cube")
        if self.operator not in ("pucci_minus", "pucci_plus"):
            raise ConfigError("operator must be pucci_minus or pucci_plus")
        bad = [c for c in self.catalog if c not in CATALOG]
        if bad:
            raise ConfigError(f"unknown catalog id(s) {bad}; valid ids: {', '.join(sorted(CATALOG))}")
        bad = [c for c in self.checks if c not in CHECKS]
        if bad:
            raise ConfigError(f"unknown check(s) {bad}; valid checks: {', '.join(CHECKS)}")
        if not (0 < self.k_frac < 1):
            raise ConfigError("k_frac must lie in (0, 1)")
        for h in self.h_levels:
            # raises ConfigError when dt breaks the explicit stability bound on this level
            self.solve_config().resolve(h, self.n, self.Lam, 1.0)

    def solve_config(self) -> SolveConfig:
        return SolveConfig(dt=self.dt, tol_factor=self.tol_factor)

    @property
    def params(self) -> PucciParams:
        return PucciParams(self.lam, self.Lam)

    def domain(self, h: float) -> Domain:
        shape = ball(self.n, self.size) if self.shape == "ball" else cube(self.n, self.size)
        return Domain(shape, h)


_KEY_ALIASES = {"lambda": "lam", "Lambda": "Lam", "radius": "size", "side": "size"}


def parse_config(text: str, **overrides) -> ExperimentConfig:
    """Parse flat ``key = value`` lines into an :class:`ExperimentConfig`."""
    types = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = _KEY_ALIASES.get(key, key)
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = val
    values.update({k: v for k, v in overrides.items() if v is not None})
    kwargs = {}
    for key, val in values.items():
        if not isinstance(val, str):
            kwargs[key] = val
        elif key in ("h_levels",):
            kwargs[key] = tuple(float(v) for v in val.split(",") if v.strip())
        elif key in ("catalog", "checks"):
            kwargs[key] = tuple(v.strip() for v in val.split(",") if v.strip())
        elif key in ("n", "pairs", "csub_samples", "seed"):
            kwargs[key] = int(val)
        elif key in ("shape", "operator", "out"):
            kwargs[key] = val
        else:
            kwargs[key] = float(val)
    return ExperimentConfig(**kwargs)


def load_config(path: str | None, **overrides) -> ExperimentConfig:
    text = Path(path).read_text() if path else ""
    return parse_config(text, **overrides)


# -- file layout -------------------------------------------------------------------------------

def _stem(cat: str, n: int, h: float) -> str:
    return f"{cat}_n{n}_h{float(h)!r}"


def instance_path(cfg: ExperimentConfig, cat: str, h: float) -> Path:
    return Path(cfg.out) / "instances" / (_stem(cat, cfg.n, h) + ".grid")


def solution_path(cfg: ExperimentConfig, cat: str, h: float) -> Path:
    return Path(cfg.out) / "solutions" / (_stem(cat, cfg.n, h) + ".grid")


def _jobs(cfg: ExperimentConfig):
    return [(cat, h) for cat in sorted(cfg.catalog) for h in cfg.h_levels]


def _map(fn, args, workers: int):
    if workers > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, args))
    return [fn(a) for a in args]


def _write_csv(path: Path, header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())
    return buf.getvalue()


def _write_reports(path: Path, reports) -> str:
    return _write_csv(path, CSV_FIELDS, [[r.row()[k] for k in CSV_FIELDS] for r in reports])


# -- gen ---------------------------------------------------------------------------------------

def _gen_one(args):
    cfg, cat, h = args
    op = OperatorSpec(cfg.operator, cfg.params)
    inst = manufacture(cfg.domain(h), cat, op)
    path = instance_path(cfg, cat, h)
    path.parent.mkdir(parents=True, exist_ok=True)
    inst.save(path)
    return str(path)


def cmd_gen(cfg: ExperimentConfig, workers: int = 1) -> list:
    """One instance file per (catalog id, h level)."""
    return _map(_gen_one, [(cfg, c, h) for c, h in _jobs(cfg)], workers)


# -- solve -------------------------------------------------------------------------------------

SOLVE_FIELDS = ("instance", "h", "iters", "residual", "max_error", "status")


def _solve_one(args):
    cfg, cat, h = args
    path = instance_path(cfg, cat, h)
    if not path.exists():
        raise MissingInputError(f"missing instance file {path} (run gen first)")
    inst = Instance.load(path)
    stats = SolveStats()
    try:
        u = solve_pucci_dirichlet(inst, cfg=cfg.solve_config(), stats=stats)
    except (SolveFailure, ConfigError) as exc:
        log.error("%s: %s", path.name, exc)
        return (cat, h, stats.iterations, getattr(exc, "residual", math.nan), math.nan, "failed")
    out = solution_path(cfg, cat, h)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_grid_function(out, u, {"label": cat})
    err = math.nan
    if inst.exact is not None:
        m = inst.domain.interior
        err = float(np.abs(u.values[m] - inst.exact.values[m]).max())
    return (cat, h, stats.iterations, stats.residual, err, "ok")


def cmd_solve(cfg: ExperimentConfig, workers: int = 1):
    """Solve every generated instance; returns (rows, all_ok) and writes solve.csv."""
    rows = _map(_solve_one, [(cfg, c, h) for c, h in _jobs(cfg)], workers)
    _write_csv(Path(cfg.out) / "solve.csv", SOLVE_FIELDS,
               [[c, fmt(h), it, fmt(res), fmt(err), st] for c, h, it, res, err, st in rows])
    return rows, all(r[-1] == "ok" for r in rows)


# -- verify ------------------------------------------------------------------------------------

def _load_pair(cfg, cat, h):
    ip, sp = instance_path(cfg, cat, h), solution_path(cfg, cat, h)
    for p in (ip, sp):
        if not p.exists():
            raise MissingInputError(f"missing input {p} (run gen and solve first)")
    inst = Instance.load(ip)
    u = load_grid_function(sp)
    return inst, GridFunction(inst.domain, u.values)


def _failed(name, cfg, h, exc) -> EstimateReport:
    log.warning("%s: %s", name, exc)
    return EstimateReport(name, math.nan, math.nan, math.nan, 0.0, False,
                          {"n": cfg.n, "h": h, "lam": cfg.lam, "Lam": cfg.Lam, "p": cfg.p_exp, "error": str(exc)})


def _shift_nonneg(u: GridFunction) -> GridFunction:
    """u - inf u over the closed unit ball: same Pucci class, nonnegative there."""
    lo = float(np.nanmin(u.values[u.domain.region_mask(ball(u.domain.n, 1.0))]))
    return u.map(lambda x: x - lo)


def _instance_checks(cfg: ExperimentConfig, cat: str, h: float, checks) -> list:
    inst, u = _load_pair(cfg, cat, h)
    f, p = inst.f, cfg.params
    out = []
    for check in checks:
        name = f"{check}:{cat}"
        try:
            if check == "abp":
                r = estimates.abp_check(u, f, cfg.p_exp, p, c_cap=cfg.c_cap, label=cat)
            elif check == "log_abp":
                r = estimates.log_abp_check(u, f, cfg.p_exp, p, c_cap=cfg.c_cap, label=cat)
            elif check == "harnack":
                hr = harnack.harnack_constant(_shift_nonneg(u), f, "lp", cfg.p_exp, lam=p.lam, Lam=p.Lam)
                r = hr.to_report(math.isfinite(hr.empirical_C) and hr.empirical_C <= cfg.c_cap)
            elif check == "holder":
                radii = [r for r in (0.4, 0.2, 0.1, 0.05) if r >= h]
                alpha = harnack.holder_exponent(u, radii, centers=(None, (0.25 + 0j,) + (0j,) * (cfg.n - 1)))
                pairs = harnack.sample_pairs(u.domain, cfg.pairs, cfg.seed)
                r = harnack.holder_check(u, f, cfg.p_exp, pairs, alpha, c_cap=cfg.c_cap, lam=p.lam, Lam=p.Lam)
            elif check == "viscosity":
                spec = inst.operator
                summ = viscosity.CheckSummary()
                bad = viscosity.check_subsolution(u, spec, f, summary=summ)
                bad += viscosity.check_supersolution(u, spec, f, summary=summ)
                r = EstimateReport("viscosity", float(len(bad)), 0.0, float(summ.touched_nodes), 0.0, not bad,
                                   {"n": cfg.n, "h": h, "lam": p.lam, "Lam": p.Lam, "p": None})
            elif check == "maxprinciple":
                r = harnack.local_max_principle_check(u, f, cfg.q_exp, cfg.p_exp, c_cap=cfg.c_cap,
                                                      lam=p.lam, Lam=p.Lam)
            elif check == "modulus":
                k = cfg.k_frac * (cfg.p_exp - cfg.n) / cfg.n
                r = harnack.modulus_of_continuity_check(_shift_nonneg(u), f, k, cfg.p_exp, c_cap=cfg.c_cap,
                                                        lam=p.lam, Lam=p.Lam)
            else:
                continue
        except (estimates.PreconditionError, ValueError) as exc:
            r = _failed(check, cfg, h, exc)
        r.name = name
        out.append(r)
    return out


def _global_checks(cfg: ExperimentConfig, h: float, checks) -> list:
    out = []
    if "barrier" in checks:
        bp = estimates.BarrierParams.make(cfg.n, cfg.lam, cfg.Lam)
        out += estimates.barrier_reports(bp, h)
    if "csub" in checks:
        for kind in ("trace", "monge_ampere_root"):
            spec = OperatorSpec(kind)
            c, C = csubsolution_constants(spec, cfg.n)
            out.append(check_csubsolution_pointwise(spec, c, C, 1.0, cfg.csub_samples, cfg.seed, cfg.n))
    for r in out:
        r.metadata.setdefault("h", h)
        r.metadata.setdefault("lam", cfg.lam)
        r.metadata.setdefault("Lam", cfg.Lam)
    return out


def _verify_one(args):
    cfg, cat, h, checks = args
    return _instance_checks(cfg, cat, h, checks)


def cmd_verify(cfg: ExperimentConfig, checks=None, workers: int = 1):
    """Run the checks on every (instance, solution); returns (reports, all_pass) and writes verify.csv."""
    checks = tuple(checks or cfg.checks)
    bad = [c for c in checks if c not in CHECKS]
    if bad:
        raise ConfigError(f"unknown check(s) {bad}; valid checks: {', '.join(CHECKS)}")
    per = [c for c in checks if c not in ("barrier", "csub")]
    reports = []
    if per:
        for rs in _map(_verify_one, [(cfg, c, h, per) for c, h in _jobs(cfg)], workers):
            reports += rs
    reports += _global_checks(cfg, cfg.h_levels[-1], checks)
    _write_reports(Path(cfg.out) / "verify.csv", reports)
    return reports, all(r.passed for r in reports)


# -- sweep -------------------------------------------------------------------------------------

SWEEP_FIELDS = ("instance", "check", "h", "value", "ratio", "order", "stable", "pass")


def cmd_sweep(cfg: ExperimentConfig, checks=None, workers: int = 1):
    """gen + solve + verify on every h level; per-level values with ratios and observed orders.

    Writes sweep.csv and returns (rows, all_pass).
    """
    if len(cfg.h_levels) < 2:
        raise ConfigError("a sweep needs at least 2 h levels")
    checks = tuple(checks or cfg.checks)
    cmd_gen(cfg, workers)
    solved, solve_ok = cmd_solve(cfg, workers)
    reports, _ = cmd_verify(cfg, checks, workers)
    rows = []
    ok = solve_ok
    by_cat = {}
    for cat, h, it, res, err, st in solved:
        by_cat.setdefault(cat, []).append((h, err, st))
    for cat in sorted(by_cat):
        prev = None
        for h, err, st in by_cat[cat]:
            order = ratio = math.nan
            if prev is not None and prev[1] > 0 and err > 0:
                ratio = err / prev[1]
                order = math.log(prev[1] / err) / math.log(prev[0] / h)
            rows.append([cat, "error", fmt(h), fmt(err), fmt(ratio), fmt(order), "", fmt(st == "ok")])
            prev = (h, err)
    series = {}
    per_instance = lambda r: ":" in r.name and r.name.split(":", 1)[0] in checks
    for r in reports:
        if not per_instance(r):
            continue
        check, cat = r.name.split(":", 1)
        series.setdefault((cat, check), []).append(r)
        if check == "holder":
            series.setdefault((cat, "holder_alpha"), []).append(r)
    for (cat, check) in sorted(series):
        prev = None
        for r in series[(cat, check)]:
            h = r.metadata.get("h")
            val = r.metadata.get("alpha") if check == "holder_alpha" else r.empirical_constant
            ratio = val / prev if prev not in (None, 0) and val is not None else math.nan
            stable = True
            if check in STABLE_CHECKS and prev is not None:
                stable = mesh_stable(prev, val, estimates.MESH_TOL)
            passed = bool(r.passed and stable)
            ok = ok and passed
            rows.append([cat, check, fmt(h), fmt(val), fmt(ratio), "", fmt(stable), fmt(passed)])
            prev = val
    for r in reports:
        if per_instance(r):
            continue
        ok = ok and r.passed
        rows.append(["", r.name, fmt(r.metadata.get("h")), fmt(r.empirical_constant), "", "", "",
                     fmt(bool(r.passed))])
    _write_csv(Path(cfg.out) / "sweep.csv", SWEEP_FIELDS, rows)
    return rows, ok


# -- report ------------------------------------------------------------------------------------

REPORT_FIELDS = ("file", "rows", "passed", "failed")


def cmd_report(cfg: ExperimentConfig):
    """Summarize every CSV with a ``pass`` column under ``out``; writes summary.csv."""
    root = Path(cfg.out)
    rows, ok = [], True
    for path in sorted(root.glob("*.csv")):
        if path.name == "summary.csv":
            continue
        with path.open() as fh:
            data = list(csv.DictReader(fh))
        if not data or "pass" not in data[0]:
            continue
        good = sum(1 for d in data if d["pass"] == "1")
        rows.append([path.name, len(data), good, len(data) - good])
        ok = ok and good == len(data)
    if not rows:
        raise MissingInputError(f"no report CSVs under {root}")
    text = _write_csv(root / "summary.csv", REPORT_FIELDS, rows)
    sys.stdout.write(text)
    return rows, ok


# -- entry point -------------------------------------------------------------------------------

def _setup_logging():
    level = os.environ.get("CPLXV_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise ConfigError("CPLXV_LOG must be one of error, info, debug")
    logging.basicConfig(level=levels[level], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cplxv", description=__doc__.splitlines()[0])
    ap.add_argument("verb", choices=("gen", "solve", "verify", "sweep", "report"))
    ap.add_argument("--config", help="flat key = value config file")
    ap.add_argument("--out", help="output directory (overrides the config)")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--seed", type=int, help="RNG seed (overrides the config)")
    ap.add_argument("--check", action="append", choices=CHECKS, help="check to run (repeatable)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _setup_logging()
        cfg = load_config(args.config, out=args.out, seed=args.seed)
        if args.verb == "gen":
            for p in cmd_gen(cfg, args.workers):
                print(p)
            return 0
        if args.verb == "solve":
            return 0 if cmd_solve(cfg, args.workers)[1] else 1
        if args.verb == "verify":
            return 0 if cmd_verify(cfg, args.check, args.workers)[1] else 1
        if args.verb == "sweep":
            return 0 if cmd_sweep(cfg, args.check, args.workers)[1] else 1
        return 0 if cmd_report(cfg)[1] else 1
    except (ConfigError, MissingInputError, KeyError) as exc:
        print(f"cplxv: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
