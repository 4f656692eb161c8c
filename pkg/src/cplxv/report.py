"""Verification reports and their CSV serialization."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

CSV_FIELDS = ("name", "n", "h", "lambda", "Lambda", "p", "lhs", "rhs", "constant", "pass")


def fmt(x) -> str:
    """Locale-free float formatting with 17 significant digits."""
    if isinstance(x, bool):
        return "1" if x else "0"
    if x is None:
        return ""
    if isinstance(x, int):
        return str(x)
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


@dataclass
class EstimateReport:
    """One verified inequality.

    ``passed`` is decided by the producing check; the default rule is
    ``lhs <= rhs * (1 + tolerance)``.
    """

    name: str
    lhs: float
    rhs: float
    empirical_constant: float
    tolerance: float
    passed: bool
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_bound(cls, name, lhs, rhs, tolerance, **metadata):
        const = lhs / rhs if rhs > 0 else (0.0 if lhs <= 0 else math.inf)
        return cls(name, lhs, rhs, const, tolerance, lhs <= rhs * (1 + tolerance), metadata)

    def row(self) -> dict:
        m = self.metadata
        return {
            "name": self.name,
            "n": fmt(m.get("n")),
            "h": fmt(m.get("h")),
            "lambda": fmt(m.get("lam")),
            "Lambda": fmt(m.get("Lam")),
            "p": fmt(m.get("p")),
            "lhs": fmt(self.lhs),
            "rhs": fmt(self.rhs),
            "constant": fmt(self.empirical_constant),
            "pass": fmt(bool(self.passed)),
        }


def reports_to_csv(reports, fh=None) -> str:
    out = fh if fh is not None else io.StringIO()
    w = csv.DictWriter(out, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.row())
    return out.getvalue() if fh is None else ""


def mesh_stable(coarse: float, fine: float, tol: float = 0.2) -> bool:
    """Relative change between consecutive mesh levels is at most ``tol``."""
    if not (math.isfinite(coarse) and math.isfinite(fine)):
        return False
    scale = max(abs(coarse), abs(fine))
    if scale == 0:
        return True
    return abs(coarse - fine) <= tol * scale


def family_spread(values) -> float:
    vals = [float(v) for v in values]
    if not vals or min(vals) <= 0:
        return math.inf
    return max(vals) / min(vals)
