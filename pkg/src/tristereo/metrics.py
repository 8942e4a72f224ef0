"""Disparity error metrics over valid ground-truth pixels."""

from __future__ import annotations

from dataclasses import astuple, dataclass, fields

import numpy as np

from .geometry import DisparityMap

CSV_HEADER = "epe,d1,px1,mre,px_re_1,n_valid"


class EmptyEvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class MetricsReport:
    epe: float
    d1: float  # percent
    px1: float  # percent
    mre: float
    px_re_1: float  # percent
    n_valid: int

    def csv_row(self) -> str:
        vals = [f"{v:.6g}" for v in astuple(self)[:-1]]
        return ",".join(vals + [str(self.n_valid)])

    @classmethod
    def from_csv_row(cls, row: str) -> "MetricsReport":
        parts = row.strip().split(",")
        if len(parts) != len(fields(cls)):
            raise ValueError(f"expected {len(fields(cls))} columns, got {len(parts)}")
        return cls(*map(float, parts[:-1]), int(parts[-1]))


def evaluate(gt: DisparityMap, dh: DisparityMap, d1_conjunctive: bool = False) -> MetricsReport:
    """Errors over pixels where the ground truth is valid and positive.

    D1 flags a pixel when the error reaches 3 px *or* 5 % of the truth; the
    conjunctive switch selects the stricter "and" form.
    """
    if gt.shape != dh.shape:
        raise ValueError(f"shape mismatch: gt {gt.shape} vs estimate {dh.shape}")
    valid = gt.valid & (gt.values > 0)
    n = int(valid.sum())
    if n == 0:
        raise EmptyEvaluationError("no valid ground-truth pixels to evaluate")
    g = gt.values[valid].astype(np.float64)
    e = np.abs(g - dh.values[valid].astype(np.float64))
    rel = e / g
    big_abs, big_rel = e >= 3.0, e >= 0.05 * g
    bad = (big_abs & big_rel) if d1_conjunctive else (big_abs | big_rel)
    return MetricsReport(
        epe=float(e.mean()),
        d1=100.0 * float(bad.mean()),
        px1=100.0 * float((e >= 1.0).mean()),
        mre=float(rel.mean()),
        px_re_1=100.0 * float((rel >= 1.0).mean()),
        n_valid=n,
    )
