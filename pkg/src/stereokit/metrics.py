"""Disparity evaluation metrics: end-point error, D1 and k-pixel error rates.

All metrics are computed over a validity mask with strict (>) thresholds and
percentages in [0, 100].  Reports from disjoint pixel sets combine exactly via
valid-pixel-count weighting.
"""

from dataclasses import dataclass

import numpy as np

from .losses import EmptyMaskError


@dataclass
class MetricsReport:
    epe: float
    d1: float
    px3: float
    px2: float
    px1: float
    valid_count: int

    COLUMNS = ("EPE(px)", "D1(%)", "3px(%)", "2px(%)", "1px(%)")

    def values(self):
        return (self.epe, self.d1, self.px3, self.px2, self.px1)

    def to_text_table(self) -> str:
        header = " | ".join(f"{c:>8s}" for c in self.COLUMNS)
        row = " | ".join(f"{v:8.2f}" for v in self.values())
        return f"{header}\n{row}"

    def to_records(self) -> str:
        keys = ("epe", "d1", "px3", "px2", "px1", "valid_count")
        vals = (*self.values(), self.valid_count)
        return "\n".join(f"{k}={v}" for k, v in zip(keys, vals))


def _masked_abs_errors(pred, gt, mask):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyMaskError("no valid pixels in mask")
    return np.abs(pred[mask] - gt[mask]), gt[mask]


def compute_epe(pred, gt, mask) -> float:
    """Mean absolute disparity error (pixels) over the mask."""
    err, _ = _masked_abs_errors(pred, gt, mask)
    return float(err.mean())


def compute_kpx(pred, gt, mask, k: int) -> float:
    """Percentage of masked pixels with error strictly greater than k pixels."""
    err, _ = _masked_abs_errors(pred, gt, mask)
    return float(100.0 * (err > k).mean())


def compute_d1(pred, gt, mask) -> float:
    """Percentage of masked pixels with error > 3 px and > 5% of ground truth."""
    err, gtv = _masked_abs_errors(pred, gt, mask)
    return float(100.0 * ((err > 3.0) & (err > 0.05 * gtv)).mean())


def metrics_report(pred, gt, max_disparity: int, mask=None) -> MetricsReport:
    """Full metric set over the validity mask (0 < gt < max_disparity)."""
    gt_arr = np.asarray(gt, dtype=np.float64)
    if mask is None:
        mask = (gt_arr > 0) & (gt_arr < max_disparity)
    else:
        mask = np.asarray(mask, dtype=bool) & (gt_arr > 0) & (gt_arr < max_disparity)
    return MetricsReport(
        epe=compute_epe(pred, gt, mask),
        d1=compute_d1(pred, gt, mask),
        px3=compute_kpx(pred, gt, mask, 3),
        px2=compute_kpx(pred, gt, mask, 2),
        px1=compute_kpx(pred, gt, mask, 1),
        valid_count=int(np.count_nonzero(mask)),
    )


def combine_reports(reports) -> MetricsReport:
    """Valid-count-weighted pooling, equal to metrics over the concatenated pixels."""
    reports = list(reports)
    if not reports:
        raise EmptyMaskError("no reports to combine")
    total = sum(r.valid_count for r in reports)
    if total == 0:
        raise EmptyMaskError("no valid pixels across reports")

    def pooled(attr):
        return sum(getattr(r, attr) * r.valid_count for r in reports) / total

    return MetricsReport(
        epe=pooled("epe"), d1=pooled("d1"), px3=pooled("px3"),
        px2=pooled("px2"), px1=pooled("px1"), valid_count=total,
    )
