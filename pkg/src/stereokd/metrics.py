"""Stereo evaluation metrics over valid pixels.

epe and avgerr are the same statistic (mean absolute error); bad-tau uses a
strict threshold; d1 additionally requires the error to exceed 5% of the
true disparity; a90 interpolates linearly between order statistics.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError, EmptyReductionError

BAD_TAUS = (0.5, 1.0, 2.0, 3.0)

CSV_COLUMNS = ("id", "n_valid", "epe", "bad_0_5", "bad_1_0", "bad_2_0", "bad_3_0",
               "avgerr", "a90", "d1")


@dataclass
class MetricsReport:
    epe: float
    bad: dict            # tau -> percentage
    avgerr: float
    a90: float
    d1: float
    n_valid: int
    errors: np.ndarray = field(default=None, repr=False)  # kept for pooled a90

    def row(self, image_id):
        vals = [image_id, str(self.n_valid)]
        for v in (self.epe, self.bad[0.5], self.bad[1.0], self.bad[2.0], self.bad[3.0],
                  self.avgerr, self.a90, self.d1):
            vals.append(f"{v:.6f}")
        return vals


def evaluate(pred, gt, valid):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    valid = np.asarray(valid)
    if pred.shape != gt.shape or pred.shape != valid.shape:
        raise DimensionError(
            f"evaluate shape mismatch: pred {pred.shape}, gt {gt.shape}, valid {valid.shape}")
    m = valid > 0
    n = int(m.sum())
    if n == 0:
        raise EmptyReductionError("no valid pixels to evaluate")
    err = np.abs(pred[m] - gt[m])
    bad = {tau: 100.0 * float(np.mean(err > tau)) for tau in BAD_TAUS}
    mean_err = float(err.mean())
    d1 = 100.0 * float(np.mean((err > 3.0) & (err > 0.05 * gt[m])))
    return MetricsReport(epe=mean_err, bad=bad, avgerr=mean_err,
                         a90=float(np.percentile(err, 90)), d1=d1, n_valid=n, errors=err)


def aggregate(reports, pooled=True):
    """Pixel-weighted aggregate; a90 from pooled errors when available."""
    if not reports:
        raise ContractError("aggregate of an empty report list")
    weights = np.array([r.n_valid for r in reports], dtype=np.float64)
    total = weights.sum()

    def wmean(vals):
        return float(np.dot(np.asarray(vals, dtype=np.float64), weights) / total)

    if pooled and all(r.errors is not None for r in reports):
        a90 = float(np.percentile(np.concatenate([r.errors for r in reports]), 90))
        pooled_errors = None  # aggregate keeps no per-pixel buffer
    else:
        a90 = wmean([r.a90 for r in reports])
        pooled_errors = None
    return MetricsReport(
        epe=wmean([r.epe for r in reports]),
        bad={tau: wmean([r.bad[tau] for r in reports]) for tau in BAD_TAUS},
        avgerr=wmean([r.avgerr for r in reports]),
        a90=a90,
        d1=wmean([r.d1 for r in reports]),
        n_valid=int(total),
        errors=pooled_errors)


def write_csv(path, rows):
    """rows: iterable of (image_id, MetricsReport); appends the aggregate row."""
    rows = list(rows)
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(CSV_COLUMNS)
        for image_id, rep in rows:
            wr.writerow(rep.row(image_id))
        if rows:
            wr.writerow(aggregate([rep for _, rep in rows]).row("aggregate"))
