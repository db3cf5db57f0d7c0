"""ROC curves, tie-corrected AUC, and sensitivity-targeted thresholds.

Positives are OOD samples throughout: sensitivity is OOD recall, a sample
is predicted OOD when its score is >= the threshold, and the AUC is the
Mann-Whitney rank statistic with ties counted as half.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateLabels, IoError, NonFiniteData, ValidationError


@dataclass(frozen=True)
class LabeledScore:
    sample_id: str
    score: float
    label: str  # in | ood

    def __post_init__(self):
        if self.label not in ("in", "ood"):
            raise ValidationError(f"label must be in/ood, got {self.label!r}")
        if not math.isfinite(self.score):
            raise NonFiniteData(f"sample {self.sample_id!r} has non-finite score")


@dataclass(frozen=True)
class RocResult:
    points: tuple[tuple[float, float, float], ...]  # (fpr, tpr, threshold)
    auc: float
    n_in: int
    n_ood: int


def roc_auc(scores: Sequence[LabeledScore]) -> RocResult:
    """ROC over observed thresholds plus the tie-corrected rank-statistic AUC.

    One curve point per distinct score value (descending sweep), preceded
    by (0, 0) at an unattainable threshold. The AUC is computed from
    average ranks, which equals exhaustive pairwise counting with ties
    worth one half.
    """
    y = np.array([s.label == "ood" for s in scores], dtype=bool)
    vals = np.array([s.score for s in scores], dtype=np.float64)
    n_ood = int(y.sum())
    n_in = int(len(y) - n_ood)
    if n_ood == 0 or n_in == 0:
        raise DegenerateLabels(f"need both classes, got {n_ood} ood / {n_in} in")

    ranks = rankdata(vals)  # average ranks over ties
    auc = (ranks[y].sum() - n_ood * (n_ood + 1) / 2.0) / (n_ood * n_in)

    order = np.argsort(-vals, kind="stable")
    sorted_vals = vals[order]
    sorted_y = y[order]
    points = [(0.0, 0.0, math.inf)]
    tp = fp = 0
    i = 0
    n = len(vals)
    while i < n:
        j = i
        while j < n and sorted_vals[j] == sorted_vals[i]:
            tp += bool(sorted_y[j])
            fp += not sorted_y[j]
            j += 1
        points.append((fp / n_in, tp / n_ood, float(sorted_vals[i])))
        i = j
    return RocResult(tuple(points), float(auc), n_in, n_ood)


def curve_area(points: Sequence[tuple[float, float, float]]) -> float:
    """Trapezoidal area under a (fpr, tpr, threshold) point list."""
    area = 0.0
    for (x0, y0, _), (x1, y1, _) in zip(points, points[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


def threshold_at_sensitivity(ood_scores: Sequence[float], target: float) -> float:
    """Largest observed score t with fraction(ood_scores >= t) >= target."""
    if not 0.0 < target <= 1.0:
        raise ValidationError(f"sensitivity target must be in (0,1], got {target}")
    arr = np.asarray(ood_scores, dtype=np.float64)
    if arr.size == 0:
        raise DegenerateLabels("no OOD scores to calibrate on")
    if not np.isfinite(arr).all():
        raise NonFiniteData("OOD scores contain NaN or Inf")
    n = arr.size
    for t in np.unique(arr)[::-1]:
        if np.count_nonzero(arr >= t) / n >= target:
            return float(t)
    return float(arr.min())  # target <= 1 always reachable at the minimum


def confusion_at(
    scores: Sequence[LabeledScore], threshold: float
) -> tuple[int, int, int, int]:
    """(tp, fp, tn, fn) under the rule "predict OOD iff score >= threshold"."""
    if not math.isfinite(threshold):
        raise ValidationError(f"threshold must be finite, got {threshold}")
    tp = fp = tn = fn = 0
    for s in scores:
        rejected = s.score >= threshold
        if s.label == "ood":
            tp += rejected
            fn += not rejected
        else:
            fp += rejected
            tn += not rejected
    return tp, fp, tn, fn


def emit_report(
    per_method: Mapping[str, RocResult],
    operating_points: Mapping[str, dict],
    out_json: str | Path,
    roc_dir: str | Path | None = None,
    config: dict | None = None,
) -> None:
    """Write the evaluation report JSON and one ROC CSV per method.

    Output is deterministic: methods sorted by name, fixed float
    formatting via repr, sorted JSON keys.
    """
    report = {
        "methods": {
            name: {"auc": res.auc, "n_in": res.n_in, "n_ood": res.n_ood}
            for name, res in sorted(per_method.items())
        },
        "operating_points": {k: operating_points[k] for k in sorted(operating_points)},
        "config": config or {},
    }
    out_json = Path(out_json)
    try:
        out_json.parent.mkdir(parents=True, exist_ok=True)
        with open(out_json, "w") as f:
            json.dump(report, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise IoError(f"cannot write {out_json}: {e}") from e

    if roc_dir is None:
        return
    roc_dir = Path(roc_dir)
    try:
        roc_dir.mkdir(parents=True, exist_ok=True)
        for name in sorted(per_method):
            with open(roc_dir / f"roc_{name}.csv", "w", newline="") as f:
                writer = csv.writer(f, lineterminator="\n")
                writer.writerow(["fpr", "tpr", "threshold"])
                for fpr, tpr, thr in per_method[name].points:
                    writer.writerow([repr(fpr), repr(tpr), repr(thr)])
    except OSError as e:
        raise IoError(f"cannot write ROC CSVs under {roc_dir}: {e}") from e
