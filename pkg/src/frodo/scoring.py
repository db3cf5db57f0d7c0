"""Per-sample scores: per-layer Mahalanobis distances, fusion, MSP baseline.

All scores are oriented so that higher means more out-of-distribution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    MissingCalibration,
    MissingStats,
    NotAProbabilityVector,
    ShapeError,
    ValidationError,
)
from .gaussian_stats import LayerStats, PooledFeature, mahalanobis_sq
from .layers import validate_layer


@dataclass(frozen=True)
class FusionRule:
    """How per-layer distances combine into one score.

    kind "single" passes through one layer's distance; "sum_raw" adds raw
    distances; "sum_z" adds robustly normalized distances (median/MAD).
    """

    kind: str  # single | sum_raw | sum_z
    layer: str | None = None

    def __post_init__(self):
        if self.kind not in ("single", "sum_raw", "sum_z"):
            raise ValidationError(f"unknown fusion rule {self.kind!r}")
        if self.kind == "single":
            if self.layer is None:
                raise ValidationError("single fusion requires a layer")
            validate_layer(self.layer)
        elif self.layer is not None:
            raise ValidationError(f"{self.kind} fusion takes no layer argument")

    @classmethod
    def parse(cls, text: str) -> "FusionRule":
        """Parse CLI syntax: "single:L3", "sum_raw", or "sum_z"."""
        if text.startswith("single:"):
            return cls("single", text.split(":", 1)[1])
        return cls(text)

    def __str__(self) -> str:
        return f"single:{self.layer}" if self.kind == "single" else self.kind


@dataclass(frozen=True)
class CalibrationStats:
    """Robust location/scale of in-distribution distances per layer."""

    per_layer: dict[str, tuple[float, float]]  # layer -> (median, MAD)

    def __post_init__(self):
        for layer, (loc, scale) in self.per_layer.items():
            if not scale > 0:
                raise ValidationError(f"{layer}: calibration scale must be > 0")


@dataclass(frozen=True)
class FrodoScore:
    sample_id: str
    per_layer: dict[str, float]
    fused: float
    fusion_rule: FusionRule


def fit_calibration(per_layer_distances: Mapping[str, Sequence[float]]) -> CalibrationStats:
    """Median and median-absolute-deviation per layer from in-distribution distances."""
    out = {}
    for layer, dists in per_layer_distances.items():
        arr = np.asarray(dists, dtype=np.float64)
        if arr.size == 0:
            raise ValidationError(f"{layer}: no calibration distances")
        med = float(np.median(arr))
        mad = float(np.median(np.abs(arr - med)))
        if mad == 0.0:
            raise ValidationError(f"{layer}: zero MAD, cannot normalize")
        out[layer] = (med, mad)
    return CalibrationStats(out)


def score_sample(
    stats_bundle: Mapping[str, LayerStats],
    features: Mapping[str, PooledFeature],
    rule: FusionRule,
    calib: CalibrationStats | None = None,
    sample_id: str = "",
) -> FrodoScore:
    """Squared Mahalanobis distance per layer plus the fused score."""
    per_layer: dict[str, float] = {}
    for layer, feat in features.items():
        if layer not in stats_bundle:
            raise MissingStats(f"no fitted statistics for layer {layer}")
        per_layer[layer] = mahalanobis_sq(stats_bundle[layer], feat)

    if rule.kind == "single":
        if rule.layer not in per_layer:
            raise MissingStats(f"fusion layer {rule.layer} not among scored layers")
        fused = per_layer[rule.layer]
    elif rule.kind == "sum_raw":
        fused = sum(per_layer.values())
    else:  # sum_z
        if calib is None:
            raise MissingCalibration("sum_z fusion requires calibration statistics")
        missing = [l for l in per_layer if l not in calib.per_layer]
        if missing:
            raise MissingCalibration(f"calibration missing layers: {missing}")
        fused = sum(
            (per_layer[l] - calib.per_layer[l][0]) / calib.per_layer[l][1]
            for l in per_layer
        )
    return FrodoScore(sample_id, per_layer, float(fused), rule)


def save_calibration(calib: CalibrationStats, path) -> None:
    import json

    payload = {
        "layers": {
            layer: {"location": loc, "scale": scale}
            for layer, (loc, scale) in sorted(calib.per_layer.items())
        }
    }
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def load_calibration(path) -> CalibrationStats:
    import json

    with open(path) as f:
        payload = json.load(f)
    return CalibrationStats(
        {
            layer: (float(v["location"]), float(v["scale"]))
            for layer, v in payload["layers"].items()
        }
    )


def baseline_msp(probs: Sequence[float]) -> float:
    """Max-softmax-probability baseline, reported as 1 - max(probs).

    The complement keeps every scorer oriented "higher = more OOD".
    """
    arr = np.asarray(probs, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 2:
        raise ShapeError(f"probability vector must be 1-d with length >= 2")
    if np.any(arr < 0) or np.any(arr > 1):
        raise NotAProbabilityVector("entries must lie in [0, 1]")
    if abs(arr.sum() - 1.0) > 1e-3:
        raise NotAProbabilityVector(f"entries sum to {arr.sum()}, not 1")
    return float(1.0 - arr.max())
