"""Per-layer Gaussian statistics and Mahalanobis scoring.

Activations are pooled spatially to a channel vector, a single Gaussian
is fitted per layer over the training set (streaming mean/co-moment
updates, one pass), the covariance is shrinkage-regularized toward a
trace-scaled identity, and squared Mahalanobis distance is evaluated via
the Cholesky factor with a triangular solve.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.linalg import solve_triangular

from .errors import (
    InsufficientSamples,
    IoError,
    NonFiniteData,
    ShapeError,
    SingularCovariance,
    ValidationError,
)
from .layers import expected_channels, validate_layer
from .tensor_io import FeatureTensor, read_array, write_array

BUNDLE_FORMAT_VERSION = 1

# jitter escalation bounds, as multiples of tr(sigma_lambda)/d
JITTER_START = 1e-10
JITTER_MAX = 1e-2


@dataclass(frozen=True)
class PooledFeature:
    """Per-sample observation vector: spatial mean of one layer's activations."""

    layer: str
    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ShapeError(f"pooled feature must be 1-d, got ndim={v.ndim}")
        if not np.isfinite(v).all():
            raise NonFiniteData(f"pooled feature for {self.layer} is non-finite")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class LayerStats:
    """Fitted Gaussian for one layer plus its regularized Cholesky factor."""

    layer: str
    d: int
    n: int
    mean: np.ndarray        # (d,)
    cov: np.ndarray         # (d, d), unregularized sample covariance (n-1 divisor)
    lam: float              # shrinkage weight in [0, 1]
    chol: np.ndarray        # lower Cholesky of (1-lam)*cov + lam*(tr/d)*I + jitter*I
    jitter_used: float


def pool_spatial(tensor: FeatureTensor, layer: str) -> PooledFeature:
    """Average over the spatial axes, yielding one value per channel."""
    validate_layer(layer)
    want = expected_channels(layer)
    if tensor.dims[2] != want:
        raise ShapeError(f"{layer}: tensor has C={tensor.dims[2]}, expected {want}")
    values = tensor.data.astype(np.float64).mean(axis=(0, 1))
    return PooledFeature(layer, values)


class StreamingMoments:
    """Single-pass mean and co-moment accumulator (Welford-style).

    Pairwise merge is exact, so sharded accumulation gives the same
    result as sequential up to floating-point association.
    """

    def __init__(self, d: int):
        self.d = d
        self.n = 0
        self.mean = np.zeros(d)
        self.comoment = np.zeros((d, d))  # sum of outer(x-mean_new, x-mean_old)

    def add(self, x: np.ndarray) -> None:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.d,):
            raise ShapeError(f"expected vector of length {self.d}, got {x.shape}")
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.comoment += np.outer(delta, x - self.mean)

    def merge(self, other: "StreamingMoments") -> None:
        if other.d != self.d:
            raise ShapeError("cannot merge accumulators of different dimension")
        if other.n == 0:
            return
        n_total = self.n + other.n
        delta = other.mean - self.mean
        self.comoment += other.comoment + np.outer(delta, delta) * (
            self.n * other.n / n_total
        )
        self.mean += delta * (other.n / n_total)
        self.n = n_total

    def covariance(self) -> np.ndarray:
        if self.n < 2:
            raise InsufficientSamples(f"need at least 2 samples, have {self.n}")
        cov = self.comoment / (self.n - 1)
        return (cov + cov.T) / 2.0  # symmetrize accumulated rounding


def regularized_covariance(cov: np.ndarray, lam: float) -> np.ndarray:
    """Shrink toward a trace-scaled identity: (1-lam)*cov + lam*(tr/d)*I."""
    d = cov.shape[0]
    return (1.0 - lam) * cov + lam * (np.trace(cov) / d) * np.eye(d)


def cholesky_with_jitter(
    sigma: np.ndarray, start_scale: float = JITTER_START, max_scale: float = JITTER_MAX
) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor, escalating a diagonal jitter on failure.

    Jitter starts at start_scale * tr(sigma)/d and doubles until either
    the factorization succeeds or max_scale * tr(sigma)/d is exceeded.
    Returns (chol, jitter_used); jitter_used is 0.0 when none was needed.
    """
    d = sigma.shape[0]
    try:
        return np.linalg.cholesky(sigma), 0.0
    except np.linalg.LinAlgError:
        pass
    base = np.trace(sigma) / d
    jitter = start_scale * base
    limit = max_scale * base
    while jitter <= limit and jitter > 0:
        try:
            chol = np.linalg.cholesky(sigma + jitter * np.eye(d))
            return chol, jitter
        except np.linalg.LinAlgError:
            jitter *= 2.0
    raise SingularCovariance(
        f"Cholesky failed up to jitter {max_scale} * tr/d (d={d})"
    )


def fit_stats(samples: Iterable[PooledFeature], lam: float = 0.01) -> LayerStats:
    """Fit per-layer Gaussian statistics from a stream of pooled features."""
    if not 0.0 <= lam <= 1.0:
        raise ValidationError(f"shrinkage weight must be in [0,1], got {lam}")
    acc: StreamingMoments | None = None
    layer = None
    for s in samples:
        if acc is None:
            layer = s.layer
            acc = StreamingMoments(len(s.values))
        elif s.layer != layer:
            raise ShapeError(f"mixed layers in fit stream: {layer} vs {s.layer}")
        acc.add(s.values)
    if acc is None or acc.n < 2:
        n = 0 if acc is None else acc.n
        raise InsufficientSamples(f"need at least 2 samples to fit, have {n}")
    cov = acc.covariance()
    sigma_lam = regularized_covariance(cov, lam)
    chol, jitter = cholesky_with_jitter(sigma_lam)
    return LayerStats(
        layer=layer,
        d=acc.d,
        n=acc.n,
        mean=acc.mean,
        cov=cov,
        lam=lam,
        chol=chol,
        jitter_used=jitter,
    )


def mahalanobis_sq(stats: LayerStats, x: PooledFeature) -> float:
    """Squared Mahalanobis distance of x to the fitted Gaussian.

    Computed as ||z||^2 with chol @ z = x - mean (forward substitution),
    which is exact for the regularized covariance and never negative.
    """
    if x.layer != stats.layer:
        raise ShapeError(f"feature layer {x.layer} != stats layer {stats.layer}")
    if len(x.values) != stats.d:
        raise ShapeError(f"feature has d={len(x.values)}, stats expect {stats.d}")
    diff = x.values - stats.mean
    z = solve_triangular(stats.chol, diff, lower=True, check_finite=False)
    return float(z @ z)


# -- on-disk stats bundle ------------------------------------------------------

def save_stats_bundle(bundle: dict[str, LayerStats], out_dir: str | Path) -> None:
    """Persist fitted statistics: per layer, meta.json + mean.ften + cov.ften.

    mean and covariance are stored as float32; the Cholesky diagonal
    checksum in meta.json is computed from the float32-rounded covariance
    so that load-time validation is self-consistent.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IoError(f"cannot create {out_dir}: {e}") from e
    for layer in sorted(bundle):
        stats = bundle[layer]
        layer_dir = out_dir / layer
        try:
            layer_dir.mkdir(exist_ok=True)
        except OSError as e:
            raise IoError(f"cannot create {layer_dir}: {e}") from e
        write_array(stats.mean, layer_dir / "mean.ften")
        write_array(stats.cov, layer_dir / "cov.ften")
        chol_diag = _recomputed_chol(stats)[0].diagonal()
        meta = {
            "format_version": BUNDLE_FORMAT_VERSION,
            "layer": stats.layer,
            "d": stats.d,
            "n": stats.n,
            "lambda": stats.lam,
            "jitter_used": stats.jitter_used,
            "chol_diag_head": [float(v) for v in chol_diag[:8]],
        }
        try:
            with open(layer_dir / "meta.json", "w") as f:
                json.dump(meta, f, indent=2, sort_keys=True)
                f.write("\n")
        except OSError as e:
            raise IoError(f"cannot write {layer_dir / 'meta.json'}: {e}") from e


def _recomputed_chol(stats: LayerStats) -> tuple[np.ndarray, np.ndarray]:
    """Cholesky as a loader would see it: from the float32-rounded covariance."""
    cov32 = stats.cov.astype(np.float32).astype(np.float64)
    cov32 = (cov32 + cov32.T) / 2.0
    sigma = regularized_covariance(cov32, stats.lam)
    if stats.jitter_used > 0:
        sigma = sigma + stats.jitter_used * np.eye(stats.d)
    try:
        return np.linalg.cholesky(sigma), cov32
    except np.linalg.LinAlgError:
        raise SingularCovariance(
            f"{stats.layer}: covariance not factorizable at recorded jitter"
        )


def load_stats_bundle(in_dir: str | Path) -> dict[str, LayerStats]:
    """Load a persisted bundle, recomputing and validating Cholesky factors."""
    in_dir = Path(in_dir)
    if not in_dir.is_dir():
        raise IoError(f"stats bundle directory not found: {in_dir}")
    bundle: dict[str, LayerStats] = {}
    for layer_dir in sorted(p for p in in_dir.iterdir() if p.is_dir()):
        meta_path = layer_dir / "meta.json"
        if not meta_path.exists():
            continue
        try:
            with open(meta_path) as f:
                meta = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise IoError(f"cannot read {meta_path}: {e}") from e
        if meta.get("format_version") != BUNDLE_FORMAT_VERSION:
            raise ValidationError(f"{meta_path}: unsupported format_version")
        layer = meta["layer"]
        mean = read_array(layer_dir / "mean.ften").astype(np.float64)
        cov = read_array(layer_dir / "cov.ften").astype(np.float64)
        cov = (cov + cov.T) / 2.0
        if cov.shape != (meta["d"], meta["d"]) or mean.shape != (meta["d"],):
            raise ShapeError(f"{layer_dir}: stored shapes disagree with meta.json")
        stats = LayerStats(
            layer=layer,
            d=int(meta["d"]),
            n=int(meta["n"]),
            mean=mean,
            cov=cov,
            lam=float(meta["lambda"]),
            chol=np.zeros((0, 0)),
            jitter_used=float(meta["jitter_used"]),
        )
        chol, _ = _recomputed_chol(stats)
        stored = np.asarray(meta["chol_diag_head"], dtype=np.float64)
        got = chol.diagonal()[: len(stored)]
        if not np.allclose(got, stored, rtol=1e-6, atol=0.0):
            raise ValidationError(
                f"{layer_dir}: Cholesky diagonal checksum mismatch"
            )
        bundle[layer] = LayerStats(
            layer=layer,
            d=stats.d,
            n=stats.n,
            mean=mean,
            cov=cov,
            lam=stats.lam,
            chol=chol,
            jitter_used=stats.jitter_used,
        )
    if not bundle:
        raise IoError(f"no layer statistics found under {in_dir}")
    return bundle


def bundle_digest(out_dir: str | Path) -> str:
    """SHA-256 over all bundle files, for determinism checks."""
    out_dir = Path(out_dir)
    h = hashlib.sha256()
    for p in sorted(out_dir.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(out_dir).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()
