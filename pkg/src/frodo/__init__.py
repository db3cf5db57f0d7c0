"""Out-of-distribution detection from intermediate feature activations.

Fits per-layer Gaussian statistics over pooled activations of a trained
network and scores new samples by squared Mahalanobis distance, with a
max-softmax baseline and ROC/AUC evaluation.
"""

from .errors import FrodoError
from .gaussian_stats import (
    LayerStats,
    PooledFeature,
    fit_stats,
    load_stats_bundle,
    mahalanobis_sq,
    pool_spatial,
    save_stats_bundle,
)
from .evaluation import (
    LabeledScore,
    RocResult,
    confusion_at,
    roc_auc,
    threshold_at_sensitivity,
)
from .scoring import (
    CalibrationStats,
    FrodoScore,
    FusionRule,
    baseline_msp,
    fit_calibration,
    score_sample,
)
from .tensor_io import (
    FeatureTensor,
    Manifest,
    ManifestRecord,
    read_manifest,
    read_tensor,
    write_manifest,
    write_tensor,
)

__version__ = "0.1.0"
