"""FTEN tensor files and dataset manifests.

FTEN layout (little-endian): 4-byte magic "FTEN", u16 version (=1),
u8 dtype code (=1, float32), u8 ndim (1, 2, or 3), then ndim u32 dims,
then the row-major float32 payload. ndim=3 tensors are (H, W, C)
activation blocks; ndim=1 is used for pooled/softmax vectors and ndim=2
for covariance matrices.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadLabel,
    CorruptFile,
    DuplicateSample,
    FormatError,
    IoError,
    MissingColumn,
    NonFiniteData,
    ShapeError,
)
from .layers import LAYER_ORDER, expected_channels

MAGIC = b"FTEN"
VERSION = 1
DTYPE_F32 = 1
_HEADER = struct.Struct("<4sHBB")

VALID_LABELS = ("in", "ood", "unlabeled")

MANIFEST_COLUMNS = ("sample_id", "label") + LAYER_ORDER + ("softmax",)


@dataclass(frozen=True)
class FeatureTensor:
    """One sample's raw activation block at one layer, shape (H, W, C)."""

    data: np.ndarray  # float32, ndim == 3

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 3:
            raise ShapeError(f"feature tensor must be (H, W, C), got ndim={arr.ndim}")
        if min(arr.shape) < 1:
            raise ShapeError(f"all dims must be >= 1, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise NonFiniteData("feature tensor contains NaN or Inf")
        object.__setattr__(self, "data", arr)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape


def write_array(arr: np.ndarray, path: str | Path) -> None:
    """Write a 1-, 2-, or 3-d float32 array as an FTEN file."""
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    if arr.ndim not in (1, 2, 3):
        raise ShapeError(f"FTEN supports ndim 1-3, got {arr.ndim}")
    if not np.isfinite(arr).all():
        raise NonFiniteData(f"refusing to write non-finite data to {path}")
    header = _HEADER.pack(MAGIC, VERSION, DTYPE_F32, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    try:
        with open(path, "wb") as f:
            f.write(header)
            f.write(dims)
            f.write(arr.tobytes(order="C"))
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def read_array(path: str | Path) -> np.ndarray:
    """Read an FTEN file back into a float32 array."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    if len(raw) < _HEADER.size:
        raise CorruptFile(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, dtype, ndim = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if dtype != DTYPE_F32:
        raise FormatError(f"{path}: unsupported dtype code {dtype}")
    if ndim not in (1, 2, 3):
        raise FormatError(f"{path}: invalid ndim {ndim}")
    off = _HEADER.size
    if len(raw) < off + 4 * ndim:
        raise CorruptFile(f"{path}: truncated dims")
    dims = struct.unpack_from(f"<{ndim}I", raw, off)
    off += 4 * ndim
    if min(dims) < 1:
        raise CorruptFile(f"{path}: zero dimension in {dims}")
    count = int(np.prod(dims))
    if len(raw) - off != 4 * count:
        raise CorruptFile(
            f"{path}: payload is {len(raw) - off} bytes, expected {4 * count}"
        )
    arr = np.frombuffer(raw, dtype="<f4", offset=off, count=count).reshape(dims)
    if not np.isfinite(arr).all():
        raise NonFiniteData(f"{path}: payload contains NaN or Inf")
    return arr.copy()


def write_tensor(tensor: FeatureTensor, path: str | Path) -> None:
    write_array(tensor.data, path)


def read_tensor(path: str | Path) -> FeatureTensor:
    arr = read_array(path)
    if arr.ndim != 3:
        raise ShapeError(f"{path}: expected a 3-d activation block, got ndim={arr.ndim}")
    return FeatureTensor(arr)


# -- manifest -----------------------------------------------------------------

@dataclass(frozen=True)
class ManifestRecord:
    sample_id: str
    label: str  # in | ood | unlabeled
    tensor_paths: dict[str, Path] = field(default_factory=dict)
    softmax_path: Path | None = None


@dataclass(frozen=True)
class Manifest:
    records: tuple[ManifestRecord, ...]
    base_dir: Path

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)


def read_manifest(path: str | Path) -> Manifest:
    """Parse and structurally validate a manifest CSV.

    Paths in the CSV are resolved relative to the manifest's directory.
    Channel counts of referenced tensors are checked lazily at load time
    (see load_layer_tensor), not here.
    """
    path = Path(path)
    try:
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames is None:
                raise MissingColumn(f"{path}: empty manifest")
            for col in MANIFEST_COLUMNS:
                if col not in reader.fieldnames:
                    raise MissingColumn(f"{path}: missing column {col!r}")
            rows = list(reader)
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e

    base = path.parent
    seen: set[str] = set()
    records = []
    for row in rows:
        sid = (row["sample_id"] or "").strip()
        if not sid:
            raise BadLabel(f"{path}: empty sample_id")
        if sid in seen:
            raise DuplicateSample(f"{path}: duplicate sample_id {sid!r}")
        seen.add(sid)
        label = (row["label"] or "").strip()
        if label not in VALID_LABELS:
            raise BadLabel(f"{path}: sample {sid!r} has unknown label {label!r}")
        tensor_paths = {}
        for layer in LAYER_ORDER:
            cell = (row[layer] or "").strip()
            if cell:
                tensor_paths[layer] = base / cell
        softmax_cell = (row["softmax"] or "").strip()
        softmax_path = base / softmax_cell if softmax_cell else None
        records.append(ManifestRecord(sid, label, tensor_paths, softmax_path))
    return Manifest(tuple(records), base)


def write_manifest(manifest: Manifest, path: str | Path) -> None:
    """Write a manifest CSV; paths are stored relative to the CSV's directory."""
    path = Path(path)
    base = path.parent
    try:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(MANIFEST_COLUMNS)
            for rec in manifest.records:
                cells = [rec.sample_id, rec.label]
                for layer in LAYER_ORDER:
                    p = rec.tensor_paths.get(layer)
                    cells.append(_relativize(p, base) if p else "")
                cells.append(_relativize(rec.softmax_path, base) if rec.softmax_path else "")
                writer.writerow(cells)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def _relativize(p: Path, base: Path) -> str:
    try:
        return p.relative_to(base).as_posix()
    except ValueError:
        return str(p)


def load_layer_tensor(record: ManifestRecord, layer: str) -> FeatureTensor:
    """Load one layer's tensor for a manifest record, checking channels."""
    if layer not in record.tensor_paths:
        raise MissingColumn(f"sample {record.sample_id!r} has no {layer} tensor")
    tensor = read_tensor(record.tensor_paths[layer])
    want = expected_channels(layer)
    if tensor.dims[2] != want:
        raise ShapeError(
            f"sample {record.sample_id!r} {layer}: C={tensor.dims[2]}, expected {want}"
        )
    return tensor


def load_softmax(record: ManifestRecord) -> np.ndarray:
    if record.softmax_path is None:
        raise MissingColumn(f"sample {record.sample_id!r} has no softmax vector")
    arr = read_array(record.softmax_path)
    if arr.ndim != 1:
        raise ShapeError(
            f"sample {record.sample_id!r}: softmax must be 1-d, got ndim={arr.ndim}"
        )
    return arr
