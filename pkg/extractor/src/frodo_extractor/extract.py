"""Batch extraction of FTEN activation files and a manifest from images.

Preprocessing is fixed: decode to RGB, resize to 224x224 (bilinear),
scale to [0,1], normalize with the ImageNet mean/std. Activations are
written channel-last (H, W, C) as float32 FTEN files; the classifier
output becomes a 1-d probability FTEN ([p, 1-p] for a single-logit
head, softmax otherwise).
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError
from torchvision import models, transforms

from frodo.layers import LAYER_ORDER
from frodo.tensor_io import Manifest, ManifestRecord, write_array, write_manifest

from .hooks import ActivationCapture, validate_shapes

log = logging.getLogger(__name__)

IMAGE_SIZE = 224
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

PREPROCESS = transforms.Compose(
    [
        transforms.Resize((IMAGE_SIZE, IMAGE_SIZE)),
        transforms.ToTensor(),
        transforms.Normalize(IMAGENET_MEAN, IMAGENET_STD),
    ]
)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


def load_model(checkpoint: str | Path | None, device: torch.device) -> torch.nn.Module:
    """ResNet-50 with an optional checkpoint.

    A checkpoint may be a full pickled module or a state_dict; a
    state_dict with a 1-unit fc head is accepted (binary classifier).
    Without a checkpoint, ImageNet weights are used.
    """
    if checkpoint is None:
        model = models.resnet50(weights=models.ResNet50_Weights.IMAGENET1K_V2)
    else:
        loaded = torch.load(checkpoint, map_location="cpu", weights_only=False)
        if isinstance(loaded, torch.nn.Module):
            model = loaded
        else:
            state = loaded.get("state_dict", loaded)
            fc_out = state["fc.weight"].shape[0]
            model = models.resnet50(weights=None, num_classes=fc_out)
            model.load_state_dict(state)
    model.eval()
    return model.to(device)


def logits_to_probs(logits: torch.Tensor) -> np.ndarray:
    """Probability vector per sample; single-logit heads become [p, 1-p]."""
    if logits.shape[1] == 1:
        p = torch.sigmoid(logits[:, 0])
        return torch.stack([p, 1 - p], dim=1).cpu().numpy()
    return torch.softmax(logits, dim=1).cpu().numpy()


def list_images(image_dir: str | Path) -> list[Path]:
    image_dir = Path(image_dir)
    return sorted(
        p for p in image_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
    )


def extract(
    image_dir: str | Path,
    out_dir: str | Path,
    checkpoint: str | Path | None = None,
    limit: int | None = None,
    batch_size: int = 8,
    device: str = "auto",
) -> Path:
    """Run the model over a directory of images; returns the manifest path."""
    if device == "auto":
        device = "cuda" if torch.cuda.is_available() else "cpu"
    dev = torch.device(device)
    model = load_model(checkpoint, dev)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images = list_images(image_dir)
    if limit is not None:
        images = images[:limit]
    if not images:
        raise FileNotFoundError(f"no images found under {image_dir}")

    records: list[ManifestRecord] = []
    with ActivationCapture(model) as capture:
        for start in range(0, len(images), batch_size):
            chunk = images[start : start + batch_size]
            tensors, kept = [], []
            for path in chunk:
                try:
                    with Image.open(path) as img:
                        tensors.append(PREPROCESS(img.convert("RGB")))
                    kept.append(path)
                except (UnidentifiedImageError, OSError) as e:
                    log.warning("skipping %s: %s", path.name, e)
            if not kept:
                continue
            batch = torch.stack(tensors).to(dev)
            activations, logits = capture.run(batch)
            validate_shapes(activations)
            probs = logits_to_probs(logits)
            for i, path in enumerate(kept):
                records.append(
                    _write_sample(out_dir, path.stem, activations, probs[i], i)
                )

    manifest_path = out_dir / "manifest.csv"
    write_manifest(Manifest(tuple(records), out_dir), manifest_path)
    log.info("extracted %d samples -> %s", len(records), manifest_path)
    return manifest_path


def _write_sample(out_dir, sample_id, activations, probs, batch_index) -> ManifestRecord:
    tensor_paths = {}
    for layer in LAYER_ORDER:
        # NCHW -> (H, W, C)
        arr = activations[layer][batch_index].permute(1, 2, 0).cpu().numpy()
        path = out_dir / f"{sample_id}_{layer}.ften"
        write_array(np.ascontiguousarray(arr, dtype=np.float32), path)
        tensor_paths[layer] = path
    softmax_path = out_dir / f"{sample_id}_softmax.ften"
    write_array(probs.astype(np.float32), softmax_path)
    return ManifestRecord(sample_id, "unlabeled", tensor_paths, softmax_path)
