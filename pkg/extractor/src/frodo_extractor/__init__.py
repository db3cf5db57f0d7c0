"""Activation extraction bridge: images + ResNet-50 -> FTEN files + manifest."""

from .extract import extract, load_model
from .hooks import HOOK_SPECS, ActivationCapture

__version__ = "0.1.0"
