"""Registry of the five feature-extraction hook points.

L1 is the first convolution of a 50-layer residual network; L2-L5 are the
deepest residual blocks at each successive spatial resolution. The
channel counts are fixed by the architecture.
"""

from .errors import ShapeError

# name -> expected channel count, in pipeline order
LAYER_CHANNELS: dict[str, int] = {
    "L1": 64,
    "L2": 256,
    "L3": 512,
    "L4": 1024,
    "L5": 2048,
}

LAYER_ORDER: tuple[str, ...] = tuple(LAYER_CHANNELS)

# expected spatial dims (H, W) per layer for a 224x224 input
LAYER_SPATIAL: dict[str, tuple[int, int]] = {
    "L1": (112, 112),
    "L2": (56, 56),
    "L3": (28, 28),
    "L4": (14, 14),
    "L5": (7, 7),
}


def expected_channels(layer: str) -> int:
    try:
        return LAYER_CHANNELS[layer]
    except KeyError:
        raise ShapeError(f"unknown layer {layer!r}; expected one of {LAYER_ORDER}")


def validate_layer(layer: str) -> str:
    expected_channels(layer)
    return layer
