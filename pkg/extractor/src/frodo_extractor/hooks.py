"""Hook points on a ResNet-50 for per-layer activation capture.

L1 is the post-activation output of the stem convolution (before the
max-pool); L2-L5 are the outputs of the four residual stages, i.e. the
deepest block at each spatial resolution. All captures are
post-activation, which is what the following layers consume.
"""

from dataclasses import dataclass

import torch

from frodo.layers import LAYER_CHANNELS, LAYER_SPATIAL

# layer name -> attribute path inside torchvision's ResNet
HOOK_POINTS: dict[str, str] = {
    "L1": "relu",
    "L2": "layer1",
    "L3": "layer2",
    "L4": "layer3",
    "L5": "layer4",
}


@dataclass(frozen=True)
class HookSpec:
    layer: str
    module_path: str
    expected_channels: int
    expected_spatial: tuple[int, int]  # for 224x224 inputs


HOOK_SPECS: dict[str, HookSpec] = {
    name: HookSpec(name, path, LAYER_CHANNELS[name], LAYER_SPATIAL[name])
    for name, path in HOOK_POINTS.items()
}


class ActivationCapture:
    """Registers forward hooks and collects one batch of activations."""

    def __init__(self, model: torch.nn.Module):
        self.model = model
        self.activations: dict[str, torch.Tensor] = {}
        self._handles = []
        for spec in HOOK_SPECS.values():
            module = model.get_submodule(spec.module_path)
            self._handles.append(
                module.register_forward_hook(self._make_hook(spec.layer))
            )

    def _make_hook(self, layer: str):
        def hook(_module, _inputs, output):
            self.activations[layer] = output.detach()

        return hook

    def run(self, batch: torch.Tensor) -> tuple[dict[str, torch.Tensor], torch.Tensor]:
        """Forward a batch; returns (per-layer NCHW activations, logits)."""
        self.activations = {}
        with torch.no_grad():
            logits = self.model(batch)
        missing = [l for l in HOOK_SPECS if l not in self.activations]
        if missing:
            raise RuntimeError(f"hooks did not fire for layers: {missing}")
        return dict(self.activations), logits

    def close(self) -> None:
        for h in self._handles:
            h.remove()
        self._handles = []

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def validate_shapes(activations: dict[str, torch.Tensor]) -> None:
    """Hard-fail if any captured activation disagrees with the hook spec."""
    for layer, act in activations.items():
        spec = HOOK_SPECS[layer]
        _, c, h, w = act.shape
        if (h, w) != spec.expected_spatial or c != spec.expected_channels:
            raise RuntimeError(
                f"{layer}: got {c}x{h}x{w}, expected "
                f"{spec.expected_channels}x{spec.expected_spatial[0]}x{spec.expected_spatial[1]}"
            )
