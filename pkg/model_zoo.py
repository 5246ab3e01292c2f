"""
Model Zoo Module

This module handles:
- The shared feature extractor G (small strided conv stack)
- Heatmap regression heads (two transposed-conv blocks + 1x1 projection)
- The three structural variants:
    baseline  G + inference head F + adversarial head F_a
    idf       adds explicit specific heads F' and F'_a
    aidf      adds explicit intermediate heads (specific = head - intermediate)
- Parameter-group addressing {G, F, F_spec, F_a, F_a_spec} for stage-wise updates

Group names: "F_spec" is F', "F_a_spec" is F'_a. For aidf those two slots
hold the explicit intermediate heads.
"""

import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn


GROUPS = ("G", "F", "F_spec", "F_a", "F_a_spec")
HEAD_GROUPS = GROUPS[1:]
VARIANTS = ("baseline", "aidf", "idf")

# each head doubles the resolution this many times
HEAD_UPSAMPLES = 2


class ModelSpecError(ValueError):
    """Invalid model specification or parameter-group request."""


@dataclass
class BackboneSpec:
    """Input shape (C, H, W), feature width and number of stride-2 blocks."""
    input_shape: Tuple[int, int, int] = (3, 64, 64)
    feature_channels: int = 32
    depth: int = 4

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ModelSpecError(f"input_shape must be (C, H, W), got {self.input_shape}")
        if self.feature_channels < 1 or self.depth < 1:
            raise ModelSpecError("feature_channels and depth must be positive")

    def feature_size(self) -> Tuple[int, int]:
        _, height, width = self.input_shape
        factor = 2 ** self.depth
        if height % factor or width % factor:
            raise ModelSpecError(
                f"input {height}x{width} is not divisible by 2^{self.depth} = {factor}"
            )
        return height // factor, width // factor


@dataclass
class HeadOutputs:
    """
    All head outputs for one batch, each (B, K, H', W').

    intermediate = inference - inference_specific and
    adversarial_intermediate = adversarial - adversarial_specific, exactly.
    """
    inference: torch.Tensor
    inference_specific: torch.Tensor
    adversarial: torch.Tensor
    adversarial_specific: torch.Tensor
    intermediate: torch.Tensor
    adversarial_intermediate: torch.Tensor

    @classmethod
    def from_heads(cls, inference, inference_specific, adversarial, adversarial_specific) -> "HeadOutputs":
        return cls(
            inference=inference,
            inference_specific=inference_specific,
            adversarial=adversarial,
            adversarial_specific=adversarial_specific,
            intermediate=inference - inference_specific,
            adversarial_intermediate=adversarial - adversarial_specific,
        )


def _norm(channels: int) -> nn.GroupNorm:
    # per-sample statistics
    return nn.GroupNorm(math.gcd(4, channels), channels)


class FeatureExtractor(nn.Module):
    """G: a stem convolution followed by `depth` stride-2 blocks."""

    def __init__(self, spec: BackboneSpec):
        super().__init__()
        in_channels = spec.input_shape[0]
        width = spec.feature_channels
        layers = [nn.Conv2d(in_channels, width, 3, padding=1), _norm(width), nn.ReLU(inplace=True)]
        for _ in range(spec.depth):
            layers += [nn.Conv2d(width, width, 3, stride=2, padding=1), _norm(width), nn.ReLU(inplace=True)]
        self.layers = nn.Sequential(*layers)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.layers(images)


class RegressionHead(nn.Module):
    """Two transposed-conv upsampling blocks and a 1x1 projection to K heatmaps."""

    def __init__(self, channels: int, num_joints: int):
        super().__init__()
        layers = []
        for _ in range(HEAD_UPSAMPLES):
            layers += [nn.ConvTranspose2d(channels, channels, 4, stride=2, padding=1), _norm(channels),
                       nn.ReLU(inplace=True)]
        self.upsample = nn.Sequential(*layers)
        self.project = nn.Conv2d(channels, num_joints, 1)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return self.project(self.upsample(features))


def _init_module(module: nn.Module):
    for layer in module.modules():
        if isinstance(layer, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.kaiming_normal_(layer.weight, mode='fan_in', nonlinearity='relu')
            nn.init.zeros_(layer.bias)
        elif isinstance(layer, nn.GroupNorm):
            nn.init.ones_(layer.weight)
            nn.init.zeros_(layer.bias)
    if isinstance(module, RegressionHead):
        # final projection is linear
        nn.init.kaiming_normal_(module.project.weight, mode='fan_in', nonlinearity='linear')


def _component_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def heads_for_variant(variant: str) -> Tuple[str, ...]:
    if variant not in VARIANTS:
        raise ModelSpecError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
    if variant == "baseline":
        return ("F", "F_a")
    return HEAD_GROUPS


class PoseAdaptNet(nn.Module):
    """Shared extractor G plus the heads of one structural variant."""

    def __init__(self, backbone: BackboneSpec, variant: str, num_joints: int,
                 heatmap_size: Tuple[int, int], seed: int = 0):
        super().__init__()
        feature_size = backbone.feature_size()
        upsampled = tuple(s * 2 ** HEAD_UPSAMPLES for s in feature_size)
        if upsampled != tuple(heatmap_size):
            raise ModelSpecError(
                f"features {feature_size} upsampled x{2 ** HEAD_UPSAMPLES} give {upsampled}, "
                f"not the heatmap size {tuple(heatmap_size)}"
            )
        if num_joints < 1:
            raise ModelSpecError(f"num_joints must be positive, got {num_joints}")
        self.spec = backbone
        self.variant = variant
        self.num_joints = num_joints
        self.heatmap_size = tuple(heatmap_size)

        # every component gets its own seed so F and F_a match across variants
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(_component_seed(seed, 0))
            self.backbone = FeatureExtractor(backbone)
            _init_module(self.backbone)
            heads = {}
            for name in heads_for_variant(variant):
                torch.manual_seed(_component_seed(seed, GROUPS.index(name)))
                head = RegressionHead(backbone.feature_channels, num_joints)
                _init_module(head)
                heads[name] = head
        self.heads = nn.ModuleDict(heads)

    def has_head(self, name: str) -> bool:
        return name in self.heads

    def features(self, images: torch.Tensor) -> torch.Tensor:
        expected = self.spec.input_shape
        if images.dim() != 4 or tuple(images.shape[1:]) != expected:
            raise ModelSpecError(f"expected images of shape (N, {expected}), got {tuple(images.shape)}")
        return self.backbone(images)

    def head(self, name: str, features: torch.Tensor) -> torch.Tensor:
        return self.heads[name](features)

    def head_outputs(self, features: torch.Tensor) -> HeadOutputs:
        """All head outputs (and derived representations) from G's features."""
        inference = self.heads["F"](features)
        adversarial = self.heads["F_a"](features)
        if self.variant == "baseline":
            return HeadOutputs.from_heads(inference, torch.zeros_like(inference),
                                          adversarial, torch.zeros_like(adversarial))
        second = self.heads["F_spec"](features)
        adversarial_second = self.heads["F_a_spec"](features)
        if self.variant == "aidf":
            # explicit heads are intermediates; specific parts are derived
            return HeadOutputs.from_heads(inference, inference - second,
                                          adversarial, adversarial - adversarial_second)
        return HeadOutputs.from_heads(inference, second, adversarial, adversarial_second)

    def forward(self, images: torch.Tensor) -> HeadOutputs:
        return self.head_outputs(self.features(images))

    def inference(self, images: torch.Tensor) -> torch.Tensor:
        """F(G(x)) only, as used for evaluation."""
        return self.heads["F"](self.features(images))

    def group_of(self, parameter_name: str) -> str:
        if parameter_name.startswith("backbone."):
            return "G"
        if parameter_name.startswith("heads."):
            return parameter_name.split(".")[1]
        raise ModelSpecError(f"parameter {parameter_name!r} belongs to no group")

    def named_group_parameters(self, group: str) -> List[Tuple[str, nn.Parameter]]:
        if group not in GROUPS:
            raise ModelSpecError(f"unknown parameter group {group!r}, expected one of {GROUPS}")
        return [(name, p) for name, p in self.named_parameters() if self.group_of(name) == group]


def build_model(backbone: BackboneSpec, variant: str, num_joints: int,
                heatmap_size: Tuple[int, int], seed: int) -> PoseAdaptNet:
    """
    Build a model with deterministic initialization.

    Args:
        backbone: Backbone specification
        variant: "baseline", "aidf" or "idf"
        num_joints: K
        heatmap_size: (H', W')
        seed: Initialization seed

    Returns:
        PoseAdaptNet

    Raises:
        ModelSpecError: If the variant is unknown or the shapes do not line up
    """
    heads_for_variant(variant)
    return PoseAdaptNet(backbone, variant, num_joints, heatmap_size, seed)


def forward(model: PoseAdaptNet, images: torch.Tensor) -> HeadOutputs:
    """Run G and every head on a batch of images."""
    return model(images)


def parameters(model: PoseAdaptNet, groups: Iterable[str]) -> List[nn.Parameter]:
    """
    Trainable parameters of the requested groups.

    Groups a variant does not have (F_spec / F_a_spec for baseline) are empty.

    Raises:
        ModelSpecError: On an unknown group name
    """
    result = []
    for group in groups:
        result.extend(p for _, p in model.named_group_parameters(group))
    return result


def snapshot(model: PoseAdaptNet, groups: Optional[Iterable[str]] = None) -> Dict[str, torch.Tensor]:
    """Detached copies of parameters, optionally restricted to some groups."""
    wanted = set(groups) if groups is not None else set(GROUPS)
    return {name: p.detach().clone() for name, p in model.named_parameters() if model.group_of(name) in wanted}


def count_parameters(model: PoseAdaptNet, group: str) -> int:
    return sum(p.numel() for _, p in model.named_group_parameters(group))
