"""
Heatmap Codec Module

This module handles:
- Encoding keypoint coordinates into Gaussian heatmaps (coordinates -> heatmaps)
- Hard argmax decoding of heatmaps back to coordinates (used at inference)
- Differentiable soft-argmax decoding (used inside training objectives)
- Converting coordinates between image pixels and heatmap cells

Coordinates are (x, y) = (column, row) in heatmap-grid pixel units.
All functions are pure and operate on torch tensors with optional
leading batch dimensions: keypoints (..., K, 2), heatmaps (..., K, H', W').
"""

from dataclasses import dataclass, field
from typing import Tuple

import torch
import torch.nn.functional as F


DEFAULT_HEATMAP_SIZE = (16, 16)


class BoundsError(ValueError):
    """A visible keypoint lies outside the heatmap grid."""


class DecodeError(ValueError):
    """A heatmap channel cannot be decoded (non-finite values)."""


@dataclass
class CodecConfig:
    """Heatmap codec settings."""
    sigma: float = 2.0
    soft_argmax_temperature: float = 1.0
    heatmap_size: Tuple[int, int] = DEFAULT_HEATMAP_SIZE

    def __post_init__(self):
        self.heatmap_size = tuple(int(v) for v in self.heatmap_size)
        if self.sigma <= 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if self.soft_argmax_temperature <= 0:
            raise ValueError(f"soft_argmax_temperature must be > 0, got {self.soft_argmax_temperature}")
        if len(self.heatmap_size) != 2 or min(self.heatmap_size) < 1:
            raise ValueError(f"heatmap_size must be two positive integers, got {self.heatmap_size}")


@dataclass
class KeypointSet:
    """
    K keypoints with visibility flags.

    coords: (..., K, 2) real tensor of (x, y)
    visibility: (..., K) bool tensor; defaults to all visible
    """
    coords: torch.Tensor
    visibility: torch.Tensor = field(default=None)

    def __post_init__(self):
        if not isinstance(self.coords, torch.Tensor):
            self.coords = torch.as_tensor(self.coords, dtype=torch.get_default_dtype())
        if self.coords.dim() < 2 or self.coords.shape[-1] != 2:
            raise ValueError(f"coords must have shape (..., K, 2), got {tuple(self.coords.shape)}")
        if self.visibility is None:
            self.visibility = torch.ones(self.coords.shape[:-1], dtype=torch.bool, device=self.coords.device)
        else:
            self.visibility = torch.as_tensor(self.visibility, dtype=torch.bool, device=self.coords.device)
        if self.visibility.shape != self.coords.shape[:-1]:
            raise ValueError(
                f"visibility shape {tuple(self.visibility.shape)} does not match coords {tuple(self.coords.shape)}"
            )

    @property
    def num_joints(self) -> int:
        return self.coords.shape[-2]


@dataclass
class HeatmapStack:
    """
    K spatial maps per sample.

    values: (..., K, H', W') real tensor
    peak_amplitude: encoder amplitude used to build the stack
    """
    values: torch.Tensor
    peak_amplitude: float = 1.0

    def __post_init__(self):
        if self.values.dim() < 3:
            raise ValueError(f"heatmaps must have shape (..., K, H, W), got {tuple(self.values.shape)}")
        if self.peak_amplitude <= 0:
            raise ValueError(f"peak_amplitude must be > 0, got {self.peak_amplitude}")

    @property
    def heatmap_size(self) -> Tuple[int, int]:
        return tuple(self.values.shape[-2:])


def _grid(height: int, width: int, dtype, device):
    ys = torch.arange(height, dtype=dtype, device=device)
    xs = torch.arange(width, dtype=dtype, device=device)
    return ys, xs


def encode(keypoints: KeypointSet, cfg: CodecConfig, peak_amplitude: float = 1.0) -> HeatmapStack:
    """
    Encode keypoints as Gaussian heatmaps.

    Channel k holds exp(-((x - x_k)^2 + (y - y_k)^2) / (2 sigma^2)) over every
    grid cell, rescaled so its maximum (at the grid cell nearest the keypoint)
    equals peak_amplitude. Invisible joints give all-zero channels.

    Args:
        keypoints: KeypointSet with coords (..., K, 2)
        cfg: Codec configuration (sigma, heatmap size)
        peak_amplitude: Value at the peak cell

    Returns:
        HeatmapStack with values (..., K, H', W')

    Raises:
        BoundsError: If a visible joint lies outside the grid
    """
    height, width = cfg.heatmap_size
    coords = keypoints.coords
    if not coords.is_floating_point():
        coords = coords.to(torch.get_default_dtype())
    visible = keypoints.visibility

    # invisible coordinates may hold anything; keep them out of the arithmetic
    coords = torch.where(visible[..., None], coords, torch.zeros_like(coords))
    if not torch.isfinite(coords).all():
        raise BoundsError("visible keypoint coordinates must be finite")
    x = coords[..., 0]
    y = coords[..., 1]
    out_of_bounds = visible & ((x < 0) | (x >= width) | (y < 0) | (y >= height))
    if out_of_bounds.any():
        bad = out_of_bounds.nonzero()[0].tolist()
        raise BoundsError(
            f"visible keypoint at index {bad} lies outside the {height}x{width} grid: "
            f"({x[tuple(bad)].item():.3f}, {y[tuple(bad)].item():.3f})"
        )

    ys, xs = _grid(height, width, coords.dtype, coords.device)
    dx2 = (xs - x[..., None]) ** 2
    dy2 = (ys - y[..., None]) ** 2
    gauss = torch.exp(-(dy2[..., :, None] + dx2[..., None, :]) / (2.0 * cfg.sigma ** 2))
    peak = gauss.amax(dim=(-2, -1), keepdim=True).clamp_min(torch.finfo(gauss.dtype).tiny)
    values = gauss / peak * peak_amplitude
    values = values * visible[..., None, None].to(values.dtype)
    return HeatmapStack(values=values, peak_amplitude=peak_amplitude)


def argmax_coords(values: torch.Tensor) -> torch.Tensor:
    """
    (x, y) of the maximum cell per channel; ties go to the lowest row-major index.

    Args:
        values: (..., K, H', W') tensor

    Returns:
        (..., K, 2) tensor in the dtype of `values`

    Raises:
        DecodeError: If any channel contains non-finite values
    """
    finite = torch.isfinite(values)
    if not finite.all():
        all_nan = torch.isnan(values).flatten(-2).all(-1)
        if all_nan.any():
            raise DecodeError(f"cannot decode all-NaN heatmap channel at index {all_nan.nonzero()[0].tolist()}")
        raise DecodeError("heatmap contains non-finite values")
    width = values.shape[-1]
    # torch.argmax returns the first maximal index
    flat_index = values.flatten(-2).argmax(dim=-1)
    x = flat_index % width
    y = torch.div(flat_index, width, rounding_mode='floor')
    dtype = values.dtype if values.is_floating_point() else torch.get_default_dtype()
    return torch.stack([x, y], dim=-1).to(dtype)


def soft_argmax_coords(values: torch.Tensor, temperature: float = 1.0) -> torch.Tensor:
    """
    Differentiable expected (x, y) under a spatial softmax of each channel.

    Args:
        values: (..., K, H', W') tensor of raw (unnormalized) scores
        temperature: Softmax temperature (> 0)

    Returns:
        (..., K, 2) tensor
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    height, width = values.shape[-2:]
    probs = F.softmax(values.flatten(-2) / temperature, dim=-1)
    ys, xs = _grid(height, width, values.dtype, values.device)
    grid_x = xs.repeat(height)
    grid_y = ys.repeat_interleave(width)
    x = (probs * grid_x).sum(dim=-1)
    y = (probs * grid_y).sum(dim=-1)
    return torch.stack([x, y], dim=-1)


def decode_argmax(stack: HeatmapStack) -> KeypointSet:
    """
    Hard decoding: the maximum cell of each channel.

    Args:
        stack: HeatmapStack

    Returns:
        KeypointSet with all joints visible

    Raises:
        DecodeError: If a channel is all-NaN or non-finite
    """
    return KeypointSet(coords=argmax_coords(stack.values))


def decode_soft_argmax(stack: HeatmapStack, temperature: float = 1.0) -> KeypointSet:
    """
    Differentiable decoding: spatial softmax then expectation of grid coordinates.

    Args:
        stack: HeatmapStack
        temperature: Softmax temperature

    Returns:
        KeypointSet with all joints visible (gradients flow to stack.values)
    """
    if not torch.isfinite(stack.values).all():
        raise DecodeError("heatmap contains non-finite values")
    return KeypointSet(coords=soft_argmax_coords(stack.values, temperature))


def to_heatmap_units(coords, image_size, heatmap_size):
    """
    Convert image-pixel coordinates to heatmap-grid coordinates.

    Args:
        coords: (..., 2) array/tensor of (x, y) in image pixels
        image_size: (H, W) of the image
        heatmap_size: (H', W') of the heatmap grid

    Returns:
        Coordinates in heatmap cells, same type as input
    """
    scale_x = heatmap_size[1] / image_size[1]
    scale_y = heatmap_size[0] / image_size[0]
    out = coords * 1.0
    out[..., 0] = coords[..., 0] * scale_x
    out[..., 1] = coords[..., 1] * scale_y
    return out


def to_image_units(coords, image_size, heatmap_size):
    """Inverse of to_heatmap_units."""
    return to_heatmap_units(coords, heatmap_size, image_size)


# Example usage and testing
if __name__ == "__main__":
    print("Testing heatmap encode/decode...")

    cfg = CodecConfig(sigma=1.0, heatmap_size=(16, 16))
    keypoints = KeypointSet(coords=torch.tensor([[8.0, 8.0], [3.0, 12.0]]))
    stack = encode(keypoints, cfg)
    print(f"\nHeatmap shape: {tuple(stack.values.shape)}")
    print(f"Peak value: {stack.values[0, 8, 8].item():.5f}")
    print(f"Neighbour value at (9, 8): {stack.values[0, 8, 9].item():.5f}")

    decoded = decode_argmax(stack)
    print(f"\nArgmax decode: {decoded.coords.tolist()}")
    soft = decode_soft_argmax(stack, temperature=0.05)
    print(f"Soft-argmax decode: {[[round(v, 3) for v in row] for row in soft.coords.tolist()]}")

    if torch.equal(decoded.coords, keypoints.coords):
        print("\n✅ Heatmap round-trip test PASSED")
    else:
        print("\n❌ Heatmap round-trip test FAILED")

    print("\nTesting bounds check...")
    try:
        encode(KeypointSet(coords=torch.tensor([[16.0, 2.0]])), cfg)
        print("❌ Bounds test FAILED (should have raised exception)")
    except BoundsError as e:
        print(f"✅ Bounds test PASSED (correctly rejected): {e}")
