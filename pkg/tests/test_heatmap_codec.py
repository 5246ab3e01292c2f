import math

import pytest
import torch
import torch.nn.functional as F

from heatmap_codec import (
    BoundsError, CodecConfig, DecodeError, HeatmapStack, KeypointSet, argmax_coords, decode_argmax,
    decode_soft_argmax, encode, soft_argmax_coords, to_heatmap_units, to_image_units,
)


def _encode(coords, sigma=1.0, size=(16, 16), visibility=None):
    cfg = CodecConfig(sigma=sigma, heatmap_size=size)
    return encode(KeypointSet(coords=torch.as_tensor(coords, dtype=torch.float64), visibility=visibility), cfg)


def test_encode_peak_and_neighbour():
    stack = _encode([[8.0, 8.0]])
    assert stack.values.shape == (1, 16, 16)
    assert stack.values[0, 8, 8].item() == pytest.approx(1.0)
    assert stack.values[0, 8, 9].item() == pytest.approx(math.exp(-0.5), abs=1e-5)
    assert stack.values[0, 8, 9].item() == pytest.approx(0.60653, abs=1e-5)


def test_encode_invisible_joint_is_zero():
    stack = _encode([[8.0, 8.0], [40.0, -3.0]], visibility=[True, False])
    assert torch.count_nonzero(stack.values[1]) == 0
    assert stack.values[0].max().item() == pytest.approx(1.0)


def test_encode_peak_amplitude():
    cfg = CodecConfig(sigma=2.0)
    stack = encode(KeypointSet(coords=torch.tensor([[4.0, 5.0]])), cfg, peak_amplitude=3.0)
    assert stack.values.max().item() == pytest.approx(3.0)
    assert stack.peak_amplitude == 3.0


@pytest.mark.parametrize("coords", [[[16.0, 2.0]], [[-0.5, 2.0]], [[2.0, 16.0]]])
def test_encode_rejects_out_of_bounds(coords):
    with pytest.raises(BoundsError):
        _encode(coords)


def test_codec_config_validation():
    with pytest.raises(ValueError):
        CodecConfig(sigma=0.0)
    with pytest.raises(ValueError):
        CodecConfig(soft_argmax_temperature=-1.0)


def test_round_trip_on_integer_grid():
    generator = torch.Generator().manual_seed(0)
    coords = torch.randint(0, 16, (32, 8, 2), generator=generator).to(torch.float64)
    for sigma in (1.0, 2.0, 3.0):
        decoded = decode_argmax(_encode(coords, sigma=sigma))
        assert torch.equal(decoded.coords, coords)


def test_argmax_ties_take_lowest_row_major_index():
    uniform = torch.ones(1, 16, 16)
    assert argmax_coords(uniform).tolist() == [[0.0, 0.0]]
    two_peaks = torch.zeros(1, 16, 16)
    two_peaks[0, 3, 3] = 1.0
    two_peaks[0, 9, 9] = 1.0
    assert argmax_coords(two_peaks).tolist() == [[3.0, 3.0]]


def test_decode_rejects_nan_channel():
    values = torch.zeros(2, 4, 4)
    values[1] = float("nan")
    with pytest.raises(DecodeError):
        decode_argmax(HeatmapStack(values=values))
    with pytest.raises(DecodeError):
        decode_soft_argmax(HeatmapStack(values=values))


def test_soft_argmax_examples():
    uniform = torch.zeros(1, 16, 16, dtype=torch.float64)
    assert torch.allclose(soft_argmax_coords(uniform), torch.tensor([[7.5, 7.5]], dtype=torch.float64))

    one_hot = torch.zeros(1, 16, 16, dtype=torch.float64)
    one_hot[0, 12, 3] = 1.0
    coords = soft_argmax_coords(one_hot, temperature=0.01)
    assert torch.allclose(coords, torch.tensor([[3.0, 12.0]], dtype=torch.float64), atol=1e-3)

    two_cells = torch.full((1, 4, 4), -1e4, dtype=torch.float64)
    two_cells[0, 0, 0] = 0.0
    two_cells[0, 0, 2] = 0.0
    assert torch.allclose(soft_argmax_coords(two_cells), torch.tensor([[1.0, 0.0]], dtype=torch.float64))


@pytest.mark.parametrize("sigma", [1.0, 2.0])
@pytest.mark.parametrize("temperature", [0.1, 0.05])
def test_soft_and_hard_decoding_agree(sigma, temperature):
    generator = torch.Generator().manual_seed(1)
    coords = torch.randint(3, 13, (16, 8, 2), generator=generator).to(torch.float64)
    stack = _encode(coords, sigma=sigma)
    hard = decode_argmax(stack).coords
    soft = decode_soft_argmax(stack, temperature).coords
    assert (soft - hard).abs().max().item() <= 0.5


def _shift(values, dx, dy):
    # integer translation with zero padding
    padded = F.pad(values, (max(dx, 0), max(-dx, 0), max(dy, 0), max(-dy, 0)))
    height, width = values.shape[-2:]
    top = max(-dy, 0)
    left = max(-dx, 0)
    return padded[..., top:top + height, left:left + width]


@pytest.mark.parametrize("dx,dy", [(1, 0), (0, -2), (3, 2), (-1, -1)])
def test_translation_equivariance(dx, dy):
    generator = torch.Generator().manual_seed(2)
    coords = torch.randint(5, 11, (6, 4, 2), generator=generator).to(torch.float64)
    stack = _encode(coords, sigma=1.0)
    shifted = _shift(stack.values, dx, dy)
    offset = torch.tensor([dx, dy], dtype=torch.float64)

    assert torch.equal(argmax_coords(shifted), argmax_coords(stack.values) + offset)
    soft = soft_argmax_coords(stack.values, 0.05)
    soft_shifted = soft_argmax_coords(shifted, 0.05)
    assert torch.allclose(soft_shifted, soft + offset, atol=1e-3)


def test_soft_argmax_gradient_matches_finite_differences():
    for seed in range(20):
        generator = torch.Generator().manual_seed(seed)
        values = torch.randn(2, 5, 6, dtype=torch.float64, generator=generator, requires_grad=True)
        temperature = 0.5 + seed / 20.0
        assert torch.autograd.gradcheck(lambda v: soft_argmax_coords(v, temperature), (values,),
                                        eps=1e-5, atol=1e-6, rtol=1e-4)


def test_unit_conversion_is_invertible():
    coords = torch.tensor([[[12.0, 40.0], [63.0, 0.0]]], dtype=torch.float64)
    heat = to_heatmap_units(coords, (64, 64), (16, 16))
    assert heat.tolist() == [[[3.0, 10.0], [15.75, 0.0]]]
    assert torch.equal(to_image_units(heat, (64, 64), (16, 16)), coords)


def test_keypoint_set_validates_shapes():
    with pytest.raises(ValueError):
        KeypointSet(coords=torch.zeros(4, 3))
    with pytest.raises(ValueError):
        KeypointSet(coords=torch.zeros(4, 2), visibility=torch.ones(3, dtype=torch.bool))
