import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dynpred.encoder import (
    CropBox,
    CropConfig,
    Encoder,
    EncoderConfig,
    crop_side_range,
    encode,
    encoded_side,
    encoder_strides,
    random_local_crops,
    resize_crop,
)
from dynpred.errors import ConfigurationError
from dynpred.numerics import finite_diff_check


def _seq(rng, t=3, c=1, h=64, w=64):
    return rng.random((t, c, h, w)).astype(np.float32)


def test_three_crops_of_32():
    crops, boxes = random_local_crops(_seq(np.random.default_rng(0)), CropConfig(), np.random.default_rng(1))
    assert crops.shape == (3, 3, 1, 32, 32) and len(boxes) == 3


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(32, 96), st.integers(32, 96), st.integers(1, 5))
def test_crop_boxes_inside_and_below_area_cap(seed, h, w, n):
    cfg = CropConfig(n_crops=n)
    seq = np.zeros((2, 1, h, w), np.float32)
    crops, boxes = random_local_crops(seq, cfg, np.random.default_rng(seed))
    assert len(boxes) == n and crops.shape[0] == n
    for b in boxes:
        assert b.top >= 0 and b.left >= 0 and b.top + b.height <= h and b.left + b.width <= w
        assert b.area < 0.5 * h * w


def test_crop_side_range_default_frame():
    assert crop_side_range(64, 64, CropConfig()) == (32, 44)


def test_crops_are_deterministic_and_shared_over_time():
    seq = _seq(np.random.default_rng(2))
    a, ba = random_local_crops(seq, CropConfig(), np.random.default_rng(5))
    b, bb = random_local_crops(seq, CropConfig(), np.random.default_rng(5))
    assert ba == bb and a.tobytes() == b.tobytes()
    # the same box cuts every frame
    for crop, box in zip(a, ba):
        for t in range(seq.shape[0]):
            np.testing.assert_array_equal(crop[t], resize_crop(seq[t:t + 1], box, 32)[0])


def test_resize_keeps_box_corners():
    seq = np.random.default_rng(3).random((1, 1, 40, 40))
    box = CropBox(5, 7, 20, 20)
    out = resize_crop(seq, box, 32)
    assert out[0, 0, 0, 0] == seq[0, 0, 5, 7]
    assert out[0, 0, -1, -1] == seq[0, 0, 24, 26]


def test_resize_identity_when_box_matches_output():
    seq = np.random.default_rng(4).random((2, 1, 50, 50))
    out = resize_crop(seq, CropBox(3, 9, 32, 32), 32)
    np.testing.assert_array_equal(out, seq[:, :, 3:35, 9:41])


def test_crop_errors():
    with pytest.raises(ConfigurationError):
        random_local_crops(np.zeros((2, 1, 16, 16)), CropConfig(), np.random.default_rng(0))
    for bad in (CropConfig(n_crops=0), CropConfig(max_area_fraction=0.6), CropConfig(crop_out=4)):
        with pytest.raises(ConfigurationError):
            bad.validate()


@pytest.mark.parametrize("side,size,expected", [
    (128, "S", 32), (64, "S", 16), (32, "S", 8), (16, "S", 8), (8, "S", 8),
    (64, "B", 8), (128, "B", 8), (32, "L", 8), (64, "L", 8), (256, "L", 8),
])
def test_encoder_output_side(side, size, expected):
    cfg = EncoderConfig.preset(size, 3)
    assert encoded_side(side, cfg) == expected
    enc = Encoder(cfg, 1, side, rng=np.random.default_rng(0))
    z = enc.forward(np.zeros((2, 1, side, side), np.float32))
    assert z.shape == (2, cfg.channels[-1], expected, expected)


def test_down_floor_schedule():
    assert encoder_strides(32, EncoderConfig.preset("L", 3)) == [2, 2, 1, 1, 1, 1, 1, 1]
    assert encoder_strides(128, EncoderConfig.preset("S", 7)) == [2, 2]
    with pytest.raises(ConfigurationError):
        encoder_strides(4, EncoderConfig.preset("S", 3))


def test_encoder_config_errors():
    with pytest.raises(ConfigurationError):
        EncoderConfig.preset("XL", 3)
    with pytest.raises(ConfigurationError):
        EncoderConfig(3, 3, (8, 8, 8)).validate()
    with pytest.raises(ConfigurationError):
        EncoderConfig(2, 4, (8, 8)).validate()
    assert EncoderConfig.preset("L", 3).channels == (16, 32, 64, 64, 64, 64, 64, 64)
    assert EncoderConfig.preset("S", 7, out_channels=32).channels == (16, 32)


def test_zero_params_give_zero_latent():
    enc = Encoder(EncoderConfig.preset("S", 3), 1, 32, rng=np.random.default_rng(0))
    for p in enc.named_params().values():
        p.values[...] = 0
    assert not enc.forward(np.zeros((3, 1, 32, 32), np.float32)).any()


def test_encode_is_frame_wise_and_permutation_equivariant():
    rng = np.random.default_rng(6)
    enc = Encoder(EncoderConfig.preset("S", 3), 1, 32, rng=rng, dtype=np.float64)
    seq = rng.random((5, 1, 32, 32))
    z = encode(seq, enc)
    perm = rng.permutation(5)
    np.testing.assert_allclose(encode(seq[perm], enc), z[perm], rtol=0, atol=1e-12)
    np.testing.assert_allclose(encode(seq[2:3], enc)[0], z[2], rtol=0, atol=1e-12)


@pytest.mark.parametrize("i", range(20))
def test_encoder_gradients(i):
    rng = np.random.default_rng(1100 + i)
    cfg = EncoderConfig(2, (3, 5)[i % 2], (3, 4), down_floor=4)
    enc = Encoder(cfg, 2, 8, rng=rng, dtype=np.float64)
    for p in enc.named_params().values():
        p.values[...] += rng.normal(0, 0.1, p.shape)
    x = rng.standard_normal((2, 2, 8, 8))
    y = enc.forward(x)
    w = rng.standard_normal(y.shape)
    for p in enc.named_params().values():
        p.zero_grad()
    dx = enc.backward(w)
    params = list(enc.named_params().values())
    err = finite_diff_check(lambda: enc.forward(x), [x] + [p.values for p in params],
                            [dx] + [p.grad.copy() for p in params], weights=w)
    assert err < 1e-5
