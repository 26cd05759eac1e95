import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sceneknow import tensor as T
from sceneknow.gradcheck import check_parameters
from sceneknow.nn import named_parameters
from sceneknow.tensor import DimensionError, Tensor
from sceneknow.vision import (RATIO_RANGE, SCALE_RANGE, VisionConfig, VisionParams, encode_image, normalize,
                              patchify, preprocess_eval, preprocess_train, read_ppm, resize_bilinear, sample_crop,
                              write_ppm)


def bilinear_oracle(img, height, width):
    """Per-pixel half-pixel-centre bilinear interpolation."""
    h, w = img.shape[:2]
    out = np.zeros((height, width, img.shape[2]))
    for i in range(height):
        y = min(max((i + 0.5) * h / height - 0.5, 0.0), h - 1)
        y0 = int(np.floor(y))
        y1 = min(y0 + 1, h - 1)
        for j in range(width):
            x = min(max((j + 0.5) * w / width - 0.5, 0.0), w - 1)
            x0 = int(np.floor(x))
            x1 = min(x0 + 1, w - 1)
            fy, fx = y - y0, x - x0
            out[i, j] = ((1 - fy) * ((1 - fx) * img[y0, x0] + fx * img[y0, x1])
                         + fy * ((1 - fx) * img[y1, x0] + fx * img[y1, x1]))
    return out


def test_constant_half_image_normalizes_to_zero():
    out = preprocess_train(np.full((40, 50, 3), 0.5), seed=0, size=16)
    assert np.array_equal(out, np.zeros((16, 16, 3)))


def test_normalization_endpoints():
    assert normalize(np.array([0.0, 1.0])).tolist() == [-1.0, 1.0]


@pytest.mark.parametrize("shape", [(2, 2), (5, 300), (224, 224), (301, 17)])
def test_train_output_extent(shape):
    out = preprocess_train(np.random.default_rng(0).uniform(size=(*shape, 3)), seed=1)
    assert out.shape == (224, 224, 3)


def test_train_rejects_tiny_image():
    with pytest.raises(ValueError):
        preprocess_train(np.zeros((1, 5, 3)), seed=0)


def test_crop_bounds_over_many_draws():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        height, width = int(rng.integers(50, 400)), int(rng.integers(50, 400))
        top, left, h, w = sample_crop(height, width, rng)
        assert 0 <= top and top + h <= height and 0 <= left and left + w <= width
        assert SCALE_RANGE[0] <= h * w / (height * width) <= SCALE_RANGE[1] or (top, left) == (
            (height - h) // 2, (width - w) // 2)
        if (top, left) != ((height - h) // 2, (width - w) // 2):
            assert RATIO_RANGE[0] <= w / h <= RATIO_RANGE[1]


def test_crop_fallback_on_extreme_aspect():
    top, left, h, w = sample_crop(2, 1000, np.random.default_rng(0))
    assert (h, w) == (2, 3) and (top, left) == (0, (1000 - 3) // 2)


def test_train_is_seeded():
    img = np.random.default_rng(3).uniform(size=(60, 80, 3))
    assert np.array_equal(preprocess_train(img, 5, 32), preprocess_train(img, 5, 32))
    assert not np.array_equal(preprocess_train(img, 5, 32), preprocess_train(img, 6, 32))


def test_eval_square_is_pure_resize():
    img = np.random.default_rng(1).uniform(size=(300, 300, 3))
    assert np.allclose(preprocess_eval(img), normalize(bilinear_oracle(img, 224, 224)), atol=1e-12)


def test_eval_tall_image_takes_centre():
    img = np.random.default_rng(2).uniform(size=(448, 224, 3))
    assert np.array_equal(preprocess_eval(img), normalize(img[112:336]))


def test_eval_crop_offset_floors():
    img = np.random.default_rng(2).uniform(size=(224, 301, 3))
    assert np.array_equal(preprocess_eval(img), normalize(img[:, 38:262]))


def test_eval_is_deterministic():
    img = np.random.default_rng(4).uniform(size=(100, 130, 3))
    assert np.array_equal(preprocess_eval(img, 32), preprocess_eval(img, 32))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.integers(1, 12), st.integers(1, 12))
def test_resize_matches_oracle(h, w, height, width):
    img = np.random.default_rng(h * 100 + w).uniform(size=(h, w, 3))
    assert np.max(np.abs(resize_bilinear(img, height, width) - bilinear_oracle(img, height, width))) < 1e-12


def test_patchify_order():
    img = np.arange(4 * 4 * 3, dtype=float).reshape(4, 4, 3)
    patches = patchify(img, 2)
    assert patches.shape == (4, 12)
    assert np.array_equal(patches[1], img[0:2, 2:4].reshape(-1))


# -- encoder ---------------------------------------------------------------------------

def test_precomputed_passthrough():
    cfg = VisionConfig(D=4, use_precomputed=True)
    feat = np.array([[0.1, -2.0, 3.0, 0.5]])
    assert np.array_equal(encode_image(cfg, None, feat).data, feat)


def test_precomputed_dimension_mismatch():
    with pytest.raises(DimensionError):
        encode_image(VisionConfig(D=4, use_precomputed=True), None, np.zeros(5))


@pytest.mark.parametrize("heads,layers", [(1, 1), (2, 2)])
def test_output_shape(heads, layers):
    cfg = VisionConfig(input_size=8, patch_size=4, layers=layers, D=4, heads=heads)
    params = VisionParams.init(np.random.default_rng(0), cfg)
    assert encode_image(cfg, params, np.zeros((8, 8, 3))).shape == (1, 4)


def test_unpreprocessed_image_rejected():
    cfg = VisionConfig(input_size=8, patch_size=4, layers=1, D=4)
    with pytest.raises(DimensionError):
        encode_image(cfg, VisionParams.init(np.random.default_rng(0), cfg), np.zeros((9, 8, 3)))


def test_input_size_must_divide():
    with pytest.raises(ValueError):
        VisionConfig(input_size=10, patch_size=4)


def test_patch_embedding_gradients():
    rng = np.random.default_rng(5)
    cfg = VisionConfig(input_size=8, patch_size=4, layers=1, D=4)
    params = VisionParams.init(rng, cfg)
    img = rng.uniform(-1, 1, (8, 8, 3))
    probe = Tensor(rng.normal(size=(1, 4)))
    errors = check_parameters(lambda: T.sum(T.mul(encode_image(cfg, params, img), probe)),
                              named_parameters(params.patch_embed, "patch_embed"))
    assert max(errors.values()) < 1e-4


def test_ppm_round_trip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, size=(5, 7, 3)) / 255.0
    write_ppm(tmp_path / "x.ppm", img)
    assert np.array_equal(read_ppm(tmp_path / "x.ppm"), img)


def test_ppm_with_comment(tmp_path):
    (tmp_path / "c.ppm").write_bytes(b"P6\n# made by hand\n1 1\n255\n\x00\x80\xff")
    assert read_ppm(tmp_path / "c.ppm").tolist() == [[[0.0, 128 / 255, 1.0]]]


def test_ppm_rejects_ascii(tmp_path):
    (tmp_path / "a.ppm").write_bytes(b"P3\n1 1\n255\n0 0 0\n")
    with pytest.raises(ValueError, match="P6|binary"):
        read_ppm(tmp_path / "a.ppm")
