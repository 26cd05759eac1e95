"""Global visual feature: image preprocessing and a small patch transformer.

Images are float arrays [height, width, 3] with values in [0, 1].  When
``use_precomputed`` is set the "image" is already a [1 x D] feature and is
passed through untouched.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import LinearMap, TransformerBlockParams, param, transformer_block
from .tensor import DimensionError, Tensor

SCALE_RANGE = (0.05, 1.0)
RATIO_RANGE = (0.75, 1.33)
MEAN = 0.5
STD = 0.5


@dataclass
class VisionConfig:
    input_size: int = 224
    patch_size: int = 32
    layers: int = 2
    D: int = 64
    heads: int = 1
    use_precomputed: bool = False

    def __post_init__(self):
        if self.input_size % self.patch_size:
            raise ValueError(f"input_size {self.input_size} is not divisible by patch_size {self.patch_size}")

    @property
    def num_patches(self) -> int:
        return (self.input_size // self.patch_size) ** 2


@dataclass
class VisionParams:
    patch_embed: LinearMap
    cls_token: Tensor  # [1 x D]
    positions: Tensor  # [num_patches + 1, D]
    layers: list

    @classmethod
    def init(cls, rng: np.random.Generator, config: VisionConfig) -> "VisionParams":
        p = config.patch_size
        return cls(
            patch_embed=LinearMap.init(rng, p * p * 3, config.D),
            cls_token=param(rng.uniform(-1.0, 1.0, (1, config.D))),
            positions=param(rng.uniform(-1.0, 1.0, (config.num_patches + 1, config.D))),
            layers=[TransformerBlockParams.init(rng, config.D, config.heads) for _ in range(config.layers)],
        )


# -- resizing / cropping -------------------------------------------------------------

def _axis_weights(n_in: int, n_out: int):
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize_bilinear(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Half-pixel-centre bilinear resize of an [h, w, c] array."""
    img = np.asarray(img, dtype=np.float64)
    if img.shape[:2] == (height, width):
        return img.copy()
    y0, y1, fy = _axis_weights(img.shape[0], height)
    x0, x1, fx = _axis_weights(img.shape[1], width)
    rows = img[y0] * (1 - fy)[:, None, None] + img[y1] * fy[:, None, None]
    return rows[:, x0] * (1 - fx)[None, :, None] + rows[:, x1] * fx[None, :, None]


def normalize(img: np.ndarray) -> np.ndarray:
    return (img - MEAN) / STD


def sample_crop(height: int, width: int, rng: np.random.Generator, attempts: int = 10) -> tuple:
    """(top, left, h, w) with area fraction in SCALE_RANGE and w/h in RATIO_RANGE.

    After ``attempts`` failed draws, falls back to the largest centred crop
    whose aspect ratio is clamped into range.
    """
    area = height * width
    log_lo, log_hi = math.log(RATIO_RANGE[0]), math.log(RATIO_RANGE[1])
    for _ in range(attempts):
        target = area * rng.uniform(*SCALE_RANGE)
        ratio = math.exp(rng.uniform(log_lo, log_hi))
        w = int(round(math.sqrt(target * ratio)))
        h = int(round(math.sqrt(target / ratio)))
        if 0 < w <= width and 0 < h <= height and crop_in_bounds(h, w, height, width):
            top = int(rng.integers(0, height - h + 1))
            left = int(rng.integers(0, width - w + 1))
            return top, left, h, w
    ratio = width / height
    if ratio < RATIO_RANGE[0]:
        w, h = width, int(round(width / RATIO_RANGE[0]))
    elif ratio > RATIO_RANGE[1]:
        h, w = height, int(round(height * RATIO_RANGE[1]))
    else:
        h, w = height, width
    h, w = min(h, height), min(w, width)
    return (height - h) // 2, (width - w) // 2, h, w


def crop_in_bounds(h: int, w: int, height: int, width: int) -> bool:
    scale = h * w / (height * width)
    return (SCALE_RANGE[0] <= scale <= SCALE_RANGE[1]
            and RATIO_RANGE[0] <= w / h <= RATIO_RANGE[1])


def preprocess_train(img: np.ndarray, seed=None, size: int = 224) -> np.ndarray:
    """Random resized crop -> bilinear resize to size x size -> normalize."""
    img = _check_image(img)
    if min(img.shape[:2]) < 2:
        raise ValueError(f"image must be at least 2x2, got {img.shape[:2]}")
    top, left, h, w = sample_crop(img.shape[0], img.shape[1], np.random.default_rng(seed))
    return normalize(resize_bilinear(img[top:top + h, left:left + w], size, size))


def preprocess_eval(img: np.ndarray, size: int = 224) -> np.ndarray:
    """Resize the shorter side to ``size``, take the centred size x size crop, normalize."""
    img = _check_image(img)
    h, w = img.shape[:2]
    if h <= w:
        nh, nw = size, max(size, int(round(w * size / h)))
    else:
        nh, nw = max(size, int(round(h * size / w))), size
    img = resize_bilinear(img, nh, nw)
    top, left = (nh - size) // 2, (nw - size) // 2
    return normalize(img[top:top + size, left:left + size])


def _check_image(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"expected an [h, w, 3] image, got shape {img.shape}")
    return img


# -- encoding --------------------------------------------------------------------------

def patchify(img: np.ndarray, patch: int) -> np.ndarray:
    """[S, S, 3] -> [(S/patch)^2, patch*patch*3], patches in row-major order."""
    s = img.shape[0]
    g = s // patch
    return (img.reshape(g, patch, g, patch, 3)
               .transpose(0, 2, 1, 3, 4)
               .reshape(g * g, patch * patch * 3))


def encode_image(config: VisionConfig, params: VisionParams | None, img) -> Tensor:
    """Global visual feature f_v of shape [1 x D]."""
    if config.use_precomputed:
        feat = img if isinstance(img, Tensor) else Tensor(np.asarray(img, dtype=np.float64))
        if feat.data.size != config.D:
            raise DimensionError(f"precomputed feature has {feat.data.size} values, expected D={config.D}")
        return feat if feat.shape == (1, config.D) else T.reshape(feat, (1, config.D))
    data = img.data if isinstance(img, Tensor) else np.asarray(img, dtype=np.float64)
    expected = (config.input_size, config.input_size, 3)
    if data.shape != expected:
        raise DimensionError(f"image must be preprocessed to {expected}, got {data.shape}")
    x = params.patch_embed(Tensor(patchify(data, config.patch_size)))
    x = T.add(T.concat([params.cls_token, x], axis=0), params.positions)
    for layer in params.layers:
        x = transformer_block(layer, x, x, x)
    return T.rows(x, [0])


# -- portable pixel maps ------------------------------------------------------------

def read_ppm(path) -> np.ndarray:
    """Binary 8-bit PPM (P6) -> float [h, w, 3] in [0, 1]."""
    with open(path, "rb") as fh:
        raw = fh.read()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    if fields[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM (magic {fields[0]!r})")
    width, height, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PPM is supported (maxval {maxval})")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=width * height * 3, offset=pos + 1)
    return pixels.reshape(height, width, 3).astype(np.float64) / 255.0


def write_ppm(path, img: np.ndarray) -> None:
    img = _check_image(img)
    pixels = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
        fh.write(pixels.tobytes())
