"""Offline fifteen-variant augmentation and image/tensor conversion."""
from __future__ import annotations

import math

import numpy as np

from ..rng import make_generator
from .align import SimilarityTransform, warp_resize
from .image import ImageBuffer

ROTATIONS_DEG = (4.0, -4.0, 6.0, -6.0)
NOISE_VARIANCES = (0.001, 0.01, 0.015)


def rotate(img: ImageBuffer, degrees: float) -> ImageBuffer:
    """Rotate about the image centre (bilinear, edge-clamped)."""
    t = SimilarityTransform.about_center(math.radians(degrees), img.width, img.height)
    return warp_resize(img, t, (img.width, img.height))


def add_gaussian_noise(img: ImageBuffer, variance: float, rng: np.random.Generator) -> ImageBuffer:
    unit = img.pixels.astype(np.float64) / 255.0
    noisy = np.clip(unit + rng.normal(0.0, math.sqrt(variance), size=unit.shape), 0.0, 1.0)
    return ImageBuffer(np.floor(noisy * 255.0 + 0.5).astype(np.uint8))


def offline_augment(img: ImageBuffer, seed: int = 0, stream: tuple[int, ...] = ()) -> list[ImageBuffer]:
    """Return the 15 offline variants of ``img`` (the original is not included).

    Order: horizontal flip; rotations by +4, -4, +6, -6 degrees of the
    original, then of the flip; Gaussian noise with variances 0.001, 0.01,
    0.015 on the original, then on the flip. Noise draws come from a stream
    keyed by ``seed`` and ``stream`` (e.g. an image index), so results do not
    depend on processing order.
    """
    flipped = img.hflip()
    out = [flipped]
    out += [rotate(img, d) for d in ROTATIONS_DEG]
    out += [rotate(flipped, d) for d in ROTATIONS_DEG]
    rng = make_generator(seed, 13, *stream)
    out += [add_gaussian_noise(img, v, rng) for v in NOISE_VARIANCES]
    out += [add_gaussian_noise(flipped, v, rng) for v in NOISE_VARIANCES]
    return out


def to_tensor(img: ImageBuffer, mean=(0.0, 0.0, 0.0)) -> np.ndarray:
    """1 x 3 x H x W float32 in [0, 1] minus the per-channel ``mean``."""
    px = img.pixels.astype(np.float32) / np.float32(255.0)
    if img.channels == 1:
        px = np.repeat(px, 3, axis=2)
    px = px - np.asarray(mean, dtype=np.float32).reshape(1, 1, 3)
    return np.ascontiguousarray(px.transpose(2, 0, 1)[None])


def from_tensor(t, mean=(0.0, 0.0, 0.0)) -> ImageBuffer:
    """Inverse of :func:`to_tensor` up to 8-bit quantization."""
    arr = np.asarray(t, dtype=np.float32)
    if arr.ndim == 4:
        if arr.shape[0] != 1:
            raise ValueError(f"expected a single image, got batch of {arr.shape[0]}")
        arr = arr[0]
    hwc = arr.transpose(1, 2, 0) + np.asarray(mean, dtype=np.float32).reshape(1, 1, -1)
    return ImageBuffer(np.clip(np.floor(hwc.astype(np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8))
