"""Similarity alignment, bilinear resampling and region cropping."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .image import ImageBuffer
from .landmarks import RegionDef, as_landmarks


@dataclass(frozen=True)
class SimilarityTransform:
    """``p -> scale * R(angle) @ p + (tx, ty)``, mapping source to template."""
    scale: float = 1.0
    angle: float = 0.0
    tx: float = 0.0
    ty: float = 0.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    @property
    def linear(self) -> np.ndarray:
        c, s = math.cos(self.angle), math.sin(self.angle)
        return self.scale * np.array([[c, -s], [s, c]])

    @property
    def offset(self) -> np.ndarray:
        return np.array([self.tx, self.ty])

    def matrix(self) -> np.ndarray:
        return np.hstack([self.linear, self.offset[:, None]])

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.linear.T + self.offset

    def inverse(self) -> "SimilarityTransform":
        inv = SimilarityTransform(1.0 / self.scale, -self.angle)
        tx, ty = -inv.apply(self.offset)
        return SimilarityTransform(1.0 / self.scale, -self.angle, tx, ty)

    @classmethod
    def about_center(cls, angle: float, width: int, height: int) -> "SimilarityTransform":
        """Rotation by ``angle`` radians about the image centre."""
        c = np.array([(width - 1) / 2, (height - 1) / 2])
        rot = cls(1.0, angle)
        tx, ty = c - rot.apply(c)
        return cls(1.0, angle, tx, ty)


def estimate_similarity(source, target) -> SimilarityTransform:
    """Least-squares similarity taking ``source`` points onto ``target``.

    Closed-form Procrustes solution using complex arithmetic: with centred
    points p and q, the optimal ``scale * exp(i angle)`` is
    ``sum(conj(p) q) / sum(|p|^2)``.
    """
    src = np.asarray(source, dtype=np.float64)
    dst = np.asarray(target, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2:
        raise ValueError(f"point sets must both be K x 2, got {src.shape} and {dst.shape}")
    if src.shape[0] == 68:
        as_landmarks(src), as_landmarks(dst)
    p = src[:, 0] + 1j * src[:, 1]
    q = dst[:, 0] + 1j * dst[:, 1]
    pm, qm = p.mean(), q.mean()
    pc, qc = p - pm, q - qm
    var = float(np.sum(np.abs(pc) ** 2))
    if var <= 1e-12 * max(1.0, float(np.max(np.abs(p)) ** 2)):
        raise ValueError("degenerate source landmarks: all points coincide")
    z = np.sum(np.conj(pc) * qc) / var
    t = qm - z * pm
    return SimilarityTransform(float(abs(z)), float(np.angle(z)), float(t.real), float(t.imag))


def _bilinear(img: ImageBuffer, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample at float coordinates with edge clamping; returns float64 H x W x C."""
    src = img.pixels.astype(np.float64)
    h, w = img.height, img.width
    xs = np.clip(xs, 0, w - 1)
    ys = np.clip(ys, 0, h - 1)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0)[..., None]
    fy = (ys - y0)[..., None]
    top = src[y0, x0] * (1 - fx) + src[y0, x1] * fx
    bot = src[y1, x0] * (1 - fx) + src[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def _quantize(values: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


def sample_affine(img: ImageBuffer, linear: np.ndarray, offset: np.ndarray,
                  out_w: int, out_h: int) -> ImageBuffer:
    """Output pixel (x, y) reads the source at ``linear @ (x, y) + offset``."""
    ys, xs = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    sx = linear[0, 0] * xs + linear[0, 1] * ys + offset[0]
    sy = linear[1, 0] * xs + linear[1, 1] * ys + offset[1]
    return ImageBuffer(_quantize(_bilinear(img, sx, sy)))


def warp_resize(img: ImageBuffer, t: SimilarityTransform, out_size) -> ImageBuffer:
    """Resample ``img`` into template coordinates by inverse mapping."""
    out_w, out_h = (out_size, out_size) if np.isscalar(out_size) else out_size
    if out_w < 1 or out_h < 1:
        raise ValueError(f"out_size must be >= 1, got {out_size}")
    inv = t.inverse()
    return sample_affine(img, inv.linear, inv.offset, int(out_w), int(out_h))


def region_box(region: RegionDef, template, width: int, height: int) -> tuple[float, float, float, float]:
    """Square, margin-expanded box ``(x0, y0, x1, y1)`` clamped to the image."""
    pts = np.asarray(template, dtype=np.float64)[list(region.indices)]
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    center = (lo + hi) / 2
    side = float(np.max(hi - lo)) * (1 + region.margin)
    x0, y0 = center - side / 2
    x1, y1 = center + side / 2
    x0, x1 = max(0.0, x0), min(float(width), x1)
    y0, y1 = max(0.0, y0), min(float(height), y1)
    if x1 - x0 < 1 or y1 - y0 < 1:
        raise ValueError(f"region {region.name!r} box is degenerate after clamping")
    return x0, y0, x1, y1


def crop_region(aligned: ImageBuffer, region: RegionDef, template, out_size: int) -> ImageBuffer:
    """Crop a landmark-defined region from an aligned face and resize it.

    ``template`` holds the landmark positions in ``aligned``'s pixel frame.
    """
    x0, y0, x1, y1 = region_box(region, template, aligned.width, aligned.height)
    sx, sy = (x1 - x0) / out_size, (y1 - y0) / out_size
    # pixel centres of the output grid map onto the box interior
    linear = np.array([[sx, 0.0], [0.0, sy]])
    offset = np.array([x0 + 0.5 * sx - 0.5, y0 + 0.5 * sy - 0.5])
    return sample_affine(aligned, linear, offset, out_size, out_size)
