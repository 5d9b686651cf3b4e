"""68-point landmark sets, the canonical face template and region definitions.

Point order follows the usual 68-point convention: jaw 0-16, brows 17-26,
nose 27-35, eyes 36-47, mouth 48-67. Index 36-41 is the eye on the viewer's
left in a frontal image.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

N_POINTS = 68
EYE_CENTERS = ((0.31, 0.38), (0.69, 0.38))


def as_landmarks(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape != (N_POINTS, 2):
        raise ValueError(f"expected {N_POINTS} (x, y) points, got shape {pts.shape}")
    if not np.isfinite(pts).all():
        raise ValueError("landmarks contain non-finite coordinates")
    return pts


def read_landmarks(path) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'x y', got {line!r}")
        rows.append((float(parts[0]), float(parts[1])))
    return as_landmarks(rows)


def write_landmarks(points, path) -> None:
    pts = as_landmarks(points)
    Path(path).write_text("".join(f"{float(x)!r} {float(y)!r}\n" for x, y in pts))


def _ellipse(cx, cy, a, b, degrees):
    t = np.radians(degrees)
    return np.stack([cx + a * np.cos(t), cy - b * np.sin(t)], axis=1)


def _unit_template() -> np.ndarray:
    jaw_t = np.pi - np.arange(17) * np.pi / 16
    jaw = np.stack([0.5 + 0.38 * np.cos(jaw_t), 0.40 + 0.50 * np.sin(jaw_t)], axis=1)
    u = np.linspace(0, 1, 5)
    brow_l = np.stack([0.19 + 0.24 * u, 0.30 - 0.04 * np.sin(np.pi * u)], axis=1)
    brow_r = np.stack([0.57 + 0.24 * u, 0.30 - 0.04 * np.sin(np.pi * u)], axis=1)
    bridge = np.stack([np.full(4, 0.5), [0.38, 0.45, 0.52, 0.59]], axis=1)
    base = np.array([[0.42, 0.64], [0.46, 0.655], [0.5, 0.66], [0.54, 0.655], [0.58, 0.64]])
    eye_angles = [180, 120, 60, 0, 300, 240]
    eye_l = _ellipse(*EYE_CENTERS[0], 0.07, 0.025, eye_angles)
    eye_r = _ellipse(*EYE_CENTERS[1], 0.07, 0.025, eye_angles)
    outer = _ellipse(0.5, 0.78, 0.14, 0.06, [180, 150, 120, 90, 60, 30, 0, 330, 300, 270, 240, 210])
    inner = _ellipse(0.5, 0.78, 0.09, 0.02, [180, 135, 90, 45, 0, 315, 270, 225])
    pts = np.concatenate([jaw, brow_l, brow_r, bridge, base, eye_l, eye_r, outer, inner])
    # pin the eye centres exactly
    pts[36:42] += np.subtract(EYE_CENTERS[0], pts[36:42].mean(axis=0))
    pts[42:48] += np.subtract(EYE_CENTERS[1], pts[42:48].mean(axis=0))
    return pts


_UNIT_TEMPLATE = _unit_template()


def canonical_template(size: float = 1.0) -> np.ndarray:
    """Mean-face template in a ``size`` x ``size`` frame.

    Eye centres sit at (0.31, 0.38) and (0.69, 0.38) of the unit square.
    """
    return _UNIT_TEMPLATE * float(size)


@dataclass(frozen=True)
class RegionDef:
    name: str
    indices: tuple[int, ...]
    margin: float

    def __post_init__(self):
        if not self.indices:
            raise ValueError(f"region {self.name!r} has no landmark indices")
        if min(self.indices) < 0 or max(self.indices) >= N_POINTS:
            raise ValueError(f"region {self.name!r} indices must lie in 0..{N_POINTS - 1}")
        if self.margin < 0:
            raise ValueError(f"region {self.name!r} margin must be nonnegative")


REGION_DEFS = {
    "whole_face": RegionDef("whole_face", tuple(range(68)), 0.1),
    "left_eye": RegionDef("left_eye", (*range(17, 22), *range(36, 42)), 0.6),
    "nose": RegionDef("nose", tuple(range(27, 36)), 0.5),
    "mouth": RegionDef("mouth", tuple(range(48, 68)), 0.4),
}
