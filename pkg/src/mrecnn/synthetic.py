"""Class-coded geometric image pairs for smoke tests and desk-scale demos."""
from __future__ import annotations

import numpy as np

from .rng import make_generator
from .training import PairDataset


def _pattern(cls: int, size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    cy, cx = 0.5 + rng.uniform(-0.08, 0.08, size=2)
    phase = rng.uniform(0, 1)
    if cls == 0:
        img = (np.sin(2 * np.pi * (4 * yy + phase)) > 0)
    elif cls == 1:
        img = (np.sin(2 * np.pi * (4 * xx + phase)) > 0)
    elif cls == 2:
        img = (np.sin(2 * np.pi * (3 * (xx + yy) + phase)) > 0)
    elif cls == 3:
        img = np.hypot(yy - cy, xx - cx) < 0.25
    elif cls == 4:
        img = (np.abs(yy - cy) < 0.22) & (np.abs(xx - cx) < 0.22)
    elif cls == 5:
        img = (np.abs(yy - cy) < 0.07) | (np.abs(xx - cx) < 0.07)
    else:
        img = ((np.floor(4 * yy + phase) + np.floor(4 * xx + phase)) % 2) > 0
    return img.astype(np.float32)


def make_pair_dataset(per_class: int = 8, size: int = 32, num_classes: int = 7,
                      seed: int = 0, noise: float = 0.05) -> PairDataset:
    """Pairs whose face and region images both encode the class.

    The face image carries the class pattern in all channels; the region image
    carries it in one class-dependent channel, so both branches see signal.
    """
    rng = make_generator(seed, 11)
    faces, regions, labels = [], [], []
    for cls in range(num_classes):
        for _ in range(per_class):
            p = _pattern(cls % 7, size, rng)
            face = np.repeat(p[None], 3, axis=0) + noise * rng.standard_normal((3, size, size))
            q = _pattern(cls % 7, size, rng)
            region = noise * rng.standard_normal((3, size, size))
            region[cls % 3] += q
            faces.append(face - 0.5)
            regions.append(region - 0.5 / 3)
            labels.append(cls)
    return PairDataset(np.asarray(faces, np.float32), np.asarray(regions, np.float32),
                       np.asarray(labels))
