"""Input checks shared by the estimators and the command line."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_is_fitted  # noqa: F401  (re-export)

from .tensor import DTYPE


def check_image_stack(X, n_images: int, input_size: int | None = None, name: str = "X") -> np.ndarray:
    """Validate an (N, n_images, C, H, W) stack of square images as float32."""
    arr = np.asarray(X, dtype=DTYPE)
    if arr.ndim != 5 or arr.shape[1] != n_images:
        raise ValueError(
            f"{name} must have shape (n_samples, {n_images}, channels, height, width), got {arr.shape}")
    if arr.shape[0] < 1:
        raise ValueError(f"{name} has no samples")
    if arr.shape[3] != arr.shape[4]:
        raise ValueError(f"{name} images must be square, got {arr.shape[3]}x{arr.shape[4]}")
    if input_size is not None and arr.shape[3] != input_size:
        raise ValueError(f"{name} images are {arr.shape[3]} px, the network expects {input_size}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains NaN or infinity")
    return arr


def check_labels(y, n_samples: int, num_classes: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n_samples,):
        raise ValueError(f"y must have shape ({n_samples},), got {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValueError("labels must be integers")
    y = y.astype(np.int64)
    bad = np.flatnonzero((y < 0) | (y >= num_classes))
    if bad.size:
        raise ValueError(f"label {y[bad[0]]} of sample {bad[0]} outside 0..{num_classes - 1}")
    return y
