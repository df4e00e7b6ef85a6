"""Input validation helpers for the estimator facade."""
from __future__ import annotations

import numpy as np

from .errors import DimensionError


def check_image_batch(X, input_size: int) -> np.ndarray:
    """Coerce X to a float64 batch of shape (n, input_size, input_size, 3).

    Accepts a 4-D array, a single 3-D image, or a sequence of 3-D images.
    """
    if isinstance(X, (list, tuple)):
        X = np.stack([np.asarray(x, dtype=np.float64) for x in X])
    else:
        X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4 or X.shape[3] != 3:
        raise DimensionError(
            f"expected images of shape (n, H, W, 3), got {X.shape}")
    if X.shape[0] < 1:
        raise DimensionError("batch is empty")
    if X.shape[1] != input_size or X.shape[2] != input_size:
        raise DimensionError(
            f"images are {X.shape[1]}x{X.shape[2]}, the fitted config expects "
            f"{input_size}x{input_size}")
    if not np.isfinite(X).all():
        raise DimensionError("images contain non-finite values")
    return X


def check_seed(seed) -> int:
    if not isinstance(seed, (int, np.integer)) or isinstance(seed, bool) or seed < 0:
        raise DimensionError(f"seed must be a non-negative integer, got {seed!r}")
    return int(seed)
