"""Input validation helpers for the estimator API."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def as_sample_array(X, input_kind: str) -> np.ndarray:
    """Coerce user input to a (n, H, W, C) float64 sample block.

    Accepted: (n, H, W, C); (n, H, W) grayscale images; (n, D) plain
    vectors when input_kind == "features" (treated as 1x1xD maps).
    uint8 images are scaled to [0, 1].
    """
    X = np.asarray(X)
    if X.dtype == np.uint8:
        X = X.astype(np.float64) / 255.0
    else:
        X = X.astype(np.float64, copy=False)
    if X.ndim == 2 and input_kind == "features":
        X = X[:, None, None, :]
    elif X.ndim == 3:
        X = X[:, :, :, None]
    if X.ndim != 4:
        raise ShapeError(
            f"X must be (n,H,W,C), (n,H,W) or — for features — (n,D); got {X.shape}"
        )
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite values")
    return X


def check_labels(y, n_samples: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != n_samples:
        raise ShapeError(f"y must be a ({n_samples},) label vector, got {y.shape}")
    return y
