"""Input validation helpers for the estimator API."""

from __future__ import annotations

import numpy as np

from .geometry import NORM_EPS


def check_image_batch(X, require_bounded: bool = False, name: str = "X"):
    """Validate and canonicalize an image batch.

    Accepts (N, H, W, C) float arrays (full images only), (N, 2, H, W, C)
    arrays (full and bounded stacked on axis 1), or a (full, bounded) pair.
    Returns (full, bounded) as float32 NCHW arrays, bounded possibly None.
    """
    if isinstance(X, (tuple, list)) and len(X) == 2:
        full = _check_single_batch(X[0], f"{name}[0]")
        bounded = _check_single_batch(X[1], f"{name}[1]")
        if full.shape != bounded.shape:
            raise ValueError(
                f"{name}: full and bounded batches differ in shape, "
                f"{full.shape} vs {bounded.shape}"
            )
        return full, bounded
    arr = np.asarray(X)
    if arr.ndim == 5:
        if arr.shape[1] != 2:
            raise ValueError(
                f"{name}: 5-d input must be (N, 2, H, W, C) with full and "
                f"bounded images on axis 1, got {arr.shape}"
            )
        return (
            _check_single_batch(arr[:, 0], f"{name}[:, 0]"),
            _check_single_batch(arr[:, 1], f"{name}[:, 1]"),
        )
    if arr.ndim == 4:
        if require_bounded:
            raise ValueError(
                f"{name}: the parallel variant needs bounded images; pass "
                f"(N, 2, H, W, C) or a (full, bounded) pair"
            )
        return _check_single_batch(arr, name), None
    raise ValueError(
        f"{name}: expected (N, H, W, C) or (N, 2, H, W, C) image data, got shape {arr.shape}"
    )


def _check_single_batch(arr, name: str) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.ndim != 4:
        raise ValueError(f"{name}: expected (N, H, W, C), got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError(f"{name}: empty batch")
    arr = arr.astype(np.float32, copy=False)
    if not np.isfinite(arr).all():
        raise ValueError(f"{name}: contains NaN or infinite pixels")
    if arr.max(initial=0.0) > 1.0 + 1e-3 or arr.min(initial=0.0) < -1e-3:
        raise ValueError(
            f"{name}: pixel values outside [0, 1] (range "
            f"[{arr.min():.3g}, {arr.max():.3g}]); divide uint8 images by 255"
        )
    # NHWC -> NCHW for the conv stack
    return np.ascontiguousarray(arr.transpose(0, 3, 1, 2))


def check_pose_labels(y, n_samples: int | None = None, name: str = "y") -> np.ndarray:
    """Validate 7-number pose labels; returns float64 with unit quaternions."""
    arr = np.asarray(y, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 7:
        raise ValueError(f"{name}: expected (N, 7) pose labels, got shape {arr.shape}")
    if n_samples is not None and arr.shape[0] != n_samples:
        raise ValueError(
            f"{name}: {arr.shape[0]} labels for {n_samples} samples"
        )
    if not np.isfinite(arr).all():
        raise ValueError(f"{name}: contains NaN or infinite values")
    norms = np.linalg.norm(arr[:, 3:], axis=1)
    bad = np.flatnonzero(norms <= NORM_EPS)
    if bad.size:
        raise ValueError(f"{name}: label {bad[0]} has a zero quaternion")
    out = arr.copy()
    out[:, 3:] /= norms[:, None]
    return out
