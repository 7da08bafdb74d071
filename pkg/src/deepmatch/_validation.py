"""Input validation helpers shared by the functional API and the estimators."""

import numpy as np


def check_image(img, name="image", min_size=1):
    """Return ``img`` as a float64 array of shape (H, W) or (H, W, 3) in [0, 1].

    Integer inputs are scaled by their dtype maximum; boolean inputs map to
    {0, 1}. Raises ``ValueError`` on any other shape or on non-finite or
    out-of-range samples.
    """
    arr = np.asarray(img)
    if arr.dtype == bool:
        arr = arr.astype(np.float64)
    elif np.issubdtype(arr.dtype, np.integer):
        arr = arr.astype(np.float64) / np.iinfo(arr.dtype).max
    else:
        arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim == 3 and arr.shape[2] == 4:
        arr = arr[:, :, :3]
    if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
        raise ValueError(f"{name} must have shape (H, W) or (H, W, 3), got {arr.shape}")
    if arr.shape[0] < min_size or arr.shape[1] < min_size:
        raise ValueError(f"{name} is {arr.shape[1]}x{arr.shape[0]}, needs at least {min_size}x{min_size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite samples")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name} samples must lie in [0, 1]")
    return arr


def to_gray(img):
    """Unweighted channel mean; 2-D inputs pass through."""
    img = np.asarray(img, dtype=np.float64)
    return img.mean(axis=2) if img.ndim == 3 else img


def as_channels(img):
    """View an image as (H, W, C) with C >= 1."""
    img = np.asarray(img, dtype=np.float64)
    return img[:, :, None] if img.ndim == 2 else img


def check_flow(flow, name="flow"):
    arr = np.asarray(flow, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise ValueError(f"{name} must have shape (H, W, 2), got {arr.shape}")
    return arr


def check_random_state(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
