"""Dense per-pixel oriented-gradient descriptors.

Every pixel gets a 9-vector: 8 non-negative oriented gradient responses
followed by a constant regularizer slot, L2-normalized. Two descriptors are
compared by dot product, so similarities always fall in [0, 1].
"""

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from ._validation import check_image, to_gray

N_ORIENTATIONS = 8
DESCRIPTOR_DIM = N_ORIENTATIONS + 1

# Gradients are taken on 8-bit intensities; the sigmoid slope is tuned for it.
INTENSITY_SCALE = 255.0


@dataclass(frozen=True)
class DescriptorParams:
    """Smoothing radii (Gaussian standard deviations, pixels), sigmoid slope and regularizer."""

    nu1: float = 1.0
    nu2: float = 1.0
    nu3: float = 1.0
    sigmoid_slope: float = 0.2
    regularizer: float = 0.3

    def __post_init__(self):
        if min(self.nu1, self.nu2, self.nu3) < 0:
            raise ValueError("smoothing radii must be >= 0")
        if self.sigmoid_slope <= 0:
            raise ValueError("sigmoid_slope must be > 0")
        if self.regularizer <= 0:
            raise ValueError("regularizer must be > 0")

    @classmethod
    def for_uncompressed(cls, **overrides):
        """Lighter pre-smoothing and regularizer for lossless (PNG) inputs."""
        kw = dict(nu1=0.0, regularizer=0.1)
        kw.update(overrides)
        return cls(**kw)

    def as_dict(self):
        return asdict(self)


def gaussian_smooth(arr, sigma, axes=(0, 1)):
    """Gaussian blur truncated at 4 sigma with replicated borders; sigma=0 is a no-op."""
    if sigma <= 0:
        return np.array(arr, dtype=np.float64, copy=True)
    out = np.asarray(arr, dtype=np.float64)
    for ax in axes:
        out = ndimage.gaussian_filter1d(out, sigma, axis=ax, mode="nearest", truncate=4.0)
    return out


def central_gradient(img):
    """Central differences (f(x+1) - f(x-1)) / 2 with replicated borders. Returns (gx, gy)."""
    padded = np.pad(img, 1, mode="edge")
    gx = 0.5 * (padded[1:-1, 2:] - padded[1:-1, :-2])
    gy = 0.5 * (padded[2:, 1:-1] - padded[:-2, 1:-1])
    return gx, gy


def orientation_directions():
    i = np.arange(1, N_ORIENTATIONS + 1)
    return np.cos(i * np.pi / 4), np.sin(i * np.pi / 4)


def compute_descriptors(img, params=None):
    """Return a (H, W, 9) float32 field of unit-norm, non-negative descriptors."""
    params = DescriptorParams() if params is None else params
    gray = to_gray(check_image(img)) * INTENSITY_SCALE
    gray = gaussian_smooth(gray, params.nu1)
    gx, gy = central_gradient(gray)

    cos_d, sin_d = orientation_directions()
    hist = np.maximum(gx[:, :, None] * cos_d + gy[:, :, None] * sin_d, 0.0)
    hist = gaussian_smooth(hist, params.nu2)
    hist = 2.0 / (1.0 + np.exp(-params.sigmoid_slope * hist)) - 1.0
    hist = gaussian_smooth(hist, params.nu3)

    h, w = gray.shape
    desc = np.empty((h, w, DESCRIPTOR_DIM), dtype=np.float64)
    desc[:, :, :N_ORIENTATIONS] = np.maximum(hist, 0.0)
    desc[:, :, N_ORIENTATIONS] = params.regularizer
    desc /= np.linalg.norm(desc, axis=2, keepdims=True)
    return desc.astype(np.float32)


def descriptor_similarity(a, b):
    """Dot product of two descriptors (broadcast over leading axes)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.sum(a * b, axis=-1)
