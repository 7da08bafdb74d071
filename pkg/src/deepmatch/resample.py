"""Image resampling: area downsizing and rotation onto an enlarged canvas.

Coordinates here are continuous with pixel ``i`` covering ``[i, i + 1)``,
which is also the convention of match endpoints.
"""

import numpy as np
from scipy import ndimage

from ._validation import as_channels


def _area_weights(n_in, n_out):
    scale = n_in / n_out
    lo = np.arange(n_out)[:, None] * scale
    hi = lo + scale
    j = np.arange(n_in)[None, :]
    overlap = np.clip(np.minimum(hi, j + 1) - np.maximum(lo, j), 0.0, None)
    return overlap / scale


def resize_area(img, out_h, out_w):
    """Box-filter resize; each output pixel averages the input area it covers."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    if (out_h, out_w) == (h, w):
        return img.copy()
    wy = _area_weights(h, out_h)
    wx = _area_weights(w, out_w)
    out = np.einsum("ij,jk...->ik...", wy, img)
    return np.einsum("lk,ik...->il...", wx, out)


def downsize(img, factor):
    """Shrink by ``factor`` >= 1. Returns (image, (sx, sy)) where sx, sy map output to input coords."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    out_h = max(1, int(round(h / factor)))
    out_w = max(1, int(round(w / factor)))
    return resize_area(img, out_h, out_w), (w / out_w, h / out_h)


def rotation_matrix(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def rotated_canvas_shape(h, w, theta):
    c, s = abs(np.cos(theta)), abs(np.sin(theta))
    # round before ceil so exact multiples of pi/2 do not grow by one pixel
    cw = int(np.ceil(np.round(w * c + h * s, 6)))
    ch = int(np.ceil(np.round(w * s + h * c, 6)))
    return ch, cw


class CanvasRotation:
    """Content rotation by ``-theta`` on a canvas that fully contains the image.

    ``to_source`` maps canvas coordinates back to the input frame:
    ``p = c_src + R(theta) (q - c_canvas)``.
    """

    def __init__(self, shape, theta):
        self.theta = float(theta)
        h, w = shape[:2]
        self.src_shape = (h, w)
        self.shape = rotated_canvas_shape(h, w, theta)
        self.src_center = np.array([w / 2.0, h / 2.0])
        self.canvas_center = np.array([self.shape[1] / 2.0, self.shape[0] / 2.0])
        self.R = rotation_matrix(theta)

    def to_source(self, pts):
        pts = np.asarray(pts, dtype=np.float64)
        return self.src_center + (pts - self.canvas_center) @ self.R.T

    def to_canvas(self, pts):
        pts = np.asarray(pts, dtype=np.float64)
        return self.canvas_center + (pts - self.src_center) @ self.R

    def apply(self, img):
        """Bilinear resampling with edge replication outside the source."""
        img = np.asarray(img, dtype=np.float64)
        ch, cw = self.shape
        yy, xx = np.mgrid[0:ch, 0:cw]
        q = np.stack([xx.ravel() + 0.5, yy.ravel() + 0.5], axis=1)
        src = self.to_source(q) - 0.5
        coords = [src[:, 1], src[:, 0]]
        chans = as_channels(img)
        out = np.empty((ch, cw, chans.shape[2]))
        for c in range(chans.shape[2]):
            out[:, :, c] = ndimage.map_coordinates(chans[:, :, c], coords, order=1, mode="nearest").reshape(ch, cw)
        out = np.clip(out, 0.0, 1.0)
        return out[:, :, 0] if img.ndim == 2 else out


def bilinear_sample(arr, x, y):
    """Sample a 2-D array at pixel-index coordinates with edge replication."""
    return ndimage.map_coordinates(np.asarray(arr, dtype=np.float64), [y, x], order=1, mode="nearest")
