"""Synthetic inputs shared by the test modules."""

import numpy as np
from scipy import ndimage

from deepmatch.evalio import GroundTruthFlow


def make_texture(size, seed=0, blur=1.5):
    rng = np.random.default_rng(seed)
    h, w = (size, size) if np.isscalar(size) else size
    tex = ndimage.gaussian_filter(rng.random((h, w)), blur)
    return (tex - tex.min()) / (tex.max() - tex.min())


def translated_pair(size=128, shift=(20, 12), seed=0, blur=1.5):
    """Two crops of one texture; image 2 content sits ``shift`` pixels right/down of image 1."""
    dx, dy = shift
    pad = max(abs(dx), abs(dy)) + 8
    big = make_texture(size + 2 * pad, seed=seed, blur=blur)
    img1 = big[pad:pad + size, pad:pad + size]
    img2 = big[pad - dy:pad - dy + size, pad - dx:pad - dx + size]
    return img1, img2


def warp_pair(img, angle_deg=0.0, scale=1.0):
    """Image 2 is ``img`` rotated by ``angle_deg`` and scaled about the center.

    Returns (img2, GroundTruthFlow) where the mask keeps pixels whose target
    lies inside image 2.
    """
    h, w = img.shape[:2]
    c = np.array([w / 2.0, h / 2.0])
    th = np.deg2rad(angle_deg)
    A = scale * np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    Ai = np.linalg.inv(A)
    yy, xx = np.mgrid[0:h, 0:w]
    p = np.stack([xx + 0.5, yy + 0.5], axis=-1) - c
    src = p @ Ai.T + c - 0.5
    chans = img[..., None] if img.ndim == 2 else img
    out = np.stack(
        [ndimage.map_coordinates(chans[..., k], [src[..., 1], src[..., 0]], order=1, mode="reflect")
         for k in range(chans.shape[2])],
        axis=-1,
    )
    out = out[..., 0] if img.ndim == 2 else out
    tgt = p @ A.T + c
    flow = tgt - (p + c)
    mask = (tgt[..., 0] >= 0) & (tgt[..., 0] < w) & (tgt[..., 1] >= 0) & (tgt[..., 1] < h)
    return np.clip(out, 0, 1), GroundTruthFlow(flow, mask)


def natural_images(max_side=256):
    from skimage import data, transform

    out = {}
    for name in ("camera", "astronaut", "coffee", "chelsea", "rocket"):
        im = getattr(data, name)().astype(np.float64) / 255.0
        h, w = im.shape[:2]
        s = max_side / max(h, w)
        im = transform.resize(im, (int(h * s), int(w * s)), anti_aliasing=True)
        out[name] = np.clip(im, 0.0, 1.0)
    return out


def cell_hits(ms, shape, shift, tol):
    """Fraction of interior atomic cells holding a match within ``tol`` px of ``shift``."""
    ps = ms.patch_size
    h, w = shape
    dx, dy = shift
    hit, total = 0, 0
    err = np.hypot(ms.displacements[:, 0] - dx, ms.displacements[:, 1] - dy)
    cx = np.floor(ms.matches[:, 0] / ps).astype(int)
    cy = np.floor(ms.matches[:, 1] / ps).astype(int)
    for j in range(int(h // ps)):
        for i in range(int(w // ps)):
            x0, y0 = i * ps, j * ps
            # the whole cell maps inside image 2
            if not (x0 + dx >= 0 and x0 + ps + dx <= w and y0 + dy >= 0 and y0 + ps + dy <= h):
                continue
            total += 1
            sel = (cx == i) & (cy == j)
            hit += bool(np.any(err[sel] <= tol))
    return hit / total


def grid_matches(shape, shift, step=16):
    """Exact matches of a pure translation on a regular grid of pixel centers."""
    h, w = shape
    dx, dy = shift
    rows = []
    for y in range(step // 2, h, step):
        for x in range(step // 2, w, step):
            if 0 <= x + dx < w and 0 <= y + dy < h:
                rows.append([x + 0.5, y + 0.5, x + 0.5 + dx, y + 0.5 + dy, 1.0])
    return np.array(rows)
