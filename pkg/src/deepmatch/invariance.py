"""Scale- and rotation-invariant matching over a fixed lattice of warps.

Plain matching tolerates moderate rotations and scale changes. Running it on
8 rotations (steps of pi/4) and 9 scale ratios (steps of sqrt 2) of the
image pair, rectifying every raw correspondence back to the input frames and
reciprocally filtering the union recovers arbitrary in-plane rotations and
scale changes up to 4x.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._validation import check_image
from .correspondence import MatchParams, MatchSet, deep_matching_raw, reciprocal_filter
from .pyramid import ATOMIC_SIZE
from .resample import CanvasRotation, downsize

SIGMAS = tuple(np.arange(-2.0, 2.01, 0.5))
THETAS = tuple(k * np.pi / 4 for k in range(8))


@dataclass(frozen=True)
class WarpCell:
    """One lattice cell: log2 scale ratio ``sigma`` and rotation ``theta``."""

    sigma: float
    theta: float

    @property
    def sigma1(self):
        return max(1.0, 2.0 ** self.sigma)

    @property
    def sigma2(self):
        return max(1.0, 2.0 ** -self.sigma)


def warp_cells(sigmas=SIGMAS, thetas=THETAS):
    return [WarpCell(float(s), float(t)) for s in sigmas for t in thetas]


def _shrink(img, factor):
    if factor == 1.0:
        return img, (1.0, 1.0)
    return downsize(img, factor)


class _CellRunner:
    def __init__(self, img1, img2, params):
        self.img1 = img1
        self.img2 = img2
        self.params = params
        self._cache1 = {}
        self._cache2 = {}

    def _scaled(self, cache, img, factor):
        if factor not in cache:
            cache[factor] = _shrink(img, factor)
        return cache[factor]

    def prepare(self, cells):
        # fill caches up front so worker threads only read them
        for c in cells:
            self._scaled(self._cache1, self.img1, c.sigma1)
            self._scaled(self._cache2, self.img2, c.sigma2)

    def __call__(self, cell):
        small1, (ax, ay) = self._scaled(self._cache1, self.img1, cell.sigma1)
        small2, (bx, by) = self._scaled(self._cache2, self.img2, cell.sigma2)
        if min(small1.shape[:2]) * self.params.resolution < ATOMIC_SIZE:
            return np.empty((0, 5))
        rot = CanvasRotation(small2.shape, cell.theta)
        canvas = rot.apply(small2)
        raw = deep_matching_raw(small1, canvas, self.params)
        return rectify(raw, cell, rot, (ax, ay), (bx, by), self.img2.shape[:2])


def rectify(raw, cell, rot, scale1, scale2, shape2):
    """Map matches of one cell (image-1 downsized, image-2 canvas coords) to the input frames.

    Matches whose image-2 end falls outside image 2 are dropped.
    """
    out = np.asarray(raw, dtype=np.float64).reshape(-1, 5).copy()
    out[:, 0] *= scale1[0]
    out[:, 1] *= scale1[1]
    p2 = rot.to_source(out[:, 2:4])
    out[:, 2] = p2[:, 0] * scale2[0]
    out[:, 3] = p2[:, 1] * scale2[1]
    h2, w2 = shape2
    ok = (out[:, 2] >= 0) & (out[:, 2] < w2) & (out[:, 3] >= 0) & (out[:, 3] < h2)
    return out[ok]


def invariant_raw_matches(img1, img2, params=None, cells=None, n_jobs=1, per_cell=None):
    """Union of rectified raw correspondences over all lattice cells.

    ``per_cell``, when a list, receives ``(cell, n_matches)`` in cell order.
    """
    params = MatchParams() if params is None else params
    img1 = check_image(img1, "img1")
    img2 = check_image(img2, "img2")
    cells = warp_cells() if cells is None else list(cells)
    runner = _CellRunner(img1, img2, params)
    runner.prepare(cells)
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(runner, cells))
    else:
        parts = [runner(c) for c in cells]
    if per_cell is not None:
        per_cell.extend((c, len(p)) for c, p in zip(cells, parts))
    return np.concatenate(parts) if parts else np.empty((0, 5))


def match_invariant(img1, img2, params=None, cells=None, n_jobs=1, per_cell=None):
    """Scale- and rotation-invariant matches from ``img1`` to ``img2``."""
    params = MatchParams() if params is None else params
    union = invariant_raw_matches(img1, img2, params, cells=cells, n_jobs=n_jobs, per_cell=per_cell)
    # the union lives in the input frames, so verification cells are input pixels
    return MatchSet(
        matches=reciprocal_filter(union, cell=ATOMIC_SIZE),
        params_fingerprint=params.fingerprint() + "-inv",
        patch_size=ATOMIC_SIZE / params.resolution,
    )
