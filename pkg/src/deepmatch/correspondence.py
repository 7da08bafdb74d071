"""Top-down correspondence extraction and the full matching pipeline.

Every cell of every top-level correlation map is an entry point. Entry
tuples are pushed down one level at a time by undoing the max-pooling of each
quadrant; a tuple's score accumulates the correlation values along its path,
and tuples landing on the same (level, patch, position) keep only the best
score. The surviving atomic correspondences are then reciprocally filtered on
4x4-pixel cells of both images.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from ._validation import check_image
from .descriptor import DescriptorParams, compute_descriptors
from .pyramid import (
    ATOMIC_SIZE,
    DEFAULT_LAMBDA,
    QUADRANT_OFFSETS,
    build_pyramid,
    build_pyramid_approx,
)
from .quantize import cluster_prototypes
from .resample import downsize

# pooling window, lexicographic in (dy, dx): the first maximum wins ties
_WINDOW = np.array([(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)], dtype=np.int64)


class Match(NamedTuple):
    x1: float
    y1: float
    x2: float
    y2: float
    score: float


@dataclass
class MatchSet:
    """Matches as an ``(n, 5)`` array of ``x1 y1 x2 y2 score`` rows.

    ``patch_size`` is the side, in image-1 pixels, of the atomic patch each
    match stands for.
    """

    matches: np.ndarray
    params_fingerprint: str = ""
    patch_size: float = float(ATOMIC_SIZE)

    def __post_init__(self):
        self.matches = np.asarray(self.matches, dtype=np.float64).reshape(-1, 5)

    def __len__(self):
        return len(self.matches)

    def __iter__(self):
        return (Match(*row) for row in self.matches.tolist())

    @property
    def displacements(self):
        return self.matches[:, 2:4] - self.matches[:, 0:2]


@dataclass(frozen=True)
class MatchParams:
    """Settings of the matching pipeline.

    ``resolution`` is the internal working scale R (images are box-downsized
    by 1/R before matching); ``dict_size`` of 0 selects exact mode.
    """

    resolution: float = 0.5
    dict_size: int = 0
    lam: float = DEFAULT_LAMBDA
    descriptor: DescriptorParams = field(default_factory=DescriptorParams)
    kmeans_iters: int = 20
    seed: int = 0
    n_threads: int = 1

    def __post_init__(self):
        if not 0 < self.resolution <= 1:
            raise ValueError("resolution must be in (0, 1]")
        if self.dict_size < 0:
            raise ValueError("dict_size must be >= 0")
        if self.lam <= 0:
            raise ValueError("lam must be > 0")

    def fingerprint(self):
        d = asdict(self)
        d.pop("n_threads")
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def undo_max(child_map, parent_pos, quadrant):
    """Best child placement for one quadrant of a parent at level coords ``parent_pos``.

    Returns ``((x, y), value)`` in child-map coordinates, or ``None`` when all
    nine candidates fall outside the map.
    """
    h, w = child_map.shape
    ox, oy = QUADRANT_OFFSETS[quadrant]
    cx = 2 * (int(parent_pos[0]) + ox)
    cy = 2 * (int(parent_pos[1]) + oy)
    best = None
    for dy, dx in _WINDOW:
        y, x = cy + dy, cx + dx
        if 0 <= y < h and 0 <= x < w:
            v = float(child_map[y, x])
            if best is None or v > best[1]:
                best = ((int(x), int(y)), v)
    return best


def _dedup(idx, ys, xs, scores, h, w):
    """Keep the highest score per (patch, y, x); output sorted by that key."""
    key = (idx * h + ys) * w + xs
    order = np.lexsort((-scores, key))
    key = key[order]
    keep = np.ones(len(key), dtype=bool)
    keep[1:] = key[1:] != key[:-1]
    sel = order[keep]
    return idx[sel], ys[sel], xs[sel], scores[sel]


def _descend(pyr, level, idx, ys, xs, scores, stats=None):
    """Apply one backtracking step from ``level`` to ``level - 1``."""
    parent = pyr.levels[level]
    child = pyr.levels[level - 1]
    h, w = child.maps.shape[1:]
    out = []
    touched = []
    for i, (ox, oy) in enumerate(QUADRANT_OFFSETS):
        cidx = parent.grid.children[idx, i]
        ok = cidx >= 0
        if not ok.any():
            continue
        cidx = cidx[ok]
        rows = child.map_index[cidx]
        cy = 2 * (ys[ok] + oy)
        cx = 2 * (xs[ok] + ox)
        cand_y = cy[:, None] + _WINDOW[None, :, 0]
        cand_x = cx[:, None] + _WINDOW[None, :, 1]
        inb = (cand_y >= 0) & (cand_y < h) & (cand_x >= 0) & (cand_x < w)
        vals = np.full(cand_y.shape, -np.inf)
        r2 = np.broadcast_to(rows[:, None], cand_y.shape)
        vals[inb] = child.maps[r2[inb], cand_y[inb], cand_x[inb]]
        if stats is not None:
            touched.append(((r2[inb] * h + cand_y[inb]) * w + cand_x[inb]))
        best = np.argmax(vals, axis=1)
        bval = vals[np.arange(len(best)), best]
        alive = np.isfinite(bval)
        sel = np.flatnonzero(alive)
        out.append((
            cidx[sel],
            cand_y[sel, best[sel]],
            cand_x[sel, best[sel]],
            scores[ok][sel] + bval[sel].astype(np.float64),
        ))
    if stats is not None:
        cells = np.unique(np.concatenate(touched)) if touched else np.empty(0)
        stats.setdefault("examined_cells", {})[level - 1] = int(len(cells))
    if not out:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty, empty, np.empty(0)
    idx, ys, xs, scores = (np.concatenate(parts) for parts in zip(*out))
    return _dedup(idx, ys, xs, scores, h, w)


def backtrack_all(pyr, stats=None):
    """Atomic correspondences from all top-level entry points.

    Returns an ``(n, 5)`` array ``x1 y1 x2 y2 score`` in working-resolution
    pixels; ``x1, y1`` are atomic centers and ``x2, y2`` pixels of image 2.
    """
    top = len(pyr.levels) - 1
    lv = pyr.levels[top]
    h, w = lv.maps.shape[1:]
    n = len(lv.grid)
    idx = np.repeat(np.arange(n, dtype=np.int64), h * w)
    cells = np.tile(np.arange(h * w, dtype=np.int64), n)
    ys, xs = cells // w, cells % w
    scores = lv.maps[lv.map_index[idx], ys, xs].astype(np.float64)
    if stats is not None:
        stats["entry_points"] = int(len(idx))
    for level in range(top, 0, -1):
        idx, ys, xs, scores = _descend(pyr, level, idx, ys, xs, scores, stats)
    pos = pyr.levels[0].grid.positions[idx]
    return np.column_stack([pos[:, 0], pos[:, 1], xs, ys, scores]).astype(np.float64)


def reciprocal_filter(raw, cell=ATOMIC_SIZE):
    """Keep matches that are the best of their image-1 cell and of their image-2 cell.

    Cells are aligned ``cell`` x ``cell`` squares. Ties go to the smaller
    ``(y1, x1, y2, x2)``. Input and output are ``(n, 5)`` arrays; the output
    is sorted by ``(y1, x1)``.
    """
    raw = np.asarray(raw, dtype=np.float64).reshape(-1, 5)
    if len(raw) == 0:
        return raw.copy()
    x1, y1, x2, y2, s = raw.T
    rank = np.lexsort((x2, y2, x1, y1, -s))
    c1 = np.floor(raw[:, 0:2] / cell).astype(np.int64)
    c2 = np.floor(raw[:, 2:4] / cell).astype(np.int64)

    def best_of(c):
        key = c[rank]
        _, first = np.unique(key, axis=0, return_index=True)
        winner = np.zeros(len(raw), dtype=bool)
        winner[rank[first]] = True
        return winner

    keep = best_of(c1) & best_of(c2)
    out = raw[keep]
    return out[np.lexsort((out[:, 0], out[:, 1]))]


def _prepare(img, resolution):
    img = check_image(img)
    if resolution == 1:
        return img, (1.0, 1.0)
    return downsize(img, 1.0 / resolution)


def raw_matches(img1, img2, params=None, stats=None):
    """Unfiltered atomic correspondences in original pixel coordinates."""
    params = MatchParams() if params is None else params
    small1, (sx1, sy1) = _prepare(img1, params.resolution)
    small2, (sx2, sy2) = _prepare(img2, params.resolution)
    if min(small1.shape[:2]) < ATOMIC_SIZE:
        raise ValueError("first image is smaller than one atomic patch at the working resolution")
    f1 = compute_descriptors(small1, params.descriptor)
    f2 = compute_descriptors(small2, params.descriptor)
    if params.dict_size > 0:
        dictionary = cluster_prototypes(f1, params.dict_size, iters=params.kmeans_iters, seed=params.seed)
        pyr = build_pyramid_approx(f1, f2, dictionary, lam=params.lam, n_threads=params.n_threads)
    else:
        pyr = build_pyramid(f1, f2, lam=params.lam, n_threads=params.n_threads)
    if stats is not None:
        stats["pyramid_bytes"] = pyr.nbytes
        stats["levels"] = len(pyr)
        stats["distinct_maps"] = [len(lv.maps) for lv in pyr.levels]
    raw = backtrack_all(pyr, stats=stats)
    return raw, (sx1, sy1, sx2, sy2)


def _rescale(m, scales):
    sx1, sy1, sx2, sy2 = scales
    out = m.copy()
    out[:, 0] *= sx1
    out[:, 1] *= sy1
    out[:, 2] *= sx2
    out[:, 3] *= sy2
    return out


def deep_matching(img1, img2, params=None, stats=None):
    """Dense matches from ``img1`` to ``img2`` as a reciprocally filtered MatchSet."""
    params = MatchParams() if params is None else params
    raw, scales = raw_matches(img1, img2, params, stats=stats)
    filtered = reciprocal_filter(raw, cell=ATOMIC_SIZE)
    return MatchSet(
        matches=_rescale(filtered, scales),
        params_fingerprint=params.fingerprint(),
        patch_size=ATOMIC_SIZE * scales[0],
    )


def deep_matching_raw(img1, img2, params=None):
    """Rescaled but unfiltered correspondences (input to the invariant merge)."""
    raw, scales = raw_matches(img1, img2, params)
    return _rescale(raw, scales)


def random_backtrack(top_size, n_samples, rng):
    """Atomic correspondences of random feasible warps.

    Simulates backtracking from one entry point of a ``top_size`` patch
    centered in a ``top_size`` x ``top_size`` image, drawing each undo offset
    uniformly from {-1, 0, 1}^2 instead of taking the argmax. Returns
    ``(src, dst)`` with ``src`` of shape (n_atomic, 2) and ``dst`` of shape
    (n_samples, n_atomic, 2), both in pixels.
    """
    levels = int(np.log2(top_size // ATOMIC_SIZE))
    center = top_size // 2
    src = np.array([[center, center]])
    dst = np.zeros((n_samples, 1, 2), dtype=np.int64)
    # at level l, level coordinates are pixels / 2**l; the entry sits at the same place
    dst[:, 0, :] = center >> levels
    for level in range(levels, 0, -1):
        step = 1 << level
        src = (src[:, None, :] + step * QUADRANT_OFFSETS[None, :, :]).reshape(-1, 2)
        base = 2 * (dst[:, :, None, :] + QUADRANT_OFFSETS[None, None, :, :])
        jitter = rng.integers(-1, 2, size=base.shape)
        dst = (base + jitter).reshape(n_samples, -1, 2)
    return src, dst
