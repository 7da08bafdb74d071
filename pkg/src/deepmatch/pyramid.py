"""Bottom-up multi-level correlation pyramid.

Level 0 holds one correlation map per 4x4 atomic patch of the first image,
computed against every pixel of the second image. Each higher level doubles
the patch size: a parent's map is the rectified average of its (up to four)
children's maps after 3x3 max-pooling, factor-2 decimation and a unit shift
toward the child's quadrant.

Maps are stored per level as a ``(m, h, w)`` float32 stack plus a
``map_index`` array giving the stack row of every grid position, so that
approximate mode can share one map between many patches.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .descriptor import DESCRIPTOR_DIM

ATOMIC_SIZE = 4
# quadrant offsets (dx, dy), indexed by child slot i = 0..3
QUADRANT_OFFSETS = np.array([[-1, -1], [-1, 1], [1, -1], [1, 1]], dtype=np.int64)
DEFAULT_LAMBDA = 1.4

_CHUNK = 64


@dataclass
class PatchGrid:
    """Patch centers ``(x, y)`` of one pyramid level, in image-1 pixels.

    ``children[k, i]`` is the index (into the previous level's grid) of the
    child in quadrant ``i`` of patch ``k``, or -1 when that child is absent.
    Level 0 has no children.
    """

    level: int
    positions: np.ndarray
    children: np.ndarray = None

    @property
    def patch_size(self):
        return ATOMIC_SIZE << self.level

    def __len__(self):
        return len(self.positions)


@dataclass
class PyramidLevel:
    grid: PatchGrid
    maps: np.ndarray
    map_index: np.ndarray

    def map_for(self, k):
        return self.maps[self.map_index[k]]

    @property
    def nbytes(self):
        return self.maps.nbytes


@dataclass
class CorrelationPyramid:
    levels: list
    shape1: tuple
    shape2: tuple
    lam: float = DEFAULT_LAMBDA
    stats: dict = field(default_factory=dict)

    @property
    def top_level_size(self):
        return self.levels[-1].grid.patch_size

    @property
    def nbytes(self):
        return sum(lv.nbytes for lv in self.levels)

    def __len__(self):
        return len(self.levels)


def map_shape(shape2, level):
    """Correlation-map size for image-2 shape ``(H', W')`` at ``level``."""
    f = 1 << level
    return (-(-shape2[0] // f), -(-shape2[1] // f))


def atomic_grid(width, height):
    """Centers {2, 6, ..., <= W-2} x {2, 6, ..., <= H-2}, row-major (y then x)."""
    xs = np.arange(2, width - 1, ATOMIC_SIZE)
    ys = np.arange(2, height - 1, ATOMIC_SIZE)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    pos = np.stack([xx.ravel(), yy.ravel()], axis=1).astype(np.int64)
    return PatchGrid(level=0, positions=pos)


def parent_grid(child, width, height):
    """Grid of level ``child.level + 1``.

    A center ``p`` inside the image is kept iff at least one of
    ``p + 2**level * o_i`` is a child center.
    """
    level = child.level + 1
    step = 1 << level
    cpos = child.positions
    cand = (cpos[:, None, :] - step * QUADRANT_OFFSETS[None, :, :]).reshape(-1, 2)
    inside = (cand[:, 0] >= 0) & (cand[:, 0] < width) & (cand[:, 1] >= 0) & (cand[:, 1] < height)
    cand = np.unique(cand[inside], axis=0)
    # row-major order: sort by y then x
    cand = cand[np.lexsort((cand[:, 0], cand[:, 1]))]

    lookup = {(int(x), int(y)): k for k, (x, y) in enumerate(cpos)}
    children = np.full((len(cand), 4), -1, dtype=np.int64)
    for i, (dx, dy) in enumerate(QUADRANT_OFFSETS):
        for k, (x, y) in enumerate(cand):
            children[k, i] = lookup.get((int(x + step * dx), int(y + step * dy)), -1)
    return PatchGrid(level=level, positions=cand, children=children)


def num_levels(width, height):
    """Level count implied by a first image of size W x H (an upper bound for very thin images)."""
    n, size = 1, ATOMIC_SIZE
    while size < max(width, height):
        size *= 2
        n += 1
    return n


def extract_patches(field1, grid):
    """Stack the 4x4x9 descriptor blocks around each atomic center."""
    out = np.empty((len(grid), ATOMIC_SIZE, ATOMIC_SIZE, DESCRIPTOR_DIM), dtype=np.float32)
    for k, (x, y) in enumerate(grid.positions):
        out[k] = field1[y - 2:y + 2, x - 2:x + 2]
    return out


def _unfold(field2):
    """Rows of the (H'*W', 144) matrix of 4x4 windows aligned at every pixel.

    The window at ``p'`` spans ``p' - 2 .. p' + 1``; pixels outside the image
    contribute zeros.
    """
    h, w, c = field2.shape
    padded = np.zeros((h + 3, w + 3, c), dtype=np.float64)
    padded[2:h + 2, 2:w + 2] = field2
    win = np.lib.stride_tricks.sliding_window_view(padded, (4, 4), axis=(0, 1))
    # (h, w, c, 4, 4) -> (h, w, 4, 4, c)
    return np.ascontiguousarray(win.transpose(0, 1, 3, 4, 2)).reshape(h * w, -1)


def _run_chunks(fn, n, n_threads):
    starts = range(0, n, _CHUNK)
    with threadpool_limits(limits=1, user_api="blas"):
        if n_threads > 1 and n > _CHUNK:
            with ThreadPoolExecutor(max_workers=n_threads) as ex:
                list(ex.map(fn, starts))
        else:
            for s in starts:
                fn(s)


def atomic_correlation(patch_desc, field2, lam=DEFAULT_LAMBDA, n_threads=1):
    """Rectified level-0 correlation maps.

    ``patch_desc`` is one (4, 4, 9) block or a stack of them. The score at
    ``p'`` is the mean of the 16 pixel-wise dot products between the patch and
    the window of ``field2`` aligned at ``p'``, raised to ``lam``.
    """
    patches = np.asarray(patch_desc, dtype=np.float64)
    single = patches.ndim == 3
    if single:
        patches = patches[None]
    h, w = field2.shape[:2]
    flat = patches.reshape(len(patches), -1)
    unfolded_t = _unfold(field2).T.copy()
    out = np.empty((len(patches), h, w), dtype=np.float32)

    def work(s):
        block = flat[s:s + _CHUNK] @ unfolded_t
        block *= 1.0 / 16.0
        np.clip(block, 0.0, 1.0, out=block)
        np.power(block, lam, out=block)
        out[s:s + _CHUNK] = block.reshape(-1, h, w)

    _run_chunks(work, len(patches), n_threads)
    return out[0] if single else out


def pool_subsample(maps, border=0):
    """Fused 3x3 max-pool and factor-2 decimation (keeps even coordinates).

    Output ``q`` is the max over the window centered at ``2q``; out-of-map
    candidates are ignored (scores are non-negative, so zero padding does it).
    ``border`` adds that many rows/columns of zeros around each output map.
    """
    maps = np.asarray(maps)
    squeeze = maps.ndim == 2
    if squeeze:
        maps = maps[None]
    m, h, w = maps.shape
    hq, wq = (h + 1) // 2, (w + 1) // 2
    b = border
    full = np.zeros((m, hq + 2 * b, wq + 2 * b), dtype=maps.dtype)
    out = full[:, b:b + hq, b:b + wq]
    for s in range(0, m, _CHUNK):
        blk = maps[s:s + _CHUNK]
        pad = np.zeros((len(blk), 2 * hq + 1, 2 * wq + 1), dtype=maps.dtype)
        pad[:, 1:h + 1, 1:w + 1] = blk
        res = pad[:, 0:2 * hq:2, 0:2 * wq:2].copy()
        for dy in range(3):
            for dx in range(3):
                if dy or dx:
                    np.maximum(res, pad[:, dy:dy + 2 * hq:2, dx:dx + 2 * wq:2], out=res)
        out[s:s + _CHUNK] = res
    return full[0] if squeeze else full


def shift_map(pooled, offset):
    """Parent-frame view of a pooled child map: ``out(p') = pooled(p' + o)``, zero outside."""
    dx, dy = int(offset[0]), int(offset[1])
    h, w = pooled.shape[-2:]
    pad = np.zeros(pooled.shape[:-2] + (h + 2, w + 2), dtype=pooled.dtype)
    pad[..., 1:h + 1, 1:w + 1] = pooled
    return pad[..., 1 + dy:1 + dy + h, 1 + dx:1 + dx + w]


def aggregate_level(child_level, grid, lam=DEFAULT_LAMBDA, share=False, n_threads=1):
    """Build the maps of ``grid`` (level l+1) from ``child_level`` (level l).

    With ``share=True`` parents whose children point at identical map rows
    (same rows, same quadrants) get a single shared map.
    """
    child_rows = np.where(grid.children >= 0, child_level.map_index[np.maximum(grid.children, 0)], -1)
    if share:
        sig, first, inverse = np.unique(child_rows, axis=0, return_index=True, return_inverse=True)
        order = np.argsort(first, kind="stable")
        rank = np.empty_like(order)
        rank[order] = np.arange(len(order))
        signatures = sig[order]
        map_index = rank[inverse.ravel()]
    else:
        signatures = child_rows
        map_index = np.arange(len(grid), dtype=np.int64)

    pad = pool_subsample(child_level.maps, border=1)
    hq, wq = pad.shape[1] - 2, pad.shape[2] - 2
    counts = (signatures >= 0).sum(axis=1).astype(np.float32)
    if np.any(counts == 0):
        raise ValueError("parent patch without any valid child")
    out = np.zeros((len(signatures), hq, wq), dtype=np.float32)

    def work(s):
        sl = slice(s, s + _CHUNK)
        acc = out[sl]
        for i, (dx, dy) in enumerate(QUADRANT_OFFSETS):
            rows = signatures[sl, i]
            valid = rows >= 0
            if not valid.any():
                continue
            acc[valid] += pad[rows[valid], 1 + dy:1 + dy + hq, 1 + dx:1 + dx + wq]
        acc /= counts[sl, None, None]
        np.clip(acc, 0.0, 1.0, out=acc)
        np.power(acc, lam, out=acc)

    _run_chunks(work, len(signatures), n_threads)
    return PyramidLevel(grid=grid, maps=out, map_index=map_index)


def _check_fields(field1, field2):
    if field1.ndim != 3 or field2.ndim != 3:
        raise ValueError("descriptor fields must be (H, W, 9) arrays")
    h, w = field1.shape[:2]
    if h < ATOMIC_SIZE or w < ATOMIC_SIZE:
        raise ValueError(f"first image is {w}x{h}, smaller than one {ATOMIC_SIZE}x{ATOMIC_SIZE} atomic patch")
    if field2.shape[0] < 1 or field2.shape[1] < 1:
        raise ValueError("second image is empty")


def _build_upper(levels, width, height, lam, share, n_threads):
    size = ATOMIC_SIZE
    while size < max(width, height):
        grid = parent_grid(levels[-1].grid, width, height)
        if len(grid) == 0:
            # very elongated images run out of in-image centers before the size bound
            break
        levels.append(aggregate_level(levels[-1], grid, lam=lam, share=share, n_threads=n_threads))
        size *= 2
    return levels


def build_pyramid(field1, field2, lam=DEFAULT_LAMBDA, n_threads=1):
    """Exact correlation pyramid of ``field1`` patches against ``field2``."""
    _check_fields(field1, field2)
    h, w = field1.shape[:2]
    grid = atomic_grid(w, h)
    maps = atomic_correlation(extract_patches(field1, grid), field2, lam=lam, n_threads=n_threads)
    levels = [PyramidLevel(grid=grid, maps=maps, map_index=np.arange(len(grid), dtype=np.int64))]
    _build_upper(levels, w, h, lam, False, n_threads)
    return CorrelationPyramid(levels=levels, shape1=field1.shape[:2], shape2=field2.shape[:2], lam=lam)


def build_pyramid_approx(field1, field2, dictionary, lam=DEFAULT_LAMBDA, n_threads=1):
    """Pyramid whose atomic patches are replaced by their dictionary prototypes.

    Only one level-0 map per prototype is computed; parents with identical
    child maps share a map at every higher level.
    """
    _check_fields(field1, field2)
    h, w = field1.shape[:2]
    grid = atomic_grid(w, h)
    assignment = np.asarray(dictionary.assignment)
    if len(assignment) != len(grid):
        raise ValueError(
            f"dictionary assigns {len(assignment)} patches but the image has {len(grid)} atomic patches"
        )
    maps = atomic_correlation(dictionary.centroids, field2, lam=lam, n_threads=n_threads)
    levels = [PyramidLevel(grid=grid, maps=maps, map_index=assignment.astype(np.int64))]
    _build_upper(levels, w, h, lam, True, n_threads)
    pyr = CorrelationPyramid(levels=levels, shape1=field1.shape[:2], shape2=field2.shape[:2], lam=lam)
    pyr.stats["distinct_maps"] = [len(lv.maps) for lv in levels]
    return pyr


def analytic_nbytes(shape1, shape2, bytes_per_score=4):
    """Closed-form storage of an exact pyramid: sum over levels of |G| * map area."""
    h, w = shape1
    grid = atomic_grid(w, h)
    total = len(grid) * np.prod(map_shape(shape2, 0))
    level = 0
    while (ATOMIC_SIZE << level) < max(w, h):
        grid = parent_grid(grid, w, h)
        level += 1
        total += len(grid) * np.prod(map_shape(shape2, level))
    return int(total) * bytes_per_score


def save_map_pgm(path, cmap):
    """Debug dump of one correlation map as an 8-bit PGM heat image."""
    from .imageio import save_pnm

    save_pnm(path, np.clip(np.asarray(cmap, dtype=np.float64), 0.0, 1.0))
