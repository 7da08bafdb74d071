"""Slow, independent reference implementations used to check the fast paths.

Everything here is written from the definitions with scalar loops or
exhaustive scans and shares no code with the package.
"""

import math

import numpy as np


# descriptor


def _gauss_kernel(sigma):
    r = int(4.0 * sigma + 0.5)
    k = [math.exp(-0.5 * (i / sigma) ** 2) for i in range(-r, r + 1)]
    s = sum(k)
    return [v / s for v in k], r


def _blur(img, sigma):
    h, w = len(img), len(img[0])
    if sigma <= 0:
        return [row[:] for row in img]
    k, r = _gauss_kernel(sigma)
    tmp = [[0.0] * w for _ in range(h)]
    for y in range(h):
        for x in range(w):
            tmp[y][x] = sum(k[j + r] * img[min(max(y + j, 0), h - 1)][x] for j in range(-r, r + 1))
    out = [[0.0] * w for _ in range(h)]
    for y in range(h):
        for x in range(w):
            out[y][x] = sum(k[j + r] * tmp[y][min(max(x + j, 0), w - 1)] for j in range(-r, r + 1))
    return out


def descriptor_oracle(gray01, nu=(1.0, 1.0, 1.0), slope=0.2, mu=0.3):
    """Per-pixel 9-vectors of a 2-D image in [0, 1], as nested lists of floats."""
    h, w = gray01.shape
    img = [[float(gray01[y, x]) * 255.0 for x in range(w)] for y in range(h)]
    img = _blur(img, nu[0])
    maps = [[[0.0] * w for _ in range(h)] for _ in range(8)]
    for y in range(h):
        for x in range(w):
            gx = 0.5 * (img[y][min(x + 1, w - 1)] - img[y][max(x - 1, 0)])
            gy = 0.5 * (img[min(y + 1, h - 1)][x] - img[max(y - 1, 0)][x])
            for i in range(8):
                a = (i + 1) * math.pi / 4
                maps[i][y][x] = max(0.0, gx * math.cos(a) + gy * math.sin(a))
    for i in range(8):
        m = _blur(maps[i], nu[1])
        m = [[2.0 / (1.0 + math.exp(-slope * v)) - 1.0 for v in row] for row in m]
        maps[i] = _blur(m, nu[2])
    out = np.zeros((h, w, 9))
    for y in range(h):
        for x in range(w):
            v = [max(0.0, maps[i][y][x]) for i in range(8)] + [mu]
            n = math.sqrt(sum(c * c for c in v))
            out[y, x] = [c / n for c in v]
    return out


# pyramid


def atomic_score(f1, f2, p, q):
    """Mean of the 16 pixel dots between the patch at ``p`` and the window at ``q`` (zero outside image 2)."""
    h2, w2 = f2.shape[:2]
    px, py = p
    qx, qy = q
    total = 0.0
    for dy in range(-2, 2):
        for dx in range(-2, 2):
            y2, x2 = qy + dy, qx + dx
            if 0 <= y2 < h2 and 0 <= x2 < w2:
                a = f1[py + dy, px + dx]
                b = f2[y2, x2]
                total += sum(float(a[k]) * float(b[k]) for k in range(9))
    return total / 16.0


def grids_oracle(w, h, top_size=None):
    """Patch centers per level by scanning every pixel of image 1 against the membership rule."""
    g = [(x, y) for y in range(2, h - 1, 4) for x in range(2, w - 1, 4)]
    grids = [g]
    level = 0
    n = 4
    while n < max(w, h):
        level += 1
        n *= 2
        child = set(grids[-1])
        step = 2 ** level
        cur = []
        for y in range(h):
            for x in range(w):
                if any((x + step * dx, y + step * dy) in child for dx, dy in OFFSETS):
                    cur.append((x, y))
        grids.append(cur)
    return grids


OFFSETS = [(-1, -1), (-1, 1), (1, -1), (1, 1)]


def atomic_map_oracle(f1, f2, p):
    """Atomic scores of the patch at ``p`` for every image-2 position, one offset at a time."""
    h2, w2 = f2.shape[:2]
    f2 = np.asarray(f2, dtype=np.float64)
    acc = np.zeros((h2, w2))
    for dy in range(-2, 2):
        for dx in range(-2, 2):
            a = np.asarray(f1[p[1] + dy, p[0] + dx], dtype=np.float64)
            dots = f2 @ a
            # window pixel at q + d; zero when outside image 2
            shifted = np.zeros((h2, w2))
            ys = slice(max(0, -dy), min(h2, h2 - dy))
            xs = slice(max(0, -dx), min(w2, w2 - dx))
            shifted[ys, xs] = dots[ys.start + dy:ys.stop + dy, xs.start + dx:xs.stop + dx]
            acc += shifted
    return acc / 16.0


def pyramid_oracle(f1, f2, lam=1.4):
    """Dict level -> {center: map}, evaluated by the recursion with max over 3x3 windows.

    Level-l maps live on image-2 pixels subsampled by 2**l, i.e. sizes
    ceil(H'/2**l) x ceil(W'/2**l). A parent at ``q`` averages, over its valid
    children, the max of the child's map over the 3x3 window centered at
    ``2 (q + o_i)`` (positions outside the child map ignored, 0 if none).
    """
    h, w = f1.shape[:2]
    h2, w2 = f2.shape[:2]
    grids = grids_oracle(w, h)
    out = {0: {}}
    for p in grids[0]:
        out[0][p] = np.clip(atomic_map_oracle(f1, f2, p), 0.0, 1.0) ** lam
    for level in range(1, len(grids)):
        step = 2 ** level
        ph, pw = -(-h2 // step), -(-w2 // step)
        qy, qx = np.mgrid[0:ph, 0:pw]
        out[level] = {}
        for p in grids[level]:
            kids = [(p[0] + step * dx, p[1] + step * dy, dx, dy) for dx, dy in OFFSETS]
            kids = [k for k in kids if (k[0], k[1]) in out[level - 1]]
            acc = np.zeros((ph, pw))
            for cx, cy, dx, dy in kids:
                cm = out[level - 1][(cx, cy)]
                ch, cw = cm.shape
                ry, rx = qy + dy, qx + dx
                inside = (ry >= 0) & (ry < ph) & (rx >= 0) & (rx < pw)
                best = np.zeros((ph, pw))
                for my in (-1, 0, 1):
                    for mx in (-1, 0, 1):
                        yy, xx = 2 * ry + my, 2 * rx + mx
                        ok = inside & (yy >= 0) & (yy < ch) & (xx >= 0) & (xx < cw)
                        vals = np.zeros((ph, pw))
                        vals[ok] = cm[yy[ok], xx[ok]]
                        best = np.maximum(best, vals)
                acc += best
            out[level][p] = np.clip(acc / len(kids), 0.0, 1.0) ** lam
    return out


# correspondence


def undo_max_oracle(child_map, parent_pos, offset):
    """Exhaustive scan of the 9 candidates; first strict maximum in (dy, dx) order."""
    h, w = child_map.shape
    cx = 2 * (parent_pos[0] + offset[0])
    cy = 2 * (parent_pos[1] + offset[1])
    best, arg = -1.0, None
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            y, x = cy + dy, cx + dx
            if 0 <= y < h and 0 <= x < w and child_map[y, x] > best:
                best, arg = float(child_map[y, x]), (x, y)
    return None if arg is None else (arg, best)


def backtrack_oracle(pyr):
    """Expand every path from every top-level cell without pruning.

    Returns {(x1, y1, x2, y2): best score} over all atomic endpoints, plus the
    full list of (x1, y1, x2, y2, score, path) records, where ``path`` lists
    (level, patch index, x, y) nodes from the top down.
    """
    top = len(pyr.levels) - 1
    lv = pyr.levels[top]
    records = []

    def expand(level, k, x, y, score, path):
        path = path + [(level, k, x, y)]
        if level == 0:
            px, py = pyr.levels[0].grid.positions[k]
            records.append((int(px), int(py), x, y, score, path))
            return
        child = pyr.levels[level - 1]
        for i, off in enumerate(OFFSETS):
            c = pyr.levels[level].grid.children[k, i]
            if c < 0:
                continue
            res = undo_max_oracle(child.map_for(c), (x, y), off)
            if res is None:
                continue
            (cx, cy), v = res
            expand(level - 1, int(c), cx, cy, score + v, path)

    h, w = lv.maps.shape[1:]
    for k in range(len(lv.grid)):
        m = lv.map_for(k)
        for y in range(h):
            for x in range(w):
                expand(top, k, x, y, float(m[y, x]), [])
    best = {}
    for x1, y1, x2, y2, s, _ in records:
        key = (x1, y1, x2, y2)
        if key not in best or s > best[key]:
            best[key] = s
    return best, records


def mutual_best_oracle(raw, cell):
    """Keep rows that beat every other row sharing their image-1 cell and their image-2 cell.

    Ranking: higher score first, then smaller (y1, x1, y2, x2).
    """
    rows = [tuple(r) for r in np.asarray(raw, dtype=np.float64).tolist()]

    def better(a, b):
        return (-a[4], a[1], a[0], a[3], a[2]) < (-b[4], b[1], b[0], b[3], b[2])

    def cell_of(x, y):
        return (math.floor(x / cell), math.floor(y / cell))

    keep = []
    for a in rows:
        ok = True
        for b in rows:
            if b is a:
                continue
            same1 = cell_of(a[0], a[1]) == cell_of(b[0], b[1])
            same2 = cell_of(a[2], a[3]) == cell_of(b[2], b[3])
            if (same1 or same2) and better(b, a):
                ok = False
                break
        if ok:
            keep.append(a)
    keep.sort(key=lambda r: (r[1], r[0]))
    return np.array(keep, dtype=np.float64).reshape(-1, 5)


# metrics


def accuracy_oracle(rows, gt_flow, gt_mask, patch_size, T):
    """Per-pixel scan: best-scoring covering match (earliest on ties), then the T test."""
    h, w = gt_mask.shape
    half = patch_size / 2.0
    correct = 0
    valid = 0
    for y in range(h):
        for x in range(w):
            if not gt_mask[y, x]:
                continue
            valid += 1
            cx, cy = x + 0.5, y + 0.5
            best = None
            for r in rows:
                if r[0] - half <= cx < r[0] + half and r[1] - half <= cy < r[1] + half:
                    if best is None or r[4] > best[4]:
                        best = r
            if best is None:
                continue
            du = best[2] - best[0] - gt_flow[y, x, 0]
            dv = best[3] - best[1] - gt_flow[y, x, 1]
            if math.sqrt(du * du + dv * dv) < T:
                correct += 1
    return correct / valid if valid else 0.0


def epe_oracle(flow, gt, mask, lo=0.0, hi=math.inf):
    total, n = 0.0, 0
    h, w = mask.shape
    for y in range(h):
        for x in range(w):
            if not mask[y, x]:
                continue
            mag = math.hypot(gt[y, x, 0], gt[y, x, 1])
            if not (lo <= mag < hi):
                continue
            total += math.hypot(flow[y, x, 0] - gt[y, x, 0], flow[y, x, 1] - gt[y, x, 1])
            n += 1
    return total / n if n else math.nan


def coverage_oracle(rows, shape, spacing=10.0, radius=10.0):
    h, w = shape
    hit, total = 0, 0
    y = spacing / 2
    while y < h:
        x = spacing / 2
        while x < w:
            total += 1
            if any(max(abs(r[0] - x), abs(r[1] - y)) <= radius for r in rows):
                hit += 1
            x += spacing
        y += spacing
    return hit / total if total else 0.0


def smoothness(flow_u, flow_v):
    """Sum over a grid of squared forward differences of both components (unpenalized)."""
    s = 0.0
    for f in (flow_u, flow_v):
        s += float(np.sum(np.diff(f, axis=0) ** 2) + np.sum(np.diff(f, axis=1) ** 2))
    return s
