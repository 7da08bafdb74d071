"""Ground-truth I/O and matching / flow metrics.

``.flo`` layout: 4-byte tag ``PIEH``, int32 width, int32 height (little
endian), then ``height * width`` interleaved float32 ``(u, v)`` pairs in row
order. Components with magnitude above 1e9 mark unknown flow.

Match files hold one ``x1 y1 x2 y2 score`` line per match, floats written in
shortest round-trip form.
"""

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from ._validation import check_flow
from .correspondence import MatchSet
from .imageio import ImageFormatError, read_pnm
from .pyramid import ATOMIC_SIZE

FLO_TAG = b"PIEH"
UNKNOWN_FLOW = 1e9
DEFAULT_T = 10.0
EPE_BANDS = ((0.0, 10.0), (10.0, 40.0), (40.0, math.inf))


@dataclass
class GroundTruthFlow:
    flow: np.ndarray
    mask: np.ndarray = None

    def __post_init__(self):
        self.flow = check_flow(self.flow, "ground truth")
        if self.mask is None:
            self.mask = np.all(np.isfinite(self.flow), axis=2)
        else:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.flow.shape[:2]:
                raise ValueError("mask shape does not match the flow")

    @property
    def shape(self):
        return self.flow.shape[:2]


def write_flo(path, flow):
    flow = np.asarray(flow, dtype="<f4")
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError(f"flow must be (H, W, 2), got {flow.shape}")
    h, w = flow.shape[:2]
    with open(path, "wb") as fh:
        fh.write(FLO_TAG)
        fh.write(np.array([w, h], dtype="<i4").tobytes())
        fh.write(np.ascontiguousarray(flow).tobytes())


def read_flo(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12:
        raise ImageFormatError(f"malformed flow file: truncated header in {path}")
    if blob[:4] != FLO_TAG:
        raise ImageFormatError(f"malformed flow file: expected tag {FLO_TAG.decode()!r}, got {blob[:4]!r}")
    w, h = (int(v) for v in np.frombuffer(blob[4:12], dtype="<i4"))
    if w <= 0 or h <= 0 or w * h > (1 << 28):
        raise ImageFormatError(f"malformed flow file: bad size {w}x{h}")
    need = 12 + 8 * w * h
    if len(blob) < need:
        raise ImageFormatError(f"malformed flow file: truncated payload ({len(blob)} of {need} bytes)")
    flow = np.frombuffer(blob[12:need], dtype="<f4").reshape(h, w, 2).astype(np.float32)
    mask = np.all(np.abs(flow) <= UNKNOWN_FLOW, axis=2) & np.all(np.isfinite(flow), axis=2)
    return GroundTruthFlow(flow=flow, mask=mask)


def read_occlusion_mask(path):
    """PGM where nonzero marks occluded pixels; returns a boolean array."""
    return read_pnm(path) > 0


def write_matches(path, matches):
    rows = np.asarray(getattr(matches, "matches", matches), dtype=np.float64).reshape(-1, 5)
    with open(path, "w") as fh:
        for row in rows.tolist():
            fh.write(" ".join(repr(v) for v in row) + "\n")


def read_matches(path, patch_size=float(ATOMIC_SIZE)):
    rows = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 5:
                raise ValueError(f"{path}:{n}: expected 5 fields, got {len(parts)}")
            rows.append([float(p) for p in parts])
    return MatchSet(matches=np.array(rows, dtype=np.float64).reshape(-1, 5), patch_size=patch_size)


def _as_gt(gt):
    return gt if isinstance(gt, GroundTruthFlow) else GroundTruthFlow(np.asarray(gt, dtype=np.float64))


def paint_matches(matches, shape, patch_size=None):
    """Per-pixel displacement from the best-scoring match whose patch covers the pixel.

    A match covers pixels whose centers lie in the ``patch_size`` square
    centered on ``(x1, y1)``. Equal scores go to the earlier match. Returns
    ``(disp, covered)``.
    """
    rows = np.asarray(getattr(matches, "matches", matches), dtype=np.float64).reshape(-1, 5)
    if patch_size is None:
        patch_size = getattr(matches, "patch_size", float(ATOMIC_SIZE))
    h, w = shape
    disp = np.zeros((h, w, 2))
    covered = np.zeros((h, w), dtype=bool)
    half = patch_size / 2.0
    order = np.lexsort((-np.arange(len(rows)), rows[:, 4]))
    for x1, y1, x2, y2, _ in rows[order]:
        x0 = max(0, math.ceil(x1 - half - 0.5))
        xe = min(w, math.ceil(x1 + half - 0.5))
        y0 = max(0, math.ceil(y1 - half - 0.5))
        ye = min(h, math.ceil(y1 + half - 0.5))
        if x0 >= xe or y0 >= ye:
            continue
        disp[y0:ye, x0:xe] = (x2 - x1, y2 - y1)
        covered[y0:ye, x0:xe] = True
    return disp, covered


def accuracy_details(matches, gt, T=DEFAULT_T, patch_size=None):
    """Returns (accuracy over valid pixels, accuracy over covered valid pixels, covered fraction)."""
    if T <= 0:
        raise ValueError("T must be > 0")
    gt = _as_gt(gt)
    disp, covered = paint_matches(matches, gt.shape, patch_size)
    err = np.hypot(disp[:, :, 0] - gt.flow[:, :, 0], disp[:, :, 1] - gt.flow[:, :, 1])
    correct = covered & (err < T) & gt.mask
    n_valid = int(gt.mask.sum())
    n_cov = int((covered & gt.mask).sum())
    if n_valid == 0:
        return 0.0, 0.0, 0.0
    return (
        correct.sum() / n_valid,
        correct.sum() / n_cov if n_cov else 0.0,
        n_cov / n_valid,
    )


def accuracy_at_T(matches, gt, T=DEFAULT_T, patch_size=None):
    """Fraction of valid image-1 pixels whose matched target is within ``T`` px of ground truth."""
    return float(accuracy_details(matches, gt, T, patch_size)[0])


def epe(flow, gt, mask=None):
    """Mean endpoint error overall and per ground-truth magnitude band.

    Returns a dict with ``epe``, ``epe_s0_10``, ``epe_s10_40``, ``epe_s40plus``;
    an empty band gives NaN. ``mask`` further restricts the evaluated pixels.
    """
    gt = _as_gt(gt)
    flow = check_flow(flow)
    if flow.shape != gt.flow.shape:
        raise ValueError(f"flow shape {flow.shape} does not match ground truth {gt.flow.shape}")
    g = gt.flow.astype(np.float64)
    valid = gt.mask if mask is None else gt.mask & np.asarray(mask, dtype=bool)
    err = np.hypot(flow[:, :, 0] - g[:, :, 0], flow[:, :, 1] - g[:, :, 1])[valid]
    mag = np.hypot(g[:, :, 0], g[:, :, 1])[valid]
    out = {"epe": float(err.mean()) if err.size else math.nan}
    for key, (lo, hi) in zip(("epe_s0_10", "epe_s10_40", "epe_s40plus"), EPE_BANDS):
        sel = (mag >= lo) & (mag < hi)
        out[key] = float(err[sel].mean()) if sel.any() else math.nan
    return out


def lattice_points(shape, spacing=10.0):
    h, w = shape
    xs = np.arange(spacing / 2, w, spacing)
    ys = np.arange(spacing / 2, h, spacing)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel()])


def coverage(matches, shape, spacing=10.0, radius=10.0):
    """Fraction of lattice points with an image-1 match endpoint within Chebyshev ``radius``."""
    rows = np.asarray(getattr(matches, "matches", matches), dtype=np.float64).reshape(-1, 5)
    pts = lattice_points(shape, spacing)
    if len(pts) == 0:
        return 0.0
    if len(rows) == 0:
        return 0.0
    tree = cKDTree(rows[:, 0:2])
    d, _ = tree.query(pts, k=1, p=np.inf, distance_upper_bound=radius + 1e-9)
    return float(np.mean(d <= radius))


@dataclass
class MetricReport:
    accuracy_at_T: float = math.nan
    T: float = DEFAULT_T
    epe: float = math.nan
    epe_s0_10: float = math.nan
    epe_s10_40: float = math.nan
    epe_s40plus: float = math.nan
    coverage: float = math.nan
    match_count: int = 0
    extra: dict = field(default_factory=dict)

    def as_dict(self):
        d = asdict(self)
        d.update(d.pop("extra"))
        return d

    def to_text(self):
        lines = []
        for k, v in self.as_dict().items():
            lines.append(f"{k} {v:.6f}" if isinstance(v, float) else f"{k} {v}")
        return "\n".join(lines) + "\n"

    def to_json(self):
        d = {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in self.as_dict().items()}
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_text(cls, text):
        known = {f for f in cls.__dataclass_fields__ if f != "extra"}
        rep = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            k, v = line.split(None, 1)
            val = int(v) if k == "match_count" else float(v)
            if k in known:
                setattr(rep, k, val)
            else:
                rep.extra[k] = val
        return rep


def evaluate(matches=None, flow=None, gt=None, shape=None, T=DEFAULT_T, mask=None):
    """Build a MetricReport from whatever of matches / flow / ground truth is given."""
    rep = MetricReport(T=T)
    if gt is not None:
        gt = _as_gt(gt)
        shape = gt.shape
    if matches is not None:
        rep.match_count = len(getattr(matches, "matches", matches))
        if shape is not None:
            rep.coverage = coverage(matches, shape)
        if gt is not None:
            rep.accuracy_at_T = accuracy_at_T(matches, gt, T)
    if flow is not None and gt is not None:
        for k, v in epe(flow, gt, mask).items():
            setattr(rep, k, v)
    return rep


def mean_report(reports):
    """Average numeric fields, ignoring NaNs; ``match_count`` is summed."""
    reports = list(reports)
    out = MetricReport()
    if not reports:
        return out
    for k in ("accuracy_at_T", "epe", "epe_s0_10", "epe_s10_40", "epe_s40plus", "coverage"):
        vals = np.array([getattr(r, k) for r in reports], dtype=np.float64)
        vals = vals[~np.isnan(vals)]
        setattr(out, k, float(vals.mean()) if vals.size else math.nan)
    out.T = reports[0].T
    out.match_count = int(sum(r.match_count for r in reports))
    out.extra["pairs"] = len(reports)
    return out


def find_pairs(root):
    """Discover ``(img1, img2, gt)`` triples: files named ``*_1.*``, ``*_2.*`` and ``*.flo`` sharing a stem."""
    out = []
    names = sorted(os.listdir(root))
    for n in names:
        stem, ext = os.path.splitext(n)
        if not stem.endswith("_1"):
            continue
        base = stem[:-2]
        img2 = os.path.join(root, base + "_2" + ext)
        gt = os.path.join(root, base + ".flo")
        if os.path.exists(img2):
            out.append((os.path.join(root, n), img2, gt if os.path.exists(gt) else None))
    return out
