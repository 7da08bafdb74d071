"""Flow and match visualization."""

import numpy as np
from matplotlib.colors import hsv_to_rgb


def flow_to_color(flow, max_mag=None):
    """Hue encodes direction, saturation encodes magnitude (white = no motion)."""
    flow = np.asarray(flow, dtype=np.float64)
    u, v = flow[:, :, 0], flow[:, :, 1]
    mag = np.hypot(u, v)
    if max_mag is None:
        max_mag = float(mag.max()) if mag.size and mag.max() > 0 else 1.0
    hue = (np.arctan2(-v, -u) / np.pi + 1.0) / 2.0
    sat = np.clip(mag / max_mag, 0.0, 1.0)
    hsv = np.stack([hue, sat, np.ones_like(hue)], axis=2)
    return hsv_to_rgb(hsv)


def draw_matches(img1, matches, radius=1):
    """Image 1 in gray with each match start colored by its displacement."""
    img = np.asarray(img1, dtype=np.float64)
    gray = img.mean(axis=2) if img.ndim == 3 else img
    out = np.repeat(gray[:, :, None], 3, axis=2) * 0.6
    rows = np.asarray(getattr(matches, "matches", matches), dtype=np.float64).reshape(-1, 5)
    if len(rows) == 0:
        return out
    disp = (rows[:, 2:4] - rows[:, 0:2])[:, None, :]
    colors = flow_to_color(disp)[:, 0, :]
    h, w = gray.shape
    for (x, y), c in zip(rows[:, 0:2], colors):
        xi, yi = int(x), int(y)
        out[max(0, yi - radius):min(h, yi + radius + 1), max(0, xi - radius):min(w, xi + radius + 1)] = c
    return out
