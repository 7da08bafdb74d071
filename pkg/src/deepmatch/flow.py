"""Variational large-displacement optical flow guided by sparse matches.

The energy is a sum over pixels of a normalized gradient-constancy (and
optional color-constancy) data term, a locally weighted smoothness term and
a match term pulling the flow toward rasterized matches, all wrapped in the
robust penalizer ``psi(t) = sqrt(t + eps**2)`` with ``t = s**2``.

Minimization is coarse-to-fine with warping. At each level the data term is
linearized around the current flow; the penalizers are handled by lagged
(fixed-point) weights, and each resulting quadratic problem is relaxed by a
few red-black block-SOR sweeps over the flow increment.

Images are float arrays in [0, 1]; internally intensities are scaled to
[0, 255], the scale the data-term floor ``zeta`` and match bandwidth
``sigma_m`` are expressed in.
"""

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from ._validation import as_channels, check_image, to_gray
from .descriptor import central_gradient, gaussian_smooth

INTENSITY_SCALE = 255.0


@dataclass(frozen=True)
class FlowParams:
    alpha: float = 1.0
    beta: float = 300.0
    gamma: float = 0.8
    delta: float = 0.0
    sigma: float = 0.5
    b: float = 0.6
    zeta: float = 0.1
    epsilon: float = 0.001
    kappa: float = 5.0
    sigma_m: float = 50.0
    eta: float = 0.95
    min_size: int = 16
    fp_iters: int = 5
    sor_iters: int = 25
    sor_omega: float = 1.6

    def __post_init__(self):
        if not 0 < self.eta < 1:
            raise ValueError("eta must be in (0, 1)")
        if self.fp_iters < 1 or self.sor_iters < 1:
            raise ValueError("iteration counts must be >= 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if not 0 < self.sor_omega < 2:
            raise ValueError("sor_omega must be in (0, 2)")

    def as_dict(self):
        return asdict(self)


def psi(t, eps):
    """Robust penalizer of a squared quantity ``t``: sqrt(t + eps^2)."""
    return np.sqrt(t + eps * eps)


def psi_prime(t, eps):
    """Derivative of ``psi`` with respect to ``t``; the lagged fixed-point weight."""
    return 0.5 / np.sqrt(t + eps * eps)


@dataclass
class MatchTermField:
    """Per-pixel match availability ``c``, target displacement and weight ``phi``."""

    c: np.ndarray
    target: np.ndarray
    phi: np.ndarray
    skipped: int = 0

    @classmethod
    def empty(cls, shape):
        h, w = shape[:2]
        return cls(np.zeros((h, w), bool), np.zeros((h, w, 2)), np.zeros((h, w)))

    @property
    def count(self):
        return int(self.c.sum())


@dataclass
class EnergyTerms:
    data: float
    smooth: float
    match: float

    @property
    def total(self):
        return self.data + self.smooth + self.match


def _prepare(img, sigma):
    chans = as_channels(check_image(img)) * INTENSITY_SCALE
    return gaussian_smooth(chans, sigma)


def structure_min_eigenvalue(img):
    """Minimum eigenvalue of the channel-summed structure tensor, 3x3 Gaussian window (sigma 1)."""
    chans = as_channels(img)
    a = np.zeros(chans.shape[:2])
    b = np.zeros_like(a)
    c = np.zeros_like(a)
    for k in range(chans.shape[2]):
        gx, gy = central_gradient(chans[:, :, k])
        a += gx * gx
        b += gx * gy
        c += gy * gy
    win = dict(sigma=1.0, truncate=1.0, mode="nearest")
    a, b, c = (ndimage.gaussian_filter(t, **win) for t in (a, b, c))
    half_tr = 0.5 * (a + c)
    root = np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    return np.maximum(half_tr - root, 0.0)


def _sample(arr, x, y):
    return ndimage.map_coordinates(arr, [y, x], order=1, mode="nearest")


def rasterize_matches(matches, img1, img2, params=None):
    """Turn matches (``x1 y1 x2 y2 score`` rows or a MatchSet) into a dense match term.

    Each match lands on the image-1 pixel containing ``(x1, y1)``; collisions
    keep the larger weight. Matches with an endpoint outside its image are
    skipped and counted in ``skipped``.
    """
    params = FlowParams() if params is None else params
    rows = np.asarray(getattr(matches, "matches", matches), dtype=np.float64).reshape(-1, 5)
    I1 = _prepare(img1, params.sigma)
    I2 = _prepare(img2, params.sigma)
    h, w = I1.shape[:2]
    h2, w2 = I2.shape[:2]
    field_ = MatchTermField.empty((h, w))
    if len(rows) == 0:
        return field_

    inside = (
        (rows[:, 0] >= 0) & (rows[:, 0] < w) & (rows[:, 1] >= 0) & (rows[:, 1] < h)
        & (rows[:, 2] >= 0) & (rows[:, 2] < w2) & (rows[:, 3] >= 0) & (rows[:, 3] < h2)
    )
    field_.skipped = int((~inside).sum())
    rows = rows[inside]
    px = np.floor(rows[:, 0]).astype(np.int64)
    py = np.floor(rows[:, 1]).astype(np.int64)
    disp = rows[:, 2:4] - rows[:, 0:2]
    qx = px + disp[:, 0]
    qy = py + disp[:, 1]

    lam = 10.0 * structure_min_eigenvalue(I1)[py, px]
    diff = np.zeros(len(rows))
    for k in range(I1.shape[2]):
        g1x, g1y = central_gradient(I1[:, :, k])
        g2x, g2y = central_gradient(I2[:, :, k])
        diff += np.abs(I1[py, px, k] - _sample(I2[:, :, k], qx, qy))
        diff += np.hypot(g1x[py, px] - _sample(g2x, qx, qy), g1y[py, px] - _sample(g2y, qx, qy))
    phi = np.sqrt(lam) / (params.sigma_m * np.sqrt(2 * np.pi)) * np.exp(-diff / (2 * params.sigma_m))

    # ascending phi so the strongest match is written last
    order = np.lexsort((phi,))
    field_.c[py[order], px[order]] = True
    field_.phi[py[order], px[order]] = phi[order]
    field_.target[py[order], px[order]] = disp[order]
    return field_


def level_shapes(h, w, params):
    """Image sizes from finest (index 0) to coarsest."""
    shapes = [(h, w)]
    k = 1
    while True:
        s = params.eta ** k
        hk, wk = int(round(h * s)), int(round(w * s))
        if min(hk, wk) < params.min_size:
            break
        shapes.append((hk, wk))
        k += 1
    return shapes


def resize_bilinear(img, out_h, out_w, antialias=True):
    """Resample an (H, W[, C]) array to a new size with pixel-center alignment."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    if (out_h, out_w) == (h, w):
        return img.copy()
    sy, sx = out_h / h, out_w / w
    if antialias and (sy < 1 or sx < 1):
        sig = (max(0.0, (1 / sy - 1) / 2), max(0.0, (1 / sx - 1) / 2))
        img = gaussian_smooth(img, sig[0], axes=(0,))
        img = gaussian_smooth(img, sig[1], axes=(1,))
    ys = (np.arange(out_h) + 0.5) / sy - 0.5
    xs = (np.arange(out_w) + 0.5) / sx - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    chans = as_channels(img)
    out = np.stack(
        [ndimage.map_coordinates(chans[:, :, k], [yy, xx], order=1, mode="nearest") for k in range(chans.shape[2])],
        axis=2,
    )
    return out[:, :, 0] if img.ndim == 2 else out


def _level_matches(mf, shape):
    """Rescale a full-resolution match term to a coarser grid (collisions keep max phi)."""
    h0, w0 = mf.c.shape
    h, w = shape
    out = MatchTermField.empty(shape)
    ys, xs = np.nonzero(mf.c)
    if len(ys) == 0:
        return out
    sy, sx = h / h0, w / w0
    ly = np.clip(np.floor((ys + 0.5) * sy).astype(np.int64), 0, h - 1)
    lx = np.clip(np.floor((xs + 0.5) * sx).astype(np.int64), 0, w - 1)
    phi = mf.phi[ys, xs]
    order = np.lexsort((phi,))
    ly, lx = ly[order], lx[order]
    out.c[ly, lx] = True
    out.phi[ly, lx] = phi[order]
    out.target[ly, lx, 0] = mf.target[ys, xs, 0][order] * sx
    out.target[ly, lx, 1] = mf.target[ys, xs, 1][order] * sy
    return out


def smoothness_weight(I1, params):
    """alpha * exp(-kappa * |grad I|) on the [0, 1] grayscale of image 1."""
    gray = to_gray(I1 / INTENSITY_SCALE) if I1.ndim == 3 else I1 / INTENSITY_SCALE
    gx, gy = central_gradient(gray)
    return params.alpha * np.exp(-params.kappa * np.hypot(gx, gy))


class LinearizedProblem:
    """Energy of a flow increment ``dw`` around a fixed flow ``w0`` on one level.

    Holds the warped, normalized derivative products; ``energy(du, dv)`` is
    the discrete objective and ``solve`` runs the fixed-point / SOR loop that
    decreases it.
    """

    def __init__(self, I1, I2, w0, match_field, params, beta):
        self.params = params
        self.beta = beta
        self.u0 = w0[:, :, 0].copy()
        self.v0 = w0[:, :, 1].copy()
        h, w = I1.shape[:2]
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        wx = xx + self.u0
        wy = yy + self.v0
        outside = (wx < 0) | (wx > w - 1) | (wy < 0) | (wy > h - 1)

        zeta2 = params.zeta ** 2
        # accumulate sum over channels of theta * a * b for the 3x3 tensors
        self.J0 = np.zeros((6, h, w))
        self.Jxy = np.zeros((6, h, w))
        for k in range(I1.shape[2]):
            a = I1[:, :, k]
            bimg = I2[:, :, k]
            ax, ay = central_gradient(a)
            axx, axy = central_gradient(ax)
            _, ayy = central_gradient(ay)
            bx, by = central_gradient(bimg)
            bxx, bxy = central_gradient(bx)
            _, byy = central_gradient(by)
            bw = _sample(bimg, wx, wy)
            bwx, bwy = _sample(bx, wx, wy), _sample(by, wx, wy)
            bwxx, bwxy, bwyy = _sample(bxx, wx, wy), _sample(bxy, wx, wy), _sample(byy, wx, wy)

            Ix, Iy, Iz = 0.5 * (ax + bwx), 0.5 * (ay + bwy), bw - a
            Ixx, Ixy, Iyy = 0.5 * (axx + bwxx), 0.5 * (axy + bwxy), 0.5 * (ayy + bwyy)
            Ixz, Iyz = bwx - ax, bwy - ay
            for arr in (Ix, Iy, Iz, Ixx, Ixy, Iyy, Ixz, Iyz):
                arr[outside] = 0.0

            t0 = 1.0 / (Ix * Ix + Iy * Iy + zeta2)
            self.J0 += t0 * np.stack([Ix * Ix, Ix * Iy, Iy * Iy, Ix * Iz, Iy * Iz, Iz * Iz])
            tx = 1.0 / (Ixx * Ixx + Ixy * Ixy + zeta2)
            ty = 1.0 / (Ixy * Ixy + Iyy * Iyy + zeta2)
            self.Jxy += tx * np.stack([Ixx * Ixx, Ixx * Ixy, Ixy * Ixy, Ixx * Ixz, Ixy * Ixz, Ixz * Ixz])
            self.Jxy += ty * np.stack([Ixy * Ixy, Ixy * Iyy, Iyy * Iyy, Ixy * Iyz, Iyy * Iyz, Iyz * Iyz])

        self.alpha = smoothness_weight(I1, params)
        self.mc = match_field.c.astype(np.float64) * match_field.phi * beta
        self.mu = match_field.target[:, :, 0]
        self.mv = match_field.target[:, :, 1]

    @staticmethod
    def _quad(J, du, dv):
        # (du, dv, 1) J (du, dv, 1)^T, clipped at 0 against rounding
        q = J[0] * du * du + 2 * J[1] * du * dv + J[2] * dv * dv + 2 * J[3] * du + 2 * J[4] * dv + J[5]
        return np.maximum(q, 0.0)

    def _grad_sq(self, U, V):
        g = np.zeros_like(U)
        g[:, :-1] += np.diff(U, axis=1) ** 2 + np.diff(V, axis=1) ** 2
        g[:-1, :] += np.diff(U, axis=0) ** 2 + np.diff(V, axis=0) ** 2
        return g

    def terms(self, du, dv):
        p = self.params
        eps = p.epsilon
        data = p.delta * psi(self._quad(self.J0, du, dv), eps) + p.gamma * psi(self._quad(self.Jxy, du, dv), eps)
        U, V = self.u0 + du, self.v0 + dv
        smooth = self.alpha * psi(self._grad_sq(U, V), eps)
        match = self.mc * psi((U - self.mu) ** 2 + (V - self.mv) ** 2, eps)
        return data, smooth, match

    def energy(self, du, dv):
        data, smooth, match = self.terms(du, dv)
        return EnergyTerms(float(data.sum()), float(smooth.sum()), float(match.sum()))

    def solve(self, du=None, dv=None, on_iteration=None):
        p = self.params
        eps = p.epsilon
        h, w = self.u0.shape
        du = np.zeros((h, w)) if du is None else du.copy()
        dv = np.zeros((h, w)) if dv is None else dv.copy()
        red = (np.add.outer(np.arange(h), np.arange(w)) % 2) == 0
        colors = (red, ~red)
        for it in range(p.fp_iters):
            a0 = p.delta * psi_prime(self._quad(self.J0, du, dv), eps)
            a1 = p.gamma * psi_prime(self._quad(self.Jxy, du, dv), eps)
            U, V = self.u0 + du, self.v0 + dv
            s = self.alpha * psi_prime(self._grad_sq(U, V), eps)
            am = self.mc * psi_prime((U - self.mu) ** 2 + (V - self.mv) ** 2, eps)

            J = a0 * self.J0 + a1 * self.Jxy
            A11 = J[0] + am
            A12 = J[1]
            A22 = J[2] + am
            b1 = -J[3] - am * (self.u0 - self.mu)
            b2 = -J[4] - am * (self.v0 - self.mv)

            wE = np.zeros((h, w))
            wE[:, :-1] = s[:, :-1]
            wW = np.zeros((h, w))
            wW[:, 1:] = s[:, :-1]
            wS = np.zeros((h, w))
            wS[:-1, :] = s[:-1, :]
            wN = np.zeros((h, w))
            wN[1:, :] = s[:-1, :]
            wsum = wE + wW + wS + wN
            D11 = A11 + wsum
            D22 = A22 + wsum
            det = D11 * D22 - A12 * A12
            c1 = b1 - wsum * self.u0
            c2 = b2 - wsum * self.v0

            for _ in range(p.sor_iters):
                for mask in colors:
                    U = self.u0 + du
                    V = self.v0 + dv
                    nu = _neighbor_sum(U, wE, wW, wS, wN)
                    nv = _neighbor_sum(V, wE, wW, wS, wN)
                    r1 = c1 + nu
                    r2 = c2 + nv
                    su = (D22 * r1 - A12 * r2) / det
                    sv = (D11 * r2 - A12 * r1) / det
                    du = np.where(mask, du + p.sor_omega * (su - du), du)
                    dv = np.where(mask, dv + p.sor_omega * (sv - dv), dv)
            if on_iteration is not None:
                on_iteration(it, du, dv)
        return du, dv


def _neighbor_sum(X, wE, wW, wS, wN):
    out = np.zeros_like(X)
    out[:, :-1] += wE[:, :-1] * X[:, 1:]
    out[:, 1:] += wW[:, 1:] * X[:, :-1]
    out[:-1, :] += wS[:-1, :] * X[1:, :]
    out[1:, :] += wN[1:, :] * X[:-1, :]
    return out


def level_beta(params, k, k_max):
    """Match weight at level ``k`` (0 = finest, ``k_max`` = coarsest)."""
    if k_max == 0:
        return params.beta
    return params.beta * (k / k_max) ** params.b


def solve_flow(img1, img2, match_field=None, params=None, diagnostics=None):
    """Estimate the flow from ``img1`` to ``img2`` as an (H, W, 2) array of (u, v).

    ``diagnostics``, when a dict, receives ``"finest_energy"``: the
    linearized energy at the finest level before and after every fixed-point
    iteration, and ``"levels"``: the number of pyramid levels.
    """
    params = FlowParams() if params is None else params
    img1 = check_image(img1, "img1")
    img2 = check_image(img2, "img2")
    if img1.shape != img2.shape:
        raise ValueError(f"image sizes differ: {img1.shape} vs {img2.shape}")
    h, w = img1.shape[:2]
    if match_field is None:
        match_field = MatchTermField.empty((h, w))
    elif match_field.c.shape != (h, w):
        raise ValueError("match field does not match the image size")

    I1 = _prepare(img1, params.sigma)
    I2 = _prepare(img2, params.sigma)
    shapes = level_shapes(h, w, params)
    k_max = len(shapes) - 1
    flow = None
    for k in range(k_max, -1, -1):
        lh, lw = shapes[k]
        L1 = resize_bilinear(I1, lh, lw)
        L2 = resize_bilinear(I2, lh, lw)
        if flow is None:
            flow = np.zeros((lh, lw, 2))
        else:
            ph, pw = flow.shape[:2]
            flow = resize_bilinear(flow, lh, lw, antialias=False)
            flow[:, :, 0] *= lw / pw
            flow[:, :, 1] *= lh / ph
        mf = match_field if k == 0 else _level_matches(match_field, (lh, lw))
        prob = LinearizedProblem(L1, L2, flow, mf, params, level_beta(params, k, k_max))
        callback = None
        if diagnostics is not None and k == 0:
            trace = [prob.energy(np.zeros((lh, lw)), np.zeros((lh, lw))).total]
            diagnostics["finest_energy"] = trace

            def callback(it, du, dv, prob=prob, trace=trace):
                trace.append(prob.energy(du, dv).total)

        du, dv = prob.solve(on_iteration=callback)
        flow = flow + np.stack([du, dv], axis=2)
    if diagnostics is not None:
        diagnostics["levels"] = k_max + 1
    return flow


def energy(img1, img2, flow, match_field=None, params=None, beta=None, linearize_at=None):
    """Discrete energy of ``flow`` at full resolution.

    The data term warps image 2 by ``flow``; with ``linearize_at`` it is the
    first-order expansion around that flow instead (the objective the solver
    minimizes at the finest level). ``beta`` defaults to ``params.beta``.
    """
    params = FlowParams() if params is None else params
    I1 = _prepare(img1, params.sigma)
    I2 = _prepare(img2, params.sigma)
    h, w = I1.shape[:2]
    flow = np.asarray(flow, dtype=np.float64)
    if match_field is None:
        match_field = MatchTermField.empty((h, w))
    beta = params.beta if beta is None else beta
    base = flow if linearize_at is None else np.asarray(linearize_at, dtype=np.float64)
    prob = LinearizedProblem(I1, I2, base, match_field, params, beta)
    d = flow - base
    return prob.energy(d[:, :, 0], d[:, :, 1])
