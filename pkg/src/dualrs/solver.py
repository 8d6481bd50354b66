"""Coarse-to-fine variational estimation of the dual velocity cube and frame extraction.

The latent frame at target ``n`` is reached from each RS input by the flow
``P * V`` where ``P`` is that input's time cube.  Warping both inputs with the
correct ``V`` yields the same image, so the self-supervised objective is the
Charbonnier distance between the two warps plus a total-variation penalty on
both flow cubes.  It is minimised by gradient descent with backtracking over
an image pyramid, warm-starting every scale from the previous one.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import fft

from . import kernels
from .geometry import (
    Direction,
    GsSequence,
    Parameterization,
    TimeCube,
    VelocityCube,
    build_time_cube,
    flow_array,
    target_times,
)
from .simulator import DualPair
from .tensor import Cube, ImageBuf
from .warp import backward_warp, blend, proximity_mask

log = logging.getLogger(__name__)

DEFAULT_SCALES = (0.125, 0.25, 0.5, 1.0)


@dataclass(frozen=True)
class SolverParams:
    parameterization: Parameterization = Parameterization.GLOBAL_CONST
    scales: tuple = DEFAULT_SCALES
    iters_per_scale: int = 200
    step: float | None = None
    lambda_v: float = 0.1
    charbonnier_eps: float = 1e-3
    n_frames: int = 9
    max_halvings: int = 10

    def __post_init__(self):
        kind = Parameterization(self.parameterization)
        object.__setattr__(self, "parameterization", kind)
        scales = tuple(float(s) for s in self.scales)
        if not scales or any(b <= a for a, b in zip(scales, scales[1:])) or scales[-1] != 1.0:
            raise ValueError(f"scales must be strictly increasing and end at 1, got {scales}")
        if scales[0] <= 0:
            raise ValueError("scales must be positive")
        object.__setattr__(self, "scales", scales)
        if self.step is None:
            object.__setattr__(self, "step", 0.05 if kind is Parameterization.DENSE else 0.5)
        if self.step <= 0 or self.lambda_v < 0 or self.charbonnier_eps < 0:
            raise ValueError("step must be > 0 and lambda_v, charbonnier_eps >= 0")
        if self.iters_per_scale < 0 or self.n_frames < 1:
            raise ValueError("iters_per_scale must be >= 0 and n_frames >= 1")


@dataclass(frozen=True)
class Objective:
    data_term: float
    tv_term: float
    total: float


# ------------------------------------------------------------------ loss terms


def _array(x):
    if isinstance(x, ImageBuf):
        return x.pixels
    if isinstance(x, Cube):
        return x.data
    return np.asarray(x)


def charbonnier(a, b, eps: float = 1e-3) -> float:
    """Mean of ``sqrt((a - b)^2 + eps^2)``."""
    a = _array(a).astype(np.float64)
    b = _array(b).astype(np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.mean(np.sqrt(d * d + eps * eps)))


def tv(flow) -> float:
    """Mean absolute forward difference along x plus the same along y."""
    return _tv_and_grad(np.asarray(_array(flow), dtype=np.float64), want_grad=False)[0]


def _tv_and_grad(F, want_grad=True):
    dx = F[:, :, 1:] - F[:, :, :-1]
    dy = F[:, 1:] - F[:, :-1]
    value = (np.abs(dx).mean() if dx.size else 0.0) + (np.abs(dy).mean() if dy.size else 0.0)
    if not want_grad:
        return float(value), None
    g = np.zeros_like(F)
    if dx.size:
        s = np.sign(dx) / dx.size
        g[:, :, 1:] += s
        g[:, :, :-1] -= s
    if dy.size:
        s = np.sign(dy) / dy.size
        g[:, 1:] += s
        g[:, :-1] -= s
    return float(value), g


# ------------------------------------------------------------------ pyramid


def _area_matrix(n_in, n_out):
    """Row-stochastic matrix averaging ``n_in`` samples into ``n_out`` bins."""
    edges = np.arange(n_out + 1) * (n_in / n_out)
    lo = np.arange(n_in)
    A = np.clip(np.minimum(edges[1:, None], lo[None, :] + 1) - np.maximum(edges[:-1, None], lo[None, :]), 0, None)
    return A / A.sum(axis=1, keepdims=True)


def area_downsample(img: np.ndarray, h: int, w: int) -> np.ndarray:
    """Area-average ``(H, W, C)`` (or ``(N, H, W, C)``) to ``h x w``."""
    H, W = img.shape[-3], img.shape[-2]
    if (h, w) == (H, W):
        return np.array(img, dtype=np.float64)
    Ay = _area_matrix(H, h)
    Ax = _area_matrix(W, w)
    out = np.einsum("yi,...ijc->...yjc", Ay, img.astype(np.float64))
    return np.einsum("xj,...yjc->...yxc", Ax, out)


def resize_bilinear(arr: np.ndarray, h: int, w: int) -> np.ndarray:
    """Half-pixel-centred bilinear resize of ``(N, H, W, C)``."""
    N, H, W, C = arr.shape
    ys = np.clip((np.arange(h) + 0.5) * H / h - 0.5, 0, H - 1)
    xs = np.clip((np.arange(w) + 0.5) * W / w - 0.5, 0, W - 1)
    y0 = np.minimum(np.floor(ys).astype(int), max(H - 2, 0))
    x0 = np.minimum(np.floor(xs).astype(int), max(W - 2, 0))
    y1 = np.minimum(y0 + 1, H - 1)
    x1 = np.minimum(x0 + 1, W - 1)
    fy = (ys - y0)[None, :, None, None]
    fx = (xs - x0)[None, None, :, None]
    top = arr[:, y0][:, :, x0] * (1 - fx) + arr[:, y0][:, :, x1] * fx
    bot = arr[:, y1][:, :, x0] * (1 - fx) + arr[:, y1][:, :, x1] * fx
    return top * (1 - fy) + bot * fy


def _level_shape(H, W, scale):
    return max(2, int(round(H * scale))), max(2, int(round(W * scale)))


def dual_time_cubes(rows: int, n_frames: int, misalign_rows: int = 0, full_rows: int | None = None):
    """Time cubes of both inputs; the b2t cube is shifted for a delayed b2t capture."""
    full_rows = full_rows or rows
    p1 = build_time_cube(rows, n_frames, Direction.T2B)
    p2 = build_time_cube(rows, n_frames, Direction.B2T, shift=misalign_rows / (full_rows - 1))
    return p1, p2


class _Level:
    """One pyramid level of the objective."""

    def __init__(self, pair: DualPair, params: SolverParams, scale: float, gt=None):
        H, W = pair.t2b.height, pair.t2b.width
        self.h, self.w = _level_shape(H, W, scale)
        self.scale = scale
        self.flow_scale = (self.w / W, self.h / H)
        self.t2b = area_downsample(pair.t2b.pixels, self.h, self.w).astype(np.float32)
        self.b2t = area_downsample(pair.b2t.pixels, self.h, self.w).astype(np.float32)
        self.n = params.n_frames
        self.p1, self.p2 = dual_time_cubes(self.h, self.n, pair.row_misalignment, H)
        self.eps = params.charbonnier_eps
        self.lam = params.lambda_v
        self.gt = None
        if gt is not None:
            self.gt = area_downsample(gt, self.h, self.w)
            self.mask = proximity_mask(self.p1, self.p2).data[..., 0, 0]

    def flows(self, V: VelocityCube):
        Vd = V.expand(self.n, self.h, self.w, scale=self.flow_scale)
        return flow_array(self.p1, Vd), flow_array(self.p2, Vd)

    def evaluate(self, V: VelocityCube, want_grad=True):
        F1, F2 = self.flows(V)
        if self.gt is None:
            data, g1, g2 = self._dual_data(F1, F2, want_grad)
        else:
            data, g1, g2 = self._supervised_data(F1, F2, want_grad)
        tv1, gt1 = _tv_and_grad(F1, want_grad)
        tv2, gt2 = _tv_and_grad(F2, want_grad)
        tv_term = tv1 + tv2
        obj = Objective(data, tv_term, data + self.lam * tv_term)
        if not want_grad:
            return obj, None
        dF1 = g1 + self.lam * gt1
        dF2 = g2 + self.lam * gt2
        dV = dF1 * self.p1.values[:, :, None, None] + dF2 * self.p2.values[:, :, None, None]
        return obj, V.pullback(dV, self.flow_scale)

    def _dual_data(self, F1, F2, want_grad):
        data, weight, g1, g2 = kernels.dual_data(self.t2b, self.b2t, F1, F2, self.eps, want_grad)
        if weight == 0.0:
            # nothing co-visible: treat as maximal disagreement
            return 1.0, np.zeros_like(F1), np.zeros_like(F2)
        return data, g1, g2

    def _supervised_data(self, F1, F2, want_grad):
        a, adx, ady, ra, rax, ray = _warp_with_grad(self.t2b, F1)
        b, bdx, bdy, rb, rbx, rby = _warp_with_grad(self.b2t, F2)
        m = self.mask[:, :, None, None]
        # soft version of the blend's validity override: equals it whenever
        # both ramps are 0 or 1, and stays continuous in the flow otherwise
        ms = m + (1.0 - m) * ra * (1.0 - rb) - m * rb * (1.0 - ra)
        pre = ms * a + (1.0 - ms) * b
        out = np.clip(pre, 0.0, 1.0)
        d = out - self.gt
        r = np.sqrt(d * d + self.eps * self.eps)
        data = float(r.mean())
        if not want_grad:
            return data, None, None
        phi = d / r / r.size * ((pre > 0.0) & (pre < 1.0))
        dms_a = (1.0 - m) * (1.0 - rb) + m * rb
        dms_b = -(1.0 - m) * ra - m * (1.0 - ra)
        gap = a - b
        g1 = np.stack([(phi * (ms * adx + gap * dms_a * rax)).sum(-1),
                       (phi * (ms * ady + gap * dms_a * ray)).sum(-1)], axis=-1)
        g2 = np.stack([(phi * ((1.0 - ms) * bdx + gap * dms_b * rbx)).sum(-1),
                       (phi * ((1.0 - ms) * bdy + gap * dms_b * rby)).sum(-1)], axis=-1)
        return data, g1, g2


def _warp_with_grad(src, F):
    """Samples, their spatial derivatives, and the soft validity ramp with its derivatives."""
    N, H, W = F.shape[:3]
    sx, sy, _ = kernels._coords(F)
    val, dx, dy = kernels.sample_numpy(src, sx, sy)
    rx, drx = kernels._ramp_numpy(sx, W)
    ry, dry = kernels._ramp_numpy(sy, H)
    r = (rx * ry)[..., None]
    return val, dx, dy, r, (drx * ry)[..., None], (rx * dry)[..., None]


# ------------------------------------------------------------------ public ops


def dual_objective(pair: DualPair, velocity: VelocityCube, params: SolverParams) -> Objective:
    """Self-supervised objective at full resolution."""
    return _Level(pair, params, 1.0).evaluate(velocity, want_grad=False)[0]


def dual_objective_and_gradient(pair: DualPair, velocity: VelocityCube, params: SolverParams):
    """Full-resolution objective and its gradient with respect to ``velocity.params``."""
    return _Level(pair, params, 1.0).evaluate(velocity, want_grad=True)


def supervised_objective(pair: DualPair, velocity: VelocityCube, gt: GsSequence,
                         params: SolverParams) -> Objective:
    """Charbonnier distance of the extracted frames to ``gt`` plus the flow TV penalty."""
    return _Level(pair, params, 1.0, gt=gt.stack()).evaluate(velocity, want_grad=False)[0]


def _descend(level: _Level, V: VelocityCube, params: SolverParams, trace, scale):
    obj, g = level.evaluate(V)
    if trace is not None:
        trace.append(dict(scale=scale, iter=0, data_term=obj.data_term,
                          tv_term=obj.tv_term, total=obj.total))
    kind = V.parameterization
    l1 = _l1_weights(level) if kind is Parameterization.GLOBAL_CONST else None
    step = params.step
    for it in range(1, params.iters_per_scale + 1):
        if l1 is not None:
            g = _pseudo_gradient(V.params, g, l1)
        if not np.any(g):
            break
        if kind is Parameterization.DENSE:
            direction = _sobolev(g * g[..., 0].size, level.h, level.w)
        else:
            direction = g
        accepted = False
        for _ in range(params.max_halvings + 1):
            new = V.params - step * direction
            if l1 is not None:
                # stay in the current orthant; crossing zero lands on zero
                new = np.where(V.params * new < 0, 0.0, new)
            cand = VelocityCube(kind, new)
            cobj, cg = level.evaluate(cand)
            if cobj.total < obj.total:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            log.debug("scale %s: line search exhausted at iteration %d (step %.3g)", scale, it, step)
            break
        V, obj, g = cand, cobj, cg
        step = 2.0 * step
        if trace is not None:
            trace.append(dict(scale=scale, iter=it, data_term=obj.data_term,
                              tv_term=obj.tv_term, total=obj.total))
    return V


def _l1_weights(level: _Level) -> np.ndarray:
    """For a constant velocity the weighted TV term is exactly ``sum(w * |V|)``."""
    w = []
    for unit in ((1.0, 0.0), (0.0, 1.0)):
        F1, F2 = level.flows(VelocityCube.const(*unit))
        w.append(level.lam * (tv(F1) + tv(F2)))
    return np.array(w)


def _pseudo_gradient(v, g, l1):
    """Minimum-norm subgradient for parameters sitting exactly at the L1 kink.

    ``g`` already holds the smooth part there, since the TV subgradient
    uses sign(0) = 0.
    """
    at_zero = v == 0.0
    if not at_zero.any():
        return g
    right = g + l1
    left = g - l1
    pg = np.where(left > 0, left, np.where(right < 0, right, 0.0))
    return np.where(at_zero, pg, g)


def _sobolev(g, h, w, width=0.25):
    """Apply ``(I - a * Laplacian)^-1`` per frame and component (Neumann boundary).

    The operator is symmetric positive definite, so the result is still a
    descent direction; it suppresses the pixel-scale zig-zag that a nonsmooth
    TV term causes in plain per-pixel descent.
    """
    a = (width * max(h, w)) ** 2
    ky = 2.0 - 2.0 * np.cos(np.pi * np.arange(h) / h)
    kx = 2.0 - 2.0 * np.cos(np.pi * np.arange(w) / w)
    denom = 1.0 + a * (ky[:, None] + kx[None, :])
    spec = fft.dctn(g, type=2, axes=(1, 2), norm="ortho")
    return fft.idctn(spec / denom[None, :, :, None], type=2, axes=(1, 2), norm="ortho")


def _rescale_dense(V: VelocityCube, h, w):
    old = V.params
    _, oh, ow, _ = old.shape
    if (oh, ow) == (h, w):
        return V
    new = resize_bilinear(old, h, w)
    new[..., 0] *= w / ow
    new[..., 1] *= h / oh
    return VelocityCube(Parameterization.DENSE, new)


def estimate_velocity(pair: DualPair, params: SolverParams, init: VelocityCube | None = None,
                      trace: list | None = None, gt: GsSequence | None = None) -> VelocityCube:
    """Minimise the objective over the pyramid ``params.scales``.

    ``init`` warm-starts the first scale (default zero).  Accepted iterates
    are appended to ``trace`` as dicts.  Passing ``gt`` switches to the
    supervised objective.
    """
    kind = params.parameterization
    n = params.n_frames
    H, W = pair.t2b.height, pair.t2b.width
    if np.ptp(pair.t2b.pixels) == 0 and np.ptp(pair.b2t.pixels) == 0:
        warnings.warn("dual pair has zero variance; objective is flat, returning zero velocity",
                      RuntimeWarning, stacklevel=2)
        return VelocityCube.zeros(kind, n, H, W)
    gt_arr = gt.stack() if gt is not None else None

    V = init
    for scale in params.scales:
        level = _Level(pair, params, scale, gt=gt_arr)
        if V is None:
            V = VelocityCube.zeros(kind, n, level.h, level.w)
        elif kind is Parameterization.DENSE:
            V = _rescale_dense(V, level.h, level.w)
        V = _descend(level, V, params, trace, scale)
    if kind is Parameterization.DENSE:
        V = _rescale_dense(V, H, W)
    return V


@dataclass
class Extraction:
    sequence: GsSequence
    velocity: VelocityCube
    flow_t2b: Cube
    flow_b2t: Cube
    mask: Cube
    trace: list = field(default_factory=list)


def run_extraction(pair: DualPair, params: SolverParams, velocity: VelocityCube | None = None,
                   gt: GsSequence | None = None) -> Extraction:
    """Estimate (or take) the velocity, warp both inputs and fuse them."""
    trace: list = []
    if velocity is None:
        velocity = estimate_velocity(pair, params, trace=trace, gt=gt)
    n = params.n_frames
    H, W = pair.t2b.height, pair.t2b.width
    p1, p2 = dual_time_cubes(H, n, pair.row_misalignment)
    Vd = velocity.expand(n, H, W)
    f1 = Cube(flow_array(p1, Vd))
    f2 = Cube(flow_array(p2, Vd))
    w1 = backward_warp(pair.t2b, f1)
    w2 = backward_warp(pair.b2t, f2)
    mask = proximity_mask(p1, p2, W)
    frames = blend(w1, w2, mask)
    seq = GsSequence([ImageBuf(f) for f in frames], target_times(pair.config, n))
    return Extraction(seq, velocity, f1, f2, mask, trace)


def extract_frames(pair: DualPair, params: SolverParams, velocity: VelocityCube | None = None) -> GsSequence:
    return run_extraction(pair, params, velocity).sequence
