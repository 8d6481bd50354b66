"""Hot inner loops: bilinear backward warping and the dual-consistency data term.

Every kernel exists twice, a numba ``@njit`` version and a vectorised numpy
version with identical semantics.  The public names (:func:`warp`,
:func:`dual_data`) dispatch on :data:`dualrs._backend.USE_NUMBA`.

Conventions shared by both paths:

* images are ``(H, W, C)`` float32, flows ``(N, H, W, 2)`` float64 with
  component 0 horizontal (column) and 1 vertical (row);
* samples are clamp-to-edge; a sample is *valid* when its pre-clamp
  coordinate lies in ``[0, W-1] x [0, H-1]``;
* the bilinear derivative is the one-sided derivative of the interpolant,
  zero along an axis whose coordinate was clamped;
* the data term weights pixels by co-validity, with a one-pixel linear
  ramp outside the image so the weighted mean is continuous in the flow;
* per-row partial sums are reduced in a fixed order, so results do not
  depend on the thread count.
"""

import numpy as np

from ._backend import USE_NUMBA, njit, prange


# --------------------------------------------------------------------- numba


@njit(cache=True)
def _cell(coord, size):
    """Clamp ``coord`` and return (lower index, fraction, derivative gate)."""
    gate = 1.0
    if coord < 0.0:
        coord = 0.0
        gate = 0.0
    elif coord > size - 1.0:
        coord = size - 1.0
        gate = 0.0
    if size > 1:
        i0 = int(np.floor(coord))
        if i0 > size - 2:
            i0 = size - 2
    else:
        i0 = 0
        gate = 0.0
    return i0, coord - i0, gate


@njit(cache=True)
def _sample_nb(img, x, y, c):
    H, W = img.shape[0], img.shape[1]
    x0, fx, gx = _cell(x, W)
    y0, fy, gy = _cell(y, H)
    x1 = x0 + 1 if W > 1 else x0
    y1 = y0 + 1 if H > 1 else y0
    v00 = np.float64(img[y0, x0, c])
    v01 = np.float64(img[y0, x1, c])
    v10 = np.float64(img[y1, x0, c])
    v11 = np.float64(img[y1, x1, c])
    top = (1.0 - fx) * v00 + fx * v01
    bot = (1.0 - fx) * v10 + fx * v11
    val = (1.0 - fy) * top + fy * bot
    dx = gx * ((1.0 - fy) * (v01 - v00) + fy * (v11 - v10))
    dy = gy * (bot - top)
    return val, dx, dy


@njit(cache=True, parallel=True)
def warp_numba(src, flow):
    N, H, W = flow.shape[0], flow.shape[1], flow.shape[2]
    C = src.shape[2]
    out = np.empty((N, H, W, C), np.float32)
    valid = np.empty((N, H, W), np.bool_)
    for k in prange(N * H):
        n = k // H
        y = k % H
        for x in range(W):
            sx = x + flow[n, y, x, 0]
            sy = y + flow[n, y, x, 1]
            valid[n, y, x] = (sx >= 0.0) and (sx <= W - 1.0) and (sy >= 0.0) and (sy <= H - 1.0)
            for c in range(C):
                v, _, _ = _sample_nb(src, sx, sy, c)
                out[n, y, x, c] = v
    return out, valid


@njit(cache=True)
def _ramp(s, size):
    """Co-validity weight along one axis: 1 inside, linear to 0 one pixel outside."""
    if s < -1.0 or s > size:
        return 0.0, 0.0
    if s < 0.0:
        return s + 1.0, 1.0
    if s > size - 1.0:
        return size - s, -1.0
    return 1.0, 0.0


@njit(cache=True)
def _weight(sx, sy, W, H):
    rx, dx = _ramp(sx, W)
    ry, dy = _ramp(sy, H)
    return rx * ry, dx * ry, rx * dy


@njit(cache=True, parallel=True)
def dual_data_numba(t2b, b2t, f1, f2, eps, want_grad):
    N, H, W = f1.shape[0], f1.shape[1], f1.shape[2]
    C = t2b.shape[2]
    row_sum = np.zeros(N * H, np.float64)
    row_wgt = np.zeros(N * H, np.float64)
    gs1 = np.zeros((N, H, W, 2), np.float64)
    gs2 = np.zeros((N, H, W, 2), np.float64)
    gz1 = np.zeros((N, H, W, 2), np.float64)
    gz2 = np.zeros((N, H, W, 2), np.float64)
    eps2 = eps * eps
    for k in prange(N * H):
        n = k // H
        y = k % H
        acc = 0.0
        wacc = 0.0
        for x in range(W):
            ax_ = x + f1[n, y, x, 0]
            ay_ = y + f1[n, y, x, 1]
            bx_ = x + f2[n, y, x, 0]
            by_ = y + f2[n, y, x, 1]
            wa, wax, way = _weight(ax_, ay_, W, H)
            if wa == 0.0:
                continue
            wb, wbx, wby = _weight(bx_, by_, W, H)
            if wb == 0.0:
                continue
            w = wa * wb
            rsum = 0.0
            for c in range(C):
                a, adx, ady = _sample_nb(t2b, ax_, ay_, c)
                b, bdx, bdy = _sample_nb(b2t, bx_, by_, c)
                d = a - b
                r = np.sqrt(d * d + eps2)
                rsum += r
                if want_grad:
                    q = w * d / r
                    gs1[n, y, x, 0] += q * adx
                    gs1[n, y, x, 1] += q * ady
                    gs2[n, y, x, 0] -= q * bdx
                    gs2[n, y, x, 1] -= q * bdy
            acc += w * rsum
            wacc += w * C
            if want_grad:
                gs1[n, y, x, 0] += wax * wb * rsum
                gs1[n, y, x, 1] += way * wb * rsum
                gs2[n, y, x, 0] += wa * wbx * rsum
                gs2[n, y, x, 1] += wa * wby * rsum
                gz1[n, y, x, 0] = wax * wb * C
                gz1[n, y, x, 1] = way * wb * C
                gz2[n, y, x, 0] = wa * wbx * C
                gz2[n, y, x, 1] = wa * wby * C
        row_sum[k] = acc
        row_wgt[k] = wacc
    return row_sum, row_wgt, gs1, gs2, gz1, gz2


# --------------------------------------------------------------------- numpy


def _axis_numpy(coord, size):
    gate = ((coord >= 0.0) & (coord <= size - 1.0)).astype(np.float64)
    cc = np.clip(coord, 0.0, size - 1.0)
    if size > 1:
        i0 = np.minimum(np.floor(cc).astype(np.int64), size - 2)
        i1 = i0 + 1
    else:
        i0 = np.zeros(cc.shape, np.int64)
        i1 = i0
        gate = np.zeros_like(cc)
    return i0, i1, cc - i0, gate


def sample_numpy(img, sx, sy):
    """Bilinear samples and their spatial derivatives at arrays of coordinates.

    Returns ``(values, d/dx, d/dy)``, each shaped ``sx.shape + (C,)`` in float64.
    """
    H, W = img.shape[:2]
    x0, x1, fx, gx = _axis_numpy(sx, W)
    y0, y1, fy, gy = _axis_numpy(sy, H)
    im = img.astype(np.float64, copy=False)
    v00 = im[y0, x0]
    v01 = im[y0, x1]
    v10 = im[y1, x0]
    v11 = im[y1, x1]
    fx = fx[..., None]
    fy = fy[..., None]
    top = (1.0 - fx) * v00 + fx * v01
    bot = (1.0 - fx) * v10 + fx * v11
    val = (1.0 - fy) * top + fy * bot
    dx = gx[..., None] * ((1.0 - fy) * (v01 - v00) + fy * (v11 - v10))
    dy = gy[..., None] * (bot - top)
    return val, dx, dy


def _coords(flow):
    N, H, W = flow.shape[:3]
    yy, xx = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64), indexing="ij")
    sx = xx[None] + flow[..., 0]
    sy = yy[None] + flow[..., 1]
    valid = (sx >= 0.0) & (sx <= W - 1.0) & (sy >= 0.0) & (sy <= H - 1.0)
    return sx, sy, valid


def warp_numpy(src, flow):
    sx, sy, valid = _coords(flow)
    val, _, _ = sample_numpy(src, sx, sy)
    return val.astype(np.float32), valid


def _ramp_numpy(s, size):
    r = np.clip(np.minimum(s + 1.0, size - s), 0.0, 1.0)
    dr = np.where((s > -1.0) & (s < 0.0), 1.0, 0.0) - np.where((s > size - 1.0) & (s < size), 1.0, 0.0)
    return r, dr


def dual_data_numpy(t2b, b2t, f1, f2, eps, want_grad):
    N, H, W = f1.shape[:3]
    C = t2b.shape[2]
    ax, ay, _ = _coords(f1)
    bx, by, _ = _coords(f2)
    rax, dax = _ramp_numpy(ax, W)
    ray, day = _ramp_numpy(ay, H)
    rbx, dbx = _ramp_numpy(bx, W)
    rby, dby = _ramp_numpy(by, H)
    wa = rax * ray
    wb = rbx * rby
    w = wa * wb
    a, adx, ady = sample_numpy(t2b, ax, ay)
    b, bdx, bdy = sample_numpy(b2t, bx, by)
    d = a - b
    r = np.sqrt(d * d + eps * eps)
    rsum = r.sum(axis=-1)
    row_sum = (w * rsum).sum(axis=2)
    row_wgt = (w * C).sum(axis=2)
    shape = (N, H, W, 2)
    gs1, gs2, gz1, gz2 = (np.zeros(shape) for _ in range(4))
    if want_grad:
        q = w[..., None] * d / r
        gs1[..., 0] = (q * adx).sum(-1) + dax * ray * wb * rsum
        gs1[..., 1] = (q * ady).sum(-1) + rax * day * wb * rsum
        gs2[..., 0] = -(q * bdx).sum(-1) + wa * dbx * rby * rsum
        gs2[..., 1] = -(q * bdy).sum(-1) + wa * rbx * dby * rsum
        gz1[..., 0] = dax * ray * wb * C
        gz1[..., 1] = rax * day * wb * C
        gz2[..., 0] = wa * dbx * rby * C
        gz2[..., 1] = wa * rbx * dby * C
    return row_sum.reshape(-1), row_wgt.reshape(-1), gs1, gs2, gz1, gz2


# ------------------------------------------------------------------ dispatch


def _prep(img):
    return np.ascontiguousarray(img, dtype=np.float32)


def warp(src, flow, use_numba=None):
    """Backward-warp ``src`` (H, W, C) by every flow in ``flow`` (N, H, W, 2)."""
    use_numba = USE_NUMBA if use_numba is None else use_numba
    src = _prep(src)
    flow = np.ascontiguousarray(flow, dtype=np.float64)
    if use_numba:
        return warp_numba(src, flow)
    return warp_numpy(src, flow)


def dual_data(t2b, b2t, f1, f2, eps, want_grad=True, use_numba=None):
    """Charbonnier dual-consistency mean over co-valid samples.

    Each pixel is weighted by the product of the two samples' co-validity
    weights: 1 when the pre-clamp coordinate lies inside the image, falling
    linearly to 0 one pixel outside.  Returns ``(data, weight, grad_f1,
    grad_f2)`` where ``data = sum(w * rho) / sum(w)`` over pixels and
    channels, ``weight = sum(w)`` and the gradients are of ``data``.  When no
    sample carries weight, ``data`` is ``nan``.
    """
    use_numba = USE_NUMBA if use_numba is None else use_numba
    t2b = _prep(t2b)
    b2t = _prep(b2t)
    f1 = np.ascontiguousarray(f1, dtype=np.float64)
    f2 = np.ascontiguousarray(f2, dtype=np.float64)
    fn = dual_data_numba if use_numba else dual_data_numpy
    row_sum, row_wgt, gs1, gs2, gz1, gz2 = fn(t2b, b2t, f1, f2, float(eps), bool(want_grad))
    total = float(np.sum(row_sum))
    weight = float(np.sum(row_wgt))
    if weight == 0.0:
        return float("nan"), 0.0, np.zeros_like(f1), np.zeros_like(f2)
    data = total / weight
    return data, weight, (gs1 - data * gz1) / weight, (gs2 - data * gz2) / weight
