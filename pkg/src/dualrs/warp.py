"""Backward warping of the RS inputs and mask/residual fusion of the two warps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .geometry import TimeCube
from .tensor import Cube, ImageBuf


@dataclass(frozen=True, eq=False)
class WarpResult:
    warped: Cube
    validity: Cube


def backward_warp(src: ImageBuf, flow: Cube) -> WarpResult:
    """Sample ``src`` at ``(x + Fx, y + Fy)`` for every flow in the cube."""
    if flow.channels != 2:
        raise ValueError(f"flow cube must have 2 channels, got {flow.channels}")
    if (flow.height, flow.width) != (src.height, src.width):
        raise ValueError(f"flow grid {(flow.height, flow.width)} != image {(src.height, src.width)}")
    warped, valid = kernels.warp(src.pixels, flow.data)
    return WarpResult(Cube(warped), Cube(valid[..., None].astype(np.float32)))


def proximity_mask(p_t2b: TimeCube, p_b2t: TimeCube, width: int = 1) -> Cube:
    """Weight of the t2b warp per (target, row): the input read closer in time wins."""
    if p_t2b.values.shape != p_b2t.values.shape:
        raise ValueError(f"time cubes differ in shape: {p_t2b.values.shape} vs {p_b2t.values.shape}")
    a = np.abs(p_t2b.values)
    b = np.abs(p_b2t.values)
    denom = a + b
    tie = (a < 1e-12) & (b < 1e-12)
    mask = np.where(tie, 0.5, b / np.where(tie, 1.0, denom))
    n, m = mask.shape
    return Cube(np.broadcast_to(mask[:, :, None, None], (n, m, width, 1)))


def blend(w_t2b: WarpResult, w_b2t: WarpResult, mask: Cube, residual: Cube | None = None) -> np.ndarray:
    """``res + mask * W_t2b + (1 - mask) * W_b2t`` clamped to [0, 1].

    Where exactly one warp sampled outside its source the mask is forced to
    the valid side.  ``mask`` may have width 1, in which case it is broadcast
    along rows.  Returns an ``(N, H, W, C)`` float32 array.
    """
    a = w_t2b.warped.data.astype(np.float64)
    b = w_b2t.warped.data.astype(np.float64)
    if a.shape != b.shape:
        raise ValueError(f"warped cubes differ in shape: {a.shape} vs {b.shape}")
    m = mask.data.astype(np.float64)
    if m.shape[:2] != a.shape[:2] or m.shape[2] not in (1, a.shape[2]) or m.shape[3] != 1:
        raise ValueError(f"mask {m.shape} does not match warped cube {a.shape}")
    m = np.broadcast_to(m, a.shape[:3] + (1,))
    va = w_t2b.validity.data > 0.5
    vb = w_b2t.validity.data > 0.5
    m = np.where(va & ~vb, 1.0, np.where(vb & ~va, 0.0, m))
    out = m * a + (1.0 - m) * b
    if residual is not None:
        if residual.shape != a.shape:
            raise ValueError(f"residual {residual.shape} does not match warped cube {a.shape}")
        out = out + residual.data
    return np.clip(out, 0.0, 1.0).astype(np.float32)
