"""Dense image and cube containers plus the scalar bilinear sampler."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class ImageBuf:
    """A float32 image stored as an ``(H, W, C)`` array with values in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[..., None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ValueError(f"image must be (H, W) or (H, W, 1|3), got {np.shape(self.pixels)}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image must be non-empty")
        px = np.ascontiguousarray(px, dtype=np.float32)
        if not np.all(np.isfinite(px)):
            raise ValueError("image contains non-finite values")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError(f"image values must lie in [0, 1], got [{px.min()}, {px.max()}]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.pixels.shape

    def __eq__(self, other):
        if not isinstance(other, ImageBuf):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.pixels, other.pixels))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Cube:
    """``(N, H, W, C)`` float32 tensor used for flow, velocity, mask and residual cubes."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim != 4:
            raise ValueError(f"cube must be 4-D (N, H, W, C), got shape {d.shape}")
        d = np.ascontiguousarray(d, dtype=np.float32)
        if not np.all(np.isfinite(d)):
            raise ValueError("cube contains non-finite values")
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def channels(self) -> int:
        return self.data.shape[3]

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape


def bilinear_sample(img: ImageBuf, x: float, y: float, c: int = 0) -> float:
    """Sample channel ``c`` of ``img`` at column ``x``, row ``y`` with clamp-to-edge."""
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError(f"sample coordinates must be finite, got ({x}, {y})")
    px = img.pixels
    H, W = px.shape[:2]
    x = min(max(x, 0.0), W - 1.0)
    y = min(max(y, 0.0), H - 1.0)
    x0 = min(int(math.floor(x)), max(W - 2, 0))
    y0 = min(int(math.floor(y)), max(H - 2, 0))
    x1 = min(x0 + 1, W - 1)
    y1 = min(y0 + 1, H - 1)
    fx = x - x0
    fy = y - y0
    v00, v01 = float(px[y0, x0, c]), float(px[y0, x1, c])
    v10, v11 = float(px[y1, x0, c]), float(px[y1, x1, c])
    # weighted form is exact at both nodes, unlike a + f * (b - a)
    top = (1.0 - fx) * v00 + fx * v01
    bot = (1.0 - fx) * v10 + fx * v11
    return (1.0 - fy) * top + fy * bot
