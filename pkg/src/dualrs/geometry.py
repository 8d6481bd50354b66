"""Shutter geometry: dual time cubes, target instants and the velocity-to-flow product."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .tensor import Cube, ImageBuf


class Direction(str, enum.Enum):
    T2B = "t2b"
    B2T = "b2t"


class Parameterization(str, enum.Enum):
    GLOBAL_CONST = "const"
    GLOBAL_AFFINE = "affine"
    DENSE = "dense"


@dataclass(frozen=True)
class RsConfig:
    """Rolling-shutter geometry.

    ``rows`` is the image height M, ``row_readout`` the per-row readout time
    in seconds and ``midpoint`` the exposure midpoint t.
    """

    rows: int
    row_readout: float
    midpoint: float = 0.0
    direction: Direction = Direction.T2B

    def __post_init__(self):
        if self.rows < 2:
            raise ValueError(f"rows must be >= 2, got {self.rows}")
        if not self.row_readout > 0:
            raise ValueError(f"row_readout must be > 0, got {self.row_readout}")
        object.__setattr__(self, "direction", Direction(self.direction))

    @property
    def t_start(self) -> float:
        return self.midpoint - self.row_readout * self.rows / 2

    @property
    def t_end(self) -> float:
        return self.midpoint + self.row_readout * self.rows / 2

    @property
    def frame_readout(self) -> float:
        """Duration (M - 1) * t_r, the time unit of velocity cubes."""
        return (self.rows - 1) * self.row_readout

    def replace(self, **changes) -> "RsConfig":
        fields = dict(rows=self.rows, row_readout=self.row_readout,
                      midpoint=self.midpoint, direction=self.direction)
        fields.update(changes)
        return RsConfig(**fields)


def target_fractions(n_targets: int) -> np.ndarray:
    """Normalised target positions (n-1)/(N-1); a single target sits at 1/2."""
    if n_targets < 1:
        raise ValueError(f"need at least one target, got {n_targets}")
    if n_targets == 1:
        return np.array([0.5])
    return np.arange(n_targets, dtype=np.float64) / (n_targets - 1)


def target_times(cfg: RsConfig, n_targets: int) -> list[float]:
    fr = target_fractions(n_targets)
    if n_targets == 1:
        return [cfg.midpoint]
    span = cfg.t_end - cfg.t_start
    return [cfg.t_start + f * span for f in fr]


@dataclass(frozen=True, eq=False)
class GsSequence:
    """Extracted or ground-truth global-shutter frames with their instants."""

    frames: list[ImageBuf]
    instants: list[float]

    def __post_init__(self):
        if len(self.frames) != len(self.instants) or not self.frames:
            raise ValueError("frames and instants must be non-empty and equally long")
        if any(b <= a for a, b in zip(self.instants, self.instants[1:])):
            raise ValueError("instants must be strictly increasing")
        shapes = {f.shape for f in self.frames}
        if len(shapes) != 1:
            raise ValueError(f"frames differ in shape: {sorted(shapes)}")

    def __len__(self):
        return len(self.frames)

    def stack(self) -> np.ndarray:
        return np.stack([f.pixels for f in self.frames])


@dataclass(frozen=True, eq=False)
class TimeCube:
    """Per-target, per-row normalised time offsets, shape ``(N, M)``.

    Values are constant along columns, so only rows are stored.
    """

    values: np.ndarray
    direction: Direction

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def rows(self) -> int:
        return self.values.shape[1]

    def expand(self, width: int) -> Cube:
        return Cube(np.broadcast_to(self.values[:, :, None, None],
                                    (self.n_frames, self.rows, width, 1)))


def build_time_cube(rows: int, n_targets: int, direction: Direction | str,
                    shift: float = 0.0) -> TimeCube:
    """Time cube of one scan direction.

    ``shift`` is added to every entry; it models a capture whose midpoint
    is offset from the nominal one (``misalign_rows / (M - 1)``).
    """
    if rows < 2:
        raise ValueError(f"time cube needs at least 2 rows, got {rows}")
    direction = Direction(direction)
    m = np.arange(rows, dtype=np.float64)
    if direction is Direction.T2B:
        row_frac = m / (rows - 1)
    else:
        row_frac = (rows - 1 - m) / (rows - 1)
    vals = row_frac[None, :] - target_fractions(n_targets)[:, None]
    if shift:
        vals = vals + shift
    vals.setflags(write=False)
    return TimeCube(vals, direction)


@dataclass(frozen=True, eq=False)
class VelocityCube:
    """Velocity field in pixels per frame readout.

    ``params`` holds two numbers for GLOBAL_CONST (vx, vy), six for
    GLOBAL_AFFINE (vx = a0 + a1*u + a2*w, vy = a3 + a4*u + a5*w with u, w the
    pixel-centre coordinates normalised to [-1, 1]) and an ``(N, H, W, 2)``
    array for DENSE.  Global parameters are in full-resolution pixels.
    """

    parameterization: Parameterization
    params: np.ndarray

    def __post_init__(self):
        kind = Parameterization(self.parameterization)
        p = np.array(self.params, dtype=np.float64)
        expected = {Parameterization.GLOBAL_CONST: (2,), Parameterization.GLOBAL_AFFINE: (6,)}
        if kind in expected and p.shape != expected[kind]:
            raise ValueError(f"{kind.name} expects {expected[kind]} parameters, got {p.shape}")
        if kind is Parameterization.DENSE and (p.ndim != 4 or p.shape[3] != 2):
            raise ValueError(f"DENSE velocity must be (N, H, W, 2), got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("velocity contains non-finite values")
        p.setflags(write=False)
        object.__setattr__(self, "parameterization", kind)
        object.__setattr__(self, "params", p)

    @classmethod
    def const(cls, vx: float, vy: float = 0.0) -> "VelocityCube":
        return cls(Parameterization.GLOBAL_CONST, np.array([vx, vy]))

    @classmethod
    def zeros(cls, kind, n=None, h=None, w=None) -> "VelocityCube":
        kind = Parameterization(kind)
        if kind is Parameterization.DENSE:
            return cls(kind, np.zeros((n, h, w, 2)))
        return cls(kind, np.zeros(2 if kind is Parameterization.GLOBAL_CONST else 6))

    def expand(self, n: int, h: int, w: int, scale=(1.0, 1.0)) -> np.ndarray:
        """Dense ``(N, H, W, 2)`` float64 field; global forms are multiplied by ``scale``."""
        kind = self.parameterization
        if kind is Parameterization.DENSE:
            if self.params.shape[:3] != (n, h, w):
                raise ValueError(f"velocity shape {self.params.shape[:3]} != requested {(n, h, w)}")
            return np.array(self.params)
        sx, sy = scale
        out = np.empty((n, h, w, 2))
        if kind is Parameterization.GLOBAL_CONST:
            out[..., 0] = self.params[0] * sx
            out[..., 1] = self.params[1] * sy
            return out
        u, v = _affine_basis(h, w)
        a = self.params
        out[..., 0] = (a[0] + a[1] * u + a[2] * v) * sx
        out[..., 1] = (a[3] + a[4] * u + a[5] * v) * sy
        return out

    def pullback(self, grad_dense: np.ndarray, scale=(1.0, 1.0)) -> np.ndarray:
        """Map a gradient w.r.t. the expanded field onto ``params``."""
        kind = self.parameterization
        if kind is Parameterization.DENSE:
            return grad_dense
        sx, sy = scale
        gx = grad_dense[..., 0]
        gy = grad_dense[..., 1]
        if kind is Parameterization.GLOBAL_CONST:
            return np.array([gx.sum() * sx, gy.sum() * sy])
        _, h, w, _ = grad_dense.shape
        u, v = _affine_basis(h, w)
        gxs = gx.sum(axis=0)
        gys = gy.sum(axis=0)
        return np.array([gxs.sum() * sx, (gxs * u).sum() * sx, (gxs * v).sum() * sx,
                         gys.sum() * sy, (gys * u).sum() * sy, (gys * v).sum() * sy])


def _affine_basis(h, w):
    u = 2.0 * (np.arange(w) + 0.5) / w - 1.0
    v = 2.0 * (np.arange(h) + 0.5) / h - 1.0
    return np.broadcast_to(u[None, :], (h, w)), np.broadcast_to(v[:, None], (h, w))


def flow_array(time_cube: TimeCube, velocity: np.ndarray) -> np.ndarray:
    """``P * V`` with P broadcast across columns and components."""
    P = time_cube.values
    if velocity.shape[:2] != P.shape:
        raise ValueError(f"time cube {P.shape} does not match velocity {velocity.shape[:3]}")
    return P[:, :, None, None] * velocity


def flow_from_velocity(time_cube: TimeCube, velocity: VelocityCube, width: int | None = None) -> Cube:
    """Flow cube from a time cube and a velocity cube.

    ``width`` is required for the global parameterisations, which carry no grid.
    """
    n, m = time_cube.values.shape
    if velocity.parameterization is Parameterization.DENSE:
        w = velocity.params.shape[2]
        if width is not None and width != w:
            raise ValueError(f"width {width} does not match DENSE velocity width {w}")
    elif width is None:
        raise ValueError("width is required to expand a global velocity")
    else:
        w = width
    dense = velocity.expand(n, m, w)
    return Cube(flow_array(time_cube, dense))
