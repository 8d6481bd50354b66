"""Rolling-shutter image formation from global-shutter frame stacks.

Row ``i`` (0-based) of a top-to-bottom capture with midpoint ``t`` is read at
``t + (i - M/2) * t_r``; a bottom-to-top capture reads the same row at
``t - (i - M/2) * t_r``.  Scene content at instants between stack frames is
the linear blend of the two bracketing frames, and exposure is instantaneous.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Direction, GsSequence, RsConfig, target_times
from .tensor import ImageBuf


class CoverageError(ValueError):
    """The frame stack does not span the instants a render needs."""


@dataclass(frozen=True, eq=False)
class FrameStack:
    """Global-shutter frames ``(T, H, W, C)`` at instants ``t0 + k * dt``."""

    frames: np.ndarray
    t0: float
    dt: float

    def __post_init__(self):
        fr = self.frames
        if isinstance(fr, (list, tuple)):
            fr = [f.pixels if isinstance(f, ImageBuf) else np.asarray(f) for f in fr]
            shapes = {np.shape(f) for f in fr}
            if len(shapes) > 1:
                raise ValueError(f"stack frames differ in shape: {sorted(shapes)}")
            fr = np.stack(fr)
        fr = np.asarray(fr, dtype=np.float32)
        if fr.ndim == 3:
            fr = fr[..., None]
        if fr.ndim != 4:
            raise ValueError(f"stack must be (T, H, W[, C]), got {fr.shape}")
        if fr.shape[0] < 2:
            raise ValueError("a frame stack needs at least 2 frames")
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        fr = np.ascontiguousarray(fr)
        fr.setflags(write=False)
        object.__setattr__(self, "frames", fr)

    @property
    def count(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    @property
    def t_last(self) -> float:
        return self.t0 + (self.count - 1) * self.dt

    def check_coverage(self, t_lo: float, t_hi: float):
        tol = 1e-6 * self.dt
        if t_lo < self.t0 - tol or t_hi > self.t_last + tol:
            raise CoverageError(
                f"stack covers [{self.t0:.9g}, {self.t_last:.9g}] s but "
                f"[{t_lo:.9g}, {t_hi:.9g}] s is required")

    def _locate(self, times):
        k = (np.asarray(times, dtype=np.float64) - self.t0) / self.dt
        near = np.round(k)
        k = np.where(np.abs(k - near) < 1e-6, near, k)
        k = np.clip(k, 0.0, self.count - 1)
        i0 = np.minimum(np.floor(k).astype(np.int64), self.count - 2)
        return i0, k - i0

    def rows_at(self, times, rows) -> np.ndarray:
        """Row ``rows[j]`` of the scene at ``times[j]``, shape ``(J, W, C)``."""
        i0, w = self._locate(times)
        rows = np.asarray(rows)
        a = self.frames[i0, rows].astype(np.float64)
        b = self.frames[i0 + 1, rows].astype(np.float64)
        return (a + w[:, None, None] * (b - a)).astype(np.float32)

    def frame_at(self, time: float) -> ImageBuf:
        self.check_coverage(time, time)
        (i0,), (w,) = self._locate([time])
        a = self.frames[i0].astype(np.float64)
        b = self.frames[i0 + 1].astype(np.float64)
        return ImageBuf(np.clip(a + w * (b - a), 0.0, 1.0).astype(np.float32))


@dataclass(frozen=True, eq=False)
class DualPair:
    """Simultaneous top-to-bottom and bottom-to-top captures sharing one midpoint."""

    t2b: ImageBuf
    b2t: ImageBuf
    config: RsConfig
    row_misalignment: int = 0

    def __post_init__(self):
        if self.t2b.shape != self.b2t.shape:
            raise ValueError(f"t2b {self.t2b.shape} and b2t {self.b2t.shape} differ in shape")
        if self.t2b.height != self.config.rows:
            raise ValueError(f"image height {self.t2b.height} != config rows {self.config.rows}")


def scan_instant(i: int, cfg: RsConfig) -> float:
    if not 0 <= i < cfg.rows:
        raise IndexError(f"row {i} outside 0..{cfg.rows - 1}")
    offset = (i - cfg.rows / 2) * cfg.row_readout
    if cfg.direction is Direction.T2B:
        return cfg.midpoint + offset
    return cfg.midpoint - offset


def scan_instants(cfg: RsConfig) -> np.ndarray:
    offset = (np.arange(cfg.rows) - cfg.rows / 2) * cfg.row_readout
    sign = 1.0 if cfg.direction is Direction.T2B else -1.0
    return cfg.midpoint + sign * offset


def synthesize_rs(stack: FrameStack, cfg: RsConfig) -> ImageBuf:
    if stack.height != cfg.rows:
        raise ValueError(f"stack height {stack.height} != rows {cfg.rows}")
    times = scan_instants(cfg)
    stack.check_coverage(times.min(), times.max())
    return ImageBuf(np.clip(stack.rows_at(times, np.arange(cfg.rows)), 0.0, 1.0))


def synthesize_dual(stack: FrameStack, cfg: RsConfig, misalign_rows: int = 0) -> DualPair:
    """Render a t2b/b2t pair; the b2t midpoint is delayed by ``misalign_rows`` row-times."""
    if abs(misalign_rows) >= cfg.rows:
        raise ValueError(f"|misalign_rows| must be < {cfg.rows}, got {misalign_rows}")
    t2b = synthesize_rs(stack, cfg.replace(direction=Direction.T2B))
    b2t_cfg = cfg.replace(direction=Direction.B2T,
                          midpoint=cfg.midpoint + misalign_rows * cfg.row_readout)
    b2t = synthesize_rs(stack, b2t_cfg)
    return DualPair(t2b, b2t, cfg.replace(direction=Direction.T2B), int(misalign_rows))


def synthesize_gt(stack: FrameStack, cfg: RsConfig, n_frames: int) -> GsSequence:
    instants = target_times(cfg, n_frames)
    stack.check_coverage(min(instants), max(instants))
    return GsSequence([stack.frame_at(t) for t in instants], instants)


@dataclass(frozen=True, eq=False)
class AmbiguityScene:
    stack: FrameStack
    config: RsConfig
    tilt: float


def ambiguity_scene(velocity: float = 5000.0, readout_long: float = 100e-6,
                    readout_short: float = 50e-6, shape=(96, 160), bar_width: float = 8.0):
    """Two scenes that one t2b camera cannot tell apart.

    Scene A is an upright bar filmed with ``readout_long``; scene B is a bar
    pre-tilted by ``velocity * (readout_long - readout_short)`` px/row filmed
    with ``readout_short``.  Both move at ``velocity`` px/s.  The stacks are
    sampled on a grid that contains every scan instant of both cameras.
    """
    from .scenes import translating_bar

    h, w = shape
    tilt = velocity * (readout_long - readout_short)
    dt = _common_step(readout_long, readout_short)
    x_ref = (w - 1) / 2
    scenes = []
    for readout, slope in ((readout_long, 0.0), (readout_short, tilt)):
        cfg = RsConfig(rows=h, row_readout=readout, midpoint=0.0)
        half = (h / 2 + 2) * readout_long
        stack = translating_bar(shape, velocity, -_snap(half, dt), _snap(half, dt), dt,
                                x_ref=x_ref, width=bar_width, tilt=slope)
        scenes.append(AmbiguityScene(stack, cfg, slope))
    return scenes[0], scenes[1]


def _common_step(a, b):
    """Largest step dividing both readouts when their ratio is rational with small terms."""
    from fractions import Fraction

    r = Fraction(a / b).limit_denominator(64)
    return b / r.denominator


def _snap(t, dt):
    return np.ceil(t / dt - 1e-9) * dt
