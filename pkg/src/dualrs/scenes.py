"""Procedural scenes with analytic ground truth.

All generators return a :class:`~dualrs.simulator.FrameStack` sampled on a
uniform time grid; motion is specified in pixels per second.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import RsConfig
from .simulator import FrameStack


@dataclass(frozen=True)
class SineTexture:
    """Band-limited texture made of random plane waves, values in [0.05, 0.95]."""

    freqs: np.ndarray     # (K, 2) radians per pixel, (fx, fy)
    phases: np.ndarray    # (K, C)
    amps: np.ndarray      # (K,)

    @classmethod
    def random(cls, seed: int = 0, n_waves: int = 24, wavelengths=(12.0, 64.0), channels: int = 1):
        rng = np.random.default_rng(seed)
        lam = np.exp(rng.uniform(math.log(wavelengths[0]), math.log(wavelengths[1]), n_waves))
        theta = rng.uniform(0.0, math.pi, n_waves)
        k = 2 * math.pi / lam
        freqs = np.stack([k * np.cos(theta), k * np.sin(theta)], axis=1)
        phases = rng.uniform(0.0, 2 * math.pi, (n_waves, channels))
        amps = rng.uniform(0.5, 1.0, n_waves)
        amps = 0.45 * amps / amps.sum()
        return cls(freqs, phases, amps)

    @property
    def channels(self) -> int:
        return self.phases.shape[1]

    def evaluate(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Texture at continuous coordinates; returns ``x.shape + (C,)``."""
        arg = x[..., None] * self.freqs[:, 0] + y[..., None] * self.freqs[:, 1]
        out = np.empty(x.shape + (self.channels,))
        for c in range(self.channels):
            out[..., c] = 0.5 + np.sum(self.amps * np.sin(arg + self.phases[:, c]), axis=-1)
        return out


def _grid(h, w):
    return np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))


def _time_grid(t_begin, t_end, dt):
    count = int(math.ceil((t_end - t_begin) / dt - 1e-9)) + 1
    return t_begin + dt * np.arange(max(count, 2))


def translating_texture(shape, velocity, t_begin, t_end, dt, seed=0, channels=1,
                        reference_time=0.0, texture=None):
    """Texture translating at ``velocity = (ux, uy)`` pixels per second.

    At ``reference_time`` the frame equals the texture sampled on the pixel grid.
    """
    h, w = shape
    tex = texture or SineTexture.random(seed, channels=channels)
    xx, yy = _grid(h, w)
    times = _time_grid(t_begin, t_end, dt)
    frames = np.empty((len(times), h, w, tex.channels), np.float32)
    for k, tau in enumerate(times):
        d = tau - reference_time
        frames[k] = tex.evaluate(xx - velocity[0] * d, yy - velocity[1] * d)
    return FrameStack(frames, float(times[0]), dt)


def rotating_texture(shape, omega, t_begin, t_end, dt, seed=0, channels=1,
                     reference_time=0.0, center=None, texture=None):
    """Texture spinning at ``omega`` radians per second about ``center``."""
    h, w = shape
    cx, cy = center if center is not None else ((w - 1) / 2, (h - 1) / 2)
    tex = texture or SineTexture.random(seed, channels=channels)
    xx, yy = _grid(h, w)
    times = _time_grid(t_begin, t_end, dt)
    frames = np.empty((len(times), h, w, tex.channels), np.float32)
    for k, tau in enumerate(times):
        a = -omega * (tau - reference_time)
        ca, sa = math.cos(a), math.sin(a)
        dx, dy = xx - cx, yy - cy
        frames[k] = tex.evaluate(cx + ca * dx - sa * dy, cy + sa * dx + ca * dy)
    return FrameStack(frames, float(times[0]), dt)


def bar_coverage(x: np.ndarray, center, width: float) -> np.ndarray:
    """Fraction of each unit pixel ``[x-1/2, x+1/2]`` covered by a bar of ``width``."""
    lo = np.maximum(x - 0.5, center - width / 2)
    hi = np.minimum(x + 0.5, center + width / 2)
    return np.clip(hi - lo, 0.0, 1.0)


def render_bar(shape, centers, width=1.0, background=0.2, foreground=0.8, channels=1):
    """One frame with a vertical bar whose per-row centre is ``centers[y]``."""
    h, w = shape
    x = np.arange(w, dtype=np.float64)
    cov = bar_coverage(x[None, :], np.asarray(centers, dtype=np.float64)[:, None], width)
    img = background + (foreground - background) * cov
    return np.repeat(img[..., None], channels, axis=2).astype(np.float32)


def translating_bar(shape, velocity, t_begin, t_end, dt, x_ref, width=1.0,
                    reference_time=0.0, tilt=0.0, tilt_origin=None, **kw):
    """Bar moving horizontally at ``velocity`` px/s.

    ``tilt`` is a horizontal slope in px/row measured from row ``tilt_origin``
    (default M/2); at ``reference_time`` the bar centre on that row is ``x_ref``.
    """
    h, w = shape
    origin = h / 2 if tilt_origin is None else tilt_origin
    rows = np.arange(h, dtype=np.float64)
    times = _time_grid(t_begin, t_end, dt)
    frames = np.empty((len(times), h, w, kw.get("channels", 1)), np.float32)
    for k, tau in enumerate(times):
        centers = x_ref + tilt * (rows - origin) + velocity * (tau - reference_time)
        frames[k] = render_bar(shape, centers, width, **kw)
    return FrameStack(frames, float(times[0]), dt)


def static_stack(image: np.ndarray, t_begin: float, t_end: float, dt: float) -> FrameStack:
    times = _time_grid(t_begin, t_end, dt)
    img = np.asarray(image, np.float32)
    if img.ndim == 2:
        img = img[..., None]
    return FrameStack(np.repeat(img[None], len(times), axis=0), float(times[0]), dt)


def checkerboard(shape, square=8, low=0.0, high=1.0, channels=1):
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    cb = ((yy // square + xx // square) % 2).astype(np.float32)
    img = low + (high - low) * cb
    return np.repeat(img[..., None], channels, axis=2)


def constant_velocity_scene(size=(256, 256), velocity=(2.0, 0.0), row_readout=87e-6,
                            midpoint=0.0, seed=0, channels=1, frames_per_readout=16,
                            margin_rows=8):
    """Textured scene translating at ``velocity`` pixels per frame readout.

    Returns ``(stack, cfg)``; the stack covers the exposure window padded by
    ``margin_rows`` row-times on both sides, enough for small misalignments.
    """
    h, w = size
    cfg = RsConfig(rows=h, row_readout=row_readout, midpoint=midpoint)
    u = (velocity[0] / cfg.frame_readout, velocity[1] / cfg.frame_readout)
    dt = cfg.frame_readout / frames_per_readout
    pad = margin_rows * row_readout
    stack = translating_texture(size, u, cfg.t_start - pad, cfg.t_end + pad, dt, seed=seed,
                                channels=channels, reference_time=midpoint)
    return stack, cfg


def rotating_scene(size=(128, 128), turn=0.6, row_readout=87e-6, midpoint=0.0, seed=0,
                   channels=1, frames_per_readout=32, margin_rows=4):
    """Spinning texture; ``turn`` is the rotation angle in radians per frame readout."""
    h, w = size
    cfg = RsConfig(rows=h, row_readout=row_readout, midpoint=midpoint)
    omega = turn / cfg.frame_readout
    dt = cfg.frame_readout / frames_per_readout
    pad = margin_rows * row_readout
    stack = rotating_texture(size, omega, cfg.t_start - pad, cfg.t_end + pad, dt, seed=seed,
                             channels=channels, reference_time=midpoint)
    return stack, cfg
