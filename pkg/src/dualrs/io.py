"""On-disk formats: cube files, 8-bit PNGs, frame directories and JSON manifests.

Cube file layout (little-endian)::

    b"DRSC1" | uint32 N | uint32 H | uint32 W | uint32 C | float32[N*H*W*C]

with the payload ordered n -> h -> w -> c.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .simulator import FrameStack
from .tensor import ImageBuf

CUBE_MAGIC = b"DRSC1"
_HEADER = struct.Struct("<4I")
SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Malformed manifest or command-line configuration."""


class DataError(ValueError):
    """Missing, unreadable or inconsistent input data."""


def atomic_write(path, payload: bytes | str):
    """Write via a temporary file in the target directory and rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(payload, str):
        payload = payload.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ------------------------------------------------------------------- cubes


def encode_cube(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.ndim != 4:
        raise ValueError(f"cube must be 4-D (N, H, W, C), got shape {arr.shape}")
    header = CUBE_MAGIC + _HEADER.pack(*arr.shape)
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def decode_cube(buf: bytes) -> np.ndarray:
    if buf[: len(CUBE_MAGIC)] != CUBE_MAGIC:
        raise DataError("not a cube file (bad magic)")
    off = len(CUBE_MAGIC)
    if len(buf) < off + _HEADER.size:
        raise DataError("truncated cube header")
    dims = _HEADER.unpack_from(buf, off)
    off += _HEADER.size
    expected = int(np.prod(dims, dtype=np.int64)) * 4
    if len(buf) - off != expected:
        raise DataError(f"cube payload is {len(buf) - off} bytes, header {dims} implies {expected}")
    return np.frombuffer(buf, dtype="<f4", offset=off).reshape(dims).astype(np.float32)


def write_cube(path, arr: np.ndarray):
    atomic_write(path, encode_cube(arr))


def read_cube(path) -> np.ndarray:
    try:
        return decode_cube(Path(path).read_bytes())
    except OSError as exc:
        raise DataError(f"cannot read cube {path}: {exc.strerror}") from exc


# ------------------------------------------------------------------- images


def encode_png(img: ImageBuf) -> bytes:
    import io as _io

    q = np.round(img.pixels * 255.0).astype(np.uint8)
    mode = "L" if img.channels == 1 else "RGB"
    arr = q[..., 0] if img.channels == 1 else q
    buf = _io.BytesIO()
    Image.fromarray(arr, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def write_png(path, img: ImageBuf):
    atomic_write(path, encode_png(img))


def read_png(path) -> ImageBuf:
    try:
        with Image.open(path) as im:
            if im.mode in ("L", "I;16", "I"):
                arr = np.asarray(im, dtype=np.float64)
                peak = 65535.0 if im.mode != "L" else 255.0
                arr = arr / peak
            else:
                arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return ImageBuf(np.clip(arr, 0.0, 1.0).astype(np.float32))


def read_image(path) -> ImageBuf:
    """PNG or single-frame cube file."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    if path.suffix == ".cube":
        arr = read_cube(path)
        if arr.shape[0] != 1:
            raise DataError(f"{path} holds {arr.shape[0]} frames, expected 1")
        return ImageBuf(np.clip(arr[0], 0.0, 1.0))
    return read_png(path)


def read_frames(path) -> np.ndarray:
    """``(N, H, W, C)`` frames from a cube file or a directory of PNGs."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"input not found: {path}")
    if path.is_dir():
        files = sorted(path.glob("*.png"))
        if not files:
            raise DataError(f"no PNG frames in {path}")
        imgs = [read_png(f).pixels for f in files]
        shapes = {im.shape for im in imgs}
        if len(shapes) > 1:
            raise DataError(f"frames in {path} differ in shape: {sorted(shapes)}")
        return np.stack(imgs)
    return read_cube(path)


def load_stack_dir(path, t0: float, dt: float) -> FrameStack:
    frames = read_frames(path)
    return FrameStack(frames, t0, dt)


# ------------------------------------------------------------------- manifests


@dataclass
class Manifest:
    scene_id: str
    row_readout: float
    out_dir: Path
    stack_dir: Path | None = None
    t0: float | None = None
    dt: float | None = None
    scene: dict = field(default_factory=dict)
    midpoint: float = 0.0
    misalign_rows: int = 0
    n_frames: int = 9
    seed: int = 0


_SCENE_KINDS = ("translating_texture", "rotating_texture", "static_texture")


def _field(raw, name, kind, required=False, default=None):
    if name not in raw:
        if required:
            raise ConfigError(f"manifest: missing required field '{name}'")
        return default
    val = raw[name]
    try:
        if kind is int and (isinstance(val, bool) or float(val) != int(val)):
            raise ValueError
        return kind(val)
    except (TypeError, ValueError):
        raise ConfigError(f"manifest: field '{name}' must be {kind.__name__}, got {val!r}") from None


def parse_manifest(text: str, base_dir=".") -> Manifest:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"manifest: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError("manifest: top level must be an object")
    base = Path(base_dir)
    m = Manifest(
        scene_id=_field(raw, "scene_id", str, required=True),
        row_readout=_field(raw, "row_readout", float, required=True),
        out_dir=base / _field(raw, "out_dir", str, default="out"),
        t0=_field(raw, "t0", float),
        dt=_field(raw, "dt", float),
        midpoint=_field(raw, "midpoint", float, default=0.0),
        misalign_rows=_field(raw, "misalign_rows", int, default=0),
        n_frames=_field(raw, "n_frames", int, default=9),
        seed=_field(raw, "seed", int, default=0),
    )
    if m.row_readout <= 0:
        raise ConfigError(f"manifest: field 'row_readout' must be > 0, got {m.row_readout}")
    if m.n_frames < 1:
        raise ConfigError(f"manifest: field 'n_frames' must be >= 1, got {m.n_frames}")
    stack_dir = raw.get("stack_dir")
    scene = raw.get("scene")
    if (stack_dir is None) == (scene is None):
        raise ConfigError("manifest: give exactly one of 'stack_dir' or 'scene'")
    if stack_dir is not None:
        m.stack_dir = base / str(stack_dir)
        if m.t0 is None or m.dt is None:
            raise ConfigError("manifest: 'stack_dir' requires fields 't0' and 'dt'")
        if m.dt <= 0:
            raise ConfigError(f"manifest: field 'dt' must be > 0, got {m.dt}")
        if not m.stack_dir.is_dir():
            raise DataError(f"manifest: stack_dir {m.stack_dir} does not exist")
    else:
        if not isinstance(scene, dict):
            raise ConfigError("manifest: field 'scene' must be an object")
        kind = scene.get("kind", "translating_texture")
        if kind not in _SCENE_KINDS:
            raise ConfigError(f"manifest: scene.kind must be one of {_SCENE_KINDS}, got {kind!r}")
        m.scene = dict(scene, kind=kind)
    return m


def load_manifest(path) -> Manifest:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc.strerror}") from exc
    return parse_manifest(text, base_dir=path.parent)


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"
