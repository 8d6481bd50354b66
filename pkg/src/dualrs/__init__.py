"""Dual reversed rolling-shutter simulation and global-shutter frame extraction."""

from .geometry import (
    Direction,
    GsSequence,
    Parameterization,
    RsConfig,
    TimeCube,
    VelocityCube,
    build_time_cube,
    flow_from_velocity,
    target_times,
)
from .metrics import psnr, row_profile, ssim
from .simulator import (
    CoverageError,
    DualPair,
    FrameStack,
    ambiguity_scene,
    scan_instant,
    synthesize_dual,
    synthesize_gt,
    synthesize_rs,
)
from .solver import (
    Objective,
    SolverParams,
    charbonnier,
    dual_objective,
    estimate_velocity,
    extract_frames,
    tv,
)
from .tensor import Cube, ImageBuf, bilinear_sample
from .warp import WarpResult, backward_warp, blend, proximity_mask

__version__ = "0.1.0"
