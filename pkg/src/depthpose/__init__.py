"""Joint dense depth and ego-motion estimation from images and sparse depth.

Numpy implementation of an SE(3) geometry kernel, differentiable inverse
warping, a photometric plus supervised loss stack with explicit gradients,
an Adam-driven joint refinement loop, simulated depth sensors, TUM-format
I/O and trajectory/depth metrics.
"""

__version__ = "0.1.0"

from .dataio import (
    RunConfig,
    SequenceDataset,
    SyntheticScene,
    Trajectory,
    generate_synthetic,
    load_tum_sequence,
    preset_scene,
    read_trajectory,
    save_tum_sequence,
    write_trajectory,
)
from .diffcore import OptimizerState, adam_step, finite_difference_check, joint_refine
from .estimator import DepthPoseRefiner, SparseDepthSimulator
from .evaluation import DepthMetrics, avg_photometric_loss, compute_ate, compute_re, depth_metrics
from .exceptions import DepthPoseError
from .geometry import CameraIntrinsics, Se3Tangent, Se3Transform, exp_map, log_map
from .imaging import SparseDepth, inverse_warp
from .losses import LossBreakdown, LossWeights
from .params import ParamVector, load_params, save_params
from .sensorsim import NoiseModel, aggregate_supervision, corrupt_depth

__all__ = [
    "CameraIntrinsics",
    "DepthMetrics",
    "DepthPoseError",
    "DepthPoseRefiner",
    "LossBreakdown",
    "LossWeights",
    "NoiseModel",
    "OptimizerState",
    "ParamVector",
    "RunConfig",
    "Se3Tangent",
    "Se3Transform",
    "SequenceDataset",
    "SparseDepth",
    "SparseDepthSimulator",
    "SyntheticScene",
    "Trajectory",
    "adam_step",
    "aggregate_supervision",
    "avg_photometric_loss",
    "compute_ate",
    "compute_re",
    "corrupt_depth",
    "depth_metrics",
    "exp_map",
    "finite_difference_check",
    "generate_synthetic",
    "inverse_warp",
    "joint_refine",
    "load_params",
    "load_tum_sequence",
    "log_map",
    "preset_scene",
    "read_trajectory",
    "save_params",
    "save_tum_sequence",
    "write_trajectory",
]
