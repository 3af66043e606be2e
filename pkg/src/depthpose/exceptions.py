"""Exception types raised by depthpose."""


class DepthPoseError(Exception):
    """Base class for all package errors."""


class DimensionError(DepthPoseError, ValueError):
    """Array shapes are inconsistent or too small for the operation."""


class BehindCameraError(DepthPoseError, ValueError):
    """A point or depth is not strictly in front of the camera."""


class DegenerateRotationError(DepthPoseError, ValueError):
    """Rotation whose logarithm is ambiguous (angle of exactly pi)."""


class NoGradientError(DepthPoseError, ValueError):
    """Derivative requested at a configuration where the warp is invalid."""


class DomainError(DepthPoseError, ValueError):
    """Input lies outside the mathematical domain of a loss."""


class DivergedOptimizationError(DepthPoseError, RuntimeError):
    """Non-finite loss or gradient during optimization."""

    def __init__(self, message, iteration=None, block=None):
        super().__init__(message)
        self.iteration = iteration
        self.block = block


class InsufficientOverlapError(DepthPoseError, ValueError):
    """Fewer than two poses could be associated between trajectories."""


class EmptyGroundTruthError(DepthPoseError, ValueError):
    """Ground truth depth has no valid pixel."""


class DatasetError(DepthPoseError, OSError):
    """A dataset directory or file could not be loaded."""


class TrajectoryParseError(DepthPoseError, ValueError):
    """Malformed line in a trajectory file."""

    def __init__(self, message, lineno):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class SceneCoverageError(DepthPoseError, ValueError):
    """A camera ray of a synthetic scene hits no plane."""
