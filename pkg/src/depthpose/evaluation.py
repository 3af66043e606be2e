"""Trajectory and depth-completion metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .dataio import TUM_ASSOC_OFFSET, Trajectory, associate
from .exceptions import EmptyGroundTruthError, InsufficientOverlapError
from .geometry import compose, inverse, relative_transform
from .imaging import SparseDepth
from .losses import pair_photometric


@dataclass(frozen=True)
class DepthMetrics:
    rmse: float  # mm
    mae: float  # mm
    irmse: float  # 1/km
    imae: float  # 1/km

    def to_dict(self):
        return {"rmse_mm": self.rmse, "mae_mm": self.mae, "irmse_1perkm": self.irmse, "imae_1perkm": self.imae}


def depth_metrics(pred, gt: SparseDepth) -> DepthMetrics:
    pred = np.asarray(pred, dtype=float)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    if not gt.valid.any():
        raise EmptyGroundTruthError("ground truth has no valid pixel")
    p = pred[gt.valid]
    g = gt.data[gt.valid]
    err = p - g
    ierr = 1.0 / p - 1.0 / g
    return DepthMetrics(
        rmse=float(np.sqrt(np.mean(err**2)) * 1000.0),
        mae=float(np.mean(np.abs(err)) * 1000.0),
        irmse=float(np.sqrt(np.mean(ierr**2)) * 1000.0),
        imae=float(np.mean(np.abs(ierr)) * 1000.0),
    )


def nearest_fill(sparse: SparseDepth) -> np.ndarray:
    """Dense map copying the value of the nearest valid pixel (baseline completion)."""
    if not sparse.valid.any():
        raise EmptyGroundTruthError("no valid pixel to interpolate from")
    _, idx = ndimage.distance_transform_edt(~sparse.valid, return_indices=True)
    return sparse.data[idx[0], idx[1]]


def _matched(est: Trajectory, gt: Trajectory, max_offset):
    pairs = associate(est.timestamps, gt.timestamps, max_offset)
    if len(pairs) < 2:
        raise InsufficientOverlapError(f"only {len(pairs)} poses matched within {max_offset} s")
    return [est.poses[i] for i, _ in pairs], [gt.poses[j] for _, j in pairs]


def align_rigid(src, dst):
    """Least-squares rotation and translation mapping points ``src`` onto ``dst`` (no scale)."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    H = (src - mu_s).T @ (dst - mu_d)
    U, _, Vt = np.linalg.svd(H)
    S = np.eye(3)
    if np.linalg.det(Vt.T @ U.T) < 0:
        S[2, 2] = -1.0
    R = Vt.T @ S @ U.T
    return R, mu_d - R @ mu_s


def _ate_errors(est_poses, gt_poses):
    e = np.array([P.translation for P in est_poses])
    g = np.array([P.translation for P in gt_poses])
    R, t = align_rigid(e, g)
    return np.linalg.norm(e @ R.T + t - g, axis=1)


def compute_ate(est: Trajectory, gt: Trajectory, max_offset=TUM_ASSOC_OFFSET, window=None):
    """Absolute trajectory error ``(mean, std)`` in meters after rigid alignment.

    With ``window=n`` every run of ``n`` consecutive matched poses is aligned
    on its own and the errors of all windows are pooled.
    """
    e, g = _matched(est, gt, max_offset)
    if window is None:
        errs = _ate_errors(e, g)
    else:
        if window < 2:
            raise ValueError("window must be >= 2")
        n = len(e)
        if n < window:
            raise InsufficientOverlapError(f"{n} matched poses, window needs {window}")
        errs = np.concatenate([_ate_errors(e[i : i + window], g[i : i + window]) for i in range(n - window + 1)])
    return float(errs.mean()), float(errs.std())


def compute_re(est: Trajectory, gt: Trajectory, max_offset=TUM_ASSOC_OFFSET):
    """Relative translational error ``(mean, std)`` over consecutive matched poses."""
    e, g = _matched(est, gt, max_offset)
    errs = []
    for k in range(1, len(e)):
        # poses are camera-to-world; relative_transform expects world-to-camera
        rel_e = relative_transform(inverse(e[k - 1]), inverse(e[k]))
        rel_g = relative_transform(inverse(g[k - 1]), inverse(g[k]))
        errs.append(np.linalg.norm(compose(inverse(rel_g), rel_e).translation))
    errs = np.array(errs)
    return float(errs.mean()), float(errs.std())


def avg_photometric_loss(images, depths, poses, K, n_levels=4):
    """Mean over consecutive pairs of the unmasked multi-scale photometric loss.

    ``poses[k]`` is the motion from frame k to k+1.  No measurement
    indicator and no mask are applied, so every method is scored on the
    same pixels.
    """
    if len(images) < 2:
        raise ValueError("need at least two frames")
    shape = np.shape(depths[0])
    empty = SparseDepth.empty(shape)
    vals = [
        pair_photometric(images[k], images[k + 1], depths[k], depths[k + 1], empty, empty, poses[k], K, n_levels, None, "none").value
        for k in range(len(images) - 1)
    ]
    return float(np.mean(vals))


@dataclass
class EvaluationReport:
    rmse_mm: float
    mae_mm: float
    irmse_1perkm: float
    imae_1perkm: float
    ate_m_mean: float
    ate_m_std: float
    re_mean: float
    re_std: float
    photometric: float

    def to_dict(self):
        return asdict(self)
