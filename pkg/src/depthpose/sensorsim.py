"""Simulated sparse, noisy depth sensors and multi-frame supervision."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import check_depth_map, check_fraction
from .geometry import CameraIntrinsics, relative_transform, warp_points
from .imaging import SparseDepth, pixel_grid

MIN_DEPTH = 1e-3


@dataclass(frozen=True)
class NoiseModel:
    """Gaussian depth noise with std ``f * depth`` on a random pixel subset."""

    f: float = 0.5
    sample_rate: float = 0.07
    seed: int = 0

    def __post_init__(self):
        check_fraction(self.f, "f", high=np.inf)
        check_fraction(self.sample_rate, "sample_rate", low_open=True)


def corrupt_depth(D, model: NoiseModel) -> SparseDepth:
    """Keep each pixel with probability ``sample_rate`` and add depth-proportional noise.

    Retained values are clamped below at ``MIN_DEPTH``.  The same seed
    always gives the same output.
    """
    D = check_depth_map(D)
    rng = np.random.default_rng(model.seed)
    keep = rng.random(D.shape) < model.sample_rate
    noise = rng.standard_normal(D.shape)
    if model.f == 0:
        values = D.copy()
    else:
        values = np.maximum(D + noise * (D * model.f), MIN_DEPTH)
    return SparseDepth(np.where(keep, values, 0.0), keep)


def aggregate_supervision(frames, key_index: int, K: CameraIntrinsics) -> SparseDepth:
    """Splat the sparse points of every frame into the key frame.

    ``frames`` holds ``(SparseDepth, T_w_to_k)`` pairs.  Each neighbor point
    is reprojected with the relative motion into the key camera and written
    to the nearest pixel; where several land on one pixel the smallest depth
    wins.  Pixels measured in the key frame itself are never overwritten.
    """
    key_sparse, key_pose = frames[key_index]
    H, W = key_sparse.shape
    best = np.full(H * W, np.inf)
    for k, (sparse, pose) in enumerate(frames):
        if k == key_index or not sparse.valid.any():
            continue
        T = relative_transform(pose, key_pose)
        uv = pixel_grid(H, W)[sparse.valid.ravel()]
        w = warp_points(K, T, sparse.data.ravel()[sparse.valid.ravel()], uv)
        ok = w.valid
        cols = np.rint(w.uv[ok, 0]).astype(int)
        rows = np.rint(w.uv[ok, 1]).astype(int)
        np.minimum.at(best, rows * W + cols, w.points[ok, 2])
    best = best.reshape(H, W)
    valid = key_sparse.valid | np.isfinite(best)
    data = np.where(key_sparse.valid, key_sparse.data, np.where(np.isfinite(best), best, 0.0))
    return SparseDepth(data, valid)
