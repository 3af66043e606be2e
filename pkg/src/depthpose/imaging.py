"""Image and depth containers, bilinear sampling, pyramids and inverse warping.

Images and dense depth maps are plain ``numpy`` arrays: intensity images are
``(H, W)`` or ``(H, W, 3)`` with values in [0, 1], depth maps are ``(H, W)``
in meters.  Sparse measurements carry an explicit validity mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import check_depth_map, check_image
from .exceptions import DimensionError
from .geometry import CameraIntrinsics, Se3Transform, warp_points

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
# samples closer than this to a lattice line are snapped onto it, so an
# identity warp reproduces the source bit for bit despite rounding in K^-1/K
_SNAP = 1e-9


@dataclass(frozen=True, eq=False)
class SparseDepth:
    """Depth measurements with a validity mask; invalid entries are ignored."""

    data: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        valid = np.asarray(self.valid, dtype=bool)
        if data.ndim != 2 or data.shape != valid.shape:
            raise DimensionError("sparse depth data and mask must be 2-D with equal shapes")
        if np.any(~(data[valid] > 0)) or not np.all(np.isfinite(data[valid])):
            raise ValueError("valid sparse depth values must be positive and finite")
        data = np.where(valid, data, 0.0)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "valid", valid)

    @property
    def shape(self):
        return self.data.shape

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def height(self):
        return self.data.shape[0]

    @classmethod
    def from_dense(cls, depth) -> SparseDepth:
        depth = np.asarray(depth, dtype=float)
        return cls(depth, depth > 0)

    @classmethod
    def empty(cls, shape) -> SparseDepth:
        return cls(np.zeros(shape), np.zeros(shape, dtype=bool))

    def density(self) -> float:
        return float(self.valid.mean())


def to_luma(img) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    if img.ndim == 3:
        return img @ LUMA_WEIGHTS
    return img


def _snap(x):
    r = np.round(x)
    return np.where(np.abs(x - r) < _SNAP, r, x)


def sample_bilinear(img, u, v):
    """Vectorized bilinear lookup.

    Returns ``(values, d_du, d_dv, valid)``; for a multi-channel image the
    values and derivatives carry a trailing channel axis.  Samples outside
    ``[0, W-1] x [0, H-1]`` are invalid and return zeros.
    """
    img = np.asarray(img, dtype=float)
    H, W = img.shape[:2]
    if H < 2 or W < 2:
        raise DimensionError("bilinear sampling needs an image of at least 2x2")
    u = _snap(np.asarray(u, dtype=float))
    v = _snap(np.asarray(v, dtype=float))
    valid = np.isfinite(u) & np.isfinite(v) & (u >= 0) & (u <= W - 1) & (v >= 0) & (v <= H - 1)
    us = np.where(valid, u, 0.0)
    vs = np.where(valid, v, 0.0)
    x0 = np.minimum(np.floor(us).astype(int), W - 2)
    y0 = np.minimum(np.floor(vs).astype(int), H - 2)
    ax = us - x0
    ay = vs - y0
    i00 = img[y0, x0]
    i01 = img[y0, x0 + 1]
    i10 = img[y0 + 1, x0]
    i11 = img[y0 + 1, x0 + 1]
    if img.ndim == 3:
        ax, ay, vm = ax[..., None], ay[..., None], valid[..., None]
    else:
        vm = valid
    top = i00 + ax * (i01 - i00)
    bot = i10 + ax * (i11 - i10)
    val = top + ay * (bot - top)
    du = (1.0 - ay) * (i01 - i00) + ay * (i11 - i10)
    dv = bot - top
    return np.where(vm, val, 0.0), np.where(vm, du, 0.0), np.where(vm, dv, 0.0), valid


def bilinear_sample(img, u):
    """Sample a single continuous position ``u = (x, y)``.

    Returns ``(value, gradient, valid)`` where ``gradient`` holds the
    derivatives with respect to x and y (shape ``(2,)`` or ``(2, C)``).
    """
    val, du, dv, valid = sample_bilinear(img, np.array([u[0]]), np.array([u[1]]))
    return val[0], np.stack([du[0], dv[0]]), bool(valid[0])


def downsample(img) -> np.ndarray:
    """2x2 box average with floor division of the dimensions."""
    img = np.asarray(img, dtype=float)
    h, w = img.shape[0] // 2, img.shape[1] // 2
    if h < 1 or w < 1:
        raise DimensionError("image too small to downsample")
    c = img[: 2 * h, : 2 * w]
    return 0.25 * (c[0::2, 0::2] + c[0::2, 1::2] + c[1::2, 0::2] + c[1::2, 1::2])


def downsample_adjoint(grad, shape) -> np.ndarray:
    """Transpose of :func:`downsample`: spread coarse gradients to ``shape``."""
    out = np.zeros(shape)
    h, w = grad.shape
    q = 0.25 * grad
    out[0 : 2 * h : 2, 0 : 2 * w : 2] = q
    out[0 : 2 * h : 2, 1 : 2 * w : 2] = q
    out[1 : 2 * h : 2, 0 : 2 * w : 2] = q
    out[1 : 2 * h : 2, 1 : 2 * w : 2] = q
    return out


def _check_levels(shape, n_levels):
    if n_levels < 1:
        raise ValueError("n_levels must be >= 1")
    need = 2 ** (n_levels - 1)
    # bilinear sampling needs >= 2 pixels per axis at the coarsest level
    if shape[0] < max(need, 2) or shape[1] < max(need, 2):
        raise DimensionError(f"image of shape {shape[:2]} too small for {n_levels} pyramid levels")


def build_pyramid(img, n_levels: int) -> list[np.ndarray]:
    img = np.asarray(img, dtype=float)
    _check_levels(img.shape, n_levels)
    levels = [img]
    for _ in range(n_levels - 1):
        levels.append(downsample(levels[-1]))
    return levels


def sparse_pyramid(sparse: SparseDepth, n_levels: int) -> list[SparseDepth]:
    """Depth averaged over the valid pixels of each 2x2 block; mask by logical any."""
    _check_levels(sparse.shape, n_levels)
    levels = [sparse]
    for _ in range(n_levels - 1):
        prev = levels[-1]
        w = prev.valid.astype(float)
        s = downsample(prev.data * w)
        c = downsample(w)
        valid = c > 0
        levels.append(SparseDepth(np.where(valid, s / np.where(valid, c, 1.0), 0.0), valid))
    return levels


def second_order_gradients(D):
    """Central second differences ``(dxx, dyy, dxy)``; zero on the border."""
    D = np.asarray(D, dtype=float)
    if D.ndim != 2 or D.shape[0] < 3 or D.shape[1] < 3:
        raise DimensionError("second-order gradients need a map of at least 3x3")
    dxx = np.zeros_like(D)
    dyy = np.zeros_like(D)
    dxy = np.zeros_like(D)
    c = D[1:-1, 1:-1]
    dxx[1:-1, 1:-1] = D[1:-1, 2:] - 2.0 * c + D[1:-1, :-2]
    dyy[1:-1, 1:-1] = D[2:, 1:-1] - 2.0 * c + D[:-2, 1:-1]
    dxy[1:-1, 1:-1] = 0.25 * (D[2:, 2:] - D[2:, :-2] - D[:-2, 2:] + D[:-2, :-2])
    return dxx, dyy, dxy


def pixel_grid(height, width):
    """Flattened ``(u, v)`` coordinates of every pixel, row-major."""
    v, u = np.mgrid[0:height, 0:width]
    return np.stack([u.ravel(), v.ravel()], axis=-1).astype(float)


def inverse_warp(src, depth_tgt, T_tgt_to_src: Se3Transform, K: CameraIntrinsics):
    """Synthesize the target view by sampling ``src`` at reprojected pixels.

    Returns ``(warped, valid)``; invalid pixels are zero.
    """
    src = check_image(src)
    depth_tgt = check_depth_map(depth_tgt)
    H, W = depth_tgt.shape
    if (W, H) != (K.width, K.height) or src.shape[:2] != (H, W):
        raise DimensionError("image, depth and intrinsics sizes disagree")
    w = warp_points(K, T_tgt_to_src, depth_tgt.ravel(), pixel_grid(H, W))
    val, _, _, ok = sample_bilinear(src, w.uv[:, 0], w.uv[:, 1])
    valid = w.valid & ok
    if src.ndim == 3:
        val = np.where(valid[:, None], val, 0.0).reshape(H, W, src.shape[2])
    else:
        val = np.where(valid, val, 0.0).reshape(H, W)
    return val, valid.reshape(H, W)
