"""Loss terms for joint depth and ego-motion estimation, with analytic gradients.

Every loss is normalized by a pixel count (mean rather than sum) so the
weights do not depend on resolution.  Gradients are returned alongside the
values; they are exact derivatives of the returned values wherever the
loss is differentiable and a valid subgradient at the L1 kinks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._validation import check_same_shape
from .exceptions import DimensionError, DomainError
from .geometry import (
    CameraIntrinsics,
    Se3Tangent,
    Se3Transform,
    exp_map,
    inverse,
    log_map,
    se3_left_jacobian,
)
from .imaging import (
    SparseDepth,
    build_pyramid,
    downsample_adjoint,
    pixel_grid,
    sample_bilinear,
    second_order_gradients,
    sparse_pyramid,
    to_luma,
)
from .geometry import warp_points

INDICATORS = ("unmeasured", "measured", "none")


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0  # supervised
    beta: float = 0.1  # masked photometric
    gamma: float = 0.1  # smoothness
    theta: float = 0.2  # mask regularization

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "theta"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"loss weight {name} must be finite and >= 0, got {v}")

    @classmethod
    def parse(cls, text: str) -> LossWeights:
        """Parse ``"a,b,g,t"``."""
        parts = [float(p) for p in text.split(",")]
        if len(parts) != 4:
            raise ValueError("expected four comma-separated weights")
        return cls(*parts)

    def as_tuple(self):
        return (self.alpha, self.beta, self.gamma, self.theta)


@dataclass
class LossBreakdown:
    supervised: float
    photometric_masked: float
    smoothness: float
    mask_reg: float
    total: float
    per_scale_photometric: list = field(default_factory=list)
    weights: LossWeights = field(default_factory=LossWeights)

    def as_row(self):
        return [self.supervised, self.photometric_masked, self.smoothness, self.mask_reg, self.total]


def supervised_loss(pred, gt: SparseDepth):
    """Mean squared depth error over the valid ground-truth pixels."""
    pred = np.asarray(pred, dtype=float)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    n = int(gt.valid.sum())
    if n == 0:
        return 0.0, np.zeros_like(pred)
    diff = np.where(gt.valid, pred - gt.data, 0.0)
    return float(np.sum(diff * diff) / n), 2.0 * diff / n


@dataclass
class _Term:
    # one direction of the residual: pixels of the reference frame sampled
    # in the other frame
    coef: np.ndarray  # scale * indicator * validity * sign(diff), flattened
    du: np.ndarray
    dv: np.ndarray
    d_depth: np.ndarray  # (N, 2)
    d_pose: np.ndarray  # (N, 2, 6) left perturbation at the used transform
    left_jac: np.ndarray  # (6, 6) chain to the tangent, includes the sign


@dataclass
class PhotometricResidual:
    level: int
    residual: np.ndarray
    valid: np.ndarray
    valid1: np.ndarray
    valid2: np.ndarray
    tangent: np.ndarray
    depth_shape: tuple
    terms: tuple = ()


def _as_tangent_and_transforms(T):
    if isinstance(T, Se3Transform):
        xi = log_map(T).as_vector()
        return xi, T, inverse(T)
    xi = T.as_vector() if isinstance(T, Se3Tangent) else np.asarray(T, dtype=float).reshape(6)
    return xi, exp_map(xi), exp_map(-xi)


def _indicator(sparse: SparseDepth, mode):
    if mode == "unmeasured":
        return ~sparse.valid
    if mode == "measured":
        return sparse.valid
    if mode == "none":
        return np.ones(sparse.shape, dtype=bool)
    raise ValueError(f"indicator must be one of {INDICATORS}")


def _direction(I_ref, I_other, depth_ref, ind, T, Ks, scale):
    H, W = I_ref.shape
    w = warp_points(Ks, T, depth_ref.ravel(), pixel_grid(H, W), jacobians=True)
    val, du, dv, ok = sample_bilinear(I_other, w.uv[:, 0], w.uv[:, 1])
    valid = w.valid & ok
    diff = val - I_ref.ravel()
    use = valid & ind.ravel()
    contrib = np.where(use, scale * np.abs(diff), 0.0)
    coef = np.where(use, scale * np.sign(diff), 0.0)
    return contrib.reshape(H, W), valid.reshape(H, W), coef, du, dv, w


def photometric_residual(I1, I2, D1, D2, d1, d2, T, K: CameraIntrinsics, s: int, indicator="unmeasured"):
    """Two-way photometric residual map at pyramid level ``s``.

    ``I*``, ``D*`` and ``d*`` are pyramids (lists indexed by level) of
    grayscale images, dense depth maps and :class:`SparseDepth`.  ``T`` is the
    motion from frame 1 to frame 2, given as a transform or a tangent.  The
    frame-1 term samples frame 2 at pixels warped with ``(D1, T)``; the
    frame-2 term samples frame 1 with ``(D2, T^-1)``.  Each term is weighted
    by ``1 / (2 * 2**s)`` and restricted to pixels selected by ``indicator``
    (by default those without a sparse measurement).
    """
    I1s, I2s = to_luma(I1[s]), to_luma(I2[s])
    D1s, D2s = np.asarray(D1[s], dtype=float), np.asarray(D2[s], dtype=float)
    check_same_shape(I1s, I2s, D1s, D2s, d1[s].data, d2[s].data, names=("I1", "I2", "D1", "D2", "d1", "d2"))
    Ks = K.scaled(s)
    if (Ks.height, Ks.width) != I1s.shape:
        raise DimensionError(f"level {s} is {I1s.shape}, intrinsics give {(Ks.height, Ks.width)}")
    xi, T12, T21 = _as_tangent_and_transforms(T)
    scale = 1.0 / (2.0 * 2.0**s)
    r1, v1, c1, du1, dv1, w1 = _direction(I1s, I2s, D1s, _indicator(d1[s], indicator), T12, Ks, scale)
    r2, v2, c2, du2, dv2, w2 = _direction(I2s, I1s, D2s, _indicator(d2[s], indicator), T21, Ks, scale)
    terms = (
        _Term(c1, du1, dv1, w1.d_depth, w1.d_pose, se3_left_jacobian(xi)),
        _Term(c2, du2, dv2, w2.d_depth, w2.d_pose, -se3_left_jacobian(-xi)),
    )
    return PhotometricResidual(
        level=s,
        residual=r1 + r2,
        valid=v1 | v2,
        valid1=v1,
        valid2=v2,
        tangent=xi,
        depth_shape=np.shape(D1[0]),
        terms=terms,
    )


@dataclass
class MaskedPhotometric:
    value: float
    per_scale: list
    d_depth1: np.ndarray
    d_depth2: np.ndarray
    d_tangent: np.ndarray
    d_masks: list


def _lift(grad, level, shape):
    """Adjoint of ``level`` successive downsamplings back to ``shape``."""
    shapes = [tuple(shape)]
    for _ in range(level):
        shapes.append((shapes[-1][0] // 2, shapes[-1][1] // 2))
    for sh in reversed(shapes[:-1]):
        grad = downsample_adjoint(grad, sh)
    return grad


def masked_photometric_loss(residuals, masks) -> MaskedPhotometric:
    """Sum over scales of the mask-weighted mean residual.

    ``residuals`` is a list of :class:`PhotometricResidual` (one per level)
    and ``masks`` the matching explainability values in (0, 1].  Gradients
    are returned for both level-0 depth maps, the pose tangent and each mask.
    """
    if len(masks) < len(residuals):
        raise DimensionError(f"{len(residuals)} residual levels but only {len(masks)} masks")
    shape0 = residuals[0].depth_shape
    g1 = np.zeros(shape0)
    g2 = np.zeros(shape0)
    g_xi = np.zeros(6)
    d_masks = []
    per_scale = []
    for res in residuals:
        E = np.asarray(masks[res.level], dtype=float)
        if E.shape != res.residual.shape:
            raise DimensionError(f"mask level {res.level} has shape {E.shape}, expected {res.residual.shape}")
        n = res.residual.size
        per_scale.append(float(np.sum(E * res.residual) / n))
        d_masks.append(res.residual / n)
        weight = (E / n).ravel()
        depth_grads = []
        for term in res.terms:
            coef = weight * term.coef
            dI = np.stack([coef * term.du, coef * term.dv], axis=-1)  # (N, 2)
            depth_grads.append(np.einsum("ni,ni->n", dI, term.d_depth).reshape(res.residual.shape))
            g_xi += term.left_jac.T @ np.einsum("ni,nij->j", dI, term.d_pose)
        g1 += _lift(depth_grads[0], res.level, shape0)
        g2 += _lift(depth_grads[1], res.level, shape0)
    return MaskedPhotometric(float(sum(per_scale)), per_scale, g1, g2, g_xi, d_masks)


def pair_photometric(I1, I2, D1, D2, d1: SparseDepth, d2: SparseDepth, T, K, n_levels, masks=None, indicator="unmeasured"):
    """Build the pyramids for one frame pair and evaluate the masked loss.

    With ``masks=None`` every mask is 1, giving the unmasked multi-scale sum.
    """
    I1p = build_pyramid(to_luma(I1), n_levels)
    I2p = build_pyramid(to_luma(I2), n_levels)
    D1p = build_pyramid(D1, n_levels)
    D2p = build_pyramid(D2, n_levels)
    d1p = sparse_pyramid(d1, n_levels)
    d2p = sparse_pyramid(d2, n_levels)
    res = [photometric_residual(I1p, I2p, D1p, D2p, d1p, d2p, T, K, s, indicator) for s in range(n_levels)]
    if masks is None:
        masks = [np.ones_like(r.residual) for r in res]
    return masked_photometric_loss(res, masks)


def smoothness_loss(D):
    """Mean over interior pixels of ``|dxx| + |dyy| + |dxy|``."""
    D = np.asarray(D, dtype=float)
    dxx, dyy, dxy = second_order_gradients(D)
    H, W = D.shape
    n = (H - 2) * (W - 2)
    value = float((np.abs(dxx) + np.abs(dyy) + np.abs(dxy)).sum() / n)
    sx = np.sign(dxx[1:-1, 1:-1]) / n
    sy = np.sign(dyy[1:-1, 1:-1]) / n
    sxy = 0.25 * np.sign(dxy[1:-1, 1:-1]) / n
    g = np.zeros_like(D)
    g[1:-1, 2:] += sx
    g[1:-1, 1:-1] -= 2.0 * sx
    g[1:-1, :-2] += sx
    g[2:, 1:-1] += sy
    g[1:-1, 1:-1] -= 2.0 * sy
    g[:-2, 1:-1] += sy
    g[2:, 2:] += sxy
    g[2:, :-2] -= sxy
    g[:-2, 2:] -= sxy
    g[:-2, :-2] += sxy
    return value, g


def mask_regularization_loss(masks):
    """Cross-entropy of every mask against an all-ones target, summed over scales."""
    value = 0.0
    grads = []
    for E in masks:
        E = np.asarray(E, dtype=float)
        if np.any(~(E > 0)) or np.any(E > 1):
            raise DomainError("mask values must lie in (0, 1]")
        value += float(np.mean(-np.log(E)))
        grads.append(-1.0 / (E * E.size))
    return value, grads


def total_loss(supervised, photometric_masked, smoothness, mask_reg, w: LossWeights = LossWeights(), per_scale=()):
    total = w.alpha * supervised + w.beta * photometric_masked + w.gamma * smoothness + w.theta * mask_reg
    return LossBreakdown(
        supervised=supervised,
        photometric_masked=photometric_masked,
        smoothness=smoothness,
        mask_reg=mask_reg,
        total=total,
        per_scale_photometric=list(per_scale),
        weights=w,
    )


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


@dataclass
class SequenceGradients:
    depths: list
    tangents: list
    masks: list  # per pair, per level, w.r.t. mask values


def sequence_loss(images, inputs, supervision, depths, tangents, masks, K, weights=LossWeights(), n_levels=4, indicator="unmeasured"):
    """Full weighted objective over a sequence of frames.

    ``depths`` has one dense map per frame, ``tangents`` one 6-vector per
    consecutive pair (motion from frame k to k+1) and ``masks`` one list of
    per-level mask values per pair.  The supervised and smoothness terms are
    averaged over frames, the photometric and mask terms over pairs.
    """
    n_frames = len(images)
    n_pairs = n_frames - 1
    if n_frames < 2 or len(depths) != n_frames or len(tangents) != n_pairs or len(masks) != n_pairs:
        raise DimensionError("need >= 2 frames with one depth per frame and one pose/mask set per pair")
    g_depth = [np.zeros(np.shape(d)) for d in depths]
    sup = smo = 0.0
    for k in range(n_frames):
        v, g = supervised_loss(depths[k], supervision[k])
        sup += v / n_frames
        g_depth[k] += weights.alpha * g / n_frames
        v, g = smoothness_loss(depths[k])
        smo += v / n_frames
        g_depth[k] += weights.gamma * g / n_frames
    pho = mreg = 0.0
    per_scale = np.zeros(n_levels)
    g_xi = []
    g_mask = []
    for k in range(n_pairs):
        mp = pair_photometric(
            images[k], images[k + 1], depths[k], depths[k + 1], inputs[k], inputs[k + 1],
            tangents[k], K, n_levels, masks[k], indicator,
        )
        pho += mp.value / n_pairs
        per_scale += np.asarray(mp.per_scale) / n_pairs
        g_depth[k] += weights.beta * mp.d_depth1 / n_pairs
        g_depth[k + 1] += weights.beta * mp.d_depth2 / n_pairs
        g_xi.append(weights.beta * mp.d_tangent / n_pairs)
        v, gm = mask_regularization_loss(masks[k])
        mreg += v / n_pairs
        g_mask.append([(weights.beta * a + weights.theta * b) / n_pairs for a, b in zip(mp.d_masks, gm)])
    breakdown = total_loss(sup, pho, smo, mreg, weights, per_scale.tolist())
    return breakdown, SequenceGradients(g_depth, g_xi, g_mask)
