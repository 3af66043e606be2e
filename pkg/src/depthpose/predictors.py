"""Depth, pose and explainability-mask predictors.

Two model families plug into :func:`depthpose.diffcore.joint_refine`:

* :class:`DirectFieldModel` optimizes a log-depth map per frame, a pose
  tangent per frame pair and per-level mask logits directly.
* :class:`ToyCNNModel` predicts the same quantities with two small
  convolutional networks.  They are far smaller than real depth-completion
  or pose networks; their job is to carry gradients end to end.

Both expose ``init_params``, ``forward`` and ``backward``; ``backward`` maps
gradients with respect to depths, tangents and mask values onto the
parameter blocks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .geometry import Se3Tangent
from .imaging import SparseDepth, downsample, downsample_adjoint, to_luma
from .losses import sigmoid
from .params import ParamVector

EPS_POS = 1e-3
POSE_SCALE = 0.01
_NORM_EPS = 1e-5
DEPTH_INPUT_SCALES = {"kitti": 0.01, "tum": 1.0 / 15.0}


def level_shapes(shape, n_levels):
    shapes = [tuple(shape)]
    for _ in range(n_levels - 1):
        shapes.append((shapes[-1][0] // 2, shapes[-1][1] // 2))
    return shapes


def normalize_image(img):
    """Map intensities from [0, 1] to [-1, 1] (mean 0.5, std 0.5)."""
    return (to_luma(img) - 0.5) / 0.5


def direct_field_predict(log_depth, tangent, mask_logits):
    """Depth ``exp(log_depth)``, the tangent itself and ``sigmoid(logits)`` masks."""
    depth = np.exp(np.asarray(log_depth, dtype=float))
    masks = [sigmoid(m) for m in mask_logits]
    return depth, Se3Tangent.from_vector(tangent), masks


# -- small convolution toolkit -------------------------------------------------


def elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def elu_grad(x):
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


def conv2d(x, w, stride=1):
    """3x3 cross-correlation with zero padding 1.  x: (C, H, W), w: (O, C, 3, 3)."""
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    patches = sliding_window_view(xp, (3, 3), axis=(1, 2))[:, ::stride, ::stride]
    return np.einsum("chwij,ocij->ohw", patches, w, optimize=True), patches


def conv2d_backward(dy, x_shape, w, patches, stride=1):
    dw = np.einsum("chwij,ohw->ocij", patches, dy, optimize=True)
    dpatch = np.einsum("ocij,ohw->chwij", w, dy, optimize=True)
    C, H, W = x_shape
    Ho, Wo = dy.shape[1:]
    dxp = np.zeros((C, H + 2, W + 2))
    for i in range(3):
        for j in range(3):
            dxp[:, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += dpatch[:, :, :, i, j]
    return dxp[:, 1:-1, 1:-1], dw


def _lift(grad, level, shape):
    shapes = level_shapes(shape, level + 1)
    for sh in reversed(shapes[:-1]):
        grad = downsample_adjoint(grad, sh)
    return grad


# -- toy networks ----------------------------------------------------------------


class ToyDepthNet:
    """3-layer conv net: 4 input planes -> 8 -> 8 -> 1, then standardization and ELU.

    Inputs are the normalized luma, the value-scaled sparse depth, its
    validity and a constant plane.  The output is
    ``depth_scale * (ELU(g * standardize(x) + b) + 1 + EPS_POS)``.
    """

    shapes = {"conv1": (8, 4, 3, 3), "conv2": (8, 8, 3, 3), "conv3": (1, 8, 3, 3), "norm_gain": (1,), "norm_bias": (1,)}

    def __init__(self, depth_input_scale=DEPTH_INPUT_SCALES["tum"], depth_scale=1.0):
        self.depth_input_scale = depth_input_scale
        self.depth_scale = depth_scale

    def init_params(self, rng, prefix="depth_net", scale=0.3):
        p = ParamVector()
        for name, shape in self.shapes.items():
            if name.startswith("conv"):
                fan_in = shape[1] * 9
                p[f"{prefix}/{name}"] = rng.normal(size=shape) * scale * np.sqrt(2.0 / fan_in)
            else:
                p[f"{prefix}/{name}"] = np.zeros(shape)
        p[f"{prefix}/norm_gain"] = np.full(1, 0.1)
        return p

    def inputs(self, image, sparse: SparseDepth):
        lum = normalize_image(image)
        return np.stack([lum, sparse.data * self.depth_input_scale, sparse.valid.astype(float), np.ones_like(lum)])

    def forward(self, params, image, sparse, prefix="depth_net"):
        x0 = self.inputs(image, sparse)
        a1, p1 = conv2d(x0, params[f"{prefix}/conv1"])
        h1 = elu(a1)
        a2, p2 = conv2d(h1, params[f"{prefix}/conv2"])
        h2 = elu(a2)
        a3, p3 = conv2d(h2, params[f"{prefix}/conv3"])
        a3 = a3[0]
        mu = a3.mean()
        sd = np.sqrt(a3.var() + _NORM_EPS)
        nrm = (a3 - mu) / sd
        z = params[f"{prefix}/norm_gain"][0] * nrm + params[f"{prefix}/norm_bias"][0]
        # ELU(z) + 1 written to stay positive in floating point
        act = np.where(z > 0, z + 1.0, np.exp(np.minimum(z, 0.0)))
        depth = self.depth_scale * (act + EPS_POS)
        cache = (x0, a1, p1, h1, a2, p2, h2, p3, nrm, sd, z)
        return depth, cache

    def backward(self, params, cache, d_depth, prefix="depth_net"):
        x0, a1, p1, h1, a2, p2, h2, p3, nrm, sd, z = cache
        dz = d_depth * self.depth_scale * elu_grad(z)
        g = params[f"{prefix}/norm_gain"][0]
        grads = ParamVector()
        dn = dz * g
        da3 = (dn - dn.mean() - nrm * np.mean(dn * nrm)) / sd
        dh2, dw3 = conv2d_backward(da3[None], h2.shape, params[f"{prefix}/conv3"], p3)
        dh1, dw2 = conv2d_backward(dh2 * elu_grad(a2), h1.shape, params[f"{prefix}/conv2"], p2)
        _, dw1 = conv2d_backward(dh1 * elu_grad(a1), x0.shape, params[f"{prefix}/conv1"], p1)
        grads[f"{prefix}/conv1"] = dw1
        grads[f"{prefix}/conv2"] = dw2
        grads[f"{prefix}/conv3"] = dw3
        grads[f"{prefix}/norm_gain"] = np.array([np.sum(dz * nrm)])
        grads[f"{prefix}/norm_bias"] = np.array([np.sum(dz)])
        return grads


class ToyPoseNet:
    """Pose regressor with a mask head sharing its first (encoder) layer.

    Two normalized luma frames -> stride-2 convs 2 -> 8 -> 16 -> 6, global
    average, times ``POSE_SCALE``.  The mask head is a stride-1 conv on the
    first layer's features, upsampled to full resolution and box-averaged
    down the pyramid; it yields mask logits per level.
    """

    shapes = {"conv1": (8, 2, 3, 3), "conv2": (16, 8, 3, 3), "conv3": (6, 16, 3, 3), "mask_head": (1, 8, 3, 3)}

    def __init__(self, n_levels=4):
        self.n_levels = n_levels

    def init_params(self, rng, prefix="pose_net", scale=0.3):
        p = ParamVector()
        for name, shape in self.shapes.items():
            fan_in = shape[1] * 9
            p[f"{prefix}/{name}"] = rng.normal(size=shape) * scale * np.sqrt(2.0 / fan_in)
        return p

    def forward(self, params, image1, image2, prefix="pose_net"):
        x0 = np.stack([normalize_image(image1), normalize_image(image2)])
        H, W = x0.shape[1:]
        a1, p1 = conv2d(x0, params[f"{prefix}/conv1"], stride=2)
        h1 = elu(a1)
        a2, p2 = conv2d(h1, params[f"{prefix}/conv2"], stride=2)
        h2 = elu(a2)
        a3, p3 = conv2d(h2, params[f"{prefix}/conv3"], stride=2)
        tangent = POSE_SCALE * a3.mean(axis=(1, 2))
        m, pm = conv2d(h1, params[f"{prefix}/mask_head"])
        full = np.repeat(np.repeat(m[0], 2, axis=0), 2, axis=1)[:H, :W]
        logits = [full]
        for _ in range(self.n_levels - 1):
            logits.append(downsample(logits[-1]))
        cache = (x0, a1, p1, h1, a2, p2, h2, p3, a3.shape, pm, m.shape)
        return tangent, logits, cache

    def backward(self, params, cache, d_tangent, d_logits, prefix="pose_net"):
        x0, a1, p1, h1, a2, p2, h2, p3, a3_shape, pm, m_shape = cache
        H, W = x0.shape[1:]
        n3 = a3_shape[1] * a3_shape[2]
        da3 = np.broadcast_to((POSE_SCALE * np.asarray(d_tangent) / n3)[:, None, None], a3_shape)
        dh2, dw3 = conv2d_backward(da3, h2.shape, params[f"{prefix}/conv3"], p3, stride=2)
        dh1, dw2 = conv2d_backward(dh2 * elu_grad(a2), h1.shape, params[f"{prefix}/conv2"], p2, stride=2)
        dfull = np.zeros((H, W))
        for s, g in enumerate(d_logits):
            dfull += _lift(np.asarray(g), s, (H, W))
        dup = np.zeros((2 * m_shape[1], 2 * m_shape[2]))
        dup[:H, :W] = dfull
        dm = dup[0::2, 0::2] + dup[0::2, 1::2] + dup[1::2, 0::2] + dup[1::2, 1::2]
        dh1_mask, dwm = conv2d_backward(dm[None], h1.shape, params[f"{prefix}/mask_head"], pm)
        dh1 = dh1 + dh1_mask
        _, dw1 = conv2d_backward(dh1 * elu_grad(a1), x0.shape, params[f"{prefix}/conv1"], p1, stride=2)
        grads = ParamVector()
        grads[f"{prefix}/conv1"] = dw1
        grads[f"{prefix}/conv2"] = dw2
        grads[f"{prefix}/conv3"] = dw3
        grads[f"{prefix}/mask_head"] = dwm
        return grads


# -- models for joint refinement ---------------------------------------------------


@dataclass
class Prediction:
    depths: list
    tangents: list
    masks: list  # per pair, per level mask values in (0, 1)
    cache: object = None


class DirectFieldModel:
    """Free per-frame log-depth, per-pair tangent and per-level mask logits."""

    name = "direct"
    decay_groups = ()

    def __init__(self, n_levels=4, mask_init_logit=0.0):
        self.n_levels = n_levels
        self.mask_init_logit = mask_init_logit

    def init_params(self, images, inputs, init_depths, init_tangents=None, rng=None) -> ParamVector:
        p = ParamVector()
        shape = np.shape(init_depths[0])
        for k, d in enumerate(init_depths):
            p[f"depth/{k}"] = np.log(np.asarray(d, dtype=float))
        for k in range(len(images) - 1):
            p[f"pose/{k}"] = np.zeros(6) if init_tangents is None else np.asarray(init_tangents[k], dtype=float).reshape(6)
            for s, sh in enumerate(level_shapes(shape, self.n_levels)):
                p[f"mask/{k}/{s}"] = np.full(sh, float(self.mask_init_logit))
        return p

    def forward(self, params, images, inputs) -> Prediction:
        n = len(images)
        depths = [np.exp(params[f"depth/{k}"]) for k in range(n)]
        tangents = [params[f"pose/{k}"] for k in range(n - 1)]
        masks = [[sigmoid(params[f"mask/{k}/{s}"]) for s in range(self.n_levels)] for k in range(n - 1)]
        return Prediction(depths, tangents, masks)

    def backward(self, params, pred: Prediction, grads) -> ParamVector:
        out = ParamVector()
        for k, g in enumerate(grads.depths):
            out[f"depth/{k}"] = g * pred.depths[k]
        for k, g in enumerate(grads.tangents):
            out[f"pose/{k}"] = g
            for s, gm in enumerate(grads.masks[k]):
                E = pred.masks[k][s]
                out[f"mask/{k}/{s}"] = gm * E * (1.0 - E)
        return out


class ToyCNNModel:
    """Shared :class:`ToyDepthNet` over frames and :class:`ToyPoseNet` over pairs."""

    name = "toycnn"
    decay_groups = ("depth_net", "pose_net")

    def __init__(self, n_levels=4, depth_input_scale=DEPTH_INPUT_SCALES["tum"], depth_scale=1.0, init_scale=0.3):
        self.n_levels = n_levels
        self.depth_net = ToyDepthNet(depth_input_scale, depth_scale)
        self.pose_net = ToyPoseNet(n_levels)
        self.init_scale = init_scale

    def init_params(self, images, inputs, init_depths=None, init_tangents=None, rng=None) -> ParamVector:
        rng = np.random.default_rng(0) if rng is None else rng
        p = self.depth_net.init_params(rng, scale=self.init_scale)
        for name, v in self.pose_net.init_params(rng, scale=self.init_scale).items():
            p[name] = v
        return p

    def forward(self, params, images, inputs) -> Prediction:
        depths, dcache, tangents, masks, pcache = [], [], [], [], []
        for img, sp in zip(images, inputs):
            d, c = self.depth_net.forward(params, img, sp)
            depths.append(d)
            dcache.append(c)
        for k in range(len(images) - 1):
            t, logits, c = self.pose_net.forward(params, images[k], images[k + 1])
            tangents.append(t)
            masks.append([sigmoid(lg) for lg in logits])
            pcache.append(c)
        return Prediction(depths, tangents, masks, (dcache, pcache))

    def backward(self, params, pred: Prediction, grads) -> ParamVector:
        dcache, pcache = pred.cache
        out = params.zeros_like()
        for k, g in enumerate(grads.depths):
            for name, v in self.depth_net.backward(params, dcache[k], g).items():
                out[name] = out[name] + v
        for k, g in enumerate(grads.tangents):
            d_logits = [gm * E * (1.0 - E) for gm, E in zip(grads.masks[k], pred.masks[k])]
            for name, v in self.pose_net.backward(params, pcache[k], g, d_logits).items():
                out[name] = out[name] + v
        return out


def make_model(name, n_levels=4, **kwargs):
    if name == "direct":
        return DirectFieldModel(n_levels, **kwargs)
    if name == "toycnn":
        return ToyCNNModel(n_levels, **kwargs)
    raise ValueError(f"unknown predictor {name!r}; choose 'direct' or 'toycnn'")
