"""Finite-difference verification of every loss term and predictor on a small synthetic instance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import generate_synthetic, preset_scene
from .diffcore import GradCheckReport, finite_difference_check
from .geometry import log_map
from .imaging import SparseDepth
from .losses import (
    LossWeights,
    mask_regularization_loss,
    pair_photometric,
    sequence_loss,
    smoothness_loss,
    supervised_loss,
)
from .params import ParamVector
from .predictors import DirectFieldModel, ToyCNNModel

DEFAULT_SIZE = (16, 16)


@dataclass
class GradCheckCase:
    name: str
    loss_fn: object
    params: ParamVector


def _instance(size, n_levels, seed):
    H, W = size
    scene = preset_scene("two_plane", width=W, height=H, n_frames=2)
    ds = generate_synthetic(scene)
    rng = np.random.default_rng(seed)
    images = ds.images
    # perturb the true depth so the residuals are not all at their kinks
    depths = [d * np.exp(0.05 * rng.standard_normal(d.shape)) for d in ds.gt_depths]
    inputs = []
    for d in ds.gt_depths:
        keep = rng.random(d.shape) < 0.3
        inputs.append(SparseDepth(np.where(keep, d, 0.0), keep))
    tangent = log_map(ds.relative_gt_poses()[0]).as_vector() + 0.01 * rng.standard_normal(6)
    masks = [rng.uniform(0.2, 0.9, size=(H >> s, W >> s)) for s in range(n_levels)]
    return ds, images, inputs, depths, tangent, masks


def build_cases(size=DEFAULT_SIZE, n_levels=2, seed=0, planted_bug=False):
    """Loss functions ``params -> (value, grads)`` covering every differentiable path.

    With ``planted_bug`` every analytic gradient is scaled by 1.01, which the
    check must catch.
    """
    ds, images, inputs, depths, tangent, masks = _instance(size, n_levels, seed)
    K = ds.intrinsics
    weights = LossWeights()
    bug = 1.01 if planted_bug else 1.0
    cases = []

    def wrap(fn):
        def loss_fn(p):
            v, g = fn(p)
            out = ParamVector({k: bug * np.asarray(x, dtype=float) for k, x in g.items()})
            return v, out

        return loss_fn

    def sup(p):
        v, g = supervised_loss(p["depth"], inputs[0])
        return v, {"depth": g}

    cases.append(GradCheckCase("supervised", wrap(sup), ParamVector({"depth": depths[0]})))

    def smo(p):
        v, g = smoothness_loss(p["depth"])
        return v, {"depth": g}

    cases.append(GradCheckCase("smoothness", wrap(smo), ParamVector({"depth": depths[0]})))

    mask_p = ParamVector({f"mask/{s}": m for s, m in enumerate(masks)})

    def mreg(p):
        ms = [p[f"mask/{s}"] for s in range(n_levels)]
        v, g = mask_regularization_loss(ms)
        return v, {f"mask/{s}": gs for s, gs in enumerate(g)}

    cases.append(GradCheckCase("mask_reg", wrap(mreg), mask_p.copy()))

    pho_p = ParamVector({"depth1": depths[0], "depth2": depths[1], "tangent": tangent})
    for s, m in enumerate(masks):
        pho_p[f"mask/{s}"] = m

    def pho(p):
        ms = [p[f"mask/{s}"] for s in range(n_levels)]
        r = pair_photometric(images[0], images[1], p["depth1"], p["depth2"], inputs[0], inputs[1], p["tangent"], K, n_levels, ms)
        g = {"depth1": r.d_depth1, "depth2": r.d_depth2, "tangent": r.d_tangent}
        g.update({f"mask/{s}": gs for s, gs in enumerate(r.d_masks)})
        return r.value, g

    cases.append(GradCheckCase("photometric", wrap(pho), pho_p))

    supervision = inputs
    for model, label in ((DirectFieldModel(n_levels), "total_direct"), (ToyCNNModel(n_levels, depth_scale=3.0), "total_toycnn")):
        params = model.init_params(images, inputs, depths, [tangent], rng=np.random.default_rng(seed))

        def total(p, model=model):
            pred = model.forward(p, images, inputs)
            b, g = sequence_loss(images, inputs, supervision, pred.depths, pred.tangents, pred.masks, K, weights, n_levels)
            return b.total, dict(model.backward(p, pred, g).items())

        cases.append(GradCheckCase(label, wrap(total), params))
    return cases


def run_gradcheck(size=DEFAULT_SIZE, n_levels=2, seed=0, planted_bug=False, rel_tol=1e-4, abs_floor=1e-8, step=1e-6):
    """Check every case; returns ``(passed, [(case name, GradCheckReport)])``."""
    results = []
    for case in build_cases(size, n_levels, seed, planted_bug):
        rep = finite_difference_check(case.loss_fn, case.params, step=step, rel_tol=rel_tol, abs_floor=abs_floor, seed=seed)
        results.append((case.name, rep))
    return all(r.passed for _, r in results), results


def format_report(results):
    lines = []
    for name, rep in results:
        lines.extend(rep.lines(prefix=f"{name}:"))
    return lines


__all__ = ["GradCheckCase", "GradCheckReport", "build_cases", "run_gradcheck", "format_report"]
