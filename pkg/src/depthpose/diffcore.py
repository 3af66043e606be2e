"""Optimization machinery: Adam, finite-difference verification and joint refinement."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import DivergedOptimizationError
from .geometry import exp_map
from .losses import LossWeights, sequence_loss
from .params import ParamVector
from .predictors import DirectFieldModel

logger = logging.getLogger(__name__)

__all__ = [
    "OptimizerState",
    "ParamVector",
    "adam_step",
    "finite_difference_check",
    "joint_refine",
    "RefinementResult",
    "write_loss_history",
]


@dataclass
class OptimizerState:
    """Adam state.  ``lr`` may be a float or a mapping of block group to rate."""

    lr: float | dict = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 3e-4
    epsilon: float = 1e-8
    decay_groups: tuple = ()
    step: int = 0
    m: ParamVector | None = None
    v: ParamVector | None = None

    def rate(self, name):
        if isinstance(self.lr, dict):
            return float(self.lr.get(ParamVector.group(name), self.lr.get("default", 1e-4)))
        return float(self.lr)


def adam_step(state: OptimizerState, params: ParamVector, grads: ParamVector, frozen=()):
    """One Adam update with bias correction and decoupled weight decay.

    Weight decay only touches blocks whose group is in
    ``state.decay_groups``.  Blocks whose group is in ``frozen`` keep their
    values and moments.  Returns ``(new_state, new_params)``; the inputs are
    not modified.
    """
    if not params.same_layout(grads):
        raise ValueError("parameter and gradient layouts differ")
    for name, g in grads.items():
        if ParamVector.group(name) not in frozen and not np.all(np.isfinite(g)):
            raise DivergedOptimizationError(f"non-finite gradient in block {name!r}", block=name)
    m = params.zeros_like() if state.m is None else state.m.copy()
    v = params.zeros_like() if state.v is None else state.v.copy()
    t = state.step + 1
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    new = params.copy()
    for name, g in grads.items():
        group = ParamVector.group(name)
        if group in frozen:
            continue
        lr = state.rate(name)
        p = new[name]
        if group in state.decay_groups and state.weight_decay:
            p = p - lr * state.weight_decay * p
        m[name] = state.beta1 * m[name] + (1.0 - state.beta1) * g
        v[name] = state.beta2 * v[name] + (1.0 - state.beta2) * (g * g)
        new[name] = p - lr * (m[name] / bc1) / (np.sqrt(v[name] / bc2) + state.epsilon)
    return replace(state, step=t, m=m, v=v), new


# -- finite differences --------------------------------------------------------------


@dataclass
class BlockCheck:
    name: str
    n_checked: int
    max_rel_error: float
    n_failed: int
    n_kinks: int
    max_abs_error: float = 0.0

    @property
    def passed(self):
        return self.n_failed == 0


@dataclass
class GradCheckReport:
    blocks: list = field(default_factory=list)

    @property
    def passed(self):
        return all(b.passed for b in self.blocks)

    def lines(self, prefix=""):
        for b in self.blocks:
            status = "PASS" if b.passed else "FAIL"
            yield (
                f"{status} {prefix}{b.name}: checked={b.n_checked} max_rel_err={b.max_rel_error:.3e} "
                f"max_abs_err={b.max_abs_error:.3e} failed={b.n_failed} kinks={b.n_kinks}"
            )


def finite_difference_check(loss_fn, params: ParamVector, step=1e-6, rel_tol=1e-4, abs_floor=1e-8, max_coords=200, seed=0, blocks=None):
    """Compare analytic gradients against central differences.

    ``loss_fn(params) -> (value, grads)``.  Blocks larger than ``max_coords``
    are checked on a random subset of that many coordinates.  A coordinate
    passes when ``|a - n| <= rel_tol * max(|a|, |n|) + abs_floor``.  When the
    central difference straddles a kink of a piecewise-smooth loss, the
    analytic value is accepted if it matches one of the one-sided
    differences and those differ from each other; such coordinates are
    counted as kinks rather than failures.
    """
    rng = np.random.default_rng(seed)
    _, grads = loss_fn(params)
    report = GradCheckReport()

    def ok(a, n):
        return abs(a - n) <= rel_tol * max(abs(a), abs(n)) + abs_floor

    for name in blocks or params.names():
        base = params[name]
        size = base.size
        coords = np.arange(size) if size <= max_coords else np.sort(rng.choice(size, max_coords, replace=False))
        analytic = np.asarray(grads[name]).ravel()
        worst, worst_abs, failed, kinks = 0.0, 0.0, 0, 0

        def at(idx, delta):
            p = params.copy()
            flat = p[name].ravel()
            flat[idx] += delta
            p[name] = flat.reshape(base.shape)
            return loss_fn(p)[0]

        for idx in coords:
            a = analytic[idx]
            f0p, f0m = at(idx, step), at(idx, -step)
            n = (f0p - f0m) / (2 * step)
            denom = max(abs(a), abs(n))
            rel = abs(a - n) / denom if denom > 0 else 0.0
            if ok(a, n):
                worst = max(worst, rel)
                worst_abs = max(worst_abs, abs(a - n))
                continue
            f0 = loss_fn(params)[0]
            fwd = (f0p - f0) / step
            bwd = (f0 - f0m) / step
            if not ok(fwd, bwd) and (ok(a, fwd) or ok(a, bwd)):
                kinks += 1
                continue
            worst = max(worst, rel)
            worst_abs = max(worst_abs, abs(a - n))
            failed += 1
        report.blocks.append(BlockCheck(name, len(coords), worst, failed, kinks, worst_abs))
    return report


# -- joint refinement -----------------------------------------------------------------


@dataclass
class RefinementResult:
    depths: list
    tangents: list
    poses: list  # relative transforms, frame k -> k+1
    masks: list
    history: list  # LossBreakdown per iteration (before the update)
    final: object  # LossBreakdown after the last update
    params: ParamVector


def _default_init_depths(inputs, supervision, shape):
    vals = [s.data[s.valid] for s in list(inputs) + list(supervision) if s.valid.any()]
    level = float(np.median(np.concatenate(vals))) if vals else 1.0
    return [np.full(shape, level) for _ in inputs]


def joint_refine(
    images,
    inputs,
    supervision,
    K,
    model=None,
    weights=LossWeights(),
    iters=100,
    seed=0,
    lr=1e-4,
    trainable=None,
    init_depths=None,
    init_tangents=None,
    n_levels=4,
    indicator="unmeasured",
    optimizer=None,
    callback=None,
):
    """Jointly optimize depth, pose and mask parameters under the weighted loss.

    ``images`` and ``inputs`` (sparse measurements) have one entry per frame,
    ``supervision`` is the (semi-dense) depth used by the supervised term.
    ``trainable`` restricts updates to the named block groups (for the
    direct field: ``depth``, ``pose``, ``mask``); everything else is frozen.
    """
    if len(images) < 2:
        raise ValueError("joint refinement needs at least two frames")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    model = DirectFieldModel(n_levels) if model is None else model
    shape = np.shape(inputs[0].data)
    if init_depths is None and isinstance(model, DirectFieldModel):
        init_depths = _default_init_depths(inputs, supervision, shape)
    rng = np.random.default_rng(seed)
    params = model.init_params(images, inputs, init_depths, init_tangents, rng=rng)
    groups = {ParamVector.group(n) for n in params.names()}
    frozen = tuple(sorted(groups - set(trainable))) if trainable is not None else ()
    state = optimizer if optimizer is not None else OptimizerState(lr=lr)
    state = replace(state, decay_groups=tuple(model.decay_groups))

    def evaluate(p):
        # overflow shows up as a non-finite loss, which is checked below
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            pred = model.forward(p, images, inputs)
            breakdown, g = sequence_loss(
                images, inputs, supervision, pred.depths, pred.tangents, pred.masks, K, weights, n_levels, indicator
            )
        return pred, breakdown, g

    history = []
    for it in range(iters):
        pred, breakdown, g = evaluate(params)
        if not np.isfinite(breakdown.total):
            err = DivergedOptimizationError(f"non-finite loss at iteration {it}", iteration=it)
            err.history = history
            raise err
        history.append(breakdown)
        if callback is not None:
            callback(it, breakdown)
        grads = model.backward(params, pred, g)
        try:
            state, params = adam_step(state, params, grads, frozen=frozen)
        except DivergedOptimizationError as exc:
            exc.iteration = it
            exc.history = history
            raise
    pred, final, _ = evaluate(params)
    logger.info("refinement done: initial total %.6g, final total %.6g", history[0].total, final.total)
    return RefinementResult(
        depths=pred.depths,
        tangents=[np.asarray(t, dtype=float) for t in pred.tangents],
        poses=[exp_map(t) for t in pred.tangents],
        masks=pred.masks,
        history=history,
        final=final,
        params=params,
    )


def write_loss_history(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "supervised", "photometric", "smoothness", "mask_reg", "total"])
        for i, b in enumerate(history):
            w.writerow([i] + [repr(float(x)) for x in b.as_row()])
