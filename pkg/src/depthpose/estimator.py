"""scikit-learn style wrappers around the noise simulator and the joint refiner."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_depth_map, check_positive_int
from .dataio import SequenceDataset
from .diffcore import OptimizerState, joint_refine
from .geometry import Se3Transform, compose
from .losses import INDICATORS, LossWeights
from .predictors import DEPTH_INPUT_SCALES, make_model
from .sensorsim import NoiseModel, corrupt_depth


class SparseDepthSimulator(TransformerMixin, BaseEstimator):
    """Turn dense depth maps into sparse noisy measurements.

    Frame ``k`` of a batch is corrupted with seed ``seed + k`` so a batch is
    reproducible and frames are independent.
    """

    def __init__(self, f=0.5, sample_rate=0.07, seed=0):
        self.f = f
        self.sample_rate = sample_rate
        self.seed = seed

    def fit(self, X=None, y=None):
        NoiseModel(self.f, self.sample_rate, self.seed)  # validates
        self.n_frames_seen_ = 0 if X is None else len(X)
        return self

    def transform(self, X):
        check_is_fitted(self, "n_frames_seen_")
        return [
            corrupt_depth(check_depth_map(D), NoiseModel(self.f, self.sample_rate, self.seed + k))
            for k, D in enumerate(X)
        ]


class DepthPoseRefiner(BaseEstimator):
    """Jointly refine dense depth and frame-to-frame motion of one sequence.

    ``fit`` takes a :class:`SequenceDataset` (its sparse measurements are
    the predictor input) and optional per-frame supervision depth; when
    ``y`` is omitted the measurements supervise themselves.  ``lr`` may be a
    float or a mapping from block group (``depth``, ``pose``, ``mask``,
    ``depth_net``, ``pose_net``) to rate.
    """

    def __init__(
        self,
        predictor="direct",
        weights=(1.0, 0.1, 0.1, 0.2),
        n_levels=4,
        iters=200,
        lr=1e-4,
        weight_decay=3e-4,
        beta1=0.9,
        beta2=0.999,
        epsilon=1e-8,
        indicator="unmeasured",
        trainable=None,
        depth_input_scale=DEPTH_INPUT_SCALES["tum"],
        seed=0,
    ):
        self.predictor = predictor
        self.weights = weights
        self.n_levels = n_levels
        self.iters = iters
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.indicator = indicator
        self.trainable = trainable
        self.depth_input_scale = depth_input_scale
        self.seed = seed

    def _model(self):
        if self.predictor == "toycnn":
            return make_model("toycnn", self.n_levels, depth_input_scale=self.depth_input_scale)
        return make_model(self.predictor, self.n_levels)

    def fit(self, X: SequenceDataset, y=None, init_depths=None, init_tangents=None):
        if not isinstance(X, SequenceDataset):
            raise TypeError("X must be a SequenceDataset")
        check_positive_int(self.iters, "iters")
        if self.indicator not in INDICATORS:
            raise ValueError(f"indicator must be one of {INDICATORS}")
        supervision = X.measurements if y is None else list(y)
        if len(supervision) != len(X):
            raise ValueError("supervision needs one depth map per frame")
        w = self.weights if isinstance(self.weights, LossWeights) else LossWeights(*self.weights)
        result = joint_refine(
            X.images,
            X.measurements,
            supervision,
            X.intrinsics,
            model=self._model(),
            weights=w,
            iters=self.iters,
            seed=self.seed,
            trainable=self.trainable,
            init_depths=init_depths,
            init_tangents=init_tangents,
            n_levels=self.n_levels,
            indicator=self.indicator,
            optimizer=OptimizerState(
                lr=self.lr, beta1=self.beta1, beta2=self.beta2, weight_decay=self.weight_decay, epsilon=self.epsilon
            ),
        )
        self.result_ = result
        self.depths_ = result.depths
        self.poses_ = result.poses
        self.history_ = result.history
        self.timestamps_ = np.array(X.timestamps)
        return self

    def predict(self, X=None):
        """Refined dense depth maps, one per frame of the fitted sequence."""
        check_is_fitted(self, "result_")
        return [np.array(d) for d in self.depths_]

    def fit_predict(self, X, y=None, **fit_params):
        return self.fit(X, y, **fit_params).predict()

    def world_to_camera(self, first=None):
        """Chain the relative motions into absolute ``T_w_to_k`` poses, anchored at ``first``."""
        check_is_fitted(self, "result_")
        poses = [Se3Transform.identity() if first is None else first]
        for rel in self.poses_:
            poses.append(compose(rel, poses[-1]))
        return poses
