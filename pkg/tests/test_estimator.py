import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from depthpose.estimator import DepthPoseRefiner, SparseDepthSimulator
from depthpose.geometry import Se3Transform, compose


def test_simulator_params_and_clone():
    sim = SparseDepthSimulator(f=0.2, sample_rate=0.5, seed=3)
    assert sim.get_params() == {"f": 0.2, "sample_rate": 0.5, "seed": 3}
    c = clone(sim).set_params(seed=4)
    assert c.seed == 4 and sim.seed == 3


def test_simulator_requires_fit(two_plane_16):
    with pytest.raises(NotFittedError):
        SparseDepthSimulator().transform(two_plane_16.gt_depths)


def test_simulator_transform(two_plane_16):
    D = two_plane_16.gt_depths
    out = SparseDepthSimulator(f=0.0, sample_rate=1.0).fit_transform(D)
    for m, d in zip(out, D):
        assert m.valid.all()
        np.testing.assert_array_equal(m.data, d)
    a = SparseDepthSimulator(seed=7).fit(D).transform(D)
    b = SparseDepthSimulator(seed=7).fit(D).transform(D)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.valid, y.valid)
        np.testing.assert_array_equal(x.data, y.data)
    # frames are drawn independently
    assert not np.array_equal(a[0].valid, a[1].valid)


def test_simulator_rejects_bad_params(two_plane_16):
    with pytest.raises(ValueError):
        SparseDepthSimulator(sample_rate=1.5).fit(two_plane_16.gt_depths)


def test_refiner_get_params_round_trip():
    est = DepthPoseRefiner(iters=5, lr={"depth": 1e-2})
    params = est.get_params()
    assert params["iters"] == 5 and params["lr"] == {"depth": 1e-2}
    assert clone(est).get_params()["weights"] == (1.0, 0.1, 0.1, 0.2)


def test_refiner_fit_predict(two_plane_16):
    est = DepthPoseRefiner(iters=10, n_levels=2, lr=1e-3)
    with pytest.raises(NotFittedError):
        est.predict()
    depths = est.fit_predict(two_plane_16)
    assert len(depths) == 3 and depths[0].shape == (16, 16)
    assert all(np.all(d > 0) for d in depths)
    assert len(est.history_) == 10 and len(est.poses_) == 2
    assert est.result_.final.total <= est.history_[0].total


def test_refiner_world_to_camera_chains_motion(two_plane_16):
    est = DepthPoseRefiner(iters=1, n_levels=2).fit(two_plane_16)
    first = two_plane_16.gt_poses[0]
    w2c = est.world_to_camera(first)
    assert w2c[0] is first
    np.testing.assert_allclose(w2c[2].matrix(), compose(est.poses_[1], compose(est.poses_[0], first)).matrix())


def test_refiner_input_validation(two_plane_16):
    with pytest.raises(TypeError):
        DepthPoseRefiner(iters=1).fit(two_plane_16.images)
    with pytest.raises(ValueError):
        DepthPoseRefiner(iters=0).fit(two_plane_16)
    with pytest.raises(ValueError):
        DepthPoseRefiner(iters=1, indicator="both").fit(two_plane_16)
    with pytest.raises(ValueError):
        DepthPoseRefiner(iters=1).fit(two_plane_16, y=two_plane_16.measurements[:1])
