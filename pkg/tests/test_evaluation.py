import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.spatial.transform import Rotation

from depthpose.dataio import Trajectory, generate_synthetic, preset_scene
from depthpose.exceptions import EmptyGroundTruthError, InsufficientOverlapError
from depthpose.evaluation import align_rigid, avg_photometric_loss, compute_ate, compute_re, depth_metrics, nearest_fill
from depthpose.geometry import Se3Transform, compose, exp_map, relative_transform
from depthpose.imaging import SparseDepth

from conftest import random_pose


def _traj(rng, n=8):
    poses = [random_pose(rng, max_angle=1.0) for _ in range(n)]
    return Trajectory(np.arange(n) * 0.1, poses)


# -- ATE ----------------------------------------------------------------------------------------


def test_ate_of_ground_truth_is_zero(rng):
    gt = _traj(rng)
    mean, std = compute_ate(gt, gt)
    assert mean == pytest.approx(0.0, abs=1e-12) and std == pytest.approx(0.0, abs=1e-12)


def test_ate_invariant_to_rigid_transform(rng):
    gt = _traj(rng)
    est = Trajectory(gt.timestamps, [compose(exp_map(0.01 * rng.normal(size=6)), P) for P in gt.poses])
    base = compute_ate(est, gt)
    G = random_pose(rng)
    moved = Trajectory(est.timestamps, [compose(G, P) for P in est.poses])
    np.testing.assert_allclose(compute_ate(moved, gt), base, atol=1e-9)
    assert compute_ate(Trajectory(gt.timestamps, [compose(G, P) for P in gt.poses]), gt)[0] < 1e-9


def test_ate_three_poses_with_outlier_matches_brute_force():
    gt_pos = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0.5, 0]])
    est_pos = gt_pos.copy()
    est_pos[1, 1] += 0.3
    R0 = Rotation.from_rotvec([0.2, -0.1, 0.4]).as_matrix()
    est_pos = est_pos @ R0.T + [3.0, -1.0, 2.0]
    mk = lambda pos: Trajectory([0.0, 0.1, 0.2], [Se3Transform(np.eye(3), p) for p in pos])
    mean, std = compute_ate(mk(est_pos), mk(gt_pos))

    def cost(x):
        R = Rotation.from_rotvec(x[:3]).as_matrix()
        return np.sum((est_pos @ R.T + x[3:] - gt_pos) ** 2)

    best = min((minimize(cost, x0, method="BFGS", options={"gtol": 1e-12}) for x0 in np.random.default_rng(0).normal(size=(10, 6))), key=lambda r: r.fun)
    R = Rotation.from_rotvec(best.x[:3]).as_matrix()
    errs = np.linalg.norm(est_pos @ R.T + best.x[3:] - gt_pos, axis=1)
    assert mean == pytest.approx(errs.mean(), abs=1e-6)
    assert std == pytest.approx(errs.std(), abs=1e-6)
    assert mean > 0.05


def test_align_rigid_recovers_transform(rng):
    src = rng.normal(size=(20, 3))
    R = Rotation.from_rotvec(rng.normal(size=3)).as_matrix()
    t = rng.normal(size=3)
    R2, t2 = align_rigid(src, src @ R.T + t)
    np.testing.assert_allclose(R2, R, atol=1e-12)
    np.testing.assert_allclose(t2, t, atol=1e-12)


def test_ate_needs_two_matches(rng):
    gt = _traj(rng, 3)
    est = Trajectory(gt.timestamps + 0.05, gt.poses)
    with pytest.raises(InsufficientOverlapError):
        compute_ate(est, gt)
    # one pose within 0.02 s is still not enough
    est = Trajectory([0.0, 10.0], gt.poses[:2])
    with pytest.raises(InsufficientOverlapError):
        compute_ate(est, gt)


def test_ate_association_window(rng):
    gt = _traj(rng, 5)
    est = Trajectory(gt.timestamps + 0.015, gt.poses)
    assert compute_ate(est, gt)[0] < 1e-12


def test_windowed_ate(rng):
    gt = _traj(rng, 6)
    mean, std = compute_ate(gt, gt, window=2)
    assert mean < 1e-12 and std < 1e-12
    # two-pose windows always align a pair of points, leaving only the change in their spacing
    est = Trajectory(gt.timestamps, [compose(exp_map(0.02 * rng.normal(size=6)), P) for P in gt.poses])
    assert compute_ate(est, gt, window=3)[0] <= compute_ate(est, gt)[0] + 1e-12
    with pytest.raises(InsufficientOverlapError):
        compute_ate(gt, gt, window=10)


# -- RE --------------------------------------------------------------------------------------------------


def test_re_of_ground_truth_is_zero(rng):
    gt = _traj(rng)
    assert compute_re(gt, gt) == pytest.approx((0.0, 0.0), abs=1e-12)


def test_re_invariant_to_world_offset(rng):
    gt = _traj(rng)
    G = Se3Transform(np.eye(3), [5.0, -2.0, 1.0])
    est = Trajectory(gt.timestamps, [compose(G, P) for P in gt.poses])
    assert compute_re(est, gt)[0] < 1e-12
    assert compute_re(gt, est)[0] < 1e-12


def test_re_single_corrupted_step(rng):
    n = 7
    gt = _traj(rng, n)
    shift = Se3Transform(np.eye(3), [0.1, 0, 0])
    est = Trajectory(gt.timestamps, [compose(shift, P) if k >= 3 else P for k, P in enumerate(gt.poses)])
    mean, _ = compute_re(est, gt)
    assert mean == pytest.approx(0.1 / (n - 1), rel=1e-9)


# -- depth metrics ----------------------------------------------------------------------------------------


def test_depth_metrics_zero_at_truth(rng):
    gt = rng.uniform(1, 5, (8, 8))
    m = depth_metrics(gt, SparseDepth.from_dense(gt))
    assert (m.rmse, m.mae, m.irmse, m.imae) == (0.0, 0.0, 0.0, 0.0)


def test_depth_metrics_single_pixel():
    valid = np.zeros((2, 2), dtype=bool)
    valid[0, 1] = True
    m = depth_metrics(np.full((2, 2), 2.0), SparseDepth(np.where(valid, 1.0, 0.0), valid))
    assert m.rmse == pytest.approx(1000.0) and m.mae == pytest.approx(1000.0)
    assert m.irmse == pytest.approx(500.0) and m.imae == pytest.approx(500.0)


def test_depth_metrics_formula(rng):
    gt = rng.uniform(0.5, 10, (16, 16))
    keep = rng.random((16, 16)) < 0.5
    pred = rng.uniform(0.5, 10, (16, 16))
    m = depth_metrics(pred, SparseDepth(np.where(keep, gt, 0), keep))
    p, g = pred[keep], gt[keep]
    assert m.rmse == pytest.approx(1000 * np.sqrt(np.mean((p - g) ** 2)), rel=1e-12)
    assert m.mae == pytest.approx(1000 * np.mean(np.abs(p - g)), rel=1e-12)
    assert m.irmse == pytest.approx(1000 * np.sqrt(np.mean((1 / p - 1 / g) ** 2)), rel=1e-12)
    assert m.imae == pytest.approx(1000 * np.mean(np.abs(1 / p - 1 / g)), rel=1e-12)
    assert m.rmse >= m.mae and m.irmse >= m.imae


def test_depth_metrics_power_mean_inequality(rng):
    for _ in range(200):
        shape = tuple(rng.integers(1, 6, 2))
        gt = rng.uniform(0.1, 20, shape)
        m = depth_metrics(rng.uniform(0.1, 20, shape), SparseDepth.from_dense(gt))
        assert m.rmse >= m.mae - 1e-9 and m.irmse >= m.imae - 1e-9
        assert min(m.rmse, m.mae, m.irmse, m.imae) >= 0


def test_depth_metrics_permutation_deterministic(rng):
    gt = rng.uniform(0.5, 10, (16, 16))
    pred = rng.uniform(0.5, 10, (16, 16))
    perm = rng.permutation(256)
    a = depth_metrics(pred, SparseDepth.from_dense(gt))
    b = depth_metrics(pred.ravel()[perm].reshape(16, 16), SparseDepth.from_dense(gt.ravel()[perm].reshape(16, 16)))
    for x, y in zip(a.to_dict().values(), b.to_dict().values()):
        assert abs(x - y) < 1e-12 * max(1.0, abs(x))


def test_depth_metrics_empty():
    with pytest.raises(EmptyGroundTruthError):
        depth_metrics(np.ones((2, 2)), SparseDepth.empty((2, 2)))


def test_nearest_fill():
    valid = np.zeros((3, 4), dtype=bool)
    valid[0, 0] = valid[2, 3] = True
    data = np.where(valid, 1.0, 0.0)
    data[2, 3] = 5.0
    filled = nearest_fill(SparseDepth(data, valid))
    assert filled[0, 1] == 1.0 and filled[2, 2] == 5.0
    with pytest.raises(EmptyGroundTruthError):
        nearest_fill(SparseDepth.empty((2, 2)))


# -- photometric metric ---------------------------------------------------------------------------------------


def test_photometric_metric_zero_for_static_identical_frames(rng):
    from conftest import small_K

    img = rng.random((16, 16))
    D = rng.uniform(1, 3, (16, 16))
    v = avg_photometric_loss([img, img, img], [D, D, D], [Se3Transform.identity()] * 2, small_K(16, 16), n_levels=2)
    assert v == 0.0


@pytest.fixture(scope="module")
def scene256():
    return generate_synthetic(preset_scene("two_plane", 256, 256, 2))


def test_photometric_metric_small_at_truth(scene256):
    ds = scene256
    v = avg_photometric_loss(ds.images, ds.gt_depths, ds.relative_gt_poses(), ds.intrinsics)
    assert v < 1e-3


def test_photometric_metric_grows_with_pose_error(scene256):
    ds = scene256
    T = ds.relative_gt_poses()[0]
    truth = avg_photometric_loss(ds.images, ds.gt_depths, [T], ds.intrinsics)
    for delta in ([0.01, 0, 0, 0, 0, 0], [0, 0, 0, 0.02, 0, 0], [0, -0.005, 0, 0, 0, 0.03]):
        wrong = avg_photometric_loss(ds.images, ds.gt_depths, [compose(exp_map(delta), T)], ds.intrinsics)
        assert wrong > truth


def test_photometric_metric_needs_two_frames(rng):
    from conftest import small_K

    with pytest.raises(ValueError):
        avg_photometric_loss([rng.random((8, 8))], [np.ones((8, 8))], [], small_K(8, 8))


def test_photometric_metric_uses_forward_motion(scene256):
    # poses are k -> k+1; the reverse motion must score worse
    ds = scene256
    T = ds.relative_gt_poses()[0]
    fwd = avg_photometric_loss(ds.images, ds.gt_depths, [T], ds.intrinsics)
    back = avg_photometric_loss(ds.images, ds.gt_depths, [relative_transform(ds.gt_poses[1], ds.gt_poses[0])], ds.intrinsics)
    assert fwd < back
