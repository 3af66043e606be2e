"""End-to-end acceptance checks.  Each test prints one PASS/FAIL line."""

import json
import time

import numpy as np
import pytest

from depthpose.cli import main
from depthpose.dataio import file_sha256, generate_synthetic, preset_scene
from depthpose.diffcore import OptimizerState, joint_refine
from depthpose.evaluation import compute_ate, compute_re, depth_metrics, nearest_fill
from depthpose.geometry import Se3Transform, backproject, compose, exp_map, log_map, project, relative_transform, so3_log
from depthpose.gradcheck import run_gradcheck
from depthpose.imaging import SparseDepth, build_pyramid, inverse_warp, sparse_pyramid
from depthpose.losses import (
    LossWeights,
    photometric_residual,
    sequence_loss,
    smoothness_loss,
    supervised_loss,
)
from depthpose.sensorsim import NoiseModel, corrupt_depth

from conftest import random_pose, small_K, verdict


def _rmse(a, b):
    return float(np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2)))


def test_1_gradient_correctness():
    t0 = time.perf_counter()
    passed, results = run_gradcheck(size=(16, 16), n_levels=2, rel_tol=1e-4, abs_floor=1e-8)
    elapsed = time.perf_counter() - t0
    names = [n for n, _ in results]
    covered = {"supervised", "photometric", "smoothness", "mask_reg", "total_direct", "total_toycnn"} <= set(names)
    n_coords = sum(b.n_checked for _, r in results for b in r.blocks)
    n_failed = sum(b.n_failed for _, r in results for b in r.blocks)
    worst = max(b.max_rel_error for _, r in results for b in r.blocks)
    worst_abs = max(b.max_abs_error for _, r in results for b in r.blocks)
    ok = passed and covered and elapsed < 60
    detail = f"{n_coords} coordinates in {len(names)} cases, {n_failed} failed, max rel err {worst:.2e}, max abs err {worst_abs:.2e}, {elapsed:.1f} s"
    assert verdict(1, ok, detail)


def test_2_identity_exactness(rng):
    K = small_K(32, 24)
    I = rng.random((24, 32))
    D1, D2 = rng.uniform(0.5, 5, (24, 32)), rng.uniform(0.5, 5, (24, 32))
    empty = sparse_pyramid(SparseDepth.empty((24, 32)), 3)
    I_p, D1_p, D2_p = build_pyramid(I, 3), build_pyramid(D1, 3), build_pyramid(D2, 3)
    pho_max = 0.0
    for s in range(3):
        r = photometric_residual(I_p, I_p, D1_p, D2_p, empty, empty, Se3Transform.identity(), K, s)
        assert r.valid.all()
        pho_max = max(pho_max, float(np.abs(r.residual[r.valid]).max()))
    y, x = np.mgrid[0:24, 0:32].astype(float)
    smooth, _ = smoothness_loss(2.0 + 0.25 * x - 0.125 * y)
    gt = rng.uniform(0.5, 5, (24, 32))
    sup, _ = supervised_loss(gt, SparseDepth.from_dense(gt))
    ok = pho_max == 0.0 and smooth == 0.0 and sup == 0.0
    assert verdict(2, ok, f"photometric max {pho_max}, smoothness {smooth}, supervised {sup}")


def _ray_depth(planes, T_w_to_c, K, uv):
    """Depth along the camera ray through ``uv`` to the nearest plane, solved independently."""
    ray = np.array([(uv[0] - K.cx) / K.fx, (uv[1] - K.cy) / K.fy, 1.0])
    R, t = T_w_to_c.rotation, T_w_to_c.translation
    C = -R.T @ t
    d = R.T @ ray
    hits = [(pl.offset - C @ pl.normal) / (d @ pl.normal) for pl in planes if d @ pl.normal != 0]
    return min(z for z in hits if z > 0)


def test_3_geometry_oracle(two_plane_64):
    ds = two_plane_64
    K = ds.intrinsics
    planes = preset_scene("two_plane", 64, 64, 2).planes
    T = relative_transform(ds.gt_poses[0], ds.gt_poses[1])
    worst, n = 0.0, 0
    for v in range(64):
        for u in range(64):
            p = T.apply(backproject(K, np.array([u, v], float), ds.gt_depths[0][v, u]))
            uv = project(K, p)
            if not (0 <= uv[0] <= 63 and 0 <= uv[1] <= 63):
                continue
            worst = max(worst, abs(_ray_depth(planes, ds.gt_poses[1], K, uv) - p[2]))
            n += 1
    warped, valid = inverse_warp(ds.images[1], ds.gt_depths[0], T, K)
    resid = float(np.mean(np.abs(warped - ds.images[0])[valid]))
    ok = worst < 1e-9 and resid < 1e-3 and n > 2000
    assert verdict(3, ok, f"epipolar max depth error {worst:.1e} over {n} pixels, inverse-warp mean abs residual {resid:.2e}")


def test_4_pose_recovery(two_plane_64):
    ds = two_plane_64
    T_gt = relative_transform(ds.gt_poses[0], ds.gt_poses[1])
    mean_depth = float(np.mean([d.mean() for d in ds.gt_depths]))
    rng = np.random.default_rng(4)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    shift = rng.normal(size=3)
    shift /= np.linalg.norm(shift)
    delta = exp_map(np.concatenate([np.deg2rad(2.0) * axis, np.zeros(3)]))
    delta = Se3Transform(delta.rotation, 0.02 * mean_depth * shift)
    T0 = compose(delta, T_gt)
    empty = [SparseDepth.empty((64, 64))] * 2
    t0 = time.perf_counter()
    r = joint_refine(
        ds.images, empty, empty, ds.intrinsics,
        iters=500, trainable={"pose"}, init_depths=ds.gt_depths, init_tangents=[log_map(T0).as_vector()],
        optimizer=OptimizerState(lr={"pose": 1e-3}),
    )
    elapsed = time.perf_counter() - t0
    T = r.poses[0]
    rot_err = np.rad2deg(np.linalg.norm(so3_log(T.rotation.T @ T_gt.rotation)))
    base = np.linalg.norm(T_gt.translation)
    trans_err = np.linalg.norm(T.translation - T_gt.translation) / base
    rot0 = np.rad2deg(np.linalg.norm(so3_log(T0.rotation.T @ T_gt.rotation)))
    ok = rot_err < 0.5 and trans_err < 0.01 and elapsed < 120
    detail = (
        f"start {rot0:.2f} deg / {0.02 * mean_depth:.3f} m off; after 500 iterations rotation error {rot_err:.4f} deg, "
        f"translation error {100 * trans_err:.3f}% of baseline, {elapsed:.1f} s"
    )
    assert verdict(4, ok, detail)


def test_5_depth_recovery(two_plane_64):
    ds = two_plane_64
    T_gt = relative_transform(ds.gt_poses[0], ds.gt_poses[1])
    rng = np.random.default_rng(5)
    samples = []
    for d in ds.gt_depths:
        keep = rng.random(d.shape) < 0.05
        samples.append(SparseDepth(np.where(keep, d, 0.0), keep))
    level = float(np.median(np.concatenate([s.data[s.valid] for s in samples])))
    init = [np.full((64, 64), level) for _ in samples]
    r = joint_refine(
        ds.images, samples, samples, ds.intrinsics,
        iters=2000, trainable={"depth"}, init_depths=init, init_tangents=[log_map(T_gt).as_vector()],
        optimizer=OptimizerState(lr=1e-2),
    )
    mean_depth = float(np.mean(ds.gt_depths))
    rmse = _rmse(r.depths, ds.gt_depths)
    rmse0 = _rmse(init, ds.gt_depths)
    ok = rmse < 0.02 * mean_depth
    detail = f"depth RMSE {rmse:.4f} m = {100 * rmse / mean_depth:.2f}% of mean depth (constant start {100 * rmse0 / mean_depth:.1f}%)"
    assert verdict(5, ok, detail)


@pytest.fixture(scope="module")
def noisy_sequence():
    ds = generate_synthetic(preset_scene("two_plane", 64, 64, 2))
    meas = [corrupt_depth(d, NoiseModel(f=0.5, sample_rate=0.07, seed=k)) for k, d in enumerate(ds.gt_depths)]
    gt = np.stack(ds.gt_depths)
    meas_rmse = _rmse(np.concatenate([m.data[m.valid] for m in meas]), np.concatenate([g[m.valid] for m, g in zip(meas, ds.gt_depths)]))
    nn_rmse = _rmse(np.stack([nearest_fill(m) for m in meas]), gt)
    return ds, meas, meas_rmse, nn_rmse


def _refine_noisy(ds, meas, weights):
    r = joint_refine(
        ds.images, meas, meas, ds.intrinsics,
        weights=weights, iters=1500, trainable={"depth", "pose", "mask"},
        optimizer=OptimizerState(lr={"depth": 1e-2, "pose": 1e-3, "mask": 1e-2}),
    )
    return _rmse(np.stack(r.depths), np.stack(ds.gt_depths))


def test_6_noise_refinement_trend(noisy_sequence):
    ds, meas, meas_rmse, nn_rmse = noisy_sequence
    rmse = _refine_noisy(ds, meas, LossWeights(1.0, 10.0, 0.01, 0.2))
    ok = rmse < meas_rmse and rmse <= 0.5 * nn_rmse
    detail = (
        f"refined RMSE {rmse:.3f} m vs noisy measurements {meas_rmse:.3f} m and nearest fill {nn_rmse:.3f} m "
        f"(ratio {rmse / nn_rmse:.2f}), weights 1,10,0.01,0.2"
    )
    assert verdict(6, ok, detail)


def test_6_default_weights_reference(noisy_sequence):
    """Same protocol with the default weights; reported, not a pass condition."""
    ds, meas, meas_rmse, nn_rmse = noisy_sequence
    rmse = _refine_noisy(ds, meas, LossWeights())
    line = f"INFO criterion 6 with default weights 1,0.1,0.1,0.2: refined RMSE {rmse:.3f} m, ratio to nearest fill {rmse / nn_rmse:.2f}"
    print(line)
    assert rmse < meas_rmse


def test_7_metric_oracles(two_plane_16):
    ds = two_plane_16
    gt = ds.gt_trajectory()
    ate, re = compute_ate(gt, gt), compute_re(gt, gt)
    rng = np.random.default_rng(7)
    from depthpose.dataio import Trajectory

    est = Trajectory(gt.timestamps, [compose(P, exp_map(0.02 * rng.normal(size=6))) for P in gt.poses])
    base = compute_ate(est, gt)
    G = random_pose(rng, max_angle=3.0, max_trans=10.0)
    moved = Trajectory(est.timestamps, [compose(G, P) for P in est.poses])
    drift = max(abs(a - b) for a, b in zip(compute_ate(moved, gt), base))
    m = depth_metrics(np.array([[2.0]]), SparseDepth.from_dense(np.array([[1.0]])))
    ok = (
        max(ate + re) < 1e-12
        and drift < 1e-9
        and m.rmse == pytest.approx(1000.0, abs=1e-9) and m.mae == pytest.approx(1000.0, abs=1e-9)
        and m.irmse == pytest.approx(500.0, abs=1e-9) and m.imae == pytest.approx(500.0, abs=1e-9)
    )
    detail = (
        f"ATE(gt,gt) {ate[0]:.1e}+-{ate[1]:.1e}, RE(gt,gt) {re[0]:.1e}+-{re[1]:.1e}, rigid-motion drift {drift:.1e}, "
        f"single pixel rmse {m.rmse:g} mm irmse {m.irmse:g} /km"
    )
    assert verdict(7, ok, detail)


def test_8_noise_statistics():
    D = np.full((100, 1000), 2.0)
    dense = corrupt_depth(D, NoiseModel(f=0.5, sample_rate=1.0, seed=8))
    std = float(dense.data.std())
    p = 0.07
    sparse = corrupt_depth(D, NoiseModel(f=0.5, sample_rate=p, seed=8))
    n = D.size
    k = int(sparse.valid.sum())
    sigma = np.sqrt(n * p * (1 - p))
    ok = abs(std - 1.0) <= 0.05 and abs(k - n * p) <= 3 * sigma
    assert verdict(8, ok, f"std {std:.4f} m over {n} samples, kept {k} of expected {n * p:.0f} +- {3 * sigma:.0f}")


def _rerun_from_manifest(path):
    """Re-run the command recorded in a manifest; True when every output hash repeats."""
    before = json.loads(path.read_text())
    assert main(before["argv"]) in (0, 1)
    after = json.loads(path.read_text())
    root = path.parent
    same_files = all(file_sha256(root / rel) == h for rel, h in before["outputs"].items())
    return before["outputs"] == after["outputs"] and same_files and len(before["outputs"]) > 0


def test_9_determinism(tmp_path):
    sim, ref, ev, gc = tmp_path / "sim", tmp_path / "ref", tmp_path / "eval", tmp_path / "gc"
    assert main(["simulate", "--width", "32", "--height", "32", "--frames", "3", "--seed", "3", "--out", str(sim)]) == 0
    assert main(["refine", "--data", str(sim), "--iters", "25", "--levels", "3", "--lr", "1e-3", "--out", str(ref)]) == 0
    assert main(["evaluate", "--pred", str(ref), "--gt", str(sim), "--out", str(ev / "metrics.json")]) == 0
    assert main(["gradcheck", "--size", "8x8", "--levels", "2", "--out", str(gc)]) == 0
    manifests = {
        "simulate": sim / "manifest.json",
        "refine": ref / "manifest.json",
        "evaluate": ev / "metrics.manifest.json",
        "gradcheck": gc / "manifest.json",
    }
    results = {name: _rerun_from_manifest(p) for name, p in manifests.items()}
    ok = all(results.values())
    assert verdict(9, ok, ", ".join(f"{k} {'identical' if v else 'DIFFERS'}" for k, v in results.items()))


def test_10_total_loss_composition(two_plane_16):
    ds = two_plane_16
    rng = np.random.default_rng(10)
    meas = [corrupt_depth(d, NoiseModel(f=0.1, sample_rate=0.3, seed=k)) for k, d in enumerate(ds.gt_depths)]
    depths = [d * np.exp(0.05 * rng.normal(size=d.shape)) for d in ds.gt_depths]
    tangents = [log_map(T).as_vector() + 0.01 * rng.normal(size=6) for T in ds.relative_gt_poses()]
    masks = [[rng.uniform(0.2, 0.9, (16 >> s, 16 >> s)) for s in range(2)] for _ in tangents]
    b, _ = sequence_loss(ds.images, meas, meas, depths, tangents, masks, ds.intrinsics, LossWeights(), 2)
    expected = 1.0 * b.supervised + 0.1 * b.photometric_masked + 0.1 * b.smoothness + 0.2 * b.mask_reg
    ok = b.total == expected and b.weights.as_tuple() == (1.0, 0.1, 0.1, 0.2) and min(b.as_row()) > 0
    assert verdict(10, ok, f"total {b.total!r} vs weighted sum {expected!r}")
