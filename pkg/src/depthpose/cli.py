"""Command-line entry point: ``depthpose {simulate,refine,evaluate,gradcheck}``.

Exit codes: 0 success, 1 verification failure (or diverged refinement),
2 input error.  Log verbosity comes from ``DEPTHPOSE_LOG_LEVEL``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import (
    RunConfig,
    Trajectory,
    _read_index,
    associate,
    file_sha256,
    generate_synthetic,
    list_files,
    load_tum_sequence,
    preset_scene,
    read_depth,
    read_trajectory,
    save_tum_sequence,
    scene_from_dict,
    write_depth,
    write_index,
    write_trajectory,
)
from .diffcore import write_loss_history
from .estimator import DepthPoseRefiner, SparseDepthSimulator
from .evaluation import EvaluationReport, avg_photometric_loss, compute_ate, compute_re, depth_metrics
from .exceptions import DepthPoseError, DivergedOptimizationError
from .geometry import CameraIntrinsics, relative_transform
from .gradcheck import format_report, run_gradcheck
from .imaging import SparseDepth
from .losses import LossWeights
from .params import save_params
from .sensorsim import aggregate_supervision

logger = logging.getLogger("depthpose")

EXIT_OK, EXIT_VERIFY, EXIT_INPUT = 0, 1, 2
LOG_ENV = "DEPTHPOSE_LOG_LEVEL"
MANIFEST = "manifest.json"


class InputError(Exception):
    pass


def _setup_logging():
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _load_config(args) -> RunConfig:
    if getattr(args, "config", None):
        try:
            return RunConfig.from_json(args.config)
        except (OSError, ValueError, TypeError) as exc:
            raise InputError(f"bad config {args.config}: {exc}") from None
    return RunConfig()


def _hashes(paths, root=None):
    out = {}
    for p in paths:
        p = Path(p)
        key = str(p.relative_to(root)) if root is not None else str(p)
        out[key] = file_sha256(p)
    return out


def write_manifest(out_dir, command, argv, config, seed, inputs, outputs=None, name=MANIFEST):
    """Record what was run and the hash of every produced file.

    ``outputs`` defaults to every file under ``out_dir``.
    """
    out_dir = Path(out_dir)
    if outputs is None:
        outputs = [p for p in list_files(out_dir) if p.name != name]
    input_files = []
    for p in inputs:
        p = Path(p)
        input_files.extend(list_files(p) if p.is_dir() else [p] if p.exists() else [])
    manifest = {
        "version": __version__,
        "command": command,
        "argv": list(argv),
        "config": config,
        "seed": seed,
        "inputs": [str(p) for p in inputs],
        "input_hashes": _hashes(input_files),
        "outputs": _hashes(outputs, out_dir),
    }
    (out_dir / name).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


# -- simulate ---------------------------------------------------------------------------


def cmd_simulate(args, cfg: RunConfig):
    noise = dict(cfg.noise)
    for key, val in (("f", args.noise_f), ("sample_rate", args.sample_rate), ("seed", args.seed)):
        if val is not None:
            noise[key] = val
    if args.scene.endswith(".json") or Path(args.scene).is_file():
        try:
            scene = scene_from_dict(json.loads(Path(args.scene).read_text()))
        except (OSError, KeyError, ValueError, TypeError) as exc:
            raise InputError(f"bad scene file {args.scene}: {exc}") from None
    else:
        try:
            scene = preset_scene(args.scene, args.width, args.height, args.frames)
        except ValueError as exc:
            raise InputError(str(exc)) from None
    ds = generate_synthetic(scene)
    try:
        sim = SparseDepthSimulator(noise["f"], noise["sample_rate"], int(noise["seed"])).fit(ds.gt_depths)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    meas = sim.transform(ds.gt_depths)
    out = Path(args.out)
    save_tum_sequence(ds, out, meas)
    cfg.noise = noise
    cfg.intrinsics = ds.intrinsics.to_dict()
    logger.info("wrote %d frames to %s", len(ds), out)
    return {"out": out, "seed": int(noise["seed"]), "inputs": [args.scene] if Path(args.scene).is_file() else []}


# -- refine ------------------------------------------------------------------------------


def _parse_weights(text):
    try:
        return LossWeights.parse(text)
    except ValueError as exc:
        raise InputError(f"bad --weights {text!r}: {exc}") from None


def write_prediction(out, timestamps, depths, trajectory):
    out = Path(out)
    (out / "depth").mkdir(parents=True, exist_ok=True)
    names = []
    for t, d in zip(timestamps, depths):
        name = f"depth/{t:.6f}.png"
        write_depth(out / name, d)
        names.append(name)
    write_index(out / "depth.txt", timestamps, names, "refined depth")
    write_trajectory(trajectory, out / "trajectory.txt")


def cmd_refine(args, cfg: RunConfig):
    if args.iters is not None:
        cfg.iters = args.iters
    if args.predictor is not None:
        cfg.predictor = args.predictor
    if args.seed is not None:
        cfg.seed = args.seed
    if args.levels is not None:
        cfg.n_levels = args.levels
    if args.lr is not None:
        cfg.optimizer = {**cfg.optimizer, "lr": args.lr}
    w = _parse_weights(args.weights) if args.weights is not None else LossWeights(*cfg.weights)
    cfg.weights = list(w.as_tuple())
    if not isinstance(cfg.iters, int) or cfg.iters < 1:
        raise InputError(f"--iters must be >= 1, got {cfg.iters}")
    if cfg.predictor not in ("direct", "toycnn"):
        raise InputError(f"unknown predictor {cfg.predictor!r}")
    try:
        ds = load_tum_sequence(args.data, intrinsics=CameraIntrinsics(**cfg.intrinsics) if cfg.intrinsics else None)
    except DepthPoseError as exc:
        raise InputError(str(exc)) from None
    if len(ds) < 2:
        raise InputError("refinement needs at least two frames")
    supervision = None
    if args.semi_dense:
        if ds.gt_poses is None:
            raise InputError("--semi-dense needs groundtruth.txt poses")
        frames = list(zip(ds.measurements, ds.gt_poses))
        supervision = [aggregate_supervision(frames, k, ds.intrinsics) for k in range(len(ds))]
    opt = cfg.optimizer
    est = DepthPoseRefiner(
        predictor=cfg.predictor,
        weights=w,
        n_levels=cfg.n_levels,
        iters=cfg.iters,
        lr=opt.get("lr", 1e-4),
        weight_decay=opt.get("weight_decay", 3e-4),
        beta1=opt.get("beta1", 0.9),
        beta2=opt.get("beta2", 0.999),
        epsilon=opt.get("epsilon", 1e-8),
        indicator=cfg.indicator,
        depth_input_scale=cfg.depth_input_scale,
        seed=cfg.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        est.fit(ds, supervision)
    except DivergedOptimizationError as exc:
        write_loss_history(getattr(exc, "history", []), out / "loss_history.csv")
        raise
    first = ds.gt_poses[0] if ds.gt_poses is not None else None
    traj = Trajectory.from_world_to_camera(ds.timestamps, est.world_to_camera(first))
    write_prediction(out, ds.timestamps, est.predict(), traj)
    write_loss_history(est.history_ + [est.result_.final], out / "loss_history.csv")
    save_params(est.result_.params, out / "params.bin")
    print(f"initial total {est.history_[0].total:.6g} final total {est.result_.final.total:.6g}")
    return {"out": out, "seed": cfg.seed, "inputs": [args.data]}


# -- evaluate ----------------------------------------------------------------------------


def load_prediction(path):
    """Refined depth maps and trajectory written by ``refine``."""
    root = Path(path)
    try:
        stamps, names = _read_index(root / "depth.txt")
        depths = [read_depth(root / n).data for n in names]
        traj = read_trajectory(root / "trajectory.txt")
    except (DepthPoseError, OSError) as exc:
        raise InputError(f"cannot load prediction from {root}: {exc}") from None
    return stamps, depths, traj


def evaluate_dirs(pred_dir, gt_dir) -> EvaluationReport:
    stamps, depths, traj = load_prediction(pred_dir)
    try:
        gt = load_tum_sequence(gt_dir)
    except DepthPoseError as exc:
        raise InputError(str(exc)) from None
    if gt.gt_depths is None or gt.gt_poses is None:
        raise InputError(f"{gt_dir} has no ground-truth depth or poses")
    pairs = associate(stamps, gt.timestamps)
    if len(pairs) < 2:
        raise InputError("fewer than two predicted frames match the ground truth")
    pred_stack = np.concatenate([depths[i] for i, _ in pairs])
    gt_stack = np.concatenate([gt.gt_depths[j] for _, j in pairs])
    dm = depth_metrics(pred_stack, SparseDepth.from_dense(gt_stack))
    gt_traj = gt.gt_trajectory()
    ate = compute_ate(traj, gt_traj)
    re = compute_re(traj, gt_traj)
    # photometric consistency of the prediction on the ground-truth images
    w2c = traj.world_to_camera()
    pose_at = dict(associate(stamps, traj.timestamps))
    rel = []
    for (i0, _), (i1, _) in zip(pairs[:-1], pairs[1:]):
        rel.append(relative_transform(w2c[pose_at[i0]], w2c[pose_at[i1]]))
    pho = avg_photometric_loss([gt.images[j] for _, j in pairs], [depths[i] for i, _ in pairs], rel, gt.intrinsics)
    d = dm.to_dict()
    return EvaluationReport(
        rmse_mm=d["rmse_mm"],
        mae_mm=d["mae_mm"],
        irmse_1perkm=d["irmse_1perkm"],
        imae_1perkm=d["imae_1perkm"],
        ate_m_mean=ate[0],
        ate_m_std=ate[1],
        re_mean=re[0],
        re_std=re[1],
        photometric=pho,
    )


def cmd_evaluate(args, cfg: RunConfig):
    report = evaluate_dirs(args.pred, args.gt)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    print(json.dumps(report.to_dict(), sort_keys=True))
    return {
        "out": out.parent,
        "seed": cfg.seed,
        "inputs": [args.pred, args.gt],
        "outputs": [out],
        "name": f"{out.stem}.manifest.json",
    }


# -- gradcheck ---------------------------------------------------------------------------


def _parse_size(text):
    try:
        h, w = (int(x) for x in text.lower().split("x"))
    except ValueError:
        raise InputError(f"--size must look like 16x16, got {text!r}") from None
    if h < 4 or w < 4:
        raise InputError("--size must be at least 4x4")
    return h, w


def cmd_gradcheck(args, cfg: RunConfig):
    size = _parse_size(args.size)
    if args.levels < 1 or min(size) < 2 ** args.levels:
        raise InputError(f"{args.levels} levels do not fit a {args.size} image")
    t0 = time.perf_counter()
    passed, results = run_gradcheck(size, args.levels, args.seed, planted_bug=args.planted_bug)
    lines = format_report(results)
    lines.append(f"{'PASS' if passed else 'FAIL'} gradcheck ({time.perf_counter() - t0:.1f} s)")
    print("\n".join(lines))
    out = None
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        # timing is left out of the file so reruns are byte-identical
        (out / "gradcheck_report.txt").write_text("\n".join(lines[:-1]) + f"\n{'PASS' if passed else 'FAIL'} gradcheck\n")
    return {"out": out, "seed": args.seed, "inputs": [], "verified": passed}


# -- parser ----------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="depthpose", description="Joint depth and ego-motion refinement toolkit.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="render a synthetic sequence with sparse noisy depth")
    s.add_argument("--scene", default="two_plane", help="preset name (two_plane, single_plane) or scene JSON file")
    s.add_argument("--width", type=int, default=64)
    s.add_argument("--height", type=int, default=64)
    s.add_argument("--frames", type=int, default=3)
    s.add_argument("--noise-f", type=float, default=None)
    s.add_argument("--sample-rate", type=float, default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("refine", help="jointly refine depth and poses of a sequence")
    r.add_argument("--data", required=True, help="TUM-layout sequence directory")
    r.add_argument("--predictor", choices=("direct", "toycnn"), default=None)
    r.add_argument("--iters", type=int, default=None)
    r.add_argument("--weights", default=None, help="alpha,beta,gamma,theta (default 1.0,0.1,0.1,0.2)")
    r.add_argument("--lr", type=float, default=None)
    r.add_argument("--levels", type=int, default=None)
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--semi-dense", action="store_true", help="supervise with measurements splatted from all frames")
    r.add_argument("--out", required=True)
    r.add_argument("--config")
    r.set_defaults(func=cmd_refine)

    e = sub.add_parser("evaluate", help="score a refined prediction against ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--out", required=True, help="metrics JSON path")
    e.add_argument("--config")
    e.set_defaults(func=cmd_evaluate)

    g = sub.add_parser("gradcheck", help="finite-difference check of every loss and predictor")
    g.add_argument("--size", default="16x16")
    g.add_argument("--levels", type=int, default=2)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--planted-bug", action="store_true", help="scale analytic gradients by 1.01 (must fail)")
    g.add_argument("--out", default=None, help="optional directory for the report and manifest")
    g.add_argument("--config")
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        cfg = _load_config(args)
        res = args.func(args, cfg)
    except (InputError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DivergedOptimizationError as exc:
        print(f"error: optimization diverged: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except DepthPoseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if res["out"] is not None:
        write_manifest(
            res["out"], args.command, argv, cfg.to_dict(), res["seed"], res["inputs"],
            res.get("outputs"), res.get("name", MANIFEST),
        )
    return EXIT_OK if res.get("verified", True) else EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
