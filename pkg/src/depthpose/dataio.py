"""Datasets: TUM RGB-D ingestion, trajectory files, synthetic plane scenes, run config."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.spatial.transform import Rotation

from .exceptions import DatasetError, SceneCoverageError, TrajectoryParseError
from .geometry import CameraIntrinsics, Se3Transform, inverse, relative_transform
from .imaging import SparseDepth, pixel_grid

TUM_DEPTH_FACTOR = 5000.0
TUM_ASSOC_OFFSET = 0.02
# freiburg2 calibration, used when a directory carries no camera.json
TUM_FR2_INTRINSICS = dict(fx=520.9, fy=521.0, cx=325.1, cy=249.7, width=640, height=480)


# -- trajectories --------------------------------------------------------------------


@dataclass
class Trajectory:
    """Timestamped camera-to-world poses (TUM convention: translation is the camera position)."""

    timestamps: np.ndarray
    poses: list

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float).reshape(-1)
        if len(self.timestamps) != len(self.poses):
            raise ValueError("one timestamp per pose required")
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self):
        return len(self.poses)

    @classmethod
    def from_world_to_camera(cls, timestamps, transforms) -> Trajectory:
        return cls(timestamps, [inverse(T) for T in transforms])

    def world_to_camera(self):
        return [inverse(P) for P in self.poses]

    def positions(self) -> np.ndarray:
        return np.array([P.translation for P in self.poses]).reshape(-1, 3)


def _fmt(x):
    return f"{x + 0.0:.9g}"


def format_pose_line(timestamp, pose: Se3Transform) -> str:
    q = Rotation.from_matrix(pose.rotation).as_quat()
    if q[3] < 0:
        q = -q
    vals = list(pose.translation) + list(q)
    return f"{timestamp:.9f} " + " ".join(_fmt(v) for v in vals)


def write_trajectory(traj: Trajectory, path):
    with open(path, "w") as fh:
        fh.write("# timestamp tx ty tz qx qy qz qw\n")
        for t, P in zip(traj.timestamps, traj.poses):
            fh.write(format_pose_line(t, P) + "\n")


def parse_pose_fields(fields, lineno):
    if len(fields) != 8:
        raise TrajectoryParseError(f"expected 8 fields 'timestamp tx ty tz qx qy qz qw', got {len(fields)}", lineno)
    try:
        vals = [float(f) for f in fields]
    except ValueError as exc:
        raise TrajectoryParseError(str(exc), lineno) from None
    q = np.array(vals[4:8])
    norm = np.linalg.norm(q)
    if not np.isfinite(norm) or norm < 1e-12:
        raise TrajectoryParseError("quaternion has zero norm", lineno)
    R = Rotation.from_quat(q / norm).as_matrix()
    return vals[0], Se3Transform(R, vals[1:4])


def read_trajectory(path) -> Trajectory:
    stamps, poses = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            t, P = parse_pose_fields(line.replace(",", " ").split(), lineno)
            stamps.append(t)
            poses.append(P)
    return Trajectory(np.array(stamps), poses)


def associate(first, second, max_offset=TUM_ASSOC_OFFSET):
    """Greedy one-to-one timestamp matching, closest pairs first.

    Returns index pairs ``(i, j)`` sorted by ``i``.
    """
    first = np.asarray(first, dtype=float)
    second = np.asarray(second, dtype=float)
    cands = []
    for i, a in enumerate(first):
        lo = np.searchsorted(second, a - max_offset, side="left")
        hi = np.searchsorted(second, a + max_offset, side="right")
        for j in range(lo, hi):
            d = abs(a - second[j])
            if d <= max_offset:
                cands.append((d, i, j))
    cands.sort()
    used_i, used_j, out = set(), set(), []
    for _, i, j in cands:
        if i not in used_i and j not in used_j:
            used_i.add(i)
            used_j.add(j)
            out.append((i, j))
    return sorted(out)


# -- datasets --------------------------------------------------------------------------


@dataclass
class SequenceDataset:
    """Frames ``(timestamp, image, sparse depth, gt depth?, gt pose?)``.

    Ground-truth poses are world-to-camera transforms ``T_w_to_k``.
    """

    timestamps: np.ndarray
    images: list
    measurements: list
    intrinsics: CameraIntrinsics
    gt_depths: list | None = None
    gt_poses: list | None = None

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        n = len(self.timestamps)
        if len(self.images) != n or len(self.measurements) != n:
            raise ValueError("every frame needs an image and a depth measurement")
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        shapes = {np.shape(im)[:2] for im in self.images} | {m.shape for m in self.measurements}
        if len(shapes) > 1:
            raise ValueError(f"frames do not share one image size: {sorted(shapes)}")

    def __len__(self):
        return len(self.timestamps)

    def relative_gt_poses(self):
        """Ground-truth motions frame k -> k+1."""
        if self.gt_poses is None:
            return None
        return [relative_transform(self.gt_poses[k], self.gt_poses[k + 1]) for k in range(len(self) - 1)]

    def gt_trajectory(self) -> Trajectory | None:
        if self.gt_poses is None:
            return None
        return Trajectory.from_world_to_camera(self.timestamps, self.gt_poses)

    def with_measurements(self, measurements) -> SequenceDataset:
        return SequenceDataset(self.timestamps, self.images, list(measurements), self.intrinsics, self.gt_depths, self.gt_poses)


def _read_index(path):
    if not path.exists():
        raise DatasetError(f"missing index file {path}")
    stamps, names = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) < 2:
                raise DatasetError(f"{path}:{lineno}: expected 'timestamp filename'")
            stamps.append(float(parts[0]))
            names.append(parts[1])
    order = np.argsort(stamps, kind="stable")
    return np.asarray(stamps)[order], [names[i] for i in order]


def sidecar_path(png_path) -> Path:
    return Path(png_path).with_suffix(".npy")


def read_rgb(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=float) / 255.0
    except OSError as exc:
        raise DatasetError(f"cannot read image {path}: {exc}") from None
    return arr


def read_depth(path, factor=TUM_DEPTH_FACTOR) -> SparseDepth:
    """16-bit depth PNG (zero = invalid), or its float32 ``.npy`` sidecar if present."""
    side = sidecar_path(path)
    try:
        if side.exists():
            data = np.load(side).astype(float)
        else:
            with Image.open(path) as im:
                data = np.asarray(im, dtype=float) / factor
    except (OSError, ValueError) as exc:
        raise DatasetError(f"cannot read depth {path}: {exc}") from None
    if data.ndim != 2:
        raise DatasetError(f"depth image {path} is not single-channel")
    return SparseDepth(np.where(data > 0, data, 0.0), data > 0)


def write_depth(path, depth, valid=None, factor=TUM_DEPTH_FACTOR):
    """16-bit PNG scaled by ``factor`` plus a lossless float32 sidecar."""
    depth = np.asarray(depth, dtype=float)
    valid = np.ones(depth.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    d = np.where(valid, depth, 0.0)
    units = np.clip(np.round(d * factor), 0, 65535).astype(np.uint16)
    # a valid depth below half a unit would otherwise read back as invalid
    units[valid & (units == 0)] = 1
    Image.fromarray(units).save(path)
    np.save(sidecar_path(path), d.astype(np.float32))


def write_rgb(path, img):
    img = np.asarray(img, dtype=float)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    Image.fromarray(np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)).save(path)


def write_index(path, stamps, names, header):
    with open(path, "w") as fh:
        fh.write(f"# {header}\n# timestamp filename\n")
        for t, n in zip(stamps, names):
            fh.write(f"{t:.6f} {n}\n")


def load_tum_sequence(path, max_assoc_offset=TUM_ASSOC_OFFSET, intrinsics=None) -> SequenceDataset:
    """Load a TUM RGB-D style directory.

    Needs ``rgb.txt`` and ``depth.txt``; ``groundtruth.txt`` (camera-to-world
    poses), ``gt_depth.txt`` (dense ground-truth depth index) and
    ``camera.json`` (intrinsics) are optional.  RGB frames without a depth
    frame within ``max_assoc_offset`` seconds are dropped.
    """
    root = Path(path)
    if not root.is_dir():
        raise DatasetError(f"{root} is not a directory")
    rgb_t, rgb_f = _read_index(root / "rgb.txt")
    dep_t, dep_f = _read_index(root / "depth.txt")
    pairs = associate(rgb_t, dep_t, max_assoc_offset)
    if not pairs:
        raise DatasetError(f"no rgb/depth pairs within {max_assoc_offset} s in {root}")

    gt_traj = None
    if (root / "groundtruth.txt").exists():
        gt_traj = read_trajectory(root / "groundtruth.txt")
        pose_pairs = dict(associate(rgb_t[[i for i, _ in pairs]], gt_traj.timestamps, max_assoc_offset))
        keep = [k for k in range(len(pairs)) if k in pose_pairs]
        if not keep:
            raise DatasetError("groundtruth.txt has no pose near any associated frame")
        gt_poses = [inverse(gt_traj.poses[pose_pairs[k]]) for k in keep]
        pairs = [pairs[k] for k in keep]
    gt_depth_files = None
    if (root / "gt_depth.txt").exists():
        gd_t, gd_f = _read_index(root / "gt_depth.txt")
        gd_map = dict(associate(rgb_t[[i for i, _ in pairs]], gd_t, max_assoc_offset))
        if len(gd_map) != len(pairs):
            raise DatasetError("gt_depth.txt does not cover every associated frame")
        gt_depth_files = [gd_f[gd_map[k]] for k in range(len(pairs))]

    images = [read_rgb(root / rgb_f[i]) for i, _ in pairs]
    depths = [read_depth(root / dep_f[j]) for _, j in pairs]
    gt_depths = None
    if gt_depth_files is not None:
        gt_depths = []
        for f in gt_depth_files:
            g = read_depth(root / f)
            if not g.valid.all():
                raise DatasetError(f"ground-truth depth {f} has holes")
            gt_depths.append(g.data)
    if (root / "camera.json").exists():
        K = CameraIntrinsics(**json.loads((root / "camera.json").read_text()))
    else:
        K = intrinsics or CameraIntrinsics(**TUM_FR2_INTRINSICS)
    H, W = images[0].shape[:2]
    if (K.width, K.height) != (W, H):
        raise DatasetError(f"intrinsics are for {K.width}x{K.height} but images are {W}x{H}")
    return SequenceDataset(
        timestamps=rgb_t[[i for i, _ in pairs]],
        images=images,
        measurements=depths,
        intrinsics=K,
        gt_depths=gt_depths,
        gt_poses=gt_poses if gt_traj is not None else None,
    )


def save_tum_sequence(ds: SequenceDataset, path, measurements=None):
    """Write a dataset in the layout read by :func:`load_tum_sequence`."""
    root = Path(path)
    for sub in ("rgb", "depth", "gt_depth"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    meas = ds.measurements if measurements is None else measurements
    names_rgb, names_dep, names_gt = [], [], []
    for k, t in enumerate(ds.timestamps):
        name = f"{t:.6f}.png"
        write_rgb(root / "rgb" / name, ds.images[k])
        write_depth(root / "depth" / name, meas[k].data, meas[k].valid)
        names_rgb.append(f"rgb/{name}")
        names_dep.append(f"depth/{name}")
        if ds.gt_depths is not None:
            write_depth(root / "gt_depth" / name, ds.gt_depths[k])
            names_gt.append(f"gt_depth/{name}")
    write_index(root / "rgb.txt", ds.timestamps, names_rgb, "color images")
    write_index(root / "depth.txt", ds.timestamps, names_dep, "depth images")
    if ds.gt_depths is not None:
        write_index(root / "gt_depth.txt", ds.timestamps, names_gt, "ground-truth depth images")
    if ds.gt_poses is not None:
        write_trajectory(ds.gt_trajectory(), root / "groundtruth.txt")
    (root / "camera.json").write_text(json.dumps(ds.intrinsics.to_dict(), indent=2, sort_keys=True) + "\n")


# -- synthetic scenes ------------------------------------------------------------------

# texture frequency vectors (rad/m); incommensurate so no plane sees a
# periodic or constant pattern
TEXTURE_FREQS = np.array([[4.1, 1.3, 0.9], [-1.7, 3.7, 1.1], [2.3, -2.9, 3.1]])
TEXTURE_AMPLITUDE = 0.14


@dataclass
class Plane:
    normal: np.ndarray
    offset: float
    texture_seed: int = 0

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float).reshape(3)
        self.normal = n / np.linalg.norm(n)
        self.offset = float(self.offset) / float(np.linalg.norm(np.asarray(n)))


@dataclass
class SyntheticScene:
    planes: list
    camera_path: list  # world-to-camera transforms
    intrinsics: CameraIntrinsics
    frame_interval: float = 1.0 / 30.0


def texture(points, seed) -> np.ndarray:
    """Smooth intensity field on 3-D points, values in (0, 1)."""
    phases = np.random.default_rng(seed).uniform(0, 2 * np.pi, 3)
    s = np.sin(points @ TEXTURE_FREQS.T + phases).sum(axis=-1)
    return 0.5 + TEXTURE_AMPLITUDE * s


def raycast(scene: SyntheticScene, T_w_to_k: Se3Transform):
    """Depth and world points for every pixel; the nearest plane wins."""
    K = scene.intrinsics
    uv = pixel_grid(K.height, K.width)
    rays = np.stack([(uv[:, 0] - K.cx) / K.fx, (uv[:, 1] - K.cy) / K.fy, np.ones(len(uv))], axis=-1)
    Rt = T_w_to_k.rotation.T
    center = -(Rt @ T_w_to_k.translation)
    dirs = rays @ T_w_to_k.rotation  # world directions, camera z-component 1
    best = np.full(len(uv), np.inf)
    which = np.full(len(uv), -1)
    for i, pl in enumerate(scene.planes):
        denom = dirs @ pl.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = (pl.offset - center @ pl.normal) / denom
        hit = np.isfinite(lam) & (lam > 0) & (lam < best)
        best[hit] = lam[hit]
        which[hit] = i
    if np.any(which < 0):
        raise SceneCoverageError(f"{int(np.sum(which < 0))} rays hit no plane")
    pts = center + best[:, None] * dirs
    return best.reshape(K.height, K.width), pts, which


def render(scene: SyntheticScene, T_w_to_k: Se3Transform):
    depth, pts, which = raycast(scene, T_w_to_k)
    img = np.empty(len(pts))
    for i, pl in enumerate(scene.planes):
        sel = which == i
        img[sel] = texture(pts[sel], pl.texture_seed)
    return img.reshape(depth.shape), depth


def generate_synthetic(scene: SyntheticScene, t0=0.0) -> SequenceDataset:
    """Closed-form rendering of every camera; the measurement is the dense true depth."""
    images, depths = [], []
    for T in scene.camera_path:
        img, depth = render(scene, T)
        images.append(img)
        depths.append(depth)
    stamps = t0 + scene.frame_interval * np.arange(len(scene.camera_path))
    return SequenceDataset(
        timestamps=stamps,
        images=images,
        measurements=[SparseDepth.from_dense(d) for d in depths],
        intrinsics=scene.intrinsics,
        gt_depths=depths,
        gt_poses=list(scene.camera_path),
    )


def default_intrinsics(width=64, height=64):
    f = 0.95 * width
    return CameraIntrinsics(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)


def make_camera_path(n_frames, step_translation=(0.06, 0.01, 0.04), step_rotation=(0.0, 0.012, 0.004)):
    """Constant-velocity path; returns world-to-camera transforms."""
    from .geometry import exp_map

    step = exp_map(np.concatenate([step_rotation, step_translation]))
    poses = [Se3Transform.identity()]
    for _ in range(n_frames - 1):
        poses.append(step @ poses[-1])
    return poses


def preset_scene(name="two_plane", width=64, height=64, n_frames=2, motion_scale=1.0) -> SyntheticScene:
    """Named test scenes.

    ``two_plane``: a back wall at z = 4 m and a plane tilted about the
    vertical axis that meets it inside the image, giving a depth crease.
    ``single_plane``: the fronto-parallel wall alone, 2 m away.
    """
    K = default_intrinsics(width, height)
    path = make_camera_path(
        n_frames,
        step_translation=motion_scale * np.array([0.06, 0.01, 0.04]),
        step_rotation=motion_scale * np.array([0.0, 0.012, 0.004]),
    )
    if name == "two_plane":
        planes = [Plane([0, 0, 1], 4.0, texture_seed=1), Plane([-0.6, 0, 1], 3.0, texture_seed=1)]
    elif name == "single_plane":
        planes = [Plane([0, 0, 1], 2.0, texture_seed=1)]
    else:
        raise ValueError(f"unknown scene preset {name!r}")
    return SyntheticScene(planes, path, K)


def scene_from_dict(d) -> SyntheticScene:
    """Scene file format: ``{"intrinsics": {...}, "planes": [...], "camera_path": [...]}``.

    Camera poses are ``{"rotation": 3x3, "translation": 3}`` world-to-camera,
    or ``{"tangent": [6 values]}``.
    """
    from .geometry import exp_map

    K = CameraIntrinsics(**d["intrinsics"])
    planes = [Plane(p["normal"], p["offset"], p.get("texture_seed", i)) for i, p in enumerate(d["planes"])]
    path = []
    for c in d["camera_path"]:
        path.append(exp_map(c["tangent"]) if "tangent" in c else Se3Transform(c["rotation"], c["translation"]))
    return SyntheticScene(planes, path, K, d.get("frame_interval", 1.0 / 30.0))


# -- configuration ----------------------------------------------------------------------


@dataclass
class RunConfig:
    intrinsics: dict | None = None
    noise: dict = field(default_factory=lambda: {"f": 0.5, "sample_rate": 0.07, "seed": 0})
    weights: list = field(default_factory=lambda: [1.0, 0.1, 0.1, 0.2])
    optimizer: dict = field(
        default_factory=lambda: {"lr": 1e-4, "beta1": 0.9, "beta2": 0.999, "weight_decay": 3e-4, "epsilon": 1e-8}
    )
    n_levels: int = 4
    depth_input_scale: float = 1.0 / 15.0
    predictor: str = "direct"
    indicator: str = "unmeasured"
    iters: int = 200
    seed: int = 0

    @classmethod
    def from_dict(cls, d) -> RunConfig:
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        base = cls()
        merged = asdict(base)
        for k, v in d.items():
            if isinstance(merged.get(k), dict) and isinstance(v, dict):
                merged[k] = {**merged[k], **v}
            else:
                merged[k] = v
        return cls(**merged)

    @classmethod
    def from_json(cls, path) -> RunConfig:
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return asdict(self)


def file_sha256(path) -> str:
    import hashlib

    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def list_files(root):
    out = []
    for dirpath, _, files in os.walk(root):
        for f in files:
            out.append(Path(dirpath) / f)
    return sorted(out)
