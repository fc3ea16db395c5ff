"""Procedural ground-truth scenes, UAV-style trajectories and synthetic datasets.

A dataset directory holds ``manifest.json``, ``poses.csv`` and one
``images/<id>.pfm`` per view, plus the ground-truth field checkpoint.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .field import (EMPTY_DENSITY_PARAM, Camera, RenderConfig, VoxelField, inverse_softplus,
                    logit, render_view, save_checkpoint)
from .pfm import read_pfm, write_pfm

POSE_COLUMNS = ["id", "px", "py", "pz", "fx", "fy", "fz", "ux", "uy", "uz",
                "vfov_rad", "width", "height"]
GT_CHECKPOINT = "gt_field.vxf"

DEFAULT_PALETTE = (
    (0.85, 0.25, 0.20), (0.20, 0.55, 0.85), (0.95, 0.80, 0.20), (0.30, 0.75, 0.35),
    (0.75, 0.40, 0.80), (0.95, 0.55, 0.15), (0.15, 0.80, 0.75), (0.90, 0.90, 0.90),
)


class DatasetError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Scenes
# ---------------------------------------------------------------------------

@dataclass
class Box:
    lo: tuple
    hi: tuple
    color: tuple

    def contains(self, pts):
        return np.all((pts >= np.asarray(self.lo)) & (pts <= np.asarray(self.hi)), axis=-1)


@dataclass
class Sphere:
    center: tuple
    radius: float
    color: tuple

    def contains(self, pts):
        return np.linalg.norm(pts - np.asarray(self.center), axis=-1) <= self.radius


@dataclass
class SceneSpec:
    """Random urban-block scene: a textured ground slab plus boxes and spheres.

    ``primitives`` are voxelized after the random ones and win on overlap.
    """

    seed: int = 0
    dims: tuple = (16, 16, 16)
    lo: tuple = (-1.0, -1.0, -1.0)
    hi: tuple = (1.0, 1.0, 1.0)
    n_boxes: int = 5
    n_spheres: int = 2
    size_range: tuple = (0.2, 0.6)
    palette: tuple = DEFAULT_PALETTE
    ground: bool = True
    ground_height: float = 0.25
    ground_colors: tuple = ((0.35, 0.30, 0.25), (0.55, 0.60, 0.45))
    solid_density: float = 25.0
    primitives: list = field(default_factory=list)

    def __post_init__(self):
        if min(self.dims) < 8:
            raise ValueError("scene grids need at least 8 nodes per axis")


def _clip_box(box: Box, lo, hi) -> Box:
    blo = np.clip(box.lo, lo, hi)
    bhi = np.clip(box.hi, lo, hi)
    return Box(tuple(blo), tuple(np.maximum(bhi, blo)), box.color)


def random_primitives(spec: SceneSpec) -> list:
    rng = np.random.default_rng(spec.seed)
    lo, hi = np.asarray(spec.lo, float), np.asarray(spec.hi, float)
    floor = lo[2] + spec.ground_height * (hi[2] - lo[2]) if spec.ground else lo[2]
    prims = []
    for _ in range(spec.n_boxes):
        size = rng.uniform(*spec.size_range, size=3) * (hi - lo) / 2
        size[2] *= 1.5
        centre = rng.uniform(lo[:2] + size[:2] / 2, hi[:2] - size[:2] / 2)
        color = spec.palette[rng.integers(len(spec.palette))]
        box = Box((centre[0] - size[0] / 2, centre[1] - size[1] / 2, floor),
                  (centre[0] + size[0] / 2, centre[1] + size[1] / 2, floor + size[2]), color)
        prims.append(_clip_box(box, lo, hi))
    for _ in range(spec.n_spheres):
        radius = rng.uniform(*spec.size_range) * (hi[0] - lo[0]) / 4
        centre = rng.uniform(lo + radius, hi - radius)
        centre[2] = min(max(centre[2], floor + radius), hi[2] - radius)
        prims.append(Sphere(tuple(centre), float(radius),
                            spec.palette[rng.integers(len(spec.palette))]))
    return prims


def generate_scene(spec: SceneSpec) -> VoxelField:
    """Voxelize the scene onto the field lattice.

    Solid nodes get ``solid_density`` and the primitive colour; free nodes get
    (numerically) zero density and inherit the colour of the nearest solid
    node so interpolation does not bleed grey into surfaces.  Parameters are
    rounded to float32 so checkpoints reproduce the field exactly.
    """
    dims = tuple(int(d) for d in spec.dims)
    fld = VoxelField.empty(dims, spec.lo, spec.hi)
    nodes = fld.lo + np.stack(np.indices(dims), axis=-1) * fld.spacing
    solid = np.zeros(dims, dtype=bool)
    colors = np.zeros(dims + (3,))
    if spec.ground:
        top = fld.lo[2] + spec.ground_height * (fld.hi[2] - fld.lo[2])
        mask = nodes[..., 2] <= top
        checker = ((np.indices(dims)[0] // 2 + np.indices(dims)[1] // 2) % 2).astype(bool)
        gc = np.asarray(spec.ground_colors, dtype=np.float64)
        colors[mask] = np.where(checker[mask][:, None], gc[1], gc[0])
        solid |= mask
    for prim in random_primitives(spec) + list(spec.primitives):
        mask = prim.contains(nodes)
        colors[mask] = prim.color
        solid |= mask
    if np.any(solid):
        _, near = ndimage.distance_transform_edt(~solid, return_indices=True)
        colors = colors[near[0], near[1], near[2]]
        fld.color_params = logit(np.clip(colors, 0.02, 0.98))
        fld.density_params = np.where(solid, inverse_softplus(spec.solid_density),
                                      EMPTY_DENSITY_PARAM)
    fld.density_params = fld.density_params.astype(np.float32).astype(np.float64)
    fld.color_params = fld.color_params.astype(np.float32).astype(np.float64)
    return fld


def occupied_nodes(fld: VoxelField, threshold: float = 1.0) -> int:
    from .field import softplus
    return int(np.count_nonzero(softplus(fld.density_params) > threshold))


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------

@dataclass
class TrajectorySpec:
    kind: str = "lawnmower"
    n_views: int = 100
    altitude: float = 2.5
    radius: float = 2.5
    sweep: float = 0.0
    turns: float = 3.0
    half_extent: float = 1.8
    target: tuple = (0.0, 0.0, -0.4)
    width: int = 64
    height: int = 64
    vfov: float = math.radians(50.0)
    nadir_blend: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.nadir_blend <= 1.0:
            raise ValueError("nadir_blend must lie in [0, 1]")
        if self.kind not in ("lawnmower", "orbit", "helix"):
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if self.n_views < 8:
            raise ValueError("trajectories need at least 8 views")
        if min(self.altitude, self.radius, self.half_extent) <= 0:
            raise ValueError("trajectory parameters must be positive")


def trajectory_positions(spec: TrajectorySpec) -> np.ndarray:
    n = spec.n_views
    if spec.kind == "lawnmower":
        cols = math.ceil(math.sqrt(n))
        rows = math.ceil(n / cols)
        xs = np.linspace(-spec.half_extent, spec.half_extent, cols)
        ys = np.linspace(-spec.half_extent, spec.half_extent, rows)
        pts = []
        for r, y in enumerate(ys):
            for x in (xs if r % 2 == 0 else xs[::-1]):
                pts.append((x, y, spec.altitude))
        return np.array(pts[:n])
    angles = 2.0 * math.pi * np.arange(n) / n
    z = np.full(n, spec.altitude)
    if spec.kind == "helix":
        angles = 2.0 * math.pi * spec.turns * np.arange(n) / n
        z = spec.altitude + spec.sweep * (np.arange(n) / (n - 1) - 0.5)
    return np.stack([spec.radius * np.cos(angles), spec.radius * np.sin(angles), z], axis=1)


def look_targets(spec: TrajectorySpec, positions) -> np.ndarray:
    """Per-camera look-at points.

    Lawnmower cameras aim at the scene target shifted horizontally toward the
    point below the camera by ``nadir_blend`` (0 = common target, 1 = nadir).
    """
    tgt = np.broadcast_to(np.asarray(spec.target, dtype=np.float64), positions.shape).copy()
    if spec.kind == "lawnmower":
        tgt[:, :2] += spec.nadir_blend * (positions[:, :2] - tgt[:, :2])
    return tgt


def generate_trajectory(spec: TrajectorySpec) -> list[Camera]:
    pos = trajectory_positions(spec)
    return [Camera.look_at(p, t, spec.width, spec.height, spec.vfov)
            for p, t in zip(pos, look_targets(spec, pos))]


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    cameras: list
    images: list
    manifest: dict = field(default_factory=dict)
    root: Path | None = None

    def __len__(self):
        return len(self.cameras)

    @property
    def positions(self) -> np.ndarray:
        return np.array([c.position for c in self.cameras])

    @property
    def extent(self):
        ext = self.manifest.get("extent")
        return (tuple(ext[:3]), tuple(ext[3:])) if ext else None


def render_images(gt: VoxelField, cameras, n_samples: int = 128) -> list[np.ndarray]:
    cfg = RenderConfig(n_samples=n_samples)
    return [render_view(gt, cam, cfg).mean_image.astype(np.float32) for cam in cameras]


def write_poses(path, cameras) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POSE_COLUMNS)
        for i, c in enumerate(cameras):
            w.writerow([i, *map(repr, c.position.tolist()), *map(repr, c.forward.tolist()),
                        *map(repr, c.up.tolist()), repr(float(c.vfov)), c.width, c.height])


def read_poses(path) -> list[Camera]:
    cams = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != POSE_COLUMNS:
            raise DatasetError(f"{path}: unexpected pose columns {reader.fieldnames}")
        for row in reader:
            v = {k: float(row[k]) for k in POSE_COLUMNS[1:11]}
            cams.append(Camera((v["px"], v["py"], v["pz"]), (v["fx"], v["fy"], v["fz"]),
                               (v["ux"], v["uy"], v["uz"]), int(row["width"]),
                               int(row["height"]), v["vfov_rad"]))
    return cams


def render_dataset(gt: VoxelField, cameras, out_dir, n_samples: int = 128,
                   trajectory_kind: str = "custom", extra: dict | None = None) -> Dataset:
    """Render every camera and write the dataset layout under ``out_dir``."""
    root = Path(out_dir)
    try:
        (root / "images").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"cannot create dataset directory {root}: {exc}") from exc
    images = render_images(gt, cameras, n_samples)
    for i, img in enumerate(images):
        write_pfm(root / "images" / f"{i}.pfm", img)
    write_poses(root / "poses.csv", cameras)
    save_checkpoint(gt, root / GT_CHECKPOINT)
    manifest = {
        "n_views": len(cameras),
        "n_images": len(images),
        "image_width": cameras[0].width if cameras else 0,
        "image_height": cameras[0].height if cameras else 0,
        "extent": [*gt.lo.tolist(), *gt.hi.tolist()],
        "trajectory_kind": trajectory_kind,
        "render_samples": n_samples,
        "gt_checkpoint": GT_CHECKPOINT,
    }
    if extra:
        manifest.update(extra)
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    # re-read poses so callers see exactly what a later load_dataset returns
    return Dataset(read_poses(root / "poses.csv"), images, manifest, root)


def load_dataset(root) -> Dataset:
    root = Path(root)
    try:
        manifest = json.loads((root / "manifest.json").read_text())
    except (OSError, ValueError) as exc:
        raise DatasetError(f"cannot read manifest in {root}: {exc}") from exc
    cams = read_poses(root / "poses.csv")
    if len(cams) != manifest.get("n_views"):
        raise DatasetError(f"{root}: manifest lists {manifest.get('n_views')} views, "
                           f"poses.csv has {len(cams)}")
    images = []
    for i, cam in enumerate(cams):
        img = read_pfm(root / "images" / f"{i}.pfm")
        if img.shape != (cam.height, cam.width, 3):
            raise DatasetError(f"{root}: image {i} has shape {img.shape}")
        images.append(img)
    return Dataset(cams, images, manifest, root)


def build_dataset(scene: SceneSpec, traj: TrajectorySpec, n_samples: int = 128):
    """In-memory equivalent of ``render_dataset`` (no files).  Returns (gt, dataset)."""
    gt = generate_scene(scene)
    cams = generate_trajectory(traj)
    manifest = {"n_views": len(cams), "trajectory_kind": traj.kind,
                "extent": [*gt.lo.tolist(), *gt.hi.tolist()],
                "scene": asdict(scene) | {"primitives": []}, "trajectory": asdict(traj)}
    return gt, Dataset(cams, render_images(gt, cams, n_samples), manifest)
