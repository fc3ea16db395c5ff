"""Computational geometry kernel.

Hausdorff distance, least-squares plane fitting, planar/non-planar trajectory
classification, rasterized multiplicatively weighted Voronoi diagrams in 2D
and 3D, and threshold-bounded Voronoi cell clustering.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist


class GeometryError(ValueError):
    """Raised on empty inputs or degenerate geometry."""


def _as_points(points, name="points") -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise GeometryError(f"{name} must be a non-empty (n, d) array")
    if arr.shape[1] not in (2, 3):
        raise GeometryError(f"{name} must be 2D or 3D, got dim {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise GeometryError(f"{name} contains non-finite coordinates")
    return arr


# ---------------------------------------------------------------------------
# Hausdorff distance
# ---------------------------------------------------------------------------

def directed_hausdorff(a, b, chunk: int = 4096) -> float:
    """max over a of the distance to the nearest point of b."""
    a = _as_points(a, "a")
    b = _as_points(b, "b")
    if a.shape[1] != b.shape[1]:
        raise GeometryError("point sets differ in dimension")
    worst = 0.0
    for start in range(0, a.shape[0], chunk):
        d = cdist(a[start:start + chunk], b)
        worst = max(worst, float(d.min(axis=1).max()))
    return worst


def hausdorff(a, b) -> float:
    """Symmetric Hausdorff distance ``max(h(a, b), h(b, a))``."""
    return max(directed_hausdorff(a, b), directed_hausdorff(b, a))


# ---------------------------------------------------------------------------
# Plane fit and trajectory classification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Plane:
    """Plane ``normal . x == offset`` with a unit normal.

    ``origin`` is the centroid of the fitted points and ``basis`` holds two
    orthonormal in-plane axes (rows), used to flatten points to 2D.
    """

    normal: np.ndarray
    offset: float
    origin: np.ndarray
    basis: np.ndarray

    def signed_distance(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.normal - self.offset

    def project(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts - np.outer(self.signed_distance(pts), self.normal)

    def to_plane_coords(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return (pts - self.origin) @ self.basis.T


def fit_plane(points, rel_tol: float = 1e-9) -> Plane:
    """Least-squares plane through 3D points (total least squares via SVD)."""
    pts = _as_points(points)
    if pts.shape[1] != 3:
        raise GeometryError("fit_plane needs 3D points")
    if pts.shape[0] < 3:
        raise GeometryError("fit_plane needs at least 3 points")
    centroid = pts.mean(axis=0)
    _, s, vt = np.linalg.svd(pts - centroid, full_matrices=False)
    # collinear (or coincident) points leave the second singular value at zero
    if s[0] == 0.0 or s[1] <= rel_tol * s[0]:
        raise GeometryError("points are collinear; plane is undefined")
    normal = vt[2] / np.linalg.norm(vt[2])
    return Plane(normal=normal, offset=float(normal @ centroid), origin=centroid,
                 basis=vt[:2].copy())


class Planarity(str, enum.Enum):
    PLANAR = "planar"
    NONPLANAR = "nonplanar"


@dataclass(frozen=True)
class TrajectoryClass:
    label: Planarity
    hausdorff_value: float
    threshold_used: float
    plane: Plane | None = None
    degenerate: bool = False

    @property
    def is_planar(self) -> bool:
        return self.label is Planarity.PLANAR


def classify_trajectory(positions, eps_rel: float = 0.05) -> TrajectoryClass:
    """Label a camera trajectory planar or non-planar.

    The positions are compared against their own projection onto the
    least-squares plane; the trajectory is planar when the Hausdorff distance
    between the two sets is below ``eps_rel`` times the bounding-box diagonal.
    A degenerate (collinear) set is reported non-planar with ``degenerate``
    set.
    """
    if eps_rel <= 0:
        raise GeometryError("eps_rel must be positive")
    pts = _as_points(positions)
    if pts.shape[1] != 3 or pts.shape[0] < 3:
        raise GeometryError("classify_trajectory needs at least 3 3D positions")
    diag = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
    threshold = eps_rel * diag
    try:
        plane = fit_plane(pts)
    except GeometryError:
        return TrajectoryClass(Planarity.NONPLANAR, float("inf"), threshold, None, True)
    value = hausdorff(pts, plane.project(pts))
    label = Planarity.PLANAR if value < threshold else Planarity.NONPLANAR
    return TrajectoryClass(label, value, threshold, plane, False)


# ---------------------------------------------------------------------------
# Rasterized weighted Voronoi diagrams
# ---------------------------------------------------------------------------

@dataclass
class VoronoiDiagram:
    positions: np.ndarray
    weights: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    resolution: int
    ownership: np.ndarray
    measures: np.ndarray = field(init=False)

    def __post_init__(self):
        counts = np.bincount(self.ownership.ravel(), minlength=len(self.positions))
        self.measures = counts * self.cell_measure

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def cell_measure(self) -> float:
        return float(np.prod((self.hi - self.lo) / self.resolution))

    @property
    def bounds_measure(self) -> float:
        return float(np.prod(self.hi - self.lo))

    def adjacency(self) -> set[tuple[int, int]]:
        return region_adjacency(self.ownership)

    def to_csv(self, path) -> None:
        """Dump ``cell_x, cell_y[, cell_z], site_index`` rows."""
        names = ["cell_x", "cell_y", "cell_z"][: self.dim]
        idx = np.indices(self.ownership.shape).reshape(self.dim, -1).T
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(names + ["site_index"])
            for row, owner in zip(idx, self.ownership.ravel()):
                writer.writerow([*row.tolist(), int(owner)])


def _check_sites(positions, weights, dim, lo, hi, resolution):
    pos = _as_points(positions, "positions")
    if pos.shape[1] != dim:
        raise GeometryError(f"expected {dim}D sites, got {pos.shape[1]}D")
    w = np.ones(len(pos)) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (len(pos),):
        raise GeometryError("one weight per site is required")
    if np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise GeometryError("weights must be positive")
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    if lo.shape != (dim,) or hi.shape != (dim,) or np.any(hi <= lo):
        raise GeometryError("bounds must be a non-empty axis-aligned box")
    if np.any(pos < lo) or np.any(pos > hi):
        raise GeometryError("all sites must lie inside the bounds")
    if int(resolution) < 16:
        raise GeometryError("resolution must be at least 16")
    return pos, w, lo, hi, int(resolution)


def cell_centers(lo, hi, resolution: int) -> list[np.ndarray]:
    """Per-axis 1D arrays of raster cell centers."""
    return [lo[k] + (np.arange(resolution) + 0.5) * (hi[k] - lo[k]) / resolution
            for k in range(len(lo))]


def _scaled_sq_dist(axes: list[np.ndarray], p: np.ndarray, weight: float) -> np.ndarray:
    """``(d(x, p) / weight)^2`` on the raster, built axis-separably."""
    dim = len(axes)
    total = None
    for k in range(dim):
        shape = [1] * dim
        shape[k] = -1
        term = ((axes[k] - p[k]) ** 2).reshape(shape)
        total = term if total is None else total + term
    return total / (weight * weight)


class WeightedRaster:
    """Incremental weighted Voronoi rasterizer.

    Holds the best scaled distance and owner per raster cell for a base set
    of sites so that adding one extra site costs a single pass over the grid.
    Sites are processed in index order with strict comparison, so exact ties
    go to the lowest index.
    """

    def __init__(self, positions, weights, lo, hi, resolution: int):
        dim = np.asarray(lo).shape[0]
        self.positions, self.weights, self.lo, self.hi, self.resolution = _check_sites(
            positions, weights, dim, lo, hi, resolution)
        self.axes = cell_centers(self.lo, self.hi, self.resolution)
        shape = (self.resolution,) * dim
        self.best = np.full(shape, np.inf)
        self.owner = np.zeros(shape, dtype=np.int64)
        for i, (p, w) in enumerate(zip(self.positions, self.weights)):
            d = _scaled_sq_dist(self.axes, p, w)
            closer = d < self.best
            self.best = np.where(closer, d, self.best)
            self.owner[closer] = i

    def diagram(self) -> VoronoiDiagram:
        return VoronoiDiagram(self.positions, self.weights, self.lo, self.hi,
                              self.resolution, self.owner.copy())

    def with_site(self, position, weight: float = 1.0) -> VoronoiDiagram:
        """Diagram of the base sites plus one more site appended last."""
        p = np.asarray(position, dtype=np.float64)
        if p.shape != self.lo.shape:
            raise GeometryError("extra site has the wrong dimension")
        if np.any(p < self.lo) or np.any(p > self.hi) or weight <= 0:
            raise GeometryError("extra site must be inside bounds with positive weight")
        d = _scaled_sq_dist(self.axes, p, weight)
        owner = np.where(d < self.best, len(self.positions), self.owner)
        return VoronoiDiagram(np.vstack([self.positions, p]),
                              np.append(self.weights, weight), self.lo, self.hi,
                              self.resolution, owner)


def weighted_voronoi(positions, weights, lo, hi, resolution: int = 512) -> VoronoiDiagram:
    """Multiplicatively weighted planar Voronoi diagram on a raster.

    Each cell center ``x`` goes to ``argmin_i d(x, p_i) / weights[i]``.
    """
    if np.asarray(lo).shape != (2,):
        raise GeometryError("weighted_voronoi is 2D; use voronoi_volumes for 3D")
    return WeightedRaster(positions, weights, lo, hi, resolution).diagram()


def voronoi_volumes(positions, weights, lo, hi, resolution: int = 128) -> VoronoiDiagram:
    """3D counterpart of :func:`weighted_voronoi`; measures are volumes."""
    if np.asarray(lo).shape != (3,):
        raise GeometryError("voronoi_volumes is 3D; use weighted_voronoi for 2D")
    return WeightedRaster(positions, weights, lo, hi, resolution).diagram()


def region_adjacency(ownership: np.ndarray) -> set[tuple[int, int]]:
    """Pairs ``(i, j)``, ``i < j``, of owners sharing a raster face."""
    n = int(ownership.max()) + 1
    codes = []
    for axis in range(ownership.ndim):
        a = np.moveaxis(ownership, axis, 0)
        left, right = a[:-1].ravel(), a[1:].ravel()
        diff = left != right
        codes.append(np.unique(np.minimum(left[diff], right[diff]) * n
                               + np.maximum(left[diff], right[diff])))
    return {(int(c // n), int(c % n)) for c in np.unique(np.concatenate(codes))}


# ---------------------------------------------------------------------------
# Threshold clustering of Voronoi cells
# ---------------------------------------------------------------------------

def voronoi_cluster(diagram: VoronoiDiagram, max_volume: float) -> np.ndarray:
    """Greedy volume-bounded clustering of Voronoi cells.

    Cells are visited smallest first (ties by site index).  A visited cell
    joins the already-labelled neighbouring cluster with the smallest label
    when the merged volume stays within ``max_volume``; the remaining
    labelled neighbour clusters are then absorbed under the same bound.
    A cell that cannot join anything opens a new cluster.  Labels are
    finally renumbered 0, 1, ... in order of first appearance by site index.
    """
    if max_volume <= 0:
        raise GeometryError("max_volume must be positive")
    n = len(diagram.positions)
    vol = np.asarray(diagram.measures, dtype=np.float64)
    neighbours: list[set[int]] = [set() for _ in range(n)]
    for i, j in diagram.adjacency():
        neighbours[i].add(j)
        neighbours[j].add(i)

    label = np.full(n, -1, dtype=np.int64)
    cluster_volume: dict[int, float] = {}
    next_label = 0
    for cell in np.lexsort((np.arange(n), vol)):
        cell = int(cell)
        adjacent = sorted({int(label[k]) for k in neighbours[cell] if label[k] >= 0})
        target = None
        for lab in adjacent:
            if cluster_volume[lab] + vol[cell] <= max_volume:
                target = lab
                break
        if target is None:
            label[cell] = next_label
            cluster_volume[next_label] = vol[cell]
            next_label += 1
            continue
        label[cell] = target
        cluster_volume[target] += vol[cell]
        for lab in adjacent:
            if lab == target or lab not in cluster_volume:
                continue
            if cluster_volume[target] + cluster_volume[lab] <= max_volume:
                label[label == lab] = target
                cluster_volume[target] += cluster_volume.pop(lab)

    _, first = np.unique(label, return_index=True)
    order = label[np.sort(first)]
    remap = {int(old): new for new, old in enumerate(order)}
    return np.array([remap[int(v)] for v in label], dtype=np.int64)
