"""Rendering, positional and hybrid uncertainty scores for candidate views."""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import geom
from .field import Camera, RenderConfig, VoxelField, render_rays

VARIANCE_FLOOR = 1e-4
LOG_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# Rendering uncertainty
# ---------------------------------------------------------------------------

def ray_terms(mean, variance, target, variance_floor: float = VARIANCE_FLOOR) -> np.ndarray:
    """Per-ray ``||C - C_bar||^2 / (2 var) + log(var) / 2`` with a floored variance."""
    var = np.maximum(np.asarray(variance, dtype=np.float64), variance_floor)
    resid = np.sum((np.asarray(target, np.float64) - np.asarray(mean, np.float64)) ** 2, axis=-1)
    return resid / (2.0 * var) + 0.5 * np.log(var)


def sample_ray_ids(n_rays: int, fraction: float, seed: int) -> np.ndarray:
    if not 0.0 < fraction <= 1.0:
        raise ValueError("ray fraction must lie in (0, 1]")
    if fraction == 1.0:
        return np.arange(n_rays)
    k = max(1, int(round(fraction * n_rays)))
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n_rays, size=k, replace=False))


def rendering_uncertainty(fld: VoxelField, camera: Camera, gt_image, fraction: float = 0.25,
                          cfg: RenderConfig = RenderConfig(), seed: int = 0,
                          variance_floor: float = VARIANCE_FLOOR, table=None) -> float:
    """Image-level rendering uncertainty summed over all ``N_r`` rays.

    With ``fraction < 1`` a seeded pixel subset is rendered and the mean
    per-ray term is scaled back up to ``N_r``.
    """
    gt = np.asarray(gt_image, dtype=np.float64)
    if gt.shape != (camera.height, camera.width, 3):
        raise ValueError("ground-truth image does not match camera size")
    origins, dirs = camera.rays()
    ids = sample_ray_ids(len(origins), fraction, seed)
    out = render_rays(fld, origins[ids], dirs[ids], cfg, table=table)
    terms = ray_terms(out.mean, out.variance, gt.reshape(-1, 3)[ids], variance_floor)
    return float(terms.sum() * len(origins) / len(ids))


# ---------------------------------------------------------------------------
# Positional uncertainty
# ---------------------------------------------------------------------------

@dataclass
class PositionalContext:
    """Geometry shared by every candidate in one scoring round.

    ``lo``/``hi`` bound the working space: plane coordinates for planar
    trajectories, world coordinates otherwise.  ``weights`` are the
    per-training-site weights; candidates get ``candidate_weight``.
    """

    trajectory: geom.TrajectoryClass
    train_positions: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    weights: np.ndarray | None = None
    candidate_weight: float = 1.0
    resolution_2d: int = 512
    resolution_3d: int = 128
    candidate_cell_only: bool = False
    cluster_max_volume: float | None = None
    _raster: geom.WeightedRaster | None = field(default=None, repr=False)

    def __post_init__(self):
        self.train_positions = np.atleast_2d(np.asarray(self.train_positions, dtype=np.float64))
        self.lo = np.asarray(self.lo, dtype=np.float64)
        self.hi = np.asarray(self.hi, dtype=np.float64)
        if self.weights is None:
            self.weights = np.ones(len(self.train_positions))
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if np.any(self.weights <= 0) or self.candidate_weight <= 0:
            raise ValueError("site weights must be positive")

    @property
    def planar(self) -> bool:
        return self.trajectory.is_planar

    def to_working(self, positions) -> np.ndarray:
        """World positions mapped into the working space of this context."""
        pts = np.atleast_2d(np.asarray(positions, dtype=np.float64))
        if self.planar:
            return self.trajectory.plane.to_plane_coords(pts)
        return pts

    @property
    def raster(self) -> geom.WeightedRaster:
        if self._raster is None:
            res = self.resolution_2d if self.planar else self.resolution_3d
            self._raster = geom.WeightedRaster(self.to_working(self.train_positions),
                                               self.weights, self.lo, self.hi, res)
        return self._raster


def build_context(train_positions, all_positions, eps_rel: float = 0.05,
                  margin: float = 0.1, weights=None, trajectory=None,
                  **kwargs) -> PositionalContext:
    """Classify the whole trajectory and size the working box around all poses.

    The box is the bounding box of every dataset position (in working
    coordinates) grown by ``margin`` of its largest side on each face.
    """
    all_pos = np.asarray(all_positions, dtype=np.float64)
    traj = trajectory if trajectory is not None else geom.classify_trajectory(all_pos, eps_rel)
    work = traj.plane.to_plane_coords(all_pos) if traj.is_planar else all_pos
    lo, hi = work.min(axis=0), work.max(axis=0)
    pad = margin * max(float(np.max(hi - lo)), 1e-6)
    return PositionalContext(traj, train_positions, lo - pad, hi + pad, weights, **kwargs)


def _is_duplicate(ctx: PositionalContext, cand) -> bool:
    scale = float(np.max(ctx.hi - ctx.lo))
    d = np.linalg.norm(ctx.to_working(ctx.train_positions) - cand, axis=1)
    return bool(np.any(d <= 1e-9 * scale))


def _diagram_with(ctx: PositionalContext, cand) -> geom.VoronoiDiagram:
    return ctx.raster.with_site(cand, ctx.candidate_weight)


def planar_score(positions, weights, areas, candidate_index=None) -> float:
    """Sum over sites of (sum_j ||p_i - p_j||^w_i) / A_i.

    With ``candidate_index`` only that site's term is returned.
    """
    pos = np.asarray(positions, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
    spread = np.sum(dist ** w[:, None], axis=1)
    # 0 ** w is 0 for the i == j term, as intended
    terms = spread / np.asarray(areas, dtype=np.float64)
    return float(terms[candidate_index] if candidate_index is not None else terms.sum())


def nonplanar_score(weights, volumes, candidate_index=None) -> float:
    """Importance / relative-density score over Voronoi cells."""
    w = np.asarray(weights, dtype=np.float64)
    v = np.asarray(volumes, dtype=np.float64)
    g = w * v / np.sum(w * v)
    r = (1.0 / v) / np.sum(1.0 / v)
    terms = -np.log(np.maximum(g, LOG_FLOOR)) * r + w * (g - r) ** 2
    return float(terms[candidate_index] if candidate_index is not None else terms.sum())


def _measures(diagram: geom.VoronoiDiagram) -> np.ndarray:
    # a site that owns no raster cell is given one cell quantum
    return np.maximum(diagram.measures, diagram.cell_measure)


def planar_positional(ctx: PositionalContext, candidate) -> float:
    """Planar positional score for a candidate given in plane coordinates."""
    if not ctx.planar:
        raise ValueError("planar_positional needs a planar trajectory context")
    cand = np.asarray(candidate, dtype=np.float64).reshape(-1)
    if _is_duplicate(ctx, cand):
        return 0.0
    diagram = _diagram_with(ctx, cand)
    idx = len(diagram.positions) - 1 if ctx.candidate_cell_only else None
    return planar_score(diagram.positions, diagram.weights, _measures(diagram), idx)


def cluster_weights(diagram: geom.VoronoiDiagram, max_volume: float) -> np.ndarray:
    """Site weights scaled by the size of the Voronoi cluster each site falls in."""
    labels = geom.voronoi_cluster(diagram, max_volume)
    sizes = np.bincount(labels)
    return diagram.weights * sizes[labels]


def nonplanar_positional(ctx: PositionalContext, candidate) -> float:
    """Non-planar positional score for a candidate in world coordinates."""
    if ctx.planar:
        raise ValueError("nonplanar_positional needs a non-planar trajectory context")
    cand = np.asarray(candidate, dtype=np.float64).reshape(-1)
    if _is_duplicate(ctx, cand):
        return 0.0
    diagram = _diagram_with(ctx, cand)
    weights = diagram.weights
    if ctx.cluster_max_volume is not None:
        weights = cluster_weights(diagram, ctx.cluster_max_volume)
    idx = len(diagram.positions) - 1 if ctx.candidate_cell_only else None
    return nonplanar_score(weights, _measures(diagram), idx)


def positional_uncertainty(ctx: PositionalContext, candidate_world) -> float:
    """Dispatch on the trajectory label; exactly one branch is evaluated."""
    cand = ctx.to_working(candidate_world)[0]
    if ctx.planar:
        return planar_positional(ctx, cand)
    return nonplanar_positional(ctx, cand)


# ---------------------------------------------------------------------------
# Hybrid score
# ---------------------------------------------------------------------------

def minmax(values) -> np.ndarray:
    """Min-max normalisation to [0, 1]; a constant vector maps to 0.5."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.full_like(v, 0.5)
    return (v - lo) / (hi - lo)


@dataclass
class CandidateScore:
    view_id: int
    sigma_rgb2: float
    sigma_pos2: float
    norm_rgb: float
    norm_pos: float

    @property
    def hybrid(self) -> float:
        return self.norm_pos + self.norm_rgb


@dataclass
class ScoreConfig:
    ray_fraction: float = 0.25
    variance_floor: float = VARIANCE_FLOOR
    seed: int = 0
    render: RenderConfig = field(default_factory=RenderConfig)
    workers: int = 1


def combine(view_ids, sigma_rgb2, sigma_pos2) -> list[CandidateScore]:
    nr, npos = minmax(sigma_rgb2), minmax(sigma_pos2)
    return [CandidateScore(int(v), float(a), float(b), float(x), float(y))
            for v, a, b, x, y in zip(view_ids, sigma_rgb2, sigma_pos2, nr, npos)]


def hybrid_scores(fld: VoxelField, ctx: PositionalContext, candidates,
                  cfg: ScoreConfig = ScoreConfig(), components=("rgb", "pos")) -> list[CandidateScore]:
    """Score ``(view_id, camera, gt_image)`` candidates.

    Components left out of ``components`` are reported as 0 and skipped.
    The ray subset for each view is seeded by ``cfg.seed`` and the view id.
    """
    if not candidates:
        raise ValueError("at least one candidate is required")
    table = fld.decoded_table() if "rgb" in components else None

    def score(item):
        view_id, cam, img = item
        rgb = (rendering_uncertainty(fld, cam, img, cfg.ray_fraction, cfg.render,
                                     seed=cfg.seed * 100003 + int(view_id),
                                     variance_floor=cfg.variance_floor, table=table)
               if "rgb" in components else 0.0)
        pos = positional_uncertainty(ctx, cam.position) if "pos" in components else 0.0
        return rgb, pos

    if cfg.workers > 1:
        if ctx is not None and "pos" in components:
            ctx.raster  # build the shared raster once, before the threads start
        with ThreadPoolExecutor(cfg.workers) as pool:
            raw = list(pool.map(score, candidates))
    else:
        raw = [score(c) for c in candidates]
    return combine([c[0] for c in candidates], [r[0] for r in raw], [r[1] for r in raw])


def best(scores: list[CandidateScore], key=lambda s: s.hybrid) -> CandidateScore:
    """Highest ``key``; ties go to the lowest view id."""
    return min(scores, key=lambda s: (-key(s), s.view_id))


SCORE_COLUMNS = ["view_id", "sigma_rgb2", "sigma_pos2", "norm_rgb", "norm_pos", "hybrid", "selected"]


def write_scores(path, scores: list[CandidateScore], selected_id: int | None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCORE_COLUMNS)
        for s in scores:
            w.writerow([s.view_id, repr(s.sigma_rgb2), repr(s.sigma_pos2), repr(s.norm_rgb),
                        repr(s.norm_pos), repr(s.hybrid), int(s.view_id == selected_id)])
