"""Incremental view selection loop and baselines.

One run: split the dataset, train on the initial views, then repeatedly
score every candidate, move the best one into the training set and retrain
(warm start), recording test metrics after each addition.
"""

from __future__ import annotations

import csv
import enum
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics
from .field import (NumericError, OptimizerState, RenderConfig, TrainConfig, VoxelField,
                    render_view, train)
from .scenegen import Dataset
from .uncertainty import (PositionalContext, ScoreConfig, best, build_context, combine,
                          hybrid_scores, minmax, rendering_uncertainty)


class SplitError(ValueError):
    pass


class ExhaustedError(RuntimeError):
    pass


class Strategy(str, enum.Enum):
    HYBRID = "hybrid"
    RENDERING_ONLY = "rgb"
    POSITIONAL_ONLY = "pos"
    RANDOM = "random"
    FVS = "fvs"


@dataclass
class RoundRecord:
    round: int
    selected_id: int
    psnr: float
    ssim: float
    sigma_rgb2: float | None
    sigma_pos2: float | None
    hybrid: float | None
    wall_ms: float | None = None


TRACE_COLUMNS = ["round", "selected_id", "psnr", "ssim", "sigma_rgb2", "sigma_pos2",
                 "hybrid", "wall_ms"]


@dataclass
class SelectionState:
    dataset: Dataset
    train_ids: list
    candidate_ids: list
    test_ids: list
    field: VoxelField
    round: int = 0
    trace: list = field(default_factory=list)
    initial_psnr: float | None = None
    initial_ssim: float | None = None
    optimizer: OptimizerState = field(default_factory=OptimizerState)
    last_scores: list = field(default_factory=list)
    rng: np.random.Generator | None = None

    @property
    def n_views(self) -> int:
        return len(self.dataset)

    def check_partition(self) -> None:
        tr, ca, te = set(self.train_ids), set(self.candidate_ids), set(self.test_ids)
        if tr & ca or tr & te or ca & te or len(tr | ca | te) != self.n_views:
            raise AssertionError("train/candidate/test ids do not partition the dataset")


def split_sizes(n: int, init_frac: float, test_frac: float, min_init: int) -> tuple[int, int]:
    """``(n_train, n_test)`` for a dataset of ``n`` views."""
    if not (0 < init_frac < 1 and 0 < test_frac < 1 and init_frac + test_frac < 1):
        raise SplitError("init_frac and test_frac must be in (0, 1) and sum below 1")
    def sizes(m):
        n_test = max(1, math.ceil(test_frac * m))
        n_train = max(math.ceil(init_frac * m), min(min_init, m - n_test - 1))
        return n_train, n_test

    n_train, n_test = sizes(n)
    if n < min_init + 2 or n_train + n_test + 1 > n:
        n_min = next(m for m in range(min_init + 2, 100 * (min_init + 2))
                     if sum(sizes(m)) + 1 <= m)
        raise SplitError(f"dataset of {n} views is too small; need at least {n_min}")
    return n_train, n_test


def init_split(dataset: Dataset, init_frac: float = 0.15, test_frac: float = 0.10,
               min_init: int = 20, seed: int = 0, fld: VoxelField | None = None,
               grid_dims=(16, 16, 16)) -> SelectionState:
    """Uniformly random disjoint train / candidate / test split."""
    n = len(dataset)
    n_train, n_test = split_sizes(n, init_frac, test_frac, min_init)
    perm = np.random.default_rng(seed).permutation(n)
    test = sorted(int(i) for i in perm[:n_test])
    train_ids = sorted(int(i) for i in perm[n_test:n_test + n_train])
    cands = sorted(int(i) for i in perm[n_test + n_train:])
    if fld is None:
        lo, hi = dataset.extent or ((-1, -1, -1), (1, 1, 1))
        fld = VoxelField.random(grid_dims, lo, hi, seed=seed)
    return SelectionState(dataset, train_ids, cands, test, fld,
                          rng=np.random.default_rng([seed, 7]))


@dataclass
class PlannerConfig:
    budget_frac: float = 0.15
    psnr_target: float | None = None
    init_iterations: int = 400
    round_iterations: int = 60
    train: TrainConfig = field(default_factory=lambda: TrainConfig(batch_rays=512))
    score: ScoreConfig = field(default_factory=ScoreConfig)
    eval_render: RenderConfig = field(default_factory=RenderConfig)
    eps_rel: float = 0.05
    resolution_2d: int = 512
    resolution_3d: int = 128
    candidate_cell_only: bool = False
    weight_mode: str = "unit"
    seed: int = 0
    record_time: bool = False


def positional_context(state: SelectionState, cfg: PlannerConfig,
                       weights=None) -> PositionalContext:
    pos = state.dataset.positions
    return build_context(pos[state.train_ids], pos, cfg.eps_rel, weights=weights,
                         resolution_2d=cfg.resolution_2d, resolution_3d=cfg.resolution_3d,
                         candidate_cell_only=cfg.candidate_cell_only)


def _train_weights(state: SelectionState, cfg: PlannerConfig, score_cfg: ScoreConfig):
    if cfg.weight_mode == "unit":
        return None
    if cfg.weight_mode != "uncertainty":
        raise ValueError(f"unknown weight mode {cfg.weight_mode!r}")
    table = state.field.decoded_table()
    ds = state.dataset
    raw = [rendering_uncertainty(state.field, ds.cameras[i], ds.images[i], score_cfg.ray_fraction,
                                 score_cfg.render, seed=score_cfg.seed + i, table=table)
           for i in state.train_ids]
    return np.clip(minmax(raw), 0.05, 1.0)


def select_next(state: SelectionState, strategy: Strategy, cfg: PlannerConfig = PlannerConfig()):
    """Pick the next view id; also returns the candidate scores (may be empty)."""
    strategy = Strategy(strategy)
    if not state.candidate_ids:
        raise ExhaustedError("no candidate views left")
    ds = state.dataset
    cands = state.candidate_ids
    if strategy is Strategy.RANDOM:
        rng = state.rng if state.rng is not None else np.random.default_rng(cfg.seed)
        return int(cands[int(rng.integers(len(cands)))]), []
    if strategy is Strategy.FVS:
        pos = ds.positions
        d = np.linalg.norm(pos[cands][:, None, :] - pos[state.train_ids][None, :, :], axis=-1)
        far = d.min(axis=1)
        # argmax returns the first maximum; candidate ids are sorted ascending
        return int(cands[int(np.argmax(far))]), []

    score_cfg = replace(cfg.score, seed=cfg.seed * 1000 + state.round)
    components = {Strategy.HYBRID: ("rgb", "pos"), Strategy.RENDERING_ONLY: ("rgb",),
                  Strategy.POSITIONAL_ONLY: ("pos",)}[strategy]
    ctx = positional_context(state, cfg, _train_weights(state, cfg, score_cfg)) \
        if "pos" in components else None
    items = [(i, ds.cameras[i], ds.images[i]) for i in cands]
    scores = hybrid_scores(state.field, ctx, items, score_cfg, components)
    key = {Strategy.HYBRID: lambda s: s.hybrid,
           Strategy.RENDERING_ONLY: lambda s: s.sigma_rgb2,
           Strategy.POSITIONAL_ONLY: lambda s: s.sigma_pos2}[strategy]
    return best(scores, key).view_id, scores


def evaluate(fld: VoxelField, dataset: Dataset, ids, cfg: RenderConfig = RenderConfig()):
    """Mean PSNR and SSIM over ``ids``."""
    ps, ss = [], []
    for i in ids:
        img = render_view(fld, dataset.cameras[i], cfg).mean_image
        ps.append(metrics.psnr(img, dataset.images[i]))
        ss.append(metrics.ssim(img, dataset.images[i]))
    return float(np.mean(ps)), float(np.mean(ss))


class _RayCache:
    def __init__(self, dataset: Dataset):
        self.dataset = dataset
        self._rays = {}

    def get(self, ids):
        parts = []
        for i in ids:
            if i not in self._rays:
                o, d = self.dataset.cameras[i].rays()
                self._rays[i] = (o, d, np.asarray(self.dataset.images[i], np.float64).reshape(-1, 3))
            parts.append(self._rays[i])
        return tuple(np.concatenate([p[k] for p in parts]) for k in range(3))


def _retrain(state: SelectionState, cfg: PlannerConfig, iterations: int, cache: _RayCache):
    tcfg = replace(cfg.train, iterations=iterations,
                   seed=int(np.random.default_rng([cfg.seed, state.round, 11]).integers(2**31)))
    return train(state.field, None, tcfg, state.optimizer, rays=cache.get(state.train_ids))


def budget_count(n_views: int, budget_frac: float) -> int:
    if budget_frac <= 0:
        raise ValueError("budget_frac must be positive")
    return math.ceil(budget_frac * n_views)


def run_incremental(state: SelectionState, strategy: Strategy, cfg: PlannerConfig = PlannerConfig(),
                    on_round=None) -> SelectionState:
    """Train, then select-and-retrain until the budget or the PSNR target is reached.

    ``on_round(state, record, scores)`` is called after every selection.
    A training divergence propagates with the partial trace left on ``state``.
    """
    strategy = Strategy(strategy)
    cache = _RayCache(state.dataset)
    budget = min(budget_count(state.n_views, cfg.budget_frac), len(state.candidate_ids))
    if state.round == 0 and state.initial_psnr is None:
        _retrain(state, cfg, cfg.init_iterations, cache)
        state.initial_psnr, state.initial_ssim = evaluate(state.field, state.dataset,
                                                          state.test_ids, cfg.eval_render)
    psnr = state.trace[-1].psnr if state.trace else state.initial_psnr
    while len(state.trace) < budget:
        if cfg.psnr_target is not None and psnr >= cfg.psnr_target:
            break
        t0 = time.perf_counter()
        chosen, scores = select_next(state, strategy, cfg)
        if chosen not in state.candidate_ids:
            raise AssertionError("selected view is not a candidate")
        state.candidate_ids.remove(chosen)
        state.train_ids = sorted(state.train_ids + [chosen])
        state.round += 1
        _retrain(state, cfg, cfg.round_iterations, cache)
        psnr, ssim = evaluate(state.field, state.dataset, state.test_ids, cfg.eval_render)
        pick = next((s for s in scores if s.view_id == chosen), None)
        rec = RoundRecord(state.round, chosen, psnr, ssim,
                          pick.sigma_rgb2 if pick else None,
                          pick.sigma_pos2 if pick else None,
                          pick.hybrid if pick else None,
                          (time.perf_counter() - t0) * 1e3 if cfg.record_time else None)
        state.trace.append(rec)
        state.last_scores = scores
        if on_round is not None:
            on_round(state, rec, scores)
    return state


def _fmt(v):
    return "" if v is None else repr(float(v)) if isinstance(v, float) else str(v)


def write_trace(path, trace) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in trace:
            w.writerow([_fmt(getattr(r, c)) for c in TRACE_COLUMNS])


def read_trace(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TRACE_COLUMNS:
            raise ValueError(f"{path}: trace columns {reader.fieldnames} != {TRACE_COLUMNS}")
        return list(reader)


__all__ = ["Strategy", "SelectionState", "PlannerConfig", "RoundRecord", "init_split",
           "select_next", "run_incremental", "evaluate", "write_trace", "read_trace",
           "SplitError", "ExhaustedError", "NumericError", "combine", "TRACE_COLUMNS"]
