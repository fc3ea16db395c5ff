"""Serializable run configuration shared by the CLI subcommands."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .field import RenderConfig, TrainConfig
from .planner import PlannerConfig, Strategy
from .uncertainty import ScoreConfig

CONFIG_FILE = "config.json"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    strategy: str = "hybrid"
    seed: int = 0
    init_frac: float = 0.15
    test_frac: float = 0.10
    budget_frac: float = 0.15
    min_init: int = 20
    psnr_target: float | None = None
    grid_dims: tuple = (16, 16, 16)
    init_iterations: int = 400
    round_iterations: int = 60
    learning_rate: float = 0.05
    batch_rays: int = 512
    term_tau: float = 1e-4
    samples: int = 32
    eps_rel: float = 0.05
    resolution_2d: int = 512
    resolution_3d: int = 128
    ray_fraction: float = 0.25
    weight_mode: str = "unit"
    candidate_cell_only: bool = False
    workers: int = 1
    record_time: bool = False
    round_checkpoints: bool = False

    def __post_init__(self):
        self.grid_dims = tuple(int(d) for d in self.grid_dims)
        self.validate()

    def validate(self) -> None:
        try:
            Strategy(self.strategy)
        except ValueError:
            raise ConfigError(f"unknown strategy {self.strategy!r}") from None
        for name in ("init_frac", "test_frac", "budget_frac", "ray_fraction"):
            v = getattr(self, name)
            if not (0.0 < v < 1.0 or (name == "ray_fraction" and v == 1.0)):
                raise ConfigError(f"{name} must lie in (0, 1), got {v}")
        if self.init_frac + self.test_frac >= 1.0:
            raise ConfigError("init_frac + test_frac must be below 1")
        if len(self.grid_dims) != 3 or min(self.grid_dims) < 2:
            raise ConfigError("grid_dims needs three sizes >= 2")
        if self.min_init < 1 or self.samples < 1 or self.batch_rays < 1:
            raise ConfigError("min_init, samples and batch_rays must be positive")
        if self.init_iterations < 0 or self.round_iterations < 0:
            raise ConfigError("iteration counts must be non-negative")
        if not 0.0 <= self.term_tau < 1.0:
            raise ConfigError("term_tau must lie in [0, 1)")
        if self.eps_rel <= 0 or self.learning_rate <= 0:
            raise ConfigError("eps_rel and learning_rate must be positive")
        if self.resolution_2d < 16 or self.resolution_3d < 16:
            raise ConfigError("voronoi resolutions must be >= 16")
        if self.weight_mode not in ("unit", "uncertainty"):
            raise ConfigError(f"unknown weight mode {self.weight_mode!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    # ------------------------------------------------------------------
    def planner_config(self) -> PlannerConfig:
        render = RenderConfig(n_samples=self.samples, term_tau=self.term_tau)
        train = TrainConfig(learning_rate=self.learning_rate, batch_rays=self.batch_rays,
                            seed=self.seed,
                            render=RenderConfig(n_samples=self.samples, term_tau=self.term_tau,
                                                jitter=True))
        score = ScoreConfig(ray_fraction=self.ray_fraction, seed=self.seed, render=render,
                            workers=self.workers)
        return PlannerConfig(budget_frac=self.budget_frac, psnr_target=self.psnr_target,
                             init_iterations=self.init_iterations,
                             round_iterations=self.round_iterations, train=train, score=score,
                             eval_render=render, eps_rel=self.eps_rel,
                             resolution_2d=self.resolution_2d, resolution_3d=self.resolution_3d,
                             candidate_cell_only=self.candidate_cell_only,
                             weight_mode=self.weight_mode, seed=self.seed,
                             record_time=self.record_time)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid_dims"] = list(self.grid_dims)
        return d

    def save(self, run_dir) -> Path:
        path = Path(run_dir) / CONFIG_FILE
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")
        return path

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if path.is_dir():
            path = path / CONFIG_FILE
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read run config {path}: {exc}") from exc
        return cls.from_dict(data)
