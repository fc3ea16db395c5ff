"""Command-line entry point: ``hybridnbv gen | train | select | eval | report``.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from . import metrics, scenegen
from .config import CONFIG_FILE, ConfigError, RunConfig
from .field import (CheckpointError, NumericError, RenderConfig, VoxelField,
                    load_checkpoint, render_view, save_checkpoint, train)
from .geom import classify_trajectory
from .pfm import write_pfm
from .planner import (SplitError, Strategy, init_split, read_trace, run_incremental,
                      write_trace)
from .uncertainty import write_scores

OUT_ENV = "HYBRIDNBV_OUT"
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

RUN_FILE = "run.json"
# lpips is a schema slot only; it is always written empty
EVAL_COLUMNS = ["view_id", "psnr", "ssim", "lpips", "mse", "mean_uncertainty", "ause",
                "ause_random"]
RUNS_COLUMNS = ["run", "strategy", "seed", "initial_psnr", "final_psnr", "final_ssim",
                "n_selected", "final_train"]
COMPARISON_COLUMNS = ["strategy", "n_runs", "initial_psnr_mean", "final_psnr_mean",
                      "final_psnr_std", "final_ssim_mean", "final_ssim_std", "n_selected_mean"]
CURVE_COLUMNS = ["strategy", "round", "n_runs", "psnr_mean", "psnr_std", "ssim_mean"]


class DataError(Exception):
    pass


def out_root() -> Path:
    return Path(os.environ.get(OUT_ENV, "hybridnbv-out"))


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def read_csv_rows(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _write_json(path, data) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _mkdir(path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create directory {path}: {exc}") from exc
    return path


def _load_dataset(path):
    if path is None:
        raise ConfigError("--data is required")
    return scenegen.load_dataset(path)


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    out = Path(args.out) if args.out else out_root() / "data" / f"{args.kind}-s{args.seed}"
    try:
        scene = scenegen.SceneSpec(seed=args.seed, dims=tuple(args.grid), n_boxes=args.boxes,
                                   n_spheres=args.spheres, ground=not args.no_ground)
        traj = scenegen.TrajectorySpec(kind=args.kind, n_views=args.views,
                                       altitude=args.altitude, radius=args.radius,
                                       sweep=args.sweep, turns=args.turns,
                                       half_extent=args.half_extent, width=args.width,
                                       height=args.height, vfov=math.radians(args.vfov),
                                       nadir_blend=args.nadir_blend)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    cams = scenegen.generate_trajectory(traj)
    cls = classify_trajectory(np.array([c.position for c in cams]))
    extra = {"scene": {k: v for k, v in asdict(scene).items() if k != "primitives"},
             "trajectory": asdict(traj), "planarity": cls.label.value,
             "hausdorff": cls.hausdorff_value}
    ds = scenegen.render_dataset(scenegen.generate_scene(scene), cams, out,
                                 n_samples=args.samples, trajectory_kind=args.kind,
                                 extra=json.loads(json.dumps(extra)))
    digest = hashlib.sha256((out / "manifest.json").read_bytes()).hexdigest()[:16]
    m = ds.manifest
    print(f"dataset: {out}")
    print(f"views: {m['n_views']}  image: {m['image_width']}x{m['image_height']}  "
          f"kind: {m['trajectory_kind']}  planarity: {m['planarity']}")
    print(f"manifest sha256: {digest}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _run_config(args)
    ds = _load_dataset(args.data)
    if args.ids:
        ids = _parse_ids(args.ids, len(ds))
    else:
        ids = init_split(ds, cfg.init_frac, cfg.test_frac, cfg.min_init, cfg.seed).train_ids
    out = _mkdir(args.out or out_root() / "train" / f"s{cfg.seed}")
    cfg.save(out)
    lo, hi = ds.extent or ((-1, -1, -1), (1, 1, 1))
    fld = VoxelField.random(cfg.grid_dims, lo, hi, seed=cfg.seed)
    pcfg = cfg.planner_config()
    tcfg = replace(pcfg.train, iterations=args.iterations or cfg.init_iterations)
    losses = train(fld, [(ds.cameras[i], ds.images[i]) for i in ids], tcfg)
    save_checkpoint(fld, out / "field.vxf")
    write_csv(out / "loss.csv", ["iteration", "loss"],
              [{"iteration": k, "loss": v} for k, v in enumerate(losses)])
    _write_json(out / RUN_FILE, {"dataset": str(Path(args.data).resolve()), "train_ids": ids})
    print(f"trained on {len(ids)} views for {len(losses)} iterations; "
          f"final batch loss {losses[-1] if losses else float('nan'):.6g}")
    print(f"checkpoint: {out / 'field.vxf'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# select
# ---------------------------------------------------------------------------

def _run_config(args) -> RunConfig:
    """Config from ``--config`` (if given) overridden by explicitly passed flags."""
    base = RunConfig.load(args.config).to_dict() if getattr(args, "config", None) else {}
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            base[f.name] = list(v) if f.name == "grid_dims" else v
    try:
        return RunConfig.from_dict(base)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _summary_text(cfg: RunConfig, state, status: str) -> str:
    lines = [f"strategy: {cfg.strategy}", f"seed: {cfg.seed}", f"status: {status}",
             f"views: {state.n_views}  test: {len(state.test_ids)}  "
             f"final train: {len(state.train_ids)} "
             f"({100.0 * len(state.train_ids) / state.n_views:.1f}%)",
             f"initial PSNR: {_num(state.initial_psnr)}  SSIM: {_num(state.initial_ssim)}"]
    if state.trace:
        last = state.trace[-1]
        lines.append(f"final PSNR: {last.psnr:.4f}  SSIM: {last.ssim:.4f}")
    lines.append("rounds:")
    for r in state.trace:
        lines.append(f"  {r.round:3d}  view {r.selected_id:4d}  PSNR {r.psnr:.4f}  SSIM {r.ssim:.4f}")
    return "\n".join(lines) + "\n"


def _num(v) -> str:
    return "n/a" if v is None else f"{v:.4f}"


def cmd_select(args) -> int:
    cfg = _run_config(args)
    data = args.data
    if data is None and args.config:
        run_file = Path(args.config)
        run_file = (run_file if run_file.is_dir() else run_file.parent) / RUN_FILE
        if run_file.exists():
            data = json.loads(run_file.read_text(encoding="utf-8"))["dataset"]
    ds = _load_dataset(data)
    out = _mkdir(args.out or out_root() / "runs" / f"{cfg.strategy}-s{cfg.seed}")
    cfg.save(out)
    scores_dir = _mkdir(out / "scores")
    ckpt_dir = _mkdir(out / "checkpoints") if cfg.round_checkpoints else None
    state = init_split(ds, cfg.init_frac, cfg.test_frac, cfg.min_init, cfg.seed,
                       grid_dims=cfg.grid_dims)
    run_info = {"dataset": str(Path(data).resolve()), "strategy": cfg.strategy,
                "seed": cfg.seed, "n_views": state.n_views, "test_ids": state.test_ids,
                "initial_train_ids": list(state.train_ids),
                "initial_candidate_ids": list(state.candidate_ids)}

    def on_round(st, rec, scores):
        write_scores(scores_dir / f"round_{rec.round:03d}.csv", scores, rec.selected_id)
        if ckpt_dir is not None:
            save_checkpoint(st.field, ckpt_dir / f"round_{rec.round:03d}.vxf")
        if not args.quiet:
            print(f"round {rec.round:3d}: view {rec.selected_id:4d}  PSNR {rec.psnr:.4f}  "
                  f"SSIM {rec.ssim:.4f}", flush=True)

    def finish(status):
        write_trace(out / "trace.csv", state.trace)
        _write_json(out / RUN_FILE, run_info | {
            "initial_psnr": state.initial_psnr, "initial_ssim": state.initial_ssim,
            "final_train_ids": state.train_ids, "status": status})
        (out / "summary.txt").write_text(_summary_text(cfg, state, status), encoding="utf-8")

    try:
        run_incremental(state, Strategy(cfg.strategy), cfg.planner_config(), on_round)
    except NumericError as exc:
        finish("diverged")
        raise NumericError(f"round {state.round}: {exc}", getattr(exc, "ray_id", None)) from exc
    state.check_partition()
    save_checkpoint(state.field, out / "field.vxf")
    finish("complete")
    if not args.quiet:
        print(_summary_text(cfg, state, "complete"), end="")
    print(f"run: {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _parse_ids(text: str, n: int) -> list[int]:
    try:
        ids = sorted({int(t) for t in text.split(",") if t.strip()})
    except ValueError as exc:
        raise ConfigError(f"bad --ids {text!r}") from exc
    if not ids or ids[0] < 0 or ids[-1] >= n:
        raise ConfigError(f"--ids must name views in [0, {n})")
    return ids


def evaluate_views(fld, ds, ids, render: RenderConfig, steps: int = 50, seed: int = 0):
    """Per-view metric rows plus uncertainty maps and sparsification curves."""
    rows, maps, curves = [], {}, {}
    for i in ids:
        view = render_view(fld, ds.cameras[i], render)
        gt = np.asarray(ds.images[i], np.float64)
        err = metrics.pixel_error(view.mean_image, gt)
        unc = view.variance_image
        a, curve, _ = metrics.ause(unc, err, steps)
        perm = np.random.default_rng([seed, i]).permutation(unc.size)
        a_rand = metrics.ause(unc.ravel()[perm], err.ravel(), steps)[0]
        rows.append({"view_id": i, "psnr": metrics.psnr(view.mean_image, gt),
                     "ssim": metrics.ssim(view.mean_image, gt), "lpips": None,
                     "mse": metrics.mse(view.mean_image, gt),
                     "mean_uncertainty": float(unc.mean()), "ause": a, "ause_random": a_rand})
        maps[i] = (view.mean_image, unc)
        curves[i] = curve
    return rows, maps, curves


def cmd_eval(args) -> int:
    from . import plotting

    run = Path(args.run) if args.run else None
    info = json.loads((run / RUN_FILE).read_text(encoding="utf-8")) \
        if run is not None and (run / RUN_FILE).exists() else {}
    data = args.data or info.get("dataset")
    ds = _load_dataset(data)
    ckpt = args.field or (run / "field.vxf" if run is not None else None)
    if ckpt is None:
        raise ConfigError("eval needs --field or --run")
    fld = load_checkpoint(ckpt)
    if ds.extent is not None and not (np.allclose(fld.lo, ds.extent[0])
                                      and np.allclose(fld.hi, ds.extent[1])):
        raise DataError(f"checkpoint {ckpt} extent {fld.lo.tolist()}..{fld.hi.tolist()} "
                        f"does not match dataset extent {ds.extent}")
    if args.ids:
        ids = _parse_ids(args.ids, len(ds))
    elif "test_ids" in info:
        ids = info["test_ids"]
    else:
        raise ConfigError("eval needs --ids or a --run with a recorded test split")
    out = _mkdir(args.out or (run / "eval" if run is not None else out_root() / "eval"))
    # default to the dataset's own sample count so a GT checkpoint reproduces it exactly
    samples = args.samples or ds.manifest.get("render_samples") or RenderConfig().n_samples
    render = RenderConfig(n_samples=samples, term_tau=args.term_tau)
    rows, maps, curves = evaluate_views(fld, ds, ids, render, args.steps, args.seed)
    write_csv(out / "eval.csv", EVAL_COLUMNS, rows)
    _mkdir(out / "uncertainty")
    _mkdir(out / "sparsification")
    for i in ids:
        write_pfm(out / "uncertainty" / f"{i}.pfm", maps[i][1].astype(np.float32))
        curves[i].to_csv(out / "sparsification" / f"{i}.csv")
    unc = [r["mean_uncertainty"] for r in rows]
    err = [r["mse"] for r in rows]
    corr = metrics.srcc(unc, err) if len(rows) >= 3 else metrics.Correlation(0.0, True)
    summary = {"n_views": len(rows),
               "psnr_mean": float(np.mean([r["psnr"] for r in rows])),
               "ssim_mean": float(np.mean([r["ssim"] for r in rows])),
               "mse_mean": float(np.mean(err)),
               "ause_mean": float(np.mean([r["ause"] for r in rows])),
               "ause_random_mean": float(np.mean([r["ause_random"] for r in rows])),
               "srcc": corr.value, "srcc_undefined": corr.undefined}
    _write_json(out / "summary.json", summary)
    if not args.no_figures:
        plotting.uncertainty_scatter(unc, err, out / "uncertainty_vs_mse.png",
                                     None if corr.undefined else corr.value)
        worst = max(rows, key=lambda r: r["mse"])["view_id"]
        plotting.view_panel(maps[worst][0], ds.images[worst], maps[worst][1],
                            out / f"view_{worst}.png")
        plotting.sparsification(curves[worst], out / f"sparsification_{worst}.png",
                                f"view {worst}")
    print(f"views: {len(rows)}  PSNR {summary['psnr_mean']:.4f}  SSIM {summary['ssim_mean']:.4f}  "
          f"SRCC {summary['srcc']:.4f}{' (undefined)' if corr.undefined else ''}  "
          f"AUSE {summary['ause_mean']:.4f} (random {summary['ause_random_mean']:.4f})")
    print(f"eval: {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def load_run(run) -> dict:
    run = Path(run)
    if not (run / "trace.csv").exists():
        raise DataError(f"run {run}: missing trace.csv")
    try:
        trace = read_trace(run / "trace.csv")
    except ValueError as exc:
        raise DataError(f"run {run}: {exc}") from exc
    try:
        cfg = RunConfig.load(run)
    except ConfigError as exc:
        raise DataError(f"run {run}: {exc}") from exc
    info = json.loads((run / RUN_FILE).read_text(encoding="utf-8")) \
        if (run / RUN_FILE).exists() else {}
    return {"run": run, "config": cfg, "trace": trace, "info": info}


def aggregate(runs: list[dict]):
    """``(runs_rows, comparison_rows, curve_rows)`` from loaded runs."""
    per_run = []
    for r in runs:
        tr = r["trace"]
        init = r["info"].get("initial_psnr")
        per_run.append({
            "run": str(r["run"]), "strategy": r["config"].strategy, "seed": r["config"].seed,
            "initial_psnr": init,
            "final_psnr": float(tr[-1]["psnr"]) if tr else init,
            "final_ssim": float(tr[-1]["ssim"]) if tr else r["info"].get("initial_ssim"),
            "n_selected": len(tr),
            "final_train": len(r["info"].get("final_train_ids", [])) or None})
    strategies = sorted({p["strategy"] for p in per_run},
                        key=lambda s: [m.value for m in Strategy].index(s))
    comparison, curve = [], []
    for s in strategies:
        group = [p for p in per_run if p["strategy"] == s]
        fp = np.array([p["final_psnr"] for p in group], dtype=float)
        fs = np.array([p["final_ssim"] for p in group], dtype=float)
        ip = [p["initial_psnr"] for p in group if p["initial_psnr"] is not None]
        comparison.append({
            "strategy": s, "n_runs": len(group),
            "initial_psnr_mean": float(np.mean(ip)) if ip else None,
            "final_psnr_mean": float(fp.mean()), "final_psnr_std": float(fp.std()),
            "final_ssim_mean": float(fs.mean()), "final_ssim_std": float(fs.std()),
            "n_selected_mean": float(np.mean([p["n_selected"] for p in group]))})
        runs_s = [r for r in runs if r["config"].strategy == s]
        series = {}
        for r in runs_s:
            if r["info"].get("initial_psnr") is not None:
                series.setdefault(0, []).append((r["info"]["initial_psnr"],
                                                 r["info"]["initial_ssim"]))
            for row in r["trace"]:
                series.setdefault(int(row["round"]), []).append((float(row["psnr"]),
                                                                 float(row["ssim"])))
        for k in sorted(series):
            v = np.array(series[k])
            curve.append({"strategy": s, "round": k, "n_runs": len(v),
                          "psnr_mean": float(v[:, 0].mean()), "psnr_std": float(v[:, 0].std()),
                          "ssim_mean": float(v[:, 1].mean())})
    return per_run, comparison, curve


def cmd_report(args) -> int:
    from . import plotting

    if not args.runs:
        raise ConfigError("report needs at least one run directory")
    runs = [load_run(r) for r in args.runs]
    per_run, comparison, curve = aggregate(runs)
    out = _mkdir(args.out or out_root() / "report")
    write_csv(out / "runs.csv", RUNS_COLUMNS, per_run)
    write_csv(out / "comparison.csv", COMPARISON_COLUMNS, comparison)
    write_csv(out / "curve.csv", CURVE_COLUMNS, curve)
    if not args.no_figures:
        curves = {}
        for s in {c["strategy"] for c in curve}:
            pts = [c for c in curve if c["strategy"] == s]
            curves[s] = ([c["round"] for c in pts], np.array([c["psnr_mean"] for c in pts]),
                         np.array([c["psnr_std"] for c in pts]))
        plotting.psnr_curves(curves, out / "psnr_vs_round.png")
        plotting.final_bars(comparison, out / "final_psnr.png")
    width = max(len(c["strategy"]) for c in comparison)
    for c in comparison:
        print(f"{c['strategy']:<{width}}  runs {c['n_runs']:3d}  final PSNR "
              f"{c['final_psnr_mean']:.4f} +- {c['final_psnr_std']:.4f}  "
              f"SSIM {c['final_ssim_mean']:.4f}")
    print(f"report: {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_run_flags(p: argparse.ArgumentParser) -> None:
    d = RunConfig()
    g = p.add_argument_group("run configuration (defaults shown; --config values win "
                             "over defaults, explicit flags win over --config)")
    g.add_argument("--config", help=f"load a saved {CONFIG_FILE} (file or run directory)")
    g.add_argument("--strategy", choices=[s.value for s in Strategy],
                   help=f"view selection strategy (default {d.strategy})")
    g.add_argument("--seed", type=int, help=f"split, init and training seed (default {d.seed})")
    g.add_argument("--init-frac", dest="init_frac", type=float,
                   help=f"initial training fraction (default {d.init_frac})")
    g.add_argument("--test-frac", dest="test_frac", type=float,
                   help=f"held-out test fraction (default {d.test_frac})")
    g.add_argument("--budget-frac", dest="budget_frac", type=float,
                   help=f"fraction of all views to select (default {d.budget_frac})")
    g.add_argument("--min-init", dest="min_init", type=int,
                   help=f"minimum initial training views (default {d.min_init})")
    g.add_argument("--psnr-target", dest="psnr_target", type=float,
                   help="stop early once test PSNR reaches this value (default off)")
    g.add_argument("--grid", dest="grid_dims", type=int, nargs=3, metavar=("NX", "NY", "NZ"),
                   help=f"reconstruction grid nodes (default {' '.join(map(str, d.grid_dims))})")
    g.add_argument("--init-iterations", dest="init_iterations", type=int,
                   help=f"training iterations before the first round (default {d.init_iterations})")
    g.add_argument("--round-iterations", dest="round_iterations", type=int,
                   help=f"warm-start iterations per round (default {d.round_iterations})")
    g.add_argument("--lr", dest="learning_rate", type=float,
                   help=f"learning rate (default {d.learning_rate})")
    g.add_argument("--batch-rays", dest="batch_rays", type=int,
                   help=f"rays per training batch (default {d.batch_rays})")
    g.add_argument("--term-tau", dest="term_tau", type=float,
                   help=f"early ray termination threshold (default {d.term_tau})")
    g.add_argument("--samples", type=int, help=f"samples per ray (default {d.samples})")
    g.add_argument("--eps-rel", dest="eps_rel", type=float,
                   help=f"planarity tolerance relative to extent (default {d.eps_rel})")
    g.add_argument("--resolution-2d", dest="resolution_2d", type=int,
                   help=f"planar Voronoi raster resolution (default {d.resolution_2d})")
    g.add_argument("--resolution-3d", dest="resolution_3d", type=int,
                   help=f"volumetric Voronoi raster resolution (default {d.resolution_3d})")
    g.add_argument("--ray-fraction", dest="ray_fraction", type=float,
                   help=f"ray subsample fraction for rendering uncertainty (default {d.ray_fraction})")
    g.add_argument("--weight-mode", dest="weight_mode", choices=["unit", "uncertainty"],
                   help=f"Voronoi site weights (default {d.weight_mode})")
    g.add_argument("--candidate-cell-only", dest="candidate_cell_only", action="store_const",
                   const=True, help="score only the candidate's own Voronoi cell")
    g.add_argument("--workers", type=int,
                   help=f"threads for candidate scoring; output is identical for any count "
                        f"(default {d.workers})")
    g.add_argument("--timing", dest="record_time", action="store_const", const=True,
                   help="record per-round wall time in the trace (makes traces non-reproducible)")
    g.add_argument("--round-checkpoints", dest="round_checkpoints", action="store_const",
                   const=True, help="save the field after every round")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hybridnbv",
        description="Hybrid next-best-view selection on voxel radiance fields. "
                    f"Default outputs go under ${OUT_ENV} (default ./hybridnbv-out).",
        epilog="exit codes: 0 success, 2 config error, 3 data error, 4 numeric divergence")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset",
                       description="Render a procedural scene along a UAV trajectory.")
    t = scenegen.TrajectorySpec()
    g.add_argument("--out", help="dataset directory (default $OUT/data/<kind>-s<seed>)")
    g.add_argument("--kind", choices=["lawnmower", "orbit", "helix"], default=t.kind,
                   help="trajectory shape (default %(default)s)")
    g.add_argument("--views", type=int, default=t.n_views, help="number of poses (default %(default)s)")
    g.add_argument("--seed", type=int, default=0, help="scene seed (default %(default)s)")
    g.add_argument("--grid", type=int, nargs=3, default=(16, 16, 16), metavar=("NX", "NY", "NZ"),
                   help="ground-truth grid nodes (default 16 16 16)")
    g.add_argument("--boxes", type=int, default=5, help="random boxes (default %(default)s)")
    g.add_argument("--spheres", type=int, default=2, help="random spheres (default %(default)s)")
    g.add_argument("--no-ground", action="store_true", help="omit the textured ground slab")
    g.add_argument("--altitude", type=float, default=t.altitude,
                   help="flight altitude, or helix mid altitude (default %(default)s)")
    g.add_argument("--radius", type=float, default=t.radius,
                   help="orbit/helix radius (default %(default)s)")
    g.add_argument("--sweep", type=float, default=t.sweep,
                   help="helix altitude sweep (default %(default)s)")
    g.add_argument("--turns", type=float, default=t.turns, help="helix turns (default %(default)s)")
    g.add_argument("--half-extent", dest="half_extent", type=float, default=t.half_extent,
                   help="lawnmower half width (default %(default)s)")
    g.add_argument("--nadir-blend", dest="nadir_blend", type=float, default=t.nadir_blend,
                   help="lawnmower look-at shift toward nadir, 0..1 (default %(default)s)")
    g.add_argument("--width", type=int, default=t.width, help="image width (default %(default)s)")
    g.add_argument("--height", type=int, default=t.height, help="image height (default %(default)s)")
    g.add_argument("--vfov", type=float, default=math.degrees(t.vfov),
                   help="vertical field of view in degrees (default %(default)s)")
    g.add_argument("--samples", type=int, default=128,
                   help="samples per ray for ground-truth rendering (default %(default)s)")
    g.set_defaults(func=cmd_gen)

    tr = sub.add_parser("train", help="train a field on a set of views",
                        description="Fit a voxel field to training views and save a checkpoint.")
    tr.add_argument("--data", help="dataset directory")
    tr.add_argument("--out", help="output directory (default $OUT/train/s<seed>)")
    tr.add_argument("--ids", help="comma-separated training view ids (default: initial split)")
    tr.add_argument("--iterations", type=int, help="iterations (default: init iterations)")
    _add_run_flags(tr)
    tr.set_defaults(func=cmd_train)

    s = sub.add_parser("select", help="run incremental view selection",
                       description="Split, train, and select views round by round. Writes "
                                   "config.json, run.json, trace.csv, scores/round_NNN.csv, "
                                   "field.vxf and summary.txt.")
    s.add_argument("--data", help="dataset directory (default: from --config's run.json)")
    s.add_argument("--out", help="run directory (default $OUT/runs/<strategy>-s<seed>)")
    s.add_argument("--quiet", action="store_true", help="print only the run directory")
    _add_run_flags(s)
    s.set_defaults(func=cmd_select)

    e = sub.add_parser("eval", help="evaluate a field on test views",
                       description="Per-view PSNR/SSIM/MSE, uncertainty maps (PFM), SRCC, "
                                   "AUSE and sparsification curves.")
    e.add_argument("--run", help="run directory (supplies dataset, field and test ids)")
    e.add_argument("--data", help="dataset directory")
    e.add_argument("--field", help="field checkpoint (.vxf)")
    e.add_argument("--ids", help="comma-separated view ids to evaluate")
    e.add_argument("--out", help="output directory (default <run>/eval or $OUT/eval)")
    e.add_argument("--samples", type=int,
                   help="samples per ray (default: the dataset's render_samples)")
    e.add_argument("--term-tau", dest="term_tau", type=float, default=RenderConfig().term_tau,
                   help="early ray termination threshold (default %(default)s)")
    e.add_argument("--steps", type=int, default=50,
                   help="sparsification steps (default %(default)s)")
    e.add_argument("--seed", type=int, default=0,
                   help="seed of the random-permutation AUSE baseline (default %(default)s)")
    e.add_argument("--no-figures", action="store_true", help="skip PNG figures")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="aggregate runs into comparison tables",
                       description="Write runs.csv, comparison.csv (strategy x metric), "
                                   "curve.csv (PSNR vs round) and figures.")
    r.add_argument("runs", nargs="*", help="run directories")
    r.add_argument("--out", help="report directory (default $OUT/report)")
    r.add_argument("--no-figures", action="store_true", help="skip PNG figures")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, SplitError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, scenegen.DatasetError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
