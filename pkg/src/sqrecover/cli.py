"""Command-line entry point: dataset generation, scene recovery,
evaluation and raster composition as reproducible runs.

Every subcommand records its flags and seeds in a run_config.json next
to its outputs.  Recovery runs write one JSON per scene plus the mask
raster actually used and a reconstruction re-rendered from the
recovered parameters; evaluation consumes those files together with the
dataset manifest.  The same layout is what an external segmentation/
regression pipeline must emit for its predictions to be scored here.
"""

from __future__ import annotations

import argparse
import csv
import json
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import metrics
from .core import SceneBounds, Superquadric
from .fit import FitConfig, recover_scene
from .formats import (
    read_mask_raster,
    read_range_raster,
    write_mask_raster,
    write_range_raster,
)
from .render import InstanceMaskImage, RangeImage, Scene, render
from .sample import DatasetManifest, SamplerConfig, generate_dataset

_MASK_SOURCES = ("oracle", "corrupted", "external-dir")


def _scene_stem(scene_id: int) -> str:
    return f"scene_{scene_id:06d}"


def _jsonable(value):
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def _run_config_payload(command: str, args: argparse.Namespace) -> dict:
    payload = {"command": command}
    payload.update({
        key: _jsonable(val)
        for key, val in sorted(vars(args).items())
        if key != "func"
    })
    return payload


def _write_run_config(out_dir: Path, command: str, args: argparse.Namespace) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_config.json").write_text(
        json.dumps(_run_config_payload(command, args), indent=1)
    )


# ---------------------------------------------------------------- generate

def _cmd_generate(args: argparse.Namespace) -> int:
    try:
        cfg = SamplerConfig(
            count_range=(args.count_min, args.count_max),
            size_range=(args.size_min, args.size_max),
            shape_range=(args.shape_min, args.shape_max),
            xy_range=(args.xy_min, args.xy_max),
            z_range=(args.z_min, args.z_max),
            iou_threshold=args.iou_threshold,
            seed=args.seed,
        )
        cfg.validate()
        if args.noise_sigma < 0:
            raise ValueError("noise-sigma must be >= 0")
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out)
    _write_run_config(out, "generate", args)
    manifest = generate_dataset(
        cfg, args.train, args.val, args.test, out,
        noise_sigma=args.noise_sigma,
        previews=not args.no_previews,
        jobs=args.jobs,
    )
    n = len(manifest.scenes)
    print(f"wrote {n} scenes to {out}")
    print(out / "manifest.json")
    return 0


# ----------------------------------------------------------------- recover

def _corrupt_id_raster(
    ids: np.ndarray, mode: str, severity: float, seed: int, scene_id: int
) -> np.ndarray:
    """Corrupt each instance's binary mask independently and reassemble
    the id raster (ascending ids overwrite on overlap)."""
    out = np.zeros_like(ids)
    for k in sorted(int(v) for v in np.unique(ids) if v != 0):
        rng = np.random.default_rng(np.random.SeedSequence([seed, scene_id, k]))
        damaged = metrics.corrupt_mask(ids == k, mode, severity, rng)
        out[damaged] = k
    return out


def _recover_one(task: dict) -> dict:
    out = Path(task["out"])
    scene_id = task["scene_id"]
    depth = read_range_raster(task["range_path"])
    truth_ids_known = task["mask_source"] in ("oracle", "corrupted")
    if task["mask_source"] == "external-dir":
        mask_path = Path(task["masks_dir"]) / f"{_scene_stem(scene_id)}.sqim"
        if not mask_path.exists():
            return {"scene_id": scene_id, "status": "skipped",
                    "reason": f"no external mask at {mask_path}"}
        ids = read_mask_raster(mask_path)
    else:
        ids = read_mask_raster(task["mask_path"])
        if task["mask_source"] == "corrupted" and task["severity"] > 0:
            ids = _corrupt_id_raster(
                ids, task["corrupt_mode"], task["severity"],
                task["seed"], scene_id,
            )
    range_image = RangeImage(depth)
    masks = InstanceMaskImage(ids)
    cfg = FitConfig(
        max_iterations=task["max_iters"],
        cost_tol=task["tol"],
        step_tol=task["tol"],
    )
    started = time.perf_counter()
    recovered = recover_scene(
        range_image, masks, cfg, instance_count=task["instance_count"]
    )
    wall = time.perf_counter() - started

    area = float(depth.size)
    instances = []
    fits = []
    for rec in recovered:
        if rec.ok:
            fit = rec.fit
            entry = {
                "instance_id": rec.instance_id,
                "status": "ok",
                "params": fit.params.as_array().tolist(),
                "cost": fit.cost,
                "iterations": fit.iterations,
                "converged": fit.converged,
                "wall_time_s": fit.wall_time,
                "point_count": fit.point_count,
                "score": float(np.count_nonzero(ids == rec.instance_id)) / area,
            }
            fits.append(fit.params)
        else:
            entry = {
                "instance_id": rec.instance_id,
                "status": "skipped",
                "reason": rec.skip_reason,
            }
        if truth_ids_known:
            entry["truth_instance_id"] = rec.instance_id
        instances.append(entry)

    bounds = SceneBounds(depth.shape[1], depth.shape[0], task["depth_bound"])
    if fits:
        recon, _ = render(Scene(tuple(fits), bounds))
        recon_depth = recon.depth
    else:
        recon_depth = np.zeros_like(depth)
    write_range_raster(out / "recon" / f"{_scene_stem(scene_id)}.sqri",
                       recon_depth)
    write_mask_raster(out / "masks" / f"{_scene_stem(scene_id)}.sqim", ids)
    payload = {"scene_id": scene_id, "wall_time_s": wall,
               "instances": instances}
    (out / "scenes" / f"{_scene_stem(scene_id)}.json").write_text(
        json.dumps(payload, indent=1)
    )
    return {"scene_id": scene_id, "status": "ok", "wall_time_s": wall,
            "skips": sum(1 for e in instances if e["status"] == "skipped")}


def _cmd_recover(args: argparse.Namespace) -> int:
    if args.mask_source not in _MASK_SOURCES:
        print(f"error: unknown mask source {args.mask_source}", file=sys.stderr)
        return 2
    if args.mask_source == "external-dir" and not args.masks_dir:
        print("error: --mask-source external-dir needs --masks-dir",
              file=sys.stderr)
        return 2
    if not 0.0 <= args.corrupt_severity <= 1.0:
        print("error: --corrupt-severity must be in [0, 1]", file=sys.stderr)
        return 2

    tasks = []
    common = {
        "out": str(args.out),
        "mask_source": args.mask_source,
        "corrupt_mode": args.corrupt_mode,
        "severity": args.corrupt_severity,
        "seed": args.seed,
        "max_iters": args.max_iters,
        "tol": args.tol,
        "masks_dir": str(args.masks_dir) if args.masks_dir else None,
    }
    if args.manifest:
        manifest = DatasetManifest.load(args.manifest)
        root = Path(args.manifest).parent
        records = manifest.records(args.split)
        if not records:
            print(f"error: split {args.split!r} is empty", file=sys.stderr)
            return 2
        for rec in records:
            tasks.append(dict(
                common,
                scene_id=rec.id,
                range_path=str(root / rec.range_path),
                mask_path=str(root / rec.mask_path),
                instance_count=(
                    len(rec.superquadrics)
                    if args.mask_source != "external-dir" else None
                ),
                depth_bound=manifest.sampler_config.bounds.depth,
            ))
    elif args.range and args.mask:
        if args.mask_source == "external-dir":
            print("error: external-dir needs a manifest run", file=sys.stderr)
            return 2
        tasks.append(dict(
            common, scene_id=0, range_path=str(args.range),
            mask_path=str(args.mask), instance_count=None, depth_bound=256,
        ))
    else:
        print("error: pass --manifest or both --range and --mask",
              file=sys.stderr)
        return 2

    out = Path(args.out)
    for sub in ("scenes", "recon", "masks"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    _write_run_config(out, "recover", args)

    if args.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            outcomes = list(pool.map(_recover_one, tasks))
    else:
        outcomes = [_recover_one(t) for t in tasks]

    done = [o for o in outcomes if o["status"] == "ok"]
    skipped = [o for o in outcomes if o["status"] == "skipped"]
    times = [o["wall_time_s"] for o in done]
    summary = {
        "scenes": len(done),
        "scenes_skipped": len(skipped),
        "skipped": skipped,
        "instance_skips": sum(o.get("skips", 0) for o in done),
        "wall_time_mean_s": statistics.fmean(times) if times else None,
        "wall_time_median_s": statistics.median(times) if times else None,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    for entry in skipped:
        print(f"warning: scene {entry['scene_id']}: {entry['reason']}",
              file=sys.stderr)
    print(f"recovered {len(done)} scenes "
          f"({len(skipped)} skipped) into {out}")
    return 0


# ---------------------------------------------------------------- evaluate

def _greedy_iou_matching(
    pred_entries: list[dict],
    pred_masks: list[np.ndarray],
    truth_masks: list[np.ndarray],
    min_iou: float = 0.5,
) -> list[tuple[int, int]]:
    """Match predictions (score order) to unmatched truths by best IoU;
    returns (pred index, truth index) pairs."""
    order = sorted(
        range(len(pred_entries)),
        key=lambda i: -pred_entries[i].get("score", 0.0),
    )
    taken = [False] * len(truth_masks)
    pairs = []
    for i in order:
        best_j, best = -1, min_iou
        for j, tmask in enumerate(truth_masks):
            if taken[j]:
                continue
            iou = metrics.mask_iou(pred_masks[i], tmask)
            if iou >= best:
                best, best_j = iou, j
        if best_j >= 0:
            taken[best_j] = True
            pairs.append((i, best_j))
    return pairs


def _cmd_evaluate(args: argparse.Namespace) -> int:
    manifest = DatasetManifest.load(args.manifest)
    root = Path(args.manifest).parent
    recovery = Path(args.recovery)
    records = {rec.id: rec for rec in manifest.records(args.split)}
    scene_files = sorted((recovery / "scenes").glob("scene_*.json"))
    matched_scenes = []
    for path in scene_files:
        payload = json.loads(path.read_text())
        if payload["scene_id"] in records:
            matched_scenes.append(payload)
    if not matched_scenes:
        print("error: no recovery scene ids match the manifest split",
              file=sys.stderr)
        return 2

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_run_config(out, "evaluate", args)
    bounds = manifest.sampler_config.bounds

    pred_params: list[Superquadric] = []
    truth_params: list[Superquadric] = []
    matching: list[tuple[int, int]] = []
    scene_counts: list[int] = []
    seg_preds, seg_truths = [], []
    recon_maes, scene_times, fit_times = [], [], []
    csv_rows: list[dict] = []

    for payload in matched_scenes:
        rec = records[payload["scene_id"]]
        truth_sqs = [Superquadric.from_array(p) for p in rec.superquadrics]
        truth_ids = read_mask_raster(root / rec.mask_path)
        truth_depth = read_range_raster(root / rec.range_path)
        truth_masks = [truth_ids == k for k in range(1, len(truth_sqs) + 1)]
        scene_times.append(payload.get("wall_time_s"))

        ok_entries = [e for e in payload["instances"] if e["status"] == "ok"]
        mask_path = recovery / "masks" / f"{_scene_stem(rec.id)}.sqim"
        pred_ids = read_mask_raster(mask_path) if mask_path.exists() else None
        pred_masks = [
            (pred_ids == e["instance_id"])
            if pred_ids is not None
            else np.zeros_like(truth_ids, dtype=bool)
            for e in ok_entries
        ]
        if pred_ids is not None:
            # Segmentation is scored on its own: every instance present in
            # the predicted mask raster counts, whether or not the fitter
            # used it, and invisible truths (empty masks) are not targets.
            score_of = {
                e["instance_id"]: e.get("score")
                for e in payload["instances"]
            }
            preds = []
            for k in (int(v) for v in np.unique(pred_ids) if v != 0):
                mask = pred_ids == k
                score = score_of.get(k)
                if score is None:
                    score = float(np.count_nonzero(mask)) / mask.size
                preds.append((mask, float(np.clip(score, 0.0, 1.0))))
            seg_preds.append(preds)
            seg_truths.append([m for m in truth_masks if m.any()])

        if all("truth_instance_id" in e for e in ok_entries):
            pairs = [
                (i, e["truth_instance_id"] - 1)
                for i, e in enumerate(ok_entries)
                if 1 <= e["truth_instance_id"] <= len(truth_sqs)
            ]
        else:
            pairs = _greedy_iou_matching(ok_entries, pred_masks, truth_masks)

        for i, ti in pairs:
            entry = ok_entries[i]
            fit_times.append(entry.get("wall_time_s"))
            pred_params.append(Superquadric.from_array(entry["params"]))
            truth_params.append(truth_sqs[ti])
            matching.append((len(pred_params) - 1, len(truth_params) - 1))
            scene_counts.append(len(truth_sqs))
            csv_rows.append(_csv_row(
                rec.id, entry, truth_sqs[ti], len(truth_sqs)
            ))
        for i, entry in enumerate(ok_entries):
            if i not in {pi for pi, _ in pairs}:
                csv_rows.append(_csv_row(rec.id, entry, None, len(truth_sqs)))
        for entry in payload["instances"]:
            if entry["status"] == "skipped":
                csv_rows.append(_csv_row(rec.id, entry, None, len(truth_sqs)))

        if fits := [Superquadric.from_array(e["params"]) for e in ok_entries]:
            recon, _ = render(Scene(tuple(fits), bounds))
            recon_depth = recon.depth
        else:
            recon_depth = np.zeros_like(truth_depth)
        recon_maes.append(metrics.reconstruction_mae(truth_depth, recon_depth))

    param_report = None
    if matching:
        param_report = metrics.param_mae(
            pred_params, truth_params, matching, scene_counts
        )
        (out / "param_report.json").write_text(
            json.dumps(param_report.to_dict(), indent=1)
        )
    else:
        # Scene ids did match; there is just nothing to pair at the
        # instance level (e.g. a weak external segmenter).
        print("warning: no predicted instance matched any ground truth; "
              "parameter report omitted", file=sys.stderr)
    seg_report = None
    if seg_preds:
        seg_report = metrics.mask_map(seg_preds, seg_truths)
        (out / "seg_report.json").write_text(
            json.dumps(seg_report.to_dict(), indent=1)
        )
    fit_times = [t for t in fit_times if t is not None]
    scene_times = [t for t in scene_times if t is not None]
    summary = {
        "scenes": len(matched_scenes),
        "matched_instances": len(matching),
        "reconstruction_mae_mean": statistics.fmean(recon_maes),
        "reconstruction_mae_per_scene": recon_maes,
        "timing": {
            "scene_wall_time_mean_s": (
                statistics.fmean(scene_times) if scene_times else None
            ),
            "scene_wall_time_median_s": (
                statistics.median(scene_times) if scene_times else None
            ),
            "fit_wall_time_mean_s": (
                statistics.fmean(fit_times) if fit_times else None
            ),
        },
        "reference_reconstruction_mae": metrics.REFERENCE_RECONSTRUCTION_MAE,
        "reference_timing_s": metrics.REFERENCE_TIMING_S,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    _write_instance_csv(out / "per_instance.csv", csv_rows)
    with open(out / "per_scene.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["scene_id", "instances", "recovered", "reconstruction_mae",
             "wall_time_s"]
        )
        for payload, mae in zip(matched_scenes, recon_maes):
            writer.writerow([
                payload["scene_id"],
                len(records[payload["scene_id"]].superquadrics),
                sum(1 for e in payload["instances"]
                    if e["status"] == "ok"),
                mae,
                payload.get("wall_time_s", ""),
            ])

    if param_report is not None:
        pooled = param_report.rows["all"].mae
        print("parameter MAE (all): " + "  ".join(
            f"{name}={pooled[name]:.3f}" for name in metrics.PARAM_NAMES
        ))
    if seg_report is not None:
        print(f"mask mAP={seg_report.map:.2f}  mAP50={seg_report.map50:.2f}  "
              f"mAP75={seg_report.map75:.2f}")
    print(f"reconstruction MAE mean={summary['reconstruction_mae_mean']:.3f} "
          f"over {len(recon_maes)} scenes")
    return 0


def _csv_row(
    scene_id: int, entry: dict, truth: Superquadric | None, scene_count: int
) -> dict:
    row = {
        "scene_id": scene_id,
        "instance_id": entry["instance_id"],
        "scene_count": scene_count,
        "status": entry["status"],
        "reason": entry.get("reason", ""),
        "score": entry.get("score", ""),
        "point_count": entry.get("point_count", ""),
        "iterations": entry.get("iterations", ""),
        "converged": entry.get("converged", ""),
        "wall_time_s": entry.get("wall_time_s", ""),
        "cost": entry.get("cost", ""),
    }
    params = entry.get("params")
    for i, name in enumerate(metrics.PARAM_NAMES):
        row[f"pred_{name}"] = params[i] if params else ""
        row[f"truth_{name}"] = getattr(truth, name) if truth else ""
        row[f"abs_err_{name}"] = (
            abs(params[i] - getattr(truth, name)) if params and truth else ""
        )
    return row


def _write_instance_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


# ----------------------------------------------------------------- compose

def _shift_raster(depth: np.ndarray, dx: int, dy: int) -> np.ndarray:
    out = np.zeros_like(depth)
    h, w = depth.shape
    src_y = slice(max(0, -dy), min(h, h - dy))
    src_x = slice(max(0, -dx), min(w, w - dx))
    dst_y = slice(max(0, dy), min(h, h + dy))
    dst_x = slice(max(0, dx), min(w, w + dx))
    out[dst_y, dst_x] = depth[src_y, src_x]
    return out


def _cmd_compose(args: argparse.Namespace) -> int:
    if len(args.inputs) < 2:
        print("error: compose needs at least two input rasters",
              file=sys.stderr)
        return 2
    shifts = []
    for spec in args.shift or []:
        try:
            dx, dy = (int(v) for v in spec.split(","))
        except ValueError:
            print(f"error: bad --shift {spec!r}, expected DX,DY",
                  file=sys.stderr)
            return 2
        shifts.append((dx, dy))
    if len(shifts) > len(args.inputs):
        print("error: more --shift values than inputs", file=sys.stderr)
        return 2
    shifts.extend([(0, 0)] * (len(args.inputs) - len(shifts)))

    rasters = [read_range_raster(p) for p in args.inputs]
    shape = rasters[0].shape
    for path, raster in zip(args.inputs, rasters):
        if raster.shape != shape:
            print(f"error: {path} has shape {raster.shape}, expected {shape}",
                  file=sys.stderr)
            return 2
    combined = np.zeros(shape, dtype=np.float32)
    for raster, (dx, dy) in zip(rasters, shifts):
        # Background 0 always loses to a surface: larger z is closer.
        combined = np.maximum(combined, _shift_raster(raster, dx, dy))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_range_raster(out, combined)
    (out.parent / f"{out.stem}_run_config.json").write_text(
        json.dumps(_run_config_payload("compose", args), indent=1)
    )
    print(out)
    return 0


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sqrecover",
        description="Synthesize, recover and evaluate superquadric "
                    "range-image scenes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="sample and render a dataset")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--train", type=int, default=0)
    gen.add_argument("--val", type=int, default=0)
    gen.add_argument("--test", type=int, default=0)
    gen.add_argument("--count-min", type=int, default=1)
    gen.add_argument("--count-max", type=int, default=5)
    gen.add_argument("--iou-threshold", type=float, default=0.25)
    gen.add_argument("--size-min", type=float, default=25.0)
    gen.add_argument("--size-max", type=float, default=76.0)
    gen.add_argument("--shape-min", type=float, default=0.01)
    gen.add_argument("--shape-max", type=float, default=1.0)
    gen.add_argument("--xy-min", type=float, default=88.0)
    gen.add_argument("--xy-max", type=float, default=169.0)
    gen.add_argument("--z-min", type=float, default=100.0)
    gen.add_argument("--z-max", type=float, default=150.0)
    gen.add_argument("--noise-sigma", type=float, default=0.0,
                     help="Gaussian depth noise on foreground pixels")
    gen.add_argument("--no-previews", action="store_true",
                     help="skip the 16-bit PNG previews")
    gen.add_argument("--jobs", type=int, default=1)
    gen.add_argument("--out", type=Path, required=True)
    gen.set_defaults(func=_cmd_generate)

    rec = sub.add_parser("recover", help="fit superquadrics to scenes")
    rec.add_argument("--manifest", type=Path)
    rec.add_argument("--split", default="test")
    rec.add_argument("--range", type=Path, help="single range raster")
    rec.add_argument("--mask", type=Path, help="single mask raster")
    rec.add_argument("--mask-source", default="oracle",
                     choices=_MASK_SOURCES)
    rec.add_argument("--corrupt-mode", default="erode-border",
                     choices=metrics.CORRUPT_MODES)
    rec.add_argument("--corrupt-severity", type=float, default=0.0)
    rec.add_argument("--masks-dir", type=Path,
                     help="directory of external .sqim masks")
    rec.add_argument("--max-iters", type=int, default=200)
    rec.add_argument("--tol", type=float, default=1e-8)
    rec.add_argument("--seed", type=int, default=0,
                     help="seed for mask corruption")
    rec.add_argument("--jobs", type=int, default=1)
    rec.add_argument("--out", type=Path, required=True)
    rec.set_defaults(func=_cmd_recover)

    ev = sub.add_parser("evaluate", help="score recovery/segmentation runs")
    ev.add_argument("--manifest", type=Path, required=True)
    ev.add_argument("--split", default="test")
    ev.add_argument("--recovery", type=Path, required=True,
                    help="output directory of a recover run or an "
                         "exported prediction run")
    ev.add_argument("--out", type=Path, required=True)
    ev.set_defaults(func=_cmd_evaluate)

    comp = sub.add_parser("compose", help="max-combine shifted depth rasters")
    comp.add_argument("inputs", nargs="+", type=Path)
    comp.add_argument("--shift", action="append", metavar="DX,DY",
                      help="per-input pixel shift, repeatable")
    comp.add_argument("--out", type=Path, required=True)
    comp.set_defaults(func=_cmd_compose)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
