"""Command-line pipeline: decompose, scene generation, sampling, labeling,
training, evaluation, and report plots.

Every subcommand reads the shared run configuration (file plus flag
overrides), writes its outputs atomically, and prints a one-line JSON
summary. Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields
from pathlib import Path

from .config import RunConfig, load_run_config
from .depthproc import add_noise, patch_from_record, record_bytes
from .errors import (DatasetNotFound, DegenerateInput, GraspForgeError,
                     NoCandidates, Overfilled)
from .geometry import decompose, load_obj, save_decomposition
from .model import load_net, save_net, train, write_metrics
from .policy import evaluate_policy, report_dict, write_stats
from .sampler import GraspPose, SamplerConfig, sample_grasps
from .scene import load_scene, render_depth, save_scene, settle_scene
from .simlab import execute_grasp, load_dataset, scene_plan, write_dataset


def _atomic_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _emit(summary: dict) -> None:
    print(json.dumps(summary, sort_keys=True))


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None,
                        help="run configuration file (key = value lines)")
    group = parser.add_argument_group("configuration overrides")
    for f in fields(RunConfig):
        flags = ["--" + f.name.replace("_", "-")]
        if f.name == "master_seed":
            flags.append("--seed")
        if f.type == "bool":
            group.add_argument(*flags, default=None, choices=("true", "false"))
        else:
            group.add_argument(*flags, default=None, metavar=f.type.upper())


def _run_config(args) -> RunConfig:
    overrides = {}
    for f in fields(RunConfig):
        raw = getattr(args, f.name, None)
        if raw is None:
            continue
        if f.type == "bool":
            overrides[f.name] = raw == "true"
        elif f.type == "int":
            overrides[f.name] = int(raw)
        elif f.type == "float":
            overrides[f.name] = float(raw)
        else:
            overrides[f.name] = raw
    return load_run_config(args.config, overrides)


# ---------------------------------------------------------------------------
# subcommands

def _cmd_decompose(args) -> dict:
    run = _run_config(args)
    mesh = load_obj(args.mesh)
    result = decompose(mesh, cell_size=run.decompose_cell,
                       concavity_tol=run.decompose_tol,
                       max_pieces=run.decompose_pieces)
    out_dir = args.out or run.mesh_dir
    stem = Path(args.mesh).stem
    manifest = save_decomposition(result, out_dir, stem)
    return {"command": "decompose", "mesh": args.mesh,
            "pieces": len(result.pieces),
            "max_concavity": result.max_concavity,
            "manifest": manifest}


def _cmd_make_scenes(args) -> dict:
    run = _run_config(args)
    cfg = run.dataset_config()
    out_dir = Path(args.out or run.dataset_dir) / "scenes"
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    skipped = {"overfilled": 0}
    for i in range(cfg.scene_count):
        plan = scene_plan(cfg, run.master_seed, i)
        try:
            scene = settle_scene(cfg.bin, [cfg.cable] * plan["cable_count"],
                                 plan["scene_seed"])
        except Overfilled:
            skipped["overfilled"] += 1
            continue
        manifest = save_scene(scene, str(out_dir / f"scene_{i:04d}"))
        entries.append({"index": i, "manifest": os.path.relpath(manifest, out_dir),
                        "scene_seed": plan["scene_seed"],
                        "cable_count": plan["cable_count"], "f": plan["f"]})
    listing = {"master_seed": run.master_seed, "scene_count": cfg.scene_count,
               "skipped": skipped, "scenes": entries}
    listing_path = out_dir / "scenes.json"
    _atomic_text(listing_path, json.dumps(listing, indent=2, sort_keys=True) + "\n")
    return {"command": "make-scenes", "scenes": len(entries),
            "skipped": skipped["overfilled"], "listing": str(listing_path)}


def _load_listing(path: str) -> tuple[dict, Path]:
    p = Path(path)
    if not p.exists():
        raise DatasetNotFound(str(p))
    return json.loads(p.read_text()), p.parent


def _cmd_sample(args) -> dict:
    run = _run_config(args)
    cfg = run.dataset_config()
    listing, base = _load_listing(args.scenes)
    out_dir = Path(args.out or run.dataset_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    blob = bytearray()
    lines = []
    no_candidates = 0
    for entry in listing["scenes"]:
        # re-derive the per-scene stream; the listing must agree or the
        # config changed between stages
        plan = scene_plan(cfg, listing["master_seed"], entry["index"])
        if plan["scene_seed"] != entry["scene_seed"]:
            raise DegenerateInput(
                "scene listing does not match the active configuration")
        scene = load_scene(str(base / entry["manifest"]))
        img, _ = render_depth(scene, cfg.camera)
        scfg = SamplerConfig(n=cfg.grasps_per_scene, f=plan["f"],
                             patch_size=cfg.patch_size,
                             camera_height=cfg.camera.height)
        rng = plan["rng"]
        cands = None
        for _ in range(cfg.resample_attempts):
            noisy = add_noise(img, rng, cfg.gauss_sigma, cfg.salt_pepper_frac)
            try:
                cands = sample_grasps(noisy, scfg, rng)
                break
            except NoCandidates:
                continue
        if cands is None:
            no_candidates += 1
            continue
        for j, (pose, _, patch) in enumerate(cands):
            row = {"scene_index": entry["index"], "candidate_index": j,
                   "x": pose.x, "y": pose.y, "z": pose.z,
                   "theta": pose.theta, "w": pose.w,
                   "patch_offset": len(blob), "patch_size_px": patch.size}
            blob += record_bytes(patch)
            lines.append(json.dumps(row, sort_keys=True))
    stem = args.stem
    blob_path = out_dir / f"{stem}.blob"
    idx_path = out_dir / f"{stem}.idx"
    tmp = blob_path.with_name(blob_path.name + ".tmp")
    tmp.write_bytes(bytes(blob))
    os.replace(tmp, blob_path)
    _atomic_text(idx_path, "\n".join(lines) + "\n" if lines else "")
    return {"command": "sample", "scenes": len(listing["scenes"]),
            "candidates": len(lines), "no_candidates": no_candidates,
            "index": str(idx_path)}


def _cmd_label(args) -> dict:
    run = _run_config(args)
    cfg = run.dataset_config()
    listing, base = _load_listing(args.scenes)
    idx_path = Path(args.candidates)
    if not idx_path.exists():
        raise DatasetNotFound(str(idx_path))
    blob = idx_path.with_suffix(".blob").read_bytes()
    by_scene: dict[int, list] = {}
    for line in idx_path.read_text().splitlines():
        if line.strip():
            row = json.loads(line)
            by_scene.setdefault(row["scene_index"], []).append(row)
    entries = {e["index"]: e for e in listing["scenes"]}
    rows = []
    for index, cand_rows in sorted(by_scene.items()):
        entry = entries.get(index)
        if entry is None:
            raise DegenerateInput(f"candidates reference unknown scene {index}")
        scene = load_scene(str(base / entry["manifest"]))
        for crow in cand_rows:
            pose = GraspPose(x=crow["x"], y=crow["y"], z=crow["z"],
                             theta=crow["theta"], w=crow["w"])
            out = execute_grasp(scene, pose, cfg.gripper, entry["f"])
            rows.append({
                "scene_index": index,
                "candidate_index": crow["candidate_index"],
                "patch": patch_from_record(blob, crow["patch_offset"]),
                "label": out.label,
                "reason": out.failure_reason,
                "contacted_ids": sorted(out.contacted_ids),
                "scene_seed": entry["scene_seed"],
                "cable_count": entry["cable_count"],
                "f": entry["f"],
                "pose": {"x": pose.x, "y": pose.y, "z": pose.z,
                         "theta": pose.theta, "w": pose.w},
            })
    sampled_scenes = {r["scene_index"] for r in rows}
    skips = {"overfilled": listing["skipped"].get("overfilled", 0),
             "no_candidates": len(listing["scenes"]) - len(sampled_scenes)}
    out_dir = args.out or run.dataset_dir
    index_path = write_dataset(rows, skips, listing["scene_count"],
                               listing["master_seed"], out_dir, args.stem)
    positives = sum(r["label"] for r in rows)
    return {"command": "label", "samples": len(rows), "positives": positives,
            "index": str(index_path)}


def _cmd_train(args) -> dict:
    run = _run_config(args)
    dataset = load_dataset(args.dataset)
    result = train(dataset, run.train_config())
    out_dir = Path(args.out or run.checkpoint_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    net_path = out_dir / f"{args.stem}.gfqn"
    tmp = net_path.with_name(net_path.name + ".tmp")
    save_net(result.net, tmp)
    os.replace(tmp, net_path)
    metrics_path = out_dir / f"{args.stem}_metrics.csv"
    tmp = metrics_path.with_name(metrics_path.name + ".tmp")
    write_metrics(result.history, tmp)
    os.replace(tmp, metrics_path)
    return {"command": "train", "samples": len(dataset),
            "epochs": len(result.history), "best_epoch": result.best_epoch,
            "best_val_acc": result.best_val_acc,
            "checkpoint": str(net_path), "metrics": str(metrics_path)}


def _cmd_evaluate(args) -> dict:
    run = _run_config(args)
    policy = run.policy_config()
    net = load_net(args.net) if args.net else None
    report = evaluate_policy(policy, net, run.eval_config(), run.master_seed)
    out_dir = Path(args.out or run.report_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / f"{args.stem}_{policy.kind}.json"
    csv_path = out_dir / f"{args.stem}_{policy.kind}.csv"
    write_stats(report, json_path, csv_path)
    summary = report_dict(report)
    summary.update(command="evaluate", stats=str(json_path))
    return summary


# ---------------------------------------------------------------------------
# report plots

def _svg_header(width, height):
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}">'
            f'<rect width="{width}" height="{height}" fill="white"/>')


def _bar_chart_svg(title: str, pairs: list[tuple[str, float]]) -> str:
    width, height, margin = 480, 300, 45
    plot_w, plot_h = width - 2 * margin, height - 2 * margin
    n = max(1, len(pairs))
    bar_w = plot_w / n * 0.7
    parts = [_svg_header(width, height),
             f'<text x="{width/2}" y="20" text-anchor="middle" '
             f'font-family="sans-serif" font-size="14">{title}</text>']
    for k in range(6):
        frac = k / 5.0
        y = height - margin - frac * plot_h
        parts.append(f'<line x1="{margin}" y1="{y}" x2="{width-margin}" '
                     f'y2="{y}" stroke="#ddd"/>')
        parts.append(f'<text x="{margin-6}" y="{y+4}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="10">{frac:.1f}</text>')
    for i, (name, value) in enumerate(pairs):
        x = margin + (i + 0.15) * plot_w / n
        bh = value * plot_h
        y = height - margin - bh
        parts.append(f'<rect x="{x:.1f}" y="{y:.1f}" width="{bar_w:.1f}" '
                     f'height="{bh:.1f}" fill="#4878a8"/>')
        parts.append(f'<text x="{x + bar_w/2:.1f}" y="{height-margin+14}" '
                     f'text-anchor="middle" font-family="sans-serif" '
                     f'font-size="10">{name}</text>')
        parts.append(f'<text x="{x + bar_w/2:.1f}" y="{y-4:.1f}" '
                     f'text-anchor="middle" font-family="sans-serif" '
                     f'font-size="10">{value:.2f}</text>')
    parts.append("</svg>")
    return "".join(parts) + "\n"


def _line_chart_svg(title: str, series: list[tuple[str, list[float]]]) -> str:
    width, height, margin = 480, 300, 45
    plot_w, plot_h = width - 2 * margin, height - 2 * margin
    hi = max((max(vals) for _, vals in series if vals), default=1.0)
    hi = hi if hi > 0 else 1.0
    colors = ("#4878a8", "#a84848", "#48a878")
    parts = [_svg_header(width, height),
             f'<text x="{width/2}" y="20" text-anchor="middle" '
             f'font-family="sans-serif" font-size="14">{title}</text>']
    for si, (name, vals) in enumerate(series):
        if not vals:
            continue
        n = len(vals)
        pts = []
        for i, v in enumerate(vals):
            x = margin + (plot_w * i / max(1, n - 1))
            y = height - margin - (v / hi) * plot_h
            pts.append(f"{x:.1f},{y:.1f}")
        color = colors[si % len(colors)]
        parts.append(f'<polyline points="{" ".join(pts)}" fill="none" '
                     f'stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{width-margin}" y="{30+12*si}" '
                     f'text-anchor="end" font-family="sans-serif" '
                     f'font-size="10" fill="{color}">{name}</text>')
    parts.append(f'<line x1="{margin}" y1="{height-margin}" '
                 f'x2="{width-margin}" y2="{height-margin}" stroke="#333"/>')
    parts.append(f'<line x1="{margin}" y1="{margin}" x2="{margin}" '
                 f'y2="{height-margin}" stroke="#333"/>')
    parts.append("</svg>")
    return "".join(parts) + "\n"


def _cmd_report(args) -> dict:
    run = _run_config(args)
    out_dir = Path(args.out or run.report_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    figures = []
    for stats_path in args.stats or []:
        p = Path(stats_path)
        if not p.exists():
            raise DatasetNotFound(str(p))
        stats = json.loads(p.read_text())
        pairs = [(count, row["rate"])
                 for count, row in sorted(stats["by_cable_count"].items(),
                                          key=lambda kv: int(kv[0]))]
        svg = _bar_chart_svg(f"success rate by cable count "
                             f"({stats['policy']})", pairs)
        fig = out_dir / f"{p.stem}_by_count.svg"
        _atomic_text(fig, svg)
        figures.append(str(fig))
    if args.metrics:
        p = Path(args.metrics)
        if not p.exists():
            raise DatasetNotFound(str(p))
        rows = p.read_text().strip().splitlines()[1:]
        losses = [float(r.split(",")[1]) for r in rows]
        accs = [float(r.split(",")[2]) for r in rows]
        svg = _line_chart_svg("training curves",
                              [("train loss", losses), ("val acc", accs)])
        fig = out_dir / f"{p.stem}_curve.svg"
        _atomic_text(fig, svg)
        figures.append(str(fig))
    return {"command": "report", "figures": figures}


# ---------------------------------------------------------------------------
# dispatch

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graspforge",
        description="cable bin-picking pipeline: scenes, grasps, labels, "
                    "training, evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="split a mesh into convex pieces")
    p.add_argument("--mesh", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--tol", dest="decompose_tol", default=None)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_decompose)

    p = sub.add_parser("make-scenes", help="settle cluttered scenes")
    p.add_argument("--out", default=None)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_make_scenes)

    p = sub.add_parser("sample", help="sample grasp candidates per scene")
    p.add_argument("--scenes", required=True, help="scenes.json listing")
    p.add_argument("--out", default=None)
    p.add_argument("--stem", default="candidates")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("label", help="run the grasp oracle over candidates")
    p.add_argument("--scenes", required=True)
    p.add_argument("--candidates", required=True, help="candidate .idx path")
    p.add_argument("--out", default=None)
    p.add_argument("--stem", default="dataset")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_label)

    p = sub.add_parser("train", help="fit the quality network")
    p.add_argument("--dataset", required=True, help="dataset .idx path")
    p.add_argument("--out", default=None)
    p.add_argument("--stem", default="qualitynet")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="run policy trials and write stats")
    p.add_argument("--net", default=None, help="checkpoint for cgcnn")
    p.add_argument("--out", default=None)
    p.add_argument("--stem", default="eval")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("report", help="emit SVG charts from stats/metrics")
    p.add_argument("--stats", action="append", default=[])
    p.add_argument("--metrics", default=None)
    p.add_argument("--out", default=None)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_report)
    return parser


def dispatch(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        summary = args.func(args)
    except GraspForgeError as exc:
        _emit({"error": type(exc).__name__, "detail": str(exc)})
        return 1
    _emit(summary)
    return 0


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
