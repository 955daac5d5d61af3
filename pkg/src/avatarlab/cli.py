"""Command-line experiment runner.

Subcommands: `run` (train an avatar from a YAML config), `eval` (metrics on a
PNG frame directory), `compare` (ablation table with per-seed ordering
verdicts), `export-ply` (re-encode a checkpoint for viewers), and
`render-turntable` (PNG sweep from a PLY). Exit codes: 0 success, 2 config
error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .avatar import deform_gaussians, export_ply, import_ply
from .config import ConfigError, load_config, resolve_config, save_config, to_objects
from .headmodel import CameraPose, Expression, N_BLENDSHAPES, build_head, deform_mesh
from .metrics import render_fps, video_report
from .oracle import build_oracle_world
from .pipeline import NumericalAbort, evaluate_heldout, train
from .render import render

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "AVATARLAB_OUTPUT_ROOT"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

TURNTABLE_FRAMES = 24
TURNTABLE_CAMERA = dict(distance=9.25, fovy=55.0, elevation=0.0)


def _save_png(path, rgb):
    arr = np.clip(np.asarray(rgb) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    PILImage.fromarray(arr).save(path)


def _load_png(path):
    return np.asarray(PILImage.open(path).convert("RGB"), dtype=np.float64) / 255.0


def _load_frame_dir(directory):
    paths = sorted(Path(directory).glob("*.png"))
    if not paths:
        raise FileNotFoundError(f"no PNG frames in {directory}")
    return np.stack([_load_png(p) for p in paths])


def _turntable_cameras(n_frames=TURNTABLE_FRAMES):
    azimuths = np.linspace(20.0, 160.0, n_frames)
    return [CameraPose(azimuth=float(a), **TURNTABLE_CAMERA) for a in azimuths]


def _expression_sweep():
    """Two amplitudes of every action unit: 2 * N_BLENDSHAPES frames."""
    exprs = []
    for unit in range(N_BLENDSHAPES):
        for amp in (0.5, 1.0):
            exprs.append(Expression.unit(unit, amp))
    return exprs


def _render_avatar_frames(avatar, head, cameras, expressions, resolution):
    frames = []
    for cam, expr in zip(cameras, expressions):
        world, _ = deform_gaussians(avatar, deform_mesh(head, expr))
        frames.append(render(world, cam, resolution, resolution).rgb)
    return np.stack(frames)


def _save_frames(directory, frames):
    directory.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        _save_png(directory / f"frame_{i:04d}.png", frame)


def _save_checkpoint(out_dir, iteration, avatar, state, head):
    world, _ = deform_gaussians(avatar, deform_mesh(head, Expression()))
    export_ply(world, out_dir / f"checkpoint_{iteration:06d}.ply")
    payload = {
        "iteration": np.int64(iteration),
        "adam_t": np.int64(state.t),
        "triangle_id": avatar.triangle_id,
        "mu_local": avatar.mu_local,
        "rot_local": avatar.rot_local,
        "log_scale_local": avatar.log_scale_local,
        "opacity_logit": avatar.opacity_logit,
        "color": avatar.color,
    }
    for group, m in state.m.items():
        payload[f"adam_m_{group}"] = m
        payload[f"adam_v_{group}"] = state.v[group]
    np.savez(out_dir / f"checkpoint_{iteration:06d}.state.npz", **payload)


def _resolve_output_dir(args, cfg):
    if args.out:
        return Path(args.out)
    if cfg.get("output_dir"):
        return Path(cfg["output_dir"])
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    return root / f"{cfg['mode']}-seed{cfg['seed']}"


def cmd_run(args):
    cfg = load_config(args.config) if args.config else resolve_config({})
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.mode is not None:
        cfg["mode"] = args.mode
    out_dir = _resolve_output_dir(args, cfg)
    if (out_dir / "summary.json").exists():
        raise ConfigError(f"refusing to overwrite completed experiment at {out_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg["output_dir"] = str(out_dir)

    train_cfg, curriculum, weights, corruption = to_objects(cfg)
    save_config(cfg, out_dir / "config.yaml")

    world = build_oracle_world(
        cfg["seed"],
        subdiv=train_cfg.head_subdiv,
        proportions=train_cfg.head_proportions,
        gaussians_per_triangle=train_cfg.gaussians_per_triangle,
        corruption=corruption,
    )

    metrics_path = out_dir / "metrics.jsonl"
    with open(metrics_path, "w") as metrics_file:
        def on_metrics(entry):
            metrics_file.write(json.dumps(entry, sort_keys=True) + "\n")

        def on_checkpoint(iteration, avatar, state):
            _save_checkpoint(out_dir, iteration, avatar, state, head)

        head = build_head(train_cfg.head_subdiv, train_cfg.head_proportions)
        avatar, logs = train(
            train_cfg, curriculum, world, cfg["seed"], weights,
            on_metrics=on_metrics, on_checkpoint=on_checkpoint,
        )

    final_world, _ = deform_gaussians(avatar, deform_mesh(head, Expression()))
    export_ply(final_world, out_dir / "avatar_final.ply")
    export_ply(final_world, out_dir / "avatar_final_viewer.ply", dtype="f4")

    res = train_cfg.resolution
    cams = _turntable_cameras()
    turntable = _render_avatar_frames(avatar, head, cams, [Expression()] * len(cams), res)
    _save_frames(out_dir / "turntable", turntable)
    sweep_exprs = _expression_sweep()
    frontal = CameraPose(azimuth=90.0, **TURNTABLE_CAMERA)
    sweep = _render_avatar_frames(avatar, head, [frontal] * len(sweep_exprs), sweep_exprs, res)
    _save_frames(out_dir / "expressions", sweep)

    heldout, frontal_psnr = evaluate_heldout(avatar, head, world, res)
    reference = _render_avatar_frames(avatar, head, [frontal], [Expression()], res)[0]
    report = video_report(
        turntable, reference,
        fps=render_fps(avatar, head, frontal, res),
    )
    summary = report.as_dict()
    summary.update(
        psnr_heldout=heldout,
        psnr_frontal=frontal_psnr,
        mode=cfg["mode"],
        seed=cfg["seed"],
        total_iters=train_cfg.total_iters,
    )
    del summary["psnr_db"]  # turntable has no hidden-GT counterpart here
    with open(out_dir / "summary.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    print(f"experiment written to {out_dir} (held-out PSNR {heldout:.2f} dB)")
    return EXIT_OK


def cmd_eval(args):
    frames = _load_frame_dir(args.frames)
    reference = _load_png(args.reference) if args.reference else frames[0]
    gt = _load_frame_dir(args.gt) if args.gt else None
    report = video_report(frames, reference, gt_frames=gt)
    d = report.as_dict()
    if not np.isfinite(d["render_fps"]):
        d["render_fps"] = None  # eval has no renderer to time
    payload = json.dumps(d, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(payload + "\n")
    else:
        print(payload)
    return EXIT_OK


def _load_experiment(directory):
    d = Path(directory)
    summary = d / "summary.json"
    if not summary.exists():
        return None
    with open(summary) as f:
        return json.load(f)


def compare_experiments(summaries):
    """Ablation table plus per-seed ordering verdicts against `progressive`."""
    by_mode = {}
    for s in summaries:
        by_mode.setdefault(s["mode"], {})[s["seed"]] = s
    verdicts = {}
    reference = by_mode.get("progressive", {})
    for mode, runs in by_mode.items():
        if mode == "progressive":
            continue
        common = sorted(set(runs) & set(reference))
        if not common:
            verdicts[mode] = "no common seeds"
            continue
        wins = [reference[seed]["psnr_heldout"] > runs[seed]["psnr_heldout"] for seed in common]
        verdicts[mode] = "holds" if all(wins) else "violated"
    return {
        "rows": [
            {
                "mode": s["mode"],
                "seed": s["seed"],
                "psnr_heldout": s["psnr_heldout"],
                "id_consistency": s["id_consistency"],
                "motion_stability": s["motion_stability"],
            }
            for s in summaries
        ],
        "ordering_verdicts": verdicts,
    }


def _format_table(result):
    lines = [f"{'mode':<14}{'seed':>6}{'psnr':>10}{'id':>8}{'motion':>8}"]
    for r in sorted(result["rows"], key=lambda r: (r["mode"], r["seed"])):
        lines.append(
            f"{r['mode']:<14}{r['seed']:>6}{r['psnr_heldout']:>10.2f}"
            f"{r['id_consistency']:>8.3f}{r['motion_stability']:>8.3f}"
        )
    for mode, verdict in sorted(result["ordering_verdicts"].items()):
        lines.append(f"progressive > {mode}: {verdict}")
    return "\n".join(lines)


def cmd_compare(args):
    summaries = []
    for d in args.dirs:
        s = _load_experiment(d)
        if s is None:
            log.warning("excluding incomplete experiment directory %s", d)
            continue
        summaries.append(s)
    if len(summaries) < 2:
        raise ConfigError("compare needs at least 2 completed experiment directories")
    result = compare_experiments(summaries)
    print(_format_table(result))
    if args.out:
        with open(args.out, "w") as f:
            json.dump(result, f, indent=2, sort_keys=True)
    return EXIT_OK


def cmd_export_ply(args):
    world = import_ply(args.checkpoint)
    export_ply(world, args.out, dtype=args.dtype)
    print(f"wrote {args.out} ({world.n_gaussians} Gaussians, {args.dtype})")
    return EXIT_OK


def cmd_render_turntable(args):
    world = import_ply(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, cam in enumerate(_turntable_cameras(args.frames)):
        img = render(world, cam, args.resolution, args.resolution)
        _save_png(out / f"frame_{i:04d}.png", img.rgb)
    print(f"wrote {args.frames} frames to {out}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="avatarlab",
        description="rigged Gaussian head avatars trained against a synthetic video oracle",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train an avatar and write an experiment directory")
    p_run.add_argument("--config", help="YAML config file (defaults used when omitted)")
    p_run.add_argument("--seed", type=int, help="override the config seed")
    p_run.add_argument("--mode", help="override the schedule mode")
    p_run.add_argument("--out", help="experiment output directory")
    p_run.set_defaults(func=cmd_run)

    p_eval = sub.add_parser("eval", help="compute metrics for a PNG frame directory")
    p_eval.add_argument("--frames", required=True, help="directory of PNG frames")
    p_eval.add_argument("--reference", help="reference PNG for identity consistency")
    p_eval.add_argument("--gt", help="directory of ground-truth PNG frames for PSNR")
    p_eval.add_argument("--out", help="write the JSON report here instead of stdout")
    p_eval.set_defaults(func=cmd_eval)

    p_cmp = sub.add_parser("compare", help="tabulate completed experiments")
    p_cmp.add_argument("dirs", nargs="+", help="experiment directories")
    p_cmp.add_argument("--out", help="write machine-readable JSON here")
    p_cmp.set_defaults(func=cmd_compare)

    p_exp = sub.add_parser("export-ply", help="re-encode a PLY checkpoint")
    p_exp.add_argument("--checkpoint", required=True)
    p_exp.add_argument("--out", required=True)
    p_exp.add_argument("--dtype", choices=("f4", "f8"), default="f4")
    p_exp.set_defaults(func=cmd_export_ply)

    p_tt = sub.add_parser("render-turntable", help="render a PLY as a PNG turntable")
    p_tt.add_argument("--checkpoint", required=True)
    p_tt.add_argument("--out", required=True)
    p_tt.add_argument("--frames", type=int, default=TURNTABLE_FRAMES)
    p_tt.add_argument("--resolution", type=int, default=256)
    p_tt.set_defaults(func=cmd_render_turntable)
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
