"""Command line interface.

Subcommands: segment, generate, eval, gradcheck, train, serve. Exit codes:
0 success, 1 threshold failure (gradcheck), 2 input validation error,
3 engine error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import pngio
from .correlation import Click, LabelMask
from .engine import EngineConfig, build_provider, default_params, segment_frames
from .evaluation import combine_reports, miou, to_volume
from .params import load_params, save_params
from .rle import MaskRLE, encode_mask
from .scenes import generate_scene, hard_suites, load_scene, save_scene, standard_suites
from .training import LossConfig, grad_check, random_pair_problem, random_params, train_toy, training_init

EXIT_OK = 0
EXIT_THRESHOLD = 1
EXIT_VALIDATION = 2
EXIT_ENGINE = 3


class ValidationError(Exception):
    pass


def _load_clicks(path: Path):
    if not path.exists():
        raise ValidationError(f"clicks file not found: {path}")
    payload = json.loads(path.read_text())
    try:
        return [
            Click(frame=c["frame"], x=c["x"], y=c["y"], instance=c["instance"])
            for c in payload["clicks"]
        ]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed clicks file: {exc}") from exc


def _load_config(path) -> EngineConfig:
    if path is None:
        return EngineConfig.default()
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"config file not found: {p}")
    return EngineConfig.load(p)


def _load_params_opt(path, config: EngineConfig):
    if path is None:
        return default_params(config)
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"params file not found: {p}")
    return load_params(p)


def _write_report(report, out_dir: Path, figures: bool) -> None:
    (out_dir / "report.json").write_text(json.dumps(report.to_json(), indent=2))
    with open(out_dir / "report.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "class", "iou"])
        for row in report.per_instance:
            writer.writerow([row["id"], row["class"] or "", f"{row['iou']:.6f}"])
        writer.writerow(["miou", "", f"{report.miou:.6f}"])
    if figures:
        from .figures import save_iou_bars

        save_iou_bars(out_dir / "report.png", report)


def cmd_segment(args) -> int:
    frames_dir = Path(args.frames)
    if not frames_dir.is_dir():
        raise ValidationError(f"frames directory not found: {frames_dir}")
    frames = pngio.load_frames_dir(frames_dir)
    clicks_path = Path(args.clicks) if args.clicks else frames_dir / "clicks.json"
    clicks = _load_clicks(clicks_path)
    config = _load_config(args.config)
    params = _load_params_opt(args.params, config)
    for c in clicks:
        if not (0 <= c.frame < len(frames)):
            raise ValidationError(f"click frame {c.frame} out of range (0..{len(frames) - 1})")

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = segment_frames(frames, clicks, config, params)

    rles = []
    for t, mask in enumerate(result.masks):
        pngio.save_indexed_png(out_dir / f"mask_{t:06d}.png", mask.grid)
        rles.append(encode_mask(mask, frame=t).to_json())
    (out_dir / "masks.rle.json").write_text(json.dumps({"version": 1, "frames": rles}, indent=2))

    gt_paths = sorted(frames_dir.glob("gt_*.png"))
    if gt_paths:
        gt = [LabelMask(pngio.load_indexed_png(p)) for p in gt_paths]
        classes = {}
        manifest_path = frames_dir / "manifest.json"
        if manifest_path.exists():
            manifest = json.loads(manifest_path.read_text())
            classes = {e["id"]: e.get("class") for e in manifest.get("instances", [])}
        ids = sorted(set(c.instance for c in clicks))
        report = miou(
            to_volume(result.masks, ids, classes), to_volume(gt, ids, classes)
        )
        _write_report(report, out_dir, not args.no_figures)
    if not args.no_figures:
        from .figures import save_overlay_strip

        save_overlay_strip(out_dir / "overlays.png", frames, result.masks, clicks)
    return EXIT_OK


def cmd_generate(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.suite == "standard":
        suites = standard_suites(args.seed)
    elif args.suite == "hard":
        suites = hard_suites(args.seed)
    else:
        raise ValidationError(f"unknown suite {args.suite!r}")
    count = 0
    for split, cfgs in suites.items():
        for i, cfg in enumerate(cfgs):
            sample = generate_scene(cfg, click_mode=args.click_mode, click_seed=args.click_seed)
            save_scene(sample, out_dir / f"{split}_{i:03d}")
            count += 1
    print(f"wrote {count} scene folders under {out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    for d in (pred_dir, gt_dir):
        if not d.is_dir():
            raise ValidationError(f"not a directory: {d}")

    def load_masks(d: Path, prefix: str):
        paths = sorted(d.glob(f"{prefix}_*.png"))
        if not paths:
            raise ValidationError(f"no {prefix}_*.png masks in {d}")
        return [LabelMask(pngio.load_indexed_png(p)) for p in paths]

    pred = load_masks(pred_dir, args.pred_prefix)
    gt = load_masks(gt_dir, args.gt_prefix)
    if len(pred) != len(gt):
        raise ValidationError(f"mask counts differ: {len(pred)} vs {len(gt)}")
    ids = sorted(set().union(*[m.labels() for m in gt + pred]) - {0})
    report = miou(to_volume(pred, ids), to_volume(gt, ids))
    print(json.dumps(report.to_json(), indent=2))
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_report(report, out_dir, not args.no_figures)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    worst = 0.0
    per_field_worst = {}
    for trial in range(args.trials):
        rng = np.random.default_rng(args.seed * 1000 + trial)
        dim = int(rng.integers(4, 9))
        h = int(rng.integers(3, 7))
        w = int(rng.integers(3, 7))
        n = int(rng.integers(1, 4))
        steps = (0, 1, 3)[trial % 3]
        problem = random_pair_problem(rng, dim, h, w, n)
        params = random_params(rng, dim)
        report = grad_check(
            params,
            [problem],
            steps=steps,
            loss_cfg=LossConfig(n_background=6, n_interior=3, n_boundary=3, rng_seed=trial),
            eps=args.eps,
        )
        worst = max(worst, report.max_rel_error)
        for k, v in report.per_field.items():
            per_field_worst[k] = max(per_field_worst.get(k, 0.0), v)
    print(json.dumps({"max_rel_error": worst, "per_field": per_field_worst, "trials": args.trials}, indent=2))
    return EXIT_OK if worst < args.threshold else EXIT_THRESHOLD


def cmd_train(args) -> int:
    suites = hard_suites(args.seed)
    config = _load_config(args.config)
    train_scenes = [generate_scene(sc, click_mode="center") for sc in suites["train"]]
    params0 = training_init(config.feature)
    params, losses = train_toy(
        train_scenes,
        params0,
        steps=args.steps,
        lr=args.lr,
        seed=args.seed,
        feature_cfg=config.feature,
        refinement_steps=config.propagation.refinement_steps,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_params(params, out)
    print(f"loss {losses[0]:.4f} -> {losses[-1]:.4f} over {len(losses)} steps; params -> {out}")
    if args.curve:
        curve_dir = Path(args.curve)
        curve_dir.mkdir(parents=True, exist_ok=True)
        with open(curve_dir / "losses.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "loss"])
            for i, value in enumerate(losses):
                writer.writerow([i, f"{value:.8f}"])
        from .figures import save_loss_curve

        save_loss_curve(curve_dir / "loss_curve.png", losses)
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    config = _load_config(args.config)
    params = _load_params_opt(args.params, config)
    app = create_app(args.data_dir, config=config, params=params, ui_dir=args.ui_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clickseg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", help="propagate clicks through a frame folder")
    p.add_argument("--frames", required=True, help="folder with frame_%%06d.png")
    p.add_argument("--clicks", help="clicks.json (defaults to <frames>/clicks.json)")
    p.add_argument("--config", help="engine config JSON")
    p.add_argument("--params", help="VCPB parameter bundle")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-figures", action="store_true", help="skip matplotlib renderings")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("generate", help="write synthetic scene folders")
    p.add_argument("--suite", default="standard", choices=["standard", "hard"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--click-mode", default="random_interior", choices=["random_interior", "center"])
    p.add_argument("--click-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="mask-volume mIOU between two mask folders")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--pred-prefix", default="mask")
    p.add_argument("--gt-prefix", default="gt")
    p.add_argument("--out", help="optional report directory")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="verify gradients against central differences")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--threshold", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train", help="gradient-descent training on the hard suite")
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--lr", type=float, default=2e-2)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--config", help="engine config JSON")
    p.add_argument("--out", required=True, help="output VCPB path")
    p.add_argument("--curve", help="directory for losses.csv + loss_curve.png")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("serve", help="run the annotation session service")
    p.add_argument("--port", type=int, default=8077)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--config", help="engine config JSON")
    p.add_argument("--params", help="VCPB parameter bundle")
    p.add_argument("--ui-dir", help="static UI files to host at /")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # engine failures
        print(f"engine error: {exc}", file=sys.stderr)
        return EXIT_ENGINE


if __name__ == "__main__":
    sys.exit(main())
