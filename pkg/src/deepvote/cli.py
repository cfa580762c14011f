"""Command-line entry point: synth / train / detect / eval / sweep / explain /
ablate-kernel / version.

Exit codes: 0 success, 1 usage error, 2 data or I/O error.  Config files are
flat dotted-key JSON; flags override file values, and the effective config is
echoed into every output directory.  Set DEEPVOTE_LOG=error|info|debug to
control verbosity.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import __version__, io
from .checkpoint import load_checkpoint
from .config import echo_config, load_flat_config, merge_overrides
from .detect import DetectConfig, run_scene
from .errors import ConfigError, DataError, DeepVoteError
from .evaluate import Detection, match_and_ap, occlusion_sweep
from .explain import explain_report, render_heatmap
from .synth import SynthConfig, dataset_generate
from .train import TrainConfig, train

log = logging.getLogger("deepvote.cli")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _setup_logging() -> None:
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("DEEPVOTE_LOG", "info").lower(), logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def build_parser() -> _Parser:
    parser = _Parser(prog="deepvote", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    def common(p):
        p.add_argument("--config", type=Path, help="flat dotted-key JSON config")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("synth", help="generate the synthetic benchmark dataset")
    common(p)

    p = sub.add_parser("train", help="train a model on a dataset")
    common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--mode", choices=["dv", "dv+"])
    p.add_argument("--kernel-size", type=int, dest="kernel_size")

    p = sub.add_parser("detect", help="run detection on one split")
    p.add_argument("--config", type=Path)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True, help="dataset root")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--level", type=int, default=0, choices=[0, 1, 2, 3])
    p.add_argument("--tau", type=float)
    p.add_argument("--nms-iou", type=float, dest="nms_iou")
    p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("eval", help="score a detections file against one split")
    p.add_argument("--detections", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True, help="dataset root")
    p.add_argument("--level", type=int, default=0, choices=[0, 1, 2, 3])
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("sweep", help="evaluate across all occlusion levels")
    p.add_argument("--config", type=Path)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--tau", type=float)
    p.add_argument("--nms-iou", type=float, dest="nms_iou")
    p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("explain", help="explain detections on one scene")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--level", type=int, default=0, choices=[0, 1, 2, 3])
    p.add_argument("--image", required=True, help="image id within the split")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--top-k", type=int, default=3, dest="top_k")
    p.add_argument("--tau", type=float)
    p.add_argument("--nms-iou", type=float, dest="nms_iou")

    p = sub.add_parser("ablate-kernel", help="train/evaluate kernel sizes 11/15/19")
    common(p)
    p.add_argument("--data", type=Path, required=True)

    sub.add_parser("version", help="print the package version")
    return parser


def _load_config(args, extra_overrides: dict | None = None) -> dict:
    flat = load_flat_config(args.config) if getattr(args, "config", None) else {}
    overrides = dict(extra_overrides or {})
    if getattr(args, "seed", None) is not None:
        for key in ("synth.seed", "train.seed"):
            overrides[key] = args.seed
    return merge_overrides(flat, overrides)


def _detect_config(args, flat: dict) -> DetectConfig:
    merged = merge_overrides(flat, {
        "detect.tau": getattr(args, "tau", None),
        "detect.nms_iou": getattr(args, "nms_iou", None),
    })
    return DetectConfig.from_flat(merged)


def cmd_synth(args) -> int:
    flat = _load_config(args)
    cfg = SynthConfig.from_flat(flat)
    manifest = dataset_generate(cfg, args.out)
    echo_config(args.out, flat)
    log.info("wrote %d train + 4x%d test scenes to %s",
             manifest["counts"]["train"], manifest["counts"]["test_per_level"], args.out)
    return 0


def cmd_train(args) -> int:
    flat = _load_config(args, {
        "train.mode": args.mode,
        "train.kernel_size": args.kernel_size,
    })
    cfg = TrainConfig.from_flat(flat)
    ckpt = train(cfg, args.data, args.out)
    echo_config(args.out, flat)
    log.info("checkpoint written to %s", ckpt)
    return 0


def cmd_detect(args) -> int:
    from concurrent.futures import ThreadPoolExecutor

    flat = _load_config(args)
    det_cfg = _detect_config(args, flat)
    model, scale_reg, _ = load_checkpoint(args.model)
    split = Path(args.data) / f"test_l{args.level}"
    scenes = io.load_split(split)

    def run(item):
        grid, ann = item
        return [det.to_dict(ann.image_id)
                for det in run_scene(model, scale_reg, grid, ann, det_cfg).detections]

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            chunks = list(pool.map(run, scenes))
    else:
        chunks = [run(item) for item in scenes]
    rows = [row for chunk in chunks for row in chunk]
    args.out.mkdir(parents=True, exist_ok=True)
    io.write_detections(args.out / "detections.json", rows)
    echo_config(args.out, merge_overrides(flat, {
        "detect.tau": det_cfg.tau, "detect.nms_iou": det_cfg.nms_iou}))
    log.info("%d detections written", len(rows))
    return 0


def cmd_eval(args) -> int:
    rows = io.read_json(args.detections)
    split = Path(args.data) / f"test_l{args.level}"
    scenes = io.load_split(split, normalize=False)
    num_parts = max((p.part_id for _, ann in scenes for p in ann.parts), default=-1) + 1
    gts = {part_id: {} for part_id in range(num_parts)}
    for _, ann in scenes:
        for part_id in range(num_parts):
            gts[part_id][ann.image_id] = [p.box for p in ann.parts if p.part_id == part_id]
    by_part: dict[int, list] = {part_id: [] for part_id in range(num_parts)}
    for row in rows:
        det = Detection(int(row["part_id"]), tuple(row["box"]), float(row["score"]),
                        tuple(row.get("peak", (0, 0))))
        if det.part_id in by_part:
            by_part[det.part_id].append((str(row["image_id"]), det))
    report = {"per_part": {}, "mean_ap": 0.0}
    aps = []
    for part_id in range(num_parts):
        res = match_and_ap(by_part[part_id], gts[part_id])
        report["per_part"][str(part_id)] = {
            "ap": res.ap, "precision": res.precision, "recall": res.recall}
        aps.append(res.ap)
    report["mean_ap"] = sum(aps) / len(aps) if aps else 0.0
    args.out.mkdir(parents=True, exist_ok=True)
    io.write_json(args.out / "eval.json", report)
    echo_config(args.out, {"eval.level": args.level,
                           "eval.detections": str(args.detections)})
    log.info("mAP %.4f over %d parts", report["mean_ap"], num_parts)
    return 0


def cmd_sweep(args) -> int:
    flat = _load_config(args)
    det_cfg = _detect_config(args, flat)
    model, scale_reg, _ = load_checkpoint(args.model)
    report = occlusion_sweep(model, scale_reg, args.data, det_cfg, threads=args.threads)
    report.write(args.out)
    echo_config(args.out, merge_overrides(flat, {
        "detect.tau": det_cfg.tau, "detect.nms_iou": det_cfg.nms_iou}))
    for name in sorted(report.levels):
        log.info("%s: mAP %.4f (single-concept baseline %.4f)",
                 name, report.levels[name].mean_ap, report.levels[name].baseline_mean_ap)
    return 0


def cmd_explain(args) -> int:
    det_cfg = _detect_config(args, {})
    model, scale_reg, _ = load_checkpoint(args.model)
    split = Path(args.data) / f"test_l{args.level}"
    for grid, ann in io.load_split(split):
        if ann.image_id != args.image:
            continue
        output = run_scene(model, scale_reg, grid, ann, det_cfg)
        args.out.mkdir(parents=True, exist_ok=True)
        reports = []
        for i, det in enumerate(output.detections):
            rep = explain_report(model, ann, det, output, top_k=args.top_k)
            reports.append(rep)
            for cue in rep["cues"]:
                heatmap = args.out / f"heatmap_vc{cue['concept_id']:03d}_sp{det.part_id}.pgm"
                render_heatmap(model, cue["concept_id"], det.part_id, heatmap)
        io.write_json(args.out / f"explain_{args.image}.json", reports)
        echo_config(args.out, {"explain.level": args.level, "explain.image": args.image,
                               "explain.top_k": args.top_k,
                               "detect.tau": det_cfg.tau, "detect.nms_iou": det_cfg.nms_iou})
        log.info("explained %d detections on %s", len(reports), args.image)
        return 0
    raise DataError(f"image id {args.image!r} not found in {split}")


def cmd_ablate(args) -> int:
    flat = _load_config(args)
    det_cfg = DetectConfig.from_flat(flat)
    results = {}
    for k in (11, 15, 19):
        run_flat = merge_overrides(flat, {"train.kernel_size": k})
        cfg = TrainConfig.from_flat(run_flat)
        run_dir = args.out / f"k{k}"
        ckpt = train(cfg, args.data, run_dir)
        model, scale_reg, _ = load_checkpoint(ckpt)
        report = occlusion_sweep(model, scale_reg, args.data, det_cfg,
                                 with_baseline=False, threads=args.threads)
        results[str(k)] = {name: res.mean_ap for name, res in report.levels.items()}
        echo_config(run_dir, run_flat)
    io.write_json(args.out / "ablation.json", results)
    l3 = {k: v.get("test_l3") for k, v in results.items() if "test_l3" in v}
    if l3:
        ordering = " >= ".join(f"K={k} ({l3[k]:.4f})"
                               for k in sorted(l3, key=lambda k: -l3[k]))
        log.info("L3 mAP ordering: %s", ordering)
    echo_config(args.out, flat)
    return 0


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 1
        if args.command == "version":
            print(__version__)
            return 0
        handler = {
            "synth": cmd_synth,
            "train": cmd_train,
            "detect": cmd_detect,
            "eval": cmd_eval,
            "sweep": cmd_sweep,
            "explain": cmd_explain,
            "ablate-kernel": cmd_ablate,
        }[args.command]
        return handler(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (DataError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except DeepVoteError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
