"""PASCAL-style matching, AP/mAP, and the occlusion-level sweep.

A detection is a true positive when it matches an unmatched same-part
ground-truth box at IoU >= 0.5 (greedy, best IoU first, score order).  AP is
the area under the monotone envelope of the precision/recall curve
(all-points interpolation).  The sweep reports per-part AP, mAP, candidate
peak recall, and a single-concept baseline (each part scored by its best
single concept channel) for every occlusion level split present.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .detect import (Detection, DetectConfig, DetectOutput, ScaleRegressor,
                     cell_to_original, decode_box, extract_peaks, nms, run_scene)
from .errors import DataError
from .model import DeepVotingModel, label_cell
from .scene import GRID_STRIDE, SceneAnnotation

log = logging.getLogger("deepvote.evaluate")

LEVEL_SPLITS = ["test_l0", "test_l1", "test_l2", "test_l3"]
PEAK_RECALL_RADIUS = 2.0


def iou(box_a, box_b) -> float:
    """Intersection area over union area for (x, y, w, h) pixel boxes."""
    if box_a[2] <= 0 or box_a[3] <= 0 or box_b[2] <= 0 or box_b[3] <= 0:
        raise DataError(f"boxes must have positive extents: {box_a}, {box_b}")
    ix = max(0.0, min(box_a[0] + box_a[2], box_b[0] + box_b[2]) - max(box_a[0], box_b[0]))
    iy = max(0.0, min(box_a[1] + box_a[3], box_b[1] + box_b[3]) - max(box_a[1], box_b[1]))
    inter = ix * iy
    union = box_a[2] * box_a[3] + box_b[2] * box_b[3] - inter
    return inter / union


@dataclass
class ApResult:
    ap: float
    precision: list[float]
    recall: list[float]


def match_and_ap(
    detections: list[tuple[str, Detection]],
    ground_truths: dict[str, list[tuple[float, float, float, float]]],
    iou_thresh: float = 0.5,
) -> ApResult:
    """Greedy per-image matching then all-points-interpolated average precision.

    ``detections`` are (image_id, Detection) pairs for one part; ties in score
    break by image id then row-major peak so results are reproducible.  Each
    detection may claim at most one still-unmatched ground truth (the one with
    the highest IoU at or above the threshold).
    """
    npos = sum(len(v) for v in ground_truths.values())
    order = sorted(
        detections,
        key=lambda t: (-t[1].score, t[0], t[1].peak[1], t[1].peak[0]),
    )
    used: dict[str, list[bool]] = {k: [False] * len(v) for k, v in ground_truths.items()}
    tp = np.zeros(len(order))
    fp = np.zeros(len(order))
    for i, (image_id, det) in enumerate(order):
        gts = ground_truths.get(image_id, [])
        best_j, best_iou = -1, 0.0
        for j, g in enumerate(gts):
            if used[image_id][j]:
                continue
            v = iou(det.box, g)
            if v > best_iou:
                best_j, best_iou = j, v
        if best_j >= 0 and best_iou >= iou_thresh:
            tp[i] = 1.0
            used[image_id][best_j] = True
        else:
            fp[i] = 1.0

    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(fp)
    denom = np.maximum(tp_cum + fp_cum, 1e-12)
    precision = tp_cum / denom
    recall = tp_cum / npos if npos > 0 else np.zeros(len(order))

    if npos == 0 or len(order) == 0:
        return ApResult(0.0, list(map(float, precision)), list(map(float, recall)))

    mrec = np.concatenate([[0.0], recall, [recall[-1]]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    ap = float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))
    return ApResult(ap, list(map(float, precision)), list(map(float, recall)))


def peak_recall(
    peaks_by_image: dict[str, list[tuple[int, int]]],
    gt_cells_by_image: dict[str, list[tuple[int, int]]],
    radius: float,
) -> float:
    """Fraction of ground-truth cells with a candidate peak within ``radius``."""
    total = 0
    hit = 0
    for image_id, cells in gt_cells_by_image.items():
        cands = peaks_by_image.get(image_id, [])
        for (gx, gy) in cells:
            total += 1
            if any(math.hypot(px - gx, py - gy) <= radius for px, py in cands):
                hit += 1
    return hit / total if total else 0.0


@dataclass
class LevelResult:
    ap_per_part: dict[int, float]
    mean_ap: float
    baseline_ap_per_part: dict[int, float]
    baseline_mean_ap: float
    peak_recall: float
    pr_curves: dict[int, dict] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "ap_per_part": {str(k): v for k, v in self.ap_per_part.items()},
            "mean_ap": self.mean_ap,
            "baseline_ap_per_part": {str(k): v for k, v in self.baseline_ap_per_part.items()},
            "baseline_mean_ap": self.baseline_mean_ap,
            "peak_recall": self.peak_recall,
            "pr_curves": {str(k): v for k, v in self.pr_curves.items()},
        }


@dataclass
class EvalReport:
    levels: dict[str, LevelResult]
    settings: dict

    def to_dict(self) -> dict:
        return {
            "settings": self.settings,
            "levels": {name: res.to_dict() for name, res in self.levels.items()},
        }

    def write(self, out_dir) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        io.write_json(out_dir / "report.json", self.to_dict())
        with open(out_dir / "report.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["part_id", "level", "ap"])
            for name in sorted(self.levels):
                res = self.levels[name]
                for part_id in sorted(res.ap_per_part):
                    writer.writerow([part_id, name, f"{res.ap_per_part[part_id]:.6f}"])


def _gt_boxes_per_part(
    scenes: list[tuple[np.ndarray, SceneAnnotation]], num_parts: int
) -> list[dict[str, list]]:
    per_part: list[dict[str, list]] = [dict() for _ in range(num_parts)]
    for _, ann in scenes:
        for part_id in range(num_parts):
            per_part[part_id][ann.image_id] = [
                p.box for p in ann.parts if p.part_id == part_id
            ]
    return per_part


def _single_concept_detections(
    model: DeepVotingModel, output: DetectOutput, cfg: DetectConfig
) -> dict[int, list[Detection]]:
    """Peaks of every concept channel decoded as plain anchors (no regression)."""
    concept_map = output.cache.concept_map
    zoom_x, zoom_y = output.zoom
    per_concept: dict[int, list[Detection]] = {}
    zero_reg = np.zeros(4, np.float32)
    for k in range(model.num_concepts):
        cands = [
            Detection(k, decode_box(cell, zero_reg), score, cell)
            for cell, score in extract_peaks(concept_map, cfg.tau, k)
        ]
        kept = nms(cands, cfg.nms_iou)
        for det in kept:
            bx, by, bw, bh = det.box
            det.box = (bx / zoom_x, by / zoom_y, bw / zoom_x, bh / zoom_y)
        per_concept[k] = kept
    return per_concept


def evaluate_level(
    model: DeepVotingModel,
    regressor: ScaleRegressor | None,
    scenes: list[tuple[np.ndarray, SceneAnnotation]],
    cfg: DetectConfig,
    with_baseline: bool = True,
    threads: int = 1,
) -> LevelResult:
    """Detect on every scene of one split and aggregate AP per part."""
    num_parts = model.num_parts

    def run(item):
        grid, ann = item
        return run_scene(model, regressor, grid, ann, cfg)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(run, scenes))
    else:
        outputs = [run(item) for item in scenes]

    det_by_part: list[list[tuple[str, Detection]]] = [[] for _ in range(num_parts)]
    peaks_by_image: dict[str, list[tuple[int, int]]] = {}
    gt_cells_by_image: dict[str, list[tuple[int, int]]] = {}
    baseline_by_concept: list[dict[str, list[Detection]]] = []

    for (grid, ann), output in zip(scenes, outputs):
        grid_h, grid_w = grid.shape[:2]
        cells = []
        for det in output.detections:
            det_by_part[det.part_id].append((ann.image_id, det))
            ox, oy = cell_to_original(det.peak, output.zoom)
            cells.append((int(ox / GRID_STRIDE), int(oy / GRID_STRIDE)))
        peaks_by_image[ann.image_id] = cells
        gt_cells_by_image[ann.image_id] = [
            label_cell(p.center, grid_w, grid_h) for p in ann.parts
        ]
        if with_baseline:
            baseline_by_concept.append(_single_concept_detections(model, output, cfg))

    gts = _gt_boxes_per_part(scenes, num_parts)

    ap_per_part: dict[int, float] = {}
    pr_curves: dict[int, dict] = {}
    for part_id in range(num_parts):
        res = match_and_ap(det_by_part[part_id], gts[part_id])
        ap_per_part[part_id] = res.ap
        pr_curves[part_id] = {"precision": res.precision, "recall": res.recall}
    mean_ap = float(np.mean(list(ap_per_part.values()))) if ap_per_part else 0.0

    baseline_ap: dict[int, float] = {}
    if with_baseline and scenes:
        for part_id in range(num_parts):
            best = 0.0
            for k in range(model.num_concepts):
                dets = []
                for (grid, ann), per_concept in zip(scenes, baseline_by_concept):
                    dets.extend((ann.image_id, d) for d in per_concept[k])
                best = max(best, match_and_ap(dets, gts[part_id]).ap)
            baseline_ap[part_id] = best
    baseline_mean = float(np.mean(list(baseline_ap.values()))) if baseline_ap else 0.0

    return LevelResult(
        ap_per_part=ap_per_part,
        mean_ap=mean_ap,
        baseline_ap_per_part=baseline_ap,
        baseline_mean_ap=baseline_mean,
        peak_recall=peak_recall(peaks_by_image, gt_cells_by_image, PEAK_RECALL_RADIUS),
        pr_curves=pr_curves,
    )


def occlusion_sweep(
    model: DeepVotingModel,
    regressor: ScaleRegressor | None,
    dataset_dir,
    cfg: DetectConfig | None = None,
    with_baseline: bool = True,
    threads: int = 1,
) -> EvalReport:
    """Evaluate every test_l0..test_l3 split found under ``dataset_dir``."""
    cfg = cfg or DetectConfig()
    dataset_dir = Path(dataset_dir)
    levels: dict[str, LevelResult] = {}
    for split in LEVEL_SPLITS:
        split_dir = dataset_dir / split
        if not split_dir.is_dir():
            log.info("split %s missing; skipped", split)
            continue
        scenes = io.load_split(split_dir)
        levels[split] = evaluate_level(model, regressor, scenes, cfg,
                                       with_baseline=with_baseline, threads=threads)
    settings = {
        "tau": cfg.tau,
        "nms_iou": cfg.nms_iou,
        "scale_source": cfg.scale_source,
        "match_iou": 0.5,
        "ap_interpolation": "all_points",
        "peak_recall_radius": PEAK_RECALL_RADIUS,
    }
    return EvalReport(levels=levels, settings=settings)
