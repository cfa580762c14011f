"""Inference: scale normalization, peak decoding, anchor regression, NMS.

A scene is rescaled so the (predicted) object short edge sits at the canonical
14 cells, run through the head, and each part's map is decoded by taking
strict 3x3 local maxima above a score threshold.  Every peak spawns a fixed
100x100-pixel anchor refined by the per-part regression, detections are
greedily suppressed per part, and boxes are mapped back to the original pixel
frame.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .model import DeepVotingModel, ForwardCache, forward
from .ops import bilinear_resize, l2_normalize_locations
from .scene import ANCHOR_SIZE, CANONICAL_OBJECT_CELLS, GRID_STRIDE, SceneAnnotation

SCALE_RATIO_MIN = 0.05
SCALE_RATIO_MAX = 1.0


@dataclass
class Detection:
    part_id: int
    box: tuple[float, float, float, float]  # pixels, original frame
    score: float
    peak: tuple[int, int]  # (w, h) cell in the rescaled grid the score came from

    def to_dict(self, image_id: str) -> dict:
        return {
            "image_id": image_id,
            "part_id": self.part_id,
            "box": [float(v) for v in self.box],
            "score": float(self.score),
            "peak": [int(self.peak[0]), int(self.peak[1])],
        }


@dataclass
class ScaleRegressor:
    """Linear readout of the object-to-image scale ratio from pooled features.

    The statistic is the per-channel mean absolute feature value; predictions
    are clamped to (0.05, 1.0].
    """

    weights: np.ndarray
    bias: float

    def predict(self, grid: np.ndarray) -> float:
        stats = pooled_stats(grid)
        raw = float(stats @ self.weights.astype(np.float64)) + self.bias
        return float(np.clip(raw, SCALE_RATIO_MIN, SCALE_RATIO_MAX))


def pooled_stats(grid: np.ndarray) -> np.ndarray:
    """Per-channel mean |feature| over all grid locations (float64)."""
    return np.abs(grid.astype(np.float64)).mean(axis=(0, 1))


def fit_scale_regressor(
    scenes: list[tuple[np.ndarray, SceneAnnotation]], ridge: float = 1e-3
) -> ScaleRegressor:
    """Ridge-regress annotation scale ratios onto pooled feature statistics."""
    if not scenes:
        raise ConfigError("cannot fit scale regressor on an empty scene list")
    stats = np.stack([pooled_stats(grid) for grid, _ in scenes])
    targets = np.array([ann.scale_ratio for _, ann in scenes], dtype=np.float64)
    n, d = stats.shape
    design = np.concatenate([stats, np.ones((n, 1))], axis=1)
    gram = design.T @ design + ridge * np.eye(d + 1)
    coef = np.linalg.solve(gram, design.T @ targets)
    return ScaleRegressor(weights=coef[:d].astype(np.float32), bias=float(coef[d]))


@dataclass
class DetectConfig:
    tau: float = 0.3
    nms_iou: float = 0.3
    scale_source: str = "predicted"  # "predicted" | "ground_truth"

    @classmethod
    def from_flat(cls, flat: dict) -> "DetectConfig":
        cfg = cls()
        for key, value in flat.items():
            if key.startswith("detect."):
                name = key.split(".", 1)[1]
                if not hasattr(cfg, name):
                    raise ConfigError(f"unknown config key {key}")
                setattr(cfg, name, type(getattr(cfg, name))(value))
        if cfg.scale_source not in ("predicted", "ground_truth"):
            raise ConfigError(f"scale_source must be predicted|ground_truth, got {cfg.scale_source}")
        return cfg


def extract_peaks(part_map: np.ndarray, tau: float, part_id: int) -> list[tuple[tuple[int, int], float]]:
    """Strict 3x3 local maxima with score >= tau for one part channel.

    Returns ((w, h) cell, score) pairs sorted by score descending; equal
    scores order by row-major cell index.  A plateau has no strict maximum.
    """
    if not math.isfinite(tau):
        raise ConfigError("tau must be finite")
    plane = part_map[:, :, part_id]
    h, w = plane.shape
    padded = np.full((h + 2, w + 2), -np.inf, dtype=np.float64)
    padded[1:h + 1, 1:w + 1] = plane
    is_peak = plane >= tau
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dx == 0 and dy == 0:
                continue
            neighbor = padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
            is_peak &= plane > neighbor
    ys, xs = np.nonzero(is_peak)
    peaks = [((int(x), int(y)), float(plane[y, x])) for y, x in zip(ys, xs)]
    peaks.sort(key=lambda p: (-p[1], p[0][1] * w + p[0][0]))
    return peaks


def decode_box(peak: tuple[int, int], regression: np.ndarray) -> tuple[float, float, float, float]:
    """Anchor box at a peak cell refined by (dx, dy, dlogw, dlogh)."""
    cx = peak[0] * GRID_STRIDE + GRID_STRIDE // 2
    cy = peak[1] * GRID_STRIDE + GRID_STRIDE // 2
    dx, dy, dlw, dlh = (float(v) for v in regression)
    cx = cx + dx * ANCHOR_SIZE
    cy = cy + dy * ANCHOR_SIZE
    bw = ANCHOR_SIZE * math.exp(dlw)
    bh = ANCHOR_SIZE * math.exp(dlh)
    return (cx - bw / 2.0, cy - bh / 2.0, bw, bh)


def _iou(a, b) -> float:
    ax0, ay0, aw, ah = a
    bx0, by0, bw, bh = b
    ix = max(0.0, min(ax0 + aw, bx0 + bw) - max(ax0, bx0))
    iy = max(0.0, min(ay0 + ah, by0 + bh) - max(ay0, by0))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def nms(detections: list[Detection], iou_thresh: float) -> list[Detection]:
    """Greedy suppression for one part: keep the best, drop overlaps >= thresh."""
    ordered = sorted(detections, key=lambda d: (-d.score, d.peak[1], d.peak[0]))
    kept: list[Detection] = []
    for det in ordered:
        if all(_iou(det.box, k.box) < iou_thresh for k in kept):
            kept.append(det)
    return kept


@dataclass
class DetectOutput:
    detections: list[Detection]
    cache: ForwardCache
    zoom: tuple[float, float]  # (zoom_x, zoom_y): rescaled px = original px * zoom
    ratio: float               # scale ratio used
    annotation: SceneAnnotation | None = None


def run_scene(
    model: DeepVotingModel,
    regressor: ScaleRegressor | None,
    grid: np.ndarray,
    ann: SceneAnnotation | None = None,
    cfg: DetectConfig | None = None,
) -> DetectOutput:
    """Full inference on one normalized feature grid.

    Uses the predicted scale ratio unless the config requests the annotation's
    ground-truth ratio.  Inference is deterministic: dropout is off.
    """
    cfg = cfg or DetectConfig()
    if cfg.scale_source == "ground_truth":
        if ann is None:
            raise ConfigError("ground-truth scale requested but no annotation supplied")
        ratio = float(np.clip(ann.scale_ratio, SCALE_RATIO_MIN, SCALE_RATIO_MAX))
    else:
        if regressor is None:
            raise ConfigError("no scale regressor supplied")
        ratio = regressor.predict(grid)

    h, w = grid.shape[:2]
    zoom = CANONICAL_OBJECT_CELLS / (ratio * max(h, w))
    out_h = max(1, int(math.floor(h * zoom + 0.5)))
    out_w = max(1, int(math.floor(w * zoom + 0.5)))
    if (out_h, out_w) == (h, w):
        feats = grid
        zoom_x = zoom_y = 1.0
    else:
        feats = l2_normalize_locations(bilinear_resize(grid, out_h, out_w))
        zoom_x = out_w / w
        zoom_y = out_h / h

    _, part_map, cache = forward(model, feats, training=False)

    detections: list[Detection] = []
    for part_id in range(model.num_parts):
        cands = [
            Detection(part_id, decode_box(cell, model.box_regressor[part_id]), score, cell)
            for cell, score in extract_peaks(part_map, cfg.tau, part_id)
        ]
        for det in nms(cands, cfg.nms_iou):
            bx, by, bw, bh = det.box
            det.box = (bx / zoom_x, by / zoom_y, bw / zoom_x, bh / zoom_y)
            detections.append(det)
    detections.sort(key=lambda d: (d.part_id, -d.score, d.peak[1], d.peak[0]))
    return DetectOutput(detections, cache, (zoom_x, zoom_y), ratio, ann)


def detect(
    model: DeepVotingModel,
    regressor: ScaleRegressor | None,
    grid: np.ndarray,
    ann: SceneAnnotation | None = None,
    cfg: DetectConfig | None = None,
) -> list[Detection]:
    return run_scene(model, regressor, grid, ann, cfg).detections


def cell_to_original(cell: tuple[int, int], zoom: tuple[float, float]) -> tuple[float, float]:
    """Center pixel (original frame) of a rescaled-grid cell."""
    return (
        (cell[0] + 0.5) * GRID_STRIDE / zoom[0],
        (cell[1] + 0.5) * GRID_STRIDE / zoom[1],
    )
