"""Training orchestration: preprocessing modes, head optimization, regressors.

Two preprocessing modes: "dv" crops the feature grid to the object box before
rescaling the object short edge to the canonical 14 cells; "dv+" keeps the
whole grid (context included) and rescales by the same object-derived ratio.
The head trains on one scene per step with a seeded shuffle; the per-part box
regressor and the scale regressor are fitted afterwards from the same split.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .checkpoint import save_checkpoint
from .config import config_hash
from .detect import extract_peaks, fit_scale_regressor
from .errors import ConfigError, DataError
from .model import (DEFAULT_DROPOUT, DEFAULT_KERNEL_SIZE, DEFAULT_NUM_CONCEPTS,
                    DeepVotingModel, forward, make_label_cube, train_step)
from .ops import SGD, bilinear_resize, l2_normalize_locations
from .scene import (ANCHOR_SIZE, CANONICAL_OBJECT_CELLS, GRID_STRIDE,
                    SceneAnnotation, transform_annotation)

log = logging.getLogger("deepvote.train")


@dataclass
class TrainConfig:
    mode: str = "dv+"              # "dv" (object crop) or "dv+" (full image)
    epochs: int = 50
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    dropout_p: float = DEFAULT_DROPOUT
    sigma_label: float = 1.0
    kernel_size: int = DEFAULT_KERNEL_SIZE
    num_concepts: int = DEFAULT_NUM_CONCEPTS
    seed: int = 0
    tau: float = 0.3               # peak threshold when fitting the box regressor
    anchor_match_iou: float = 0.3

    def __post_init__(self):
        if self.mode not in ("dv", "dv+"):
            raise ConfigError(f"mode must be 'dv' or 'dv+', got {self.mode!r}")
        if self.kernel_size % 2 == 0:
            raise ConfigError("kernel_size must be odd")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")

    @classmethod
    def from_flat(cls, flat: dict) -> "TrainConfig":
        kwargs = {}
        for key, value in flat.items():
            if key.startswith("train."):
                name = key.split(".", 1)[1]
                if name not in cls.__dataclass_fields__:
                    raise ConfigError(f"unknown config key {key}")
                kwargs[name] = value
        cfg = cls(**kwargs)
        cfg.epochs = int(cfg.epochs)
        cfg.kernel_size = int(cfg.kernel_size)
        cfg.num_concepts = int(cfg.num_concepts)
        cfg.seed = int(cfg.seed)
        return cfg

    def to_flat(self) -> dict:
        return {f"train.{k}": v for k, v in vars(self).items()}


@dataclass
class PreprocessedScene:
    features: np.ndarray
    labels: np.ndarray
    annotation: SceneAnnotation
    zoom: tuple[float, float]


def preprocess(
    grid: np.ndarray,
    ann: SceneAnnotation,
    mode: str,
    num_parts: int,
    sigma: float = 1.0,
) -> PreprocessedScene:
    """Bring one scene to the canonical object scale for training.

    "dv": crop to the object box (cells, rounded outward) then rescale so the
    object short edge is 14 cells.  "dv+": rescale the whole grid by the same
    ratio.  The grid is re-normalized after resampling and the label cube is
    built on the resulting grid.
    """
    x, y, w, h = ann.object_box
    if w <= 0 or h <= 0:
        raise DataError(f"{ann.image_id}: degenerate object box {ann.object_box}")
    grid_h, grid_w = grid.shape[:2]

    if mode == "dv":
        c0 = max(int(math.floor(x / GRID_STRIDE)), 0)
        r0 = max(int(math.floor(y / GRID_STRIDE)), 0)
        c1 = min(int(math.ceil((x + w) / GRID_STRIDE)), grid_w)
        r1 = min(int(math.ceil((y + h) / GRID_STRIDE)), grid_h)
        if c1 <= c0 or r1 <= r0:
            raise DataError(f"{ann.image_id}: object box outside the grid")
        sub = grid[r0:r1, c0:c1]
        offset_px = (c0 * GRID_STRIDE, r0 * GRID_STRIDE)
        short_cells = min(c1 - c0, r1 - r0)
    elif mode == "dv+":
        sub = grid
        offset_px = (0.0, 0.0)
        short_cells = min(w, h) / GRID_STRIDE
    else:
        raise ConfigError(f"unknown mode {mode!r}")

    zoom = CANONICAL_OBJECT_CELLS / short_cells
    sub_h, sub_w = sub.shape[:2]
    out_h = max(1, int(math.floor(sub_h * zoom + 0.5)))
    out_w = max(1, int(math.floor(sub_w * zoom + 0.5)))
    if (out_h, out_w) == (sub_h, sub_w):
        feats = np.ascontiguousarray(sub)
        zoom_xy = (1.0, 1.0)
    else:
        feats = l2_normalize_locations(bilinear_resize(sub, out_h, out_w))
        zoom_xy = (out_w / sub_w, out_h / sub_h)

    ann2 = transform_annotation(ann, offset_px, zoom_xy)
    labels = make_label_cube(ann2, out_w, out_h, num_parts, sigma)
    return PreprocessedScene(feats, labels, ann2, zoom_xy)


def fit_box_regressor(
    model: DeepVotingModel,
    scenes: list[PreprocessedScene],
    tau: float = 0.3,
    match_iou: float = 0.3,
) -> np.ndarray:
    """Least-squares anchor corrections per part from training-scene peaks.

    Each inference peak whose 100x100 anchor overlaps a same-part ground-truth
    box at IoU >= match_iou contributes a target
    ((gx-ax)/wa, (gy-ay)/ha, log(gw/wa), log(gh/ha)); the per-part fit of a
    constant model is the target mean.  Parts with no matches keep the
    identity regression and log a warning.
    """
    num_parts = model.num_parts
    targets: list[list[np.ndarray]] = [[] for _ in range(num_parts)]
    for scene in scenes:
        _, part_map, _ = forward(model, scene.features, training=False)
        for part_id in range(num_parts):
            gts = [p.box for p in scene.annotation.parts if p.part_id == part_id]
            if not gts:
                continue
            for (cell, _score) in extract_peaks(part_map, tau, part_id):
                ax = cell[0] * GRID_STRIDE + GRID_STRIDE // 2
                ay = cell[1] * GRID_STRIDE + GRID_STRIDE // 2
                anchor = (ax - ANCHOR_SIZE / 2, ay - ANCHOR_SIZE / 2, ANCHOR_SIZE, ANCHOR_SIZE)
                best, best_iou = None, 0.0
                for g in gts:
                    v = _box_iou(anchor, g)
                    if v > best_iou:
                        best, best_iou = g, v
                if best is None or best_iou < match_iou:
                    continue
                gx, gy = best[0] + best[2] / 2, best[1] + best[3] / 2
                targets[part_id].append(np.array([
                    (gx - ax) / ANCHOR_SIZE,
                    (gy - ay) / ANCHOR_SIZE,
                    math.log(best[2] / ANCHOR_SIZE),
                    math.log(best[3] / ANCHOR_SIZE),
                ], dtype=np.float64))

    out = np.zeros((num_parts, 4), np.float32)
    for part_id, rows in enumerate(targets):
        if rows:
            out[part_id] = np.mean(rows, axis=0).astype(np.float32)
        else:
            log.warning("part %d: no matched peaks; keeping identity box regression", part_id)
    return out


def _box_iou(a, b) -> float:
    ix = max(0.0, min(a[0] + a[2], b[0] + b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[1] + a[3], b[1] + b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = a[2] * a[3] + b[2] * b[3] - inter
    return inter / union if union > 0 else 0.0


def train(cfg: TrainConfig, data_dir, out_dir) -> Path:
    """Full training run; returns the path of the written checkpoint.

    Refuses any occluded scene in the train split.  Writes ``model.dvck``,
    ``train_log.json`` (per-epoch mean loss), and the effective config into
    ``out_dir``; identical config and seed reproduce identical bytes.
    """
    data_dir = Path(data_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    raw_scenes = io.load_split(data_dir / "train")
    if not raw_scenes:
        raise DataError(f"no training scenes under {data_dir / 'train'}")
    for _, ann in raw_scenes:
        if ann.occlusion.level != 0 or ann.occlusion.boxes:
            raise DataError(f"occluded scene in training set: {ann.image_id}")

    num_parts = max(p.part_id for _, ann in raw_scenes for p in ann.parts) + 1
    feature_dim = raw_scenes[0][0].shape[2]

    scenes = [preprocess(grid, ann, cfg.mode, num_parts, cfg.sigma_label)
              for grid, ann in raw_scenes]

    model = DeepVotingModel.initialize(
        feature_dim, num_parts,
        num_concepts=cfg.num_concepts,
        kernel_size=cfg.kernel_size,
        dropout_p=cfg.dropout_p,
        rng=np.random.default_rng([cfg.seed, 1]),
    )
    opt = SGD(cfg.lr, cfg.momentum, cfg.weight_decay)

    history = []
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, 2, epoch]).permutation(len(scenes))
        losses = []
        for step_idx, scene_idx in enumerate(order):
            scene = scenes[int(scene_idx)]
            loss = train_step(
                model, [(scene.features, scene.labels)], opt,
                rng_seed=int(np.random.SeedSequence(
                    [cfg.seed, 3, epoch, step_idx]).generate_state(1)[0]),
            )
            losses.append(loss)
        mean_loss = float(np.mean(losses))
        history.append({"epoch": epoch, "loss": mean_loss})
        log.info("epoch %d/%d: loss %.4f", epoch + 1, cfg.epochs, mean_loss)

    model.box_regressor = fit_box_regressor(model, scenes, cfg.tau, cfg.anchor_match_iou)
    scale_reg = fit_scale_regressor(raw_scenes)

    flat = cfg.to_flat()
    ckpt_path = out_dir / "model.dvck"
    save_checkpoint(ckpt_path, model, scale_reg, config_hash(flat))
    io.write_json(out_dir / "train_log.json", {"history": history, "config": flat})
    return ckpt_path
