"""Exact decomposition of detection scores into per-concept vote contributions.

A part-map score is a plain sum over the voting kernel's support: weight(du,
dv, concept, part) times the concept response at peak+(du, dv).  Enumerating
those products reproduces the score exactly (plus the part bias), which is
what lets a detection be audited cue by cue, including whether each cue came
from inside an occluder.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .detect import Detection, DetectOutput, cell_to_original
from .errors import ConfigError
from .model import DeepVotingModel, ForwardCache
from .scene import GRID_STRIDE, SceneAnnotation, point_in_box


@dataclass
class VoteContribution:
    concept_id: int
    source_cell: tuple[int, int]   # (w, h) in the forward-pass grid
    offset: tuple[int, int]        # (du, dv) relative to the peak
    value: float


def decompose_score(
    model: DeepVotingModel, cache: ForwardCache, peak: tuple[int, int], part_id: int
) -> list[VoteContribution]:
    """All (concept, offset) vote contributions at a peak, largest first.

    Uses the same concept map the score came from (post-dropout in training,
    raw in inference).  Summing every value and adding the part bias equals
    the cached part-map score up to float accumulation order.
    """
    used = cache.concept_used
    grid_h, grid_w = used.shape[:2]
    if used.shape[2] != model.num_concepts or cache.part_map.shape[2] != model.num_parts:
        raise ConfigError("cache does not match the model (stale cache?)")
    if not 0 <= part_id < model.num_parts:
        raise ConfigError(f"part id {part_id} out of range")
    pw, ph = peak
    if not (0 <= pw < grid_w and 0 <= ph < grid_h):
        raise ConfigError(f"peak {peak} outside the {grid_w}x{grid_h} grid")

    half = model.kernel_size // 2
    weights = model.voting.weights
    contributions: list[VoteContribution] = []
    for dv in range(-half, half + 1):
        sy = ph + dv
        if not 0 <= sy < grid_h:
            continue
        for du in range(-half, half + 1):
            sx = pw + du
            if not 0 <= sx < grid_w:
                continue
            values = weights[dv + half, du + half, :, part_id] * used[sy, sx, :]
            for k in np.nonzero(values)[0]:
                contributions.append(
                    VoteContribution(int(k), (sx, sy), (du, dv), float(values[k]))
                )
    contributions.sort(key=lambda c: (-c.value, c.concept_id, c.offset[1], c.offset[0]))
    return contributions


def contribution_sum(contributions: list[VoteContribution]) -> float:
    return float(np.sum(np.fromiter((c.value for c in contributions), dtype=np.float64,
                                    count=len(contributions))))


def top_responses_per_concept(
    model: DeepVotingModel,
    scenes: list[tuple[str, np.ndarray]],
    n: int = 10,
) -> dict[int, list[dict]]:
    """Globally strongest concept-map responses across a scene collection.

    Returns, per concept, up to ``n`` entries of image id, grid cell, response
    value, and the 16x16 pixel box of that cell (for patch lookup on real
    images).  Ties order by image id then row-major cell.
    """
    from .model import forward

    per_concept: dict[int, list[tuple]] = {k: [] for k in range(model.num_concepts)}
    for image_id, grid in scenes:
        concept_map, _, _ = forward(model, grid, training=False)
        h, w, _ = concept_map.shape
        flat = concept_map.reshape(h * w, model.num_concepts)
        take = min(n, h * w)
        for k in range(model.num_concepts):
            idx = np.argpartition(-flat[:, k], take - 1)[:take]
            for i in idx:
                per_concept[k].append((float(flat[i, k]), image_id, int(i % w), int(i // w)))

    out: dict[int, list[dict]] = {}
    for k, rows in per_concept.items():
        rows.sort(key=lambda r: (-r[0], r[1], r[3], r[2]))
        out[k] = [
            {
                "image_id": image_id,
                "cell": [cx, cy],
                "response": value,
                "pixel_box": [cx * GRID_STRIDE, cy * GRID_STRIDE, GRID_STRIDE, GRID_STRIDE],
            }
            for value, image_id, cx, cy in rows[:n]
        ]
    return out


def render_heatmap(model: DeepVotingModel, concept_id: int, part_id: int, path) -> Path:
    """Write one KxK vote-weight slice as a binary PGM (P5), zero mapped to 128.

    Weights map linearly with the largest magnitude hitting full contrast, so
    positive cues render bright, negative cues dark.
    """
    if not 0 <= concept_id < model.num_concepts:
        raise ConfigError(f"concept id {concept_id} out of range")
    if not 0 <= part_id < model.num_parts:
        raise ConfigError(f"part id {part_id} out of range")
    slice_ = model.voting.weights[:, :, concept_id, part_id].astype(np.float64)
    peak = np.abs(slice_).max()
    if peak > 0:
        img = np.floor(128.0 + 127.0 * slice_ / peak + 0.5)
    else:
        img = np.full_like(slice_, 128.0)
    img = np.clip(img, 0, 255).astype(np.uint8)
    path = Path(path)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        f.write(img.tobytes())
    return path


def explain_report(
    model: DeepVotingModel,
    ann: SceneAnnotation,
    detection: Detection,
    output: DetectOutput,
    top_k: int = 3,
) -> dict:
    """JSON-ready explanation of one detection.

    Cues are ranked by contribution value; each of the top ``top_k`` records
    its concept, offset, source pixel box in the original frame, and whether
    the source cell sits inside an annotated occluder box.
    """
    contributions = decompose_score(model, output.cache, detection.peak, detection.part_id)
    bias = float(model.voting.bias[detection.part_id])
    total = contribution_sum(contributions)
    zoom_x, zoom_y = output.zoom

    cues = []
    for c in contributions[:top_k]:
        px, py = cell_to_original(c.source_cell, output.zoom)
        occluded = any(point_in_box(px, py, b) for b in ann.occlusion.boxes)
        cues.append({
            "concept_id": c.concept_id,
            "offset": [c.offset[0], c.offset[1]],
            "source_cell": [c.source_cell[0], c.source_cell[1]],
            "source_box": [
                c.source_cell[0] * GRID_STRIDE / zoom_x,
                c.source_cell[1] * GRID_STRIDE / zoom_y,
                GRID_STRIDE / zoom_x,
                GRID_STRIDE / zoom_y,
            ],
            "value": c.value,
            "occluded_evidence": occluded,
        })

    return {
        "image_id": ann.image_id,
        "detection": detection.to_dict(ann.image_id),
        "score": float(detection.score),
        "bias": bias,
        "contribution_total": total,
        "cue_ranking": "contribution_value",
        "cues": cues,
    }
