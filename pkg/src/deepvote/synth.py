"""Synthetic feature-grid scenes with known parts, scales, and occlusion.

Scenes are generated directly at feature-grid resolution: an object template
places distinguishable unit "proto pattern" vectors at scaled offsets around
its part centers, paints a weak surface vector over the object body (and an
optional context strip below it), adds Gaussian noise, and l2-normalizes each
location.  Pixel coordinates are defined as grid cell * 16.  Occluded variants
overwrite rectangular patches with unrelated unit vectors until the object
occlusion ratio lands in the requested band.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import io
from .errors import ConfigError, GenerationError
from .ops import l2_normalize_locations
from .scene import (GRID_STRIDE, OCCLUSION_LEVELS, OcclusionInfo, PartInstance,
                    SceneAnnotation)


@dataclass
class ProtoPattern:
    pattern_id: int
    vector: np.ndarray          # unit l2 norm, length D
    offset: tuple[int, int]     # (dx, dy) grid cells from the object origin


@dataclass
class ObjectTemplate:
    """Geometry and appearance of the one synthetic object class.

    ``parts`` maps part ids to cell offsets from the object origin; every part
    has at least three proto patterns within the voting radius.  ``surface``
    is painted across the object box (its area is what makes object scale
    readable from pooled statistics); ``context`` is painted on a strip below
    the object and survives on-object occlusion.
    """

    parts: list[tuple[int, tuple[int, int]]]
    patterns: list[ProtoPattern]
    extent: tuple[int, int]                  # (w, h) grid cells at canonical scale
    surface: np.ndarray | None
    context: np.ndarray | None
    part_box_sizes: list[float]              # canonical-scale part box side, pixels

    def separation_vectors(self) -> np.ndarray:
        vecs = [p.vector for p in self.patterns]
        if self.surface is not None:
            vecs.append(self.surface)
        if self.context is not None:
            vecs.append(self.context)
        return np.stack(vecs)


@dataclass
class SynthConfig:
    grid_w: int = 28
    grid_h: int = 28
    feature_dim: int = 256
    num_parts: int = 6
    num_patterns: int = 18
    noise_sigma: float = 0.04
    surface_intensity: float = 0.25
    context: bool = True
    context_intensity: float = 0.25
    scale_min: float = 0.6
    scale_max: float = 1.0
    n_train: int = 100
    n_test: int = 100
    seed: int = 0
    extent: int = 14
    max_pattern_dot: float = 0.3
    part_box_min: float = 88.0
    part_box_max: float = 112.0

    @classmethod
    def from_flat(cls, flat: dict) -> "SynthConfig":
        cfg = cls()
        for key, value in flat.items():
            if key.startswith("synth."):
                name = key.split(".", 1)[1]
                if not hasattr(cfg, name):
                    raise ConfigError(f"unknown config key {key}")
                setattr(cfg, name, type(getattr(cfg, name))(value))
        return cfg

    def to_flat(self) -> dict:
        return {f"synth.{k}": v for k, v in vars(self).items()}


def _sample_separated_unit(rng: np.random.Generator, existing: list[np.ndarray],
                           dim: int, max_dot: float, attempts: int = 1000) -> np.ndarray:
    for _ in range(attempts):
        v = rng.standard_normal(dim)
        v /= np.linalg.norm(v)
        if not existing or np.max(np.abs(np.stack(existing) @ v)) < max_dot:
            return v.astype(np.float32)
    raise GenerationError(
        f"could not sample a unit vector separated below {max_dot} after {attempts} tries"
    )


def generate_template(
    rng_seed,
    num_parts: int,
    num_patterns: int,
    feature_dim: int,
    extent: tuple[int, int] = (14, 14),
    vote_radius: int = 7,
    max_pattern_dot: float = 0.3,
    with_surface: bool = True,
    with_context: bool = True,
    part_box_range: tuple[float, float] = (88.0, 112.0),
) -> ObjectTemplate:
    """Deterministically build an object template from a seed.

    Each part gets three core patterns at Chebyshev distance 1..vote_radius
    (one near, one mid, one far; redundant spread is what makes voting
    survive occlusion); extra patterns land anywhere on the object.  All
    pattern vectors are pairwise separated below ``max_pattern_dot``.
    """
    if num_patterns < 3 * num_parts:
        raise GenerationError(
            f"need at least {3 * num_parts} patterns for {num_parts} parts, got {num_patterns}"
        )
    rng = np.random.default_rng(rng_seed)
    ew, eh = extent

    vectors: list[np.ndarray] = []
    for _ in range(num_patterns):
        vectors.append(_sample_separated_unit(rng, vectors, feature_dim, max_pattern_dot))
    surface = _sample_separated_unit(rng, vectors, feature_dim, max_pattern_dot) \
        if with_surface else None
    if surface is not None:
        vectors_all = vectors + [surface]
    else:
        vectors_all = list(vectors)
    context = _sample_separated_unit(rng, vectors_all, feature_dim, max_pattern_dot) \
        if with_context else None

    # part anchors: interior cells, pairwise Chebyshev distance >= 3
    parts: list[tuple[int, tuple[int, int]]] = []
    taken: list[tuple[int, int]] = []
    for part_id in range(num_parts):
        for _ in range(1000):
            ox = int(rng.integers(2, ew - 2))
            oy = int(rng.integers(2, eh - 2))
            if all(max(abs(ox - tx), abs(oy - ty)) >= 3 for tx, ty in taken):
                break
        else:
            raise GenerationError("could not place distinct part anchors")
        taken.append((ox, oy))
        parts.append((part_id, (ox, oy)))

    used_cells = set(taken)
    bands = [(1, 2), (3, 5), (6, vote_radius)]
    per_part = num_patterns // num_parts
    patterns: list[ProtoPattern] = []
    pattern_id = 0
    for part_id, (px, py) in parts:
        for slot in range(per_part):
            lo, hi = bands[slot % len(bands)]
            for _ in range(1000):
                r = int(rng.integers(lo, hi + 1))
                dx = int(rng.integers(-r, r + 1))
                dy = int(rng.integers(-r, r + 1))
                if max(abs(dx), abs(dy)) != r:
                    continue
                cell = (min(max(px + dx, -2), ew + 1), min(max(py + dy, -2), eh + 1))
                dist = max(abs(cell[0] - px), abs(cell[1] - py))
                if 1 <= dist <= vote_radius and cell not in used_cells:
                    break
            else:
                raise GenerationError("could not place part-anchored patterns")
            used_cells.add(cell)
            patterns.append(ProtoPattern(pattern_id, vectors[pattern_id], cell))
            pattern_id += 1
    while pattern_id < num_patterns:
        for _ in range(1000):
            cell = (int(rng.integers(0, ew)), int(rng.integers(0, eh)))
            if cell not in used_cells:
                break
        else:
            raise GenerationError("could not place extra patterns")
        used_cells.add(cell)
        patterns.append(ProtoPattern(pattern_id, vectors[pattern_id], cell))
        pattern_id += 1

    lo, hi = part_box_range
    part_box_sizes = [float(rng.uniform(lo, hi)) for _ in range(num_parts)]
    return ObjectTemplate(parts, patterns, extent, surface, context, part_box_sizes)


def scaled_cell(origin: tuple[int, int], offset: tuple[int, int], scale: float) -> tuple[int, int]:
    """Cell an offset lands on after scaling: round-half-up per axis."""
    return (
        origin[0] + int(math.floor(offset[0] * scale + 0.5)),
        origin[1] + int(math.floor(offset[1] * scale + 0.5)),
    )


def pattern_cells(template: ObjectTemplate, origin: tuple[int, int],
                  scale: float) -> list[tuple[int, tuple[int, int]]]:
    """(pattern_id, grid cell) for every proto pattern of a rendered object."""
    return [(p.pattern_id, scaled_cell(origin, p.offset, scale)) for p in template.patterns]


def render_scene(
    template: ObjectTemplate,
    scale_ratio: float,
    position: tuple[int, int],
    noise_sigma: float,
    rng_seed,
    grid_w: int = 28,
    grid_h: int = 28,
    image_id: str = "scene",
    surface_intensity: float = 0.25,
    context_intensity: float = 0.25,
) -> tuple[np.ndarray, SceneAnnotation]:
    """Render one occlusion-free scene at the given object scale and origin.

    ``scale_ratio`` is relative to the canonical object size (1.0 = object
    short edge at 14 cells).  The annotation's ``scale_ratio`` field is the
    object short edge over the image long edge, both in pixels.
    """
    rng = np.random.default_rng(rng_seed)
    dim = template.patterns[0].vector.shape[0] if template.patterns else (
        template.surface.shape[0] if template.surface is not None else 0)
    if dim == 0:
        raise GenerationError("template has no patterns and no surface vector")

    px, py = position
    w_cells = max(1, int(math.floor(template.extent[0] * scale_ratio + 0.5)))
    h_cells = max(1, int(math.floor(template.extent[1] * scale_ratio + 0.5)))
    if px < 0 or py < 0 or px + w_cells > grid_w or py + h_cells > grid_h:
        raise GenerationError(
            f"object box [{px},{py}]+{w_cells}x{h_cells} does not fit the {grid_w}x{grid_h} grid"
        )

    grid = np.zeros((grid_h, grid_w, dim), np.float32)
    if template.surface is not None:
        grid[py:py + h_cells, px:px + w_cells] += surface_intensity * template.surface
    if template.context is not None:
        strip = py + h_cells + 1
        if strip < grid_h:
            grid[strip, px:px + w_cells] += context_intensity * template.context

    for pat_id, (cx, cy) in pattern_cells(template, position, scale_ratio):
        if not (0 <= cx < grid_w and 0 <= cy < grid_h):
            raise GenerationError(f"pattern {pat_id} at cell ({cx}, {cy}) is out of bounds")
        grid[cy, cx] += template.patterns[pat_id].vector

    if noise_sigma > 0:
        grid += rng.standard_normal(grid.shape).astype(np.float32) * noise_sigma
    grid = l2_normalize_locations(grid)

    parts = []
    for part_id, offset in template.parts:
        cx, cy = scaled_cell(position, offset, scale_ratio)
        center = (cx * GRID_STRIDE, cy * GRID_STRIDE)
        size = template.part_box_sizes[part_id] * scale_ratio
        box = (center[0] - size / 2.0, center[1] - size / 2.0, size, size)
        parts.append(PartInstance(part_id, (float(center[0]), float(center[1])), box))

    ann = SceneAnnotation(
        image_id=image_id,
        object_box=(float(px * GRID_STRIDE), float(py * GRID_STRIDE),
                    float(w_cells * GRID_STRIDE), float(h_cells * GRID_STRIDE)),
        scale_ratio=min(w_cells, h_cells) / max(grid_w, grid_h),
        parts=parts,
        occlusion=OcclusionInfo(),
    )
    return grid, ann


def _boxes_to_cell_mask(boxes, grid_w: int, grid_h: int) -> np.ndarray:
    mask = np.zeros((grid_h, grid_w), bool)
    for (bx, by, bw, bh) in boxes:
        x0 = max(int(bx) // GRID_STRIDE, 0)
        y0 = max(int(by) // GRID_STRIDE, 0)
        x1 = min(int(bx + bw) // GRID_STRIDE, grid_w)
        y1 = min(int(by + bh) // GRID_STRIDE, grid_h)
        mask[y0:y1, x0:x1] = True
    return mask


def occlusion_ratio_from_boxes(object_box, occluder_boxes, grid_w: int, grid_h: int) -> float:
    """Fraction of object cells covered by occluder cells (boxes are cell-aligned)."""
    obj = _boxes_to_cell_mask([object_box], grid_w, grid_h)
    occ = _boxes_to_cell_mask(occluder_boxes, grid_w, grid_h)
    total = int(obj.sum())
    if total == 0:
        return 0.0
    return float((obj & occ).sum()) / total


def apply_occlusion(
    grid: np.ndarray,
    ann: SceneAnnotation,
    template: ObjectTemplate,
    level: int,
    rng_seed,
    size_range: tuple[int, int] = (3, 8),
    max_attempts: int = 10000,
) -> tuple[np.ndarray, SceneAnnotation]:
    """Overwrite feature patches with unrelated patterns at the given level.

    Occluder count and the admissible occlusion-ratio band follow the level
    (1 -> 2 occluders at [0.2, 0.4), 2 -> 3 at [0.4, 0.6), 3 -> 4 at
    [0.6, 0.8)); positions and sizes are rejection-sampled until the ratio of
    covered object cells lands in the band.  Part ground truth is kept even
    when fully covered.
    """
    if level not in OCCLUSION_LEVELS:
        raise ConfigError(f"occlusion level must be 1..3, got {level}")
    if ann.occlusion.level != 0:
        raise ConfigError(f"{ann.image_id}: scene is already occluded")
    rng = np.random.default_rng(rng_seed)
    count, (lo, hi) = OCCLUSION_LEVELS[level]
    grid_h, grid_w = grid.shape[:2]

    ox0 = int(ann.object_box[0]) // GRID_STRIDE
    oy0 = int(ann.object_box[1]) // GRID_STRIDE
    ow = int(ann.object_box[2]) // GRID_STRIDE
    oh = int(ann.object_box[3]) // GRID_STRIDE

    boxes_cells = None
    ratio = 0.0
    for _ in range(max_attempts):
        cand = []
        for _ in range(count):
            w = int(rng.integers(size_range[0], size_range[1] + 1))
            h = int(rng.integers(size_range[0], size_range[1] + 1))
            cx = int(rng.integers(ox0 - 2, ox0 + ow + 2))
            cy = int(rng.integers(oy0 - 2, oy0 + oh + 2))
            x0 = min(max(cx - w // 2, 0), max(grid_w - w, 0))
            y0 = min(max(cy - h // 2, 0), max(grid_h - h, 0))
            cand.append((x0, y0, min(w, grid_w), min(h, grid_h)))
        boxes_px = [(x * GRID_STRIDE, y * GRID_STRIDE, w * GRID_STRIDE, h * GRID_STRIDE)
                    for (x, y, w, h) in cand]
        ratio = occlusion_ratio_from_boxes(ann.object_box, boxes_px, grid_w, grid_h)
        if lo <= ratio < hi:
            boxes_cells = cand
            break
    if boxes_cells is None:
        raise GenerationError(
            f"could not reach occlusion ratio band [{lo}, {hi}) in {max_attempts} attempts"
        )

    sep = template.separation_vectors()
    out = grid.copy()
    for (x0, y0, w, h) in boxes_cells:
        for yy in range(y0, y0 + h):
            for xx in range(x0, x0 + w):
                for _ in range(1000):
                    v = rng.standard_normal(grid.shape[2])
                    v /= np.linalg.norm(v)
                    if np.max(np.abs(sep @ v)) < 0.5:
                        break
                else:
                    raise GenerationError("could not sample an unrelated occluder vector")
                out[yy, xx] = v.astype(np.float32)

    boxes_px = [(float(x * GRID_STRIDE), float(y * GRID_STRIDE),
                 float(w * GRID_STRIDE), float(h * GRID_STRIDE))
                for (x, y, w, h) in boxes_cells]
    occ = OcclusionInfo(level=level, ratio=ratio, boxes=boxes_px)
    ann2 = SceneAnnotation(ann.image_id, ann.object_box, ann.scale_ratio,
                           [PartInstance(p.part_id, p.center, p.box) for p in ann.parts], occ)
    return out, ann2


def _scene_seeds(master_seed: int, stream: int, n: int) -> list[int]:
    state = np.random.SeedSequence([master_seed, stream]).generate_state(n, dtype=np.uint32)
    return [int(s) for s in state]


def _sample_placement(
    cfg: SynthConfig, template: ObjectTemplate, rng: np.random.Generator
) -> tuple[float, tuple[int, int]]:
    scale = float(rng.uniform(cfg.scale_min, cfg.scale_max))
    w_cells = max(1, int(math.floor(template.extent[0] * scale + 0.5)))
    h_cells = max(1, int(math.floor(template.extent[1] * scale + 0.5)))

    # patterns may overhang the object box; keep them all on the grid
    deltas = [scaled_cell((0, 0), p.offset, scale) for p in template.patterns]
    dx_min = min([0] + [d[0] for d in deltas])
    dy_min = min([0] + [d[1] for d in deltas])
    dx_max = max([w_cells - 1] + [d[0] for d in deltas])
    dy_max = max([h_cells - 1] + [d[1] for d in deltas])

    x_lo, x_hi = -dx_min, cfg.grid_w - 1 - dx_max
    # leave one row for the context strip below the object
    y_lo, y_hi = -dy_min, min(cfg.grid_h - 1 - dy_max, cfg.grid_h - h_cells - 2)
    if x_hi < x_lo or y_hi < y_lo:
        raise GenerationError("object does not fit the grid at the sampled scale")
    px = int(rng.integers(x_lo, x_hi + 1))
    py = int(rng.integers(y_lo, y_hi + 1))
    return scale, (px, py)


def dataset_generate(cfg: SynthConfig, out_dir) -> dict:
    """Write the full benchmark to disk: train (L0) plus test splits L0-L3.

    Occluded test splits reuse the L0 test scenes with per-level occluders.
    Returns the manifest (also written as ``manifest.json``): seeds, counts,
    and the config hash, enough to reproduce every file byte for byte.
    """
    from pathlib import Path

    from .config import config_hash

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    template = generate_template(
        np.random.SeedSequence([cfg.seed, 100]).generate_state(1)[0],
        cfg.num_parts, cfg.num_patterns, cfg.feature_dim,
        extent=(cfg.extent, cfg.extent),
        max_pattern_dot=cfg.max_pattern_dot,
        with_surface=cfg.surface_intensity > 0,
        with_context=cfg.context,
        part_box_range=(cfg.part_box_min, cfg.part_box_max),
    )

    train_seeds = _scene_seeds(cfg.seed, 0, cfg.n_train)
    test_seeds = _scene_seeds(cfg.seed, 1, cfg.n_test)
    occ_seeds = {lvl: _scene_seeds(cfg.seed, 10 + lvl, cfg.n_test) for lvl in (1, 2, 3)}

    def render(seed: int, image_id: str):
        rng = np.random.default_rng(seed)
        scale, pos = _sample_placement(cfg, template, rng)
        return render_scene(
            template, scale, pos, cfg.noise_sigma, rng,
            grid_w=cfg.grid_w, grid_h=cfg.grid_h, image_id=image_id,
            surface_intensity=cfg.surface_intensity,
            context_intensity=cfg.context_intensity,
        )

    train_dir = out / "train"
    train_dir.mkdir(exist_ok=True)
    for i, seed in enumerate(train_seeds):
        grid, ann = render(seed, f"train_{i:05d}")
        io.write_dvfm(train_dir / f"{ann.image_id}.dvfm", grid)
        io.write_annotation(train_dir / f"{ann.image_id}.json", ann)

    l0_scenes = []
    l0_dir = out / "test_l0"
    l0_dir.mkdir(exist_ok=True)
    for i, seed in enumerate(test_seeds):
        grid, ann = render(seed, f"test_{i:05d}")
        l0_scenes.append((grid, ann))
        io.write_dvfm(l0_dir / f"{ann.image_id}.dvfm", grid)
        io.write_annotation(l0_dir / f"{ann.image_id}.json", ann)

    for level in (1, 2, 3):
        lvl_dir = out / f"test_l{level}"
        lvl_dir.mkdir(exist_ok=True)
        for i, (grid, ann) in enumerate(l0_scenes):
            occ_grid, occ_ann = apply_occlusion(grid, ann, template, level, occ_seeds[level][i])
            io.write_dvfm(lvl_dir / f"{occ_ann.image_id}.dvfm", occ_grid)
            io.write_annotation(lvl_dir / f"{occ_ann.image_id}.json", occ_ann)

    flat = cfg.to_flat()
    manifest = {
        "format_version": io.FORMAT_VERSION,
        "config": flat,
        "config_hash": config_hash(flat),
        "counts": {"train": cfg.n_train, "test_per_level": cfg.n_test},
        "num_parts": cfg.num_parts,
        "seeds": {
            "master": cfg.seed,
            "train": train_seeds,
            "test": test_seeds,
            "occlusion": {str(k): v for k, v in occ_seeds.items()},
        },
    }
    io.write_json(out / "manifest.json", manifest)
    return manifest
