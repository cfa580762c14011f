"""Scene annotations and grid/pixel geometry shared across the pipeline.

A feature grid cell corresponds to a 16x16 pixel region; pixel coordinates in
annotations are cell index * 16.  The canonical object scale puts the object
short edge at 14 cells (224 pixels), and detections start from a fixed
100x100-pixel anchor centered on a part-map peak.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .errors import DataError

GRID_STRIDE = 16
CANONICAL_OBJECT_CELLS = 14
ANCHOR_SIZE = 100.0

# occlusion level -> (occluder count, [ratio_lo, ratio_hi))
OCCLUSION_LEVELS = {
    1: (2, (0.2, 0.4)),
    2: (3, (0.4, 0.6)),
    3: (4, (0.6, 0.8)),
}

Box = tuple[float, float, float, float]  # (x, y, w, h) in pixels


def px_to_cell(v: float) -> int:
    """Nearest grid cell for a pixel coordinate (half rounds up)."""
    return int(math.floor(v / GRID_STRIDE + 0.5))


@dataclass
class PartInstance:
    part_id: int
    center: tuple[float, float]
    box: Box

    def to_dict(self) -> dict:
        return {"part_id": self.part_id, "center": list(self.center), "box": list(self.box)}

    @classmethod
    def from_dict(cls, d: dict) -> "PartInstance":
        return cls(int(d["part_id"]), tuple(d["center"]), tuple(d["box"]))


@dataclass
class OcclusionInfo:
    level: int = 0
    ratio: float = 0.0
    boxes: list[Box] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"level": self.level, "ratio": self.ratio, "boxes": [list(b) for b in self.boxes]}

    @classmethod
    def from_dict(cls, d: dict) -> "OcclusionInfo":
        return cls(int(d["level"]), float(d["ratio"]), [tuple(b) for b in d["boxes"]])


@dataclass
class SceneAnnotation:
    image_id: str
    object_box: Box
    scale_ratio: float  # object short edge / image long edge, in pixels
    parts: list[PartInstance]
    occlusion: OcclusionInfo = field(default_factory=OcclusionInfo)

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "object_box": list(self.object_box),
            "scale_ratio": self.scale_ratio,
            "parts": [p.to_dict() for p in self.parts],
            "occlusion": self.occlusion.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneAnnotation":
        return cls(
            image_id=str(d["image_id"]),
            object_box=tuple(d["object_box"]),
            scale_ratio=float(d["scale_ratio"]),
            parts=[PartInstance.from_dict(p) for p in d["parts"]],
            occlusion=OcclusionInfo.from_dict(d["occlusion"]),
        )


def validate_annotation(ann: SceneAnnotation) -> None:
    """Check the occlusion level/count/ratio consistency contract."""
    occ = ann.occlusion
    if occ.level == 0:
        if occ.boxes or occ.ratio != 0.0:
            raise DataError(f"{ann.image_id}: level 0 must have no occluders")
        return
    if occ.level not in OCCLUSION_LEVELS:
        raise DataError(f"{ann.image_id}: unknown occlusion level {occ.level}")
    count, (lo, hi) = OCCLUSION_LEVELS[occ.level]
    if len(occ.boxes) != count:
        raise DataError(
            f"{ann.image_id}: level {occ.level} requires {count} occluders, got {len(occ.boxes)}"
        )
    if not lo <= occ.ratio < hi:
        raise DataError(
            f"{ann.image_id}: level {occ.level} ratio {occ.ratio:.3f} outside [{lo}, {hi})"
        )


def transform_annotation(
    ann: SceneAnnotation, offset_px: tuple[float, float], zoom: tuple[float, float]
) -> SceneAnnotation:
    """Shift by -offset then scale: the annotation analog of crop + resize."""
    ox, oy = offset_px
    zx, zy = zoom

    def tbox(b: Box) -> Box:
        return ((b[0] - ox) * zx, (b[1] - oy) * zy, b[2] * zx, b[3] * zy)

    parts = [
        PartInstance(p.part_id, ((p.center[0] - ox) * zx, (p.center[1] - oy) * zy), tbox(p.box))
        for p in ann.parts
    ]
    occ = OcclusionInfo(ann.occlusion.level, ann.occlusion.ratio,
                        [tbox(b) for b in ann.occlusion.boxes])
    return replace(ann, object_box=tbox(ann.object_box), parts=parts, occlusion=occ)


def point_in_box(x: float, y: float, box: Box) -> bool:
    bx, by, bw, bh = box
    return bx <= x < bx + bw and by <= y < by + bh
