"""Binary masks, label maps and panoptic images.

Masks are dense boolean numpy arrays of shape (H, W); label maps are
integer arrays of the same shape where 0 means void. A PanopticImage pairs
a label map with a table of segment records and must form a partition:
every pixel carries exactly one segment id (or void).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _backend

VOID = 0


class MaskShapeError(ValueError):
    """Two masks (or a mask and a map) do not share dimensions."""


class PartitionError(ValueError):
    """A PanopticImage violates the one-segment-per-pixel contract."""


@dataclass(frozen=True)
class SegmentInfo:
    id: int
    category: int
    is_thing: bool
    area: int

    def __post_init__(self):
        if self.id <= 0:
            raise PartitionError(f"segment id must be positive, got {self.id}")
        if self.area <= 0:
            raise PartitionError(f"segment {self.id} has non-positive area")


@dataclass
class PanopticImage:
    """A label map plus its segment table."""

    ids: np.ndarray  # (H, W) int32, 0 = void
    segments: list[SegmentInfo] = field(default_factory=list)

    @property
    def height(self) -> int:
        return self.ids.shape[0]

    @property
    def width(self) -> int:
        return self.ids.shape[1]

    def segment_by_id(self, seg_id: int) -> SegmentInfo:
        for seg in self.segments:
            if seg.id == seg_id:
                return seg
        raise KeyError(seg_id)

    def validate(self) -> None:
        """Check the partition invariant; raises PartitionError on failure."""
        present, counts = np.unique(self.ids, return_counts=True)
        table = {seg.id: seg for seg in self.segments}
        if len(table) != len(self.segments):
            raise PartitionError("duplicate segment ids in table")
        areas = dict(zip(present.tolist(), counts.tolist()))
        areas.pop(VOID, None)
        if set(areas) != set(table):
            missing = set(areas) ^ set(table)
            raise PartitionError(f"segment table and pixels disagree on ids {sorted(missing)}")
        for seg_id, area in areas.items():
            if table[seg_id].area != area:
                raise PartitionError(
                    f"segment {seg_id}: recorded area {table[seg_id].area} != pixel area {area}"
                )


def mask_area(m: np.ndarray) -> int:
    return int(np.count_nonzero(m))


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two boolean masks; 0 for an empty union."""
    if a.shape != b.shape:
        raise MaskShapeError(f"mask shapes differ: {a.shape} vs {b.shape}")
    inter = np.count_nonzero(a & b)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return inter / union


def connected_components(m: np.ndarray, connectivity: int = 4) -> list[np.ndarray]:
    """Split a boolean mask into its connected regions.

    Returns one boolean mask per region; regions are pairwise disjoint and
    their union equals the input. connectivity is 4 or 8.
    """
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    labels, n = label_components(m, connectivity)
    return [labels == k for k in range(1, n + 1)]


def label_components(m: np.ndarray, connectivity: int = 4) -> tuple[np.ndarray, int]:
    """Connected component labelling on a boolean grid.

    Returns (labels, n) where labels is int32 with 0 for background and
    components numbered 1..n in scan order.
    """
    grid = np.ascontiguousarray(m, dtype=np.uint8)
    return _backend.label_components(grid, connectivity)


def mask_from_label(ids: np.ndarray, seg_id: int) -> np.ndarray:
    """Boolean mask of the pixels carrying seg_id."""
    return ids == seg_id


def build_panoptic(ids: np.ndarray, categories: dict[int, tuple[int, bool]]) -> PanopticImage:
    """Assemble a PanopticImage from a label map and an id -> (category,
    is_thing) mapping, recomputing areas from pixels."""
    present, counts = np.unique(ids, return_counts=True)
    segments = []
    for seg_id, area in zip(present.tolist(), counts.tolist()):
        if seg_id == VOID:
            continue
        cat, is_thing = categories[seg_id]
        segments.append(SegmentInfo(id=seg_id, category=cat, is_thing=is_thing, area=area))
    img = PanopticImage(ids=ids.astype(np.int32), segments=segments)
    img.validate()
    return img
