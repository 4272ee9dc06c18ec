"""Merging instance and stuff predictions into one panoptic image.

Instances are painted in descending order of a sort key (detection score
in heuristic mode, spatial ranking score in ranking mode); a later
instance claims only still-free pixels and is dropped entirely when too
little of it remains visible. Stuff fills the rest, and small connected
stuff regions are voided.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .formats import InstancePrediction
from .masks import VOID, MaskShapeError, PanopticImage, SegmentInfo, label_components

HEURISTIC = "heuristic"
RANKING = "ranking"

# inference defaults: at most 100 detections per image, stuff regions below
# 4900 connected pixels voided
DEFAULT_MAX_BOXES = 100
DEFAULT_MIN_STUFF_AREA = 4900


class FusionContractError(ValueError):
    """Inputs violate the merge contract (e.g. ranking mode without scores)."""


@dataclass(frozen=True)
class RankedInstance:
    instance: InstancePrediction
    ranking_score: float

    def __post_init__(self):
        if not 0.0 <= self.ranking_score <= 1.0:
            raise FusionContractError(
                f"ranking score {self.ranking_score} outside [0, 1]"
            )


@dataclass(frozen=True)
class FusionParams:
    max_boxes: int = DEFAULT_MAX_BOXES
    min_stuff_area: int = DEFAULT_MIN_STUFF_AREA
    overlap_drop_fraction: float = 0.5
    mode: str = HEURISTIC
    stuff_connectivity: int = 4

    def __post_init__(self):
        if self.mode not in (HEURISTIC, RANKING):
            raise FusionContractError(f"unknown mode {self.mode!r}")
        if not 0.0 <= self.overlap_drop_fraction <= 1.0:
            raise FusionContractError("overlap_drop_fraction outside [0, 1]")


def _as_ranked(inst) -> tuple[InstancePrediction, float | None]:
    if isinstance(inst, RankedInstance):
        return inst.instance, inst.ranking_score
    return inst, None


def sort_key(inst, mode: str) -> float:
    """The paint-order key of one instance under the given mode."""
    pred, ranking = _as_ranked(inst)
    if mode == HEURISTIC:
        return pred.det_score
    if ranking is None:
        raise FusionContractError("ranking mode requires ranking scores")
    return ranking


def merge(
    instances: list,
    stuff: np.ndarray,
    params: FusionParams = FusionParams(),
    stuff_categories: dict[int, bool] | None = None,
) -> PanopticImage:
    """Fuse instances (InstancePrediction or RankedInstance) with a stuff
    category label map into a PanopticImage.

    stuff is an (H, W) map of stuff category ids (0 allowed for "no stuff
    prediction"). stuff_categories optionally declares ids appearing in the
    map; it defaults to every nonzero id present.
    """
    h, w = stuff.shape
    pairs = [_as_ranked(i) for i in instances]
    for pred, _ in pairs:
        if pred.mask.shape != (h, w):
            raise MaskShapeError(
                f"instance mask {pred.mask.shape} does not match stuff map {(h, w)}"
            )
    if params.mode == RANKING and any(r is None for _, r in pairs):
        raise FusionContractError("ranking mode requires ranking scores")

    # keep the top max_boxes detections, then paint by the mode's sort key;
    # ties break by detection score, then lower category, then input order
    by_det = sorted(
        range(len(pairs)),
        key=lambda k: (-pairs[k][0].det_score, pairs[k][0].category, k),
    )
    kept = sorted(by_det[: params.max_boxes])
    order = sorted(
        kept,
        key=lambda k: (
            -sort_key(instances[k], params.mode),
            -pairs[k][0].det_score,
            pairs[k][0].category,
            k,
        ),
    )

    ids = np.zeros((h, w), dtype=np.int32)
    segments: list[SegmentInfo] = []
    next_id = 1
    for k in order:
        pred, _ = pairs[k]
        free = pred.mask & (ids == VOID)
        visible = int(np.count_nonzero(free))
        if visible < (1.0 - params.overlap_drop_fraction) * pred.area:
            continue
        if visible == 0:
            continue
        ids[free] = next_id
        segments.append(
            SegmentInfo(id=next_id, category=pred.category, is_thing=True, area=visible)
        )
        next_id += 1

    # stuff fills unclaimed pixels; per category, connected regions smaller
    # than min_stuff_area go to void (area >= min_stuff_area is kept)
    remaining = ids == VOID
    present = set(np.unique(stuff[remaining]).tolist()) - {VOID}
    if stuff_categories is not None:
        present &= set(stuff_categories)
    for cat in sorted(present):
        region = remaining & (stuff == cat)
        labels, n = label_components(region, params.stuff_connectivity)
        keep = np.zeros_like(region)
        for comp in range(1, n + 1):
            comp_mask = labels == comp
            if int(np.count_nonzero(comp_mask)) >= params.min_stuff_area:
                keep |= comp_mask
        area = int(np.count_nonzero(keep))
        if area == 0:
            continue
        ids[keep] = next_id
        segments.append(
            SegmentInfo(id=next_id, category=cat, is_thing=False, area=area)
        )
        next_id += 1

    out = PanopticImage(ids=ids, segments=segments)
    out.validate()
    return out
