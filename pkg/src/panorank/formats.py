"""On-disk formats: id-encoded PNG label maps, annotation JSON documents,
instance prediction JSON, and stuff probability maps.

Segment ids are packed into RGB as id = r + 256*g + 65536*b (little-endian
base 256), matching the COCO panoptic convention so real ground-truth
files can be scored directly. Annotation documents are one JSON object per
image:

    {"image_id": ..., "file_name": ..., "segments":
        [{"id": ..., "category_id": ..., "area": ...}, ...]}

Category metadata travels separately as a list of
{"id": ..., "isthing": ...} records (categories.json at corpus level).

Instance predictions are a JSON array of
{"category_id": ..., "score": ..., "mask": [row strings of '0'/'1']}
or {"mask_file": ...} pointing to a PNG whose nonzero pixels are the mask.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .masks import VOID, PanopticImage, SegmentInfo, mask_area

MAX_ID = 1 << 24


class SchemaError(ValueError):
    """A document does not match the expected schema."""


class ConsistencyError(ValueError):
    """Annotation document and id image disagree."""


class EncodingOverflowError(ValueError):
    """A segment id does not fit in 24 bits."""


@dataclass(frozen=True)
class InstancePrediction:
    """One detected object."""

    category: int
    det_score: float
    mask: np.ndarray  # (H, W) bool

    def __post_init__(self):
        if not 0.0 <= self.det_score <= 1.0:
            raise SchemaError(f"det_score {self.det_score} outside [0, 1]")
        if mask_area(self.mask) == 0:
            raise SchemaError("instance mask is empty")

    @property
    def area(self) -> int:
        return mask_area(self.mask)


@dataclass
class StuffProbMap:
    """Per-pixel probabilities over stuff categories, shape (K, H, W)."""

    probs: np.ndarray
    categories: list[int]

    def __post_init__(self):
        if self.probs.shape[0] != len(self.categories):
            raise SchemaError("channel count does not match category list")
        sums = self.probs.sum(axis=0)
        if not np.allclose(sums, 1.0, atol=1e-5):
            raise SchemaError("stuff probabilities do not sum to 1 per pixel")


def encode_ids(ids: np.ndarray) -> np.ndarray:
    """Pack a label map into an (H, W, 3) uint8 RGB image."""
    if ids.min() < 0 or ids.max() >= MAX_ID:
        raise EncodingOverflowError("segment ids must be in [0, 2^24)")
    v = ids.astype(np.uint32)
    rgb = np.empty(ids.shape + (3,), dtype=np.uint8)
    rgb[..., 0] = v % 256
    rgb[..., 1] = (v // 256) % 256
    rgb[..., 2] = v // 65536
    return rgb


def decode_ids(rgb: np.ndarray) -> np.ndarray:
    """Inverse of encode_ids; returns an int32 label map."""
    v = rgb.astype(np.uint32)
    return (v[..., 0] + 256 * v[..., 1] + 65536 * v[..., 2]).astype(np.int32)


def save_id_image(ids: np.ndarray, path: str | Path) -> None:
    Image.fromarray(encode_ids(ids), mode="RGB").save(path, format="PNG")


def load_id_image(path: str | Path) -> np.ndarray:
    rgb = np.asarray(Image.open(path).convert("RGB"))
    return decode_ids(rgb)


def write_panoptic_annotation(
    p: PanopticImage, image_id: int | str, file_name: str
) -> tuple[dict, np.ndarray]:
    """Serialize a PanopticImage to (annotation document, id image)."""
    p.validate()
    doc = {
        "image_id": image_id,
        "file_name": file_name,
        "segments": [
            {"id": s.id, "category_id": s.category, "area": s.area} for s in p.segments
        ],
    }
    return doc, encode_ids(p.ids)


def read_panoptic_annotation(
    doc: dict, rgb: np.ndarray, categories: dict[int, bool]
) -> PanopticImage:
    """Build a PanopticImage from a document and its id image.

    categories maps category_id -> isthing; unknown categories are a schema
    error, and the document must list exactly the ids present in the pixels
    (void excepted). Areas are recomputed from pixels.
    """
    if not isinstance(doc, dict) or "segments" not in doc:
        raise SchemaError("annotation document lacks a segments array")
    ids = decode_ids(rgb)
    present, counts = np.unique(ids, return_counts=True)
    areas = dict(zip(present.tolist(), counts.tolist()))
    areas.pop(VOID, None)
    listed = {}
    for rec in doc["segments"]:
        try:
            seg_id, cat = int(rec["id"]), int(rec["category_id"])
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"malformed segment record: {rec}") from e
        if cat not in categories:
            raise SchemaError(f"unknown category id {cat}")
        listed[seg_id] = cat
    if set(listed) != set(areas):
        raise ConsistencyError(
            f"document ids {sorted(listed)} != pixel ids {sorted(areas)}"
        )
    segments = [
        SegmentInfo(id=i, category=c, is_thing=categories[c], area=areas[i])
        for i, c in sorted(listed.items())
    ]
    img = PanopticImage(ids=ids, segments=segments)
    img.validate()
    return img


def write_categories(categories: dict[int, bool], path: str | Path) -> None:
    recs = [{"id": c, "isthing": t} for c, t in sorted(categories.items())]
    Path(path).write_text(json.dumps(recs, indent=1))


def read_categories(path: str | Path) -> dict[int, bool]:
    try:
        recs = json.loads(Path(path).read_text())
        return {int(r["id"]): bool(r["isthing"]) for r in recs}
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise SchemaError(f"bad categories file {path}") from e


def _mask_to_rows(mask: np.ndarray) -> list[str]:
    return ["".join("1" if v else "0" for v in row) for row in mask]


def _rows_to_mask(rows: list[str]) -> np.ndarray:
    return np.array([[ch == "1" for ch in row] for row in rows], dtype=bool)


def write_instance_predictions(
    preds: list[InstancePrediction], path: str | Path
) -> None:
    recs = [
        {
            "category_id": p.category,
            "score": p.det_score,
            "mask": _mask_to_rows(p.mask),
        }
        for p in preds
    ]
    Path(path).write_text(json.dumps(recs))


def read_instance_predictions(path: str | Path) -> list[InstancePrediction]:
    base = Path(path).parent
    try:
        recs = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise SchemaError(f"bad prediction file {path}") from e
    preds = []
    for rec in recs:
        try:
            if "mask" in rec:
                mask = _rows_to_mask(rec["mask"])
            elif "mask_file" in rec:
                mask = load_id_image(base / rec["mask_file"]) != 0
            else:
                raise SchemaError(f"prediction record lacks mask: {rec}")
            preds.append(
                InstancePrediction(
                    category=int(rec["category_id"]),
                    det_score=float(rec["score"]),
                    mask=mask,
                )
            )
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"malformed prediction record in {path}") from e
    return preds


def save_stuff_probs(s: StuffProbMap, path: str | Path) -> None:
    np.savez(path, probs=s.probs, categories=np.array(s.categories, dtype=np.int64))


def load_stuff_probs(path: str | Path) -> StuffProbMap:
    with np.load(path) as data:
        return StuffProbMap(
            probs=data["probs"], categories=data["categories"].tolist()
        )


def stuff_argmax(s: StuffProbMap) -> np.ndarray:
    """Label each pixel with the stuff category of its maximal channel.

    Ties break toward the lowest category id: channels are scanned in
    ascending category order and argmax keeps the first maximum.
    """
    order = np.argsort(np.array(s.categories), kind="stable")
    probs = s.probs[order]
    cats = np.array(s.categories)[order]
    return cats[np.argmax(probs, axis=0)].astype(np.int32)
