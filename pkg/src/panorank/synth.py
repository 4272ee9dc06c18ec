"""Deterministic synthetic panoptic scenes with planted occlusions.

Scenes follow the person-wearing-a-tie topology: an occludee shape sits
fully inside an occluder shape. Ground truth is non-overlapping (the
occludee is carved out of the occluder), while the simulated instance
predictions overlap exactly as independent detectors would. Thing
category ids double as ranking channels (0..C-1); the first half of the
categories plays the frequent/high-score occluder role and the second
half the occludee role, and stuff categories start at 100.

Everything is a pure function of the spec, seed included. Corpus
generation derives per-scene seeds with numpy's SeedSequence spawning.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .formats import (
    InstancePrediction,
    StuffProbMap,
    read_categories,
    read_instance_predictions,
    read_panoptic_annotation,
    load_stuff_probs,
    save_stuff_probs,
    write_categories,
    write_instance_predictions,
    write_panoptic_annotation,
)
from .fusion import RankedInstance
from .masks import VOID, PanopticImage, SegmentInfo
from .training import TrainScene

STUFF_CATEGORY_BASE = 100

ORACLE_FRONT = 0.9
ORACLE_BACK = 0.1
ORACLE_NEUTRAL = 0.5


class GenerationError(RuntimeError):
    """Could not pack the requested shapes into the scene."""


@dataclass(frozen=True)
class SceneSpec:
    width: int = 64
    height: int = 64
    n_things: int = 4
    n_stuff_regions: int = 2
    occlusion_pairs: int = 1
    score_bias: float = 1.0
    noise: float = 0.0
    seed: int = 0
    n_thing_categories: int = 4

    def __post_init__(self):
        if self.occlusion_pairs * 2 > self.n_things:
            raise ValueError("occlusion_pairs must be at most n_things / 2")
        if self.n_thing_categories < 2:
            raise ValueError("need at least two thing categories")

    @property
    def thing_categories(self) -> list[int]:
        return list(range(self.n_thing_categories))

    @property
    def stuff_categories(self) -> list[int]:
        return [STUFF_CATEGORY_BASE + i for i in range(self.n_stuff_regions)]

    @property
    def categories(self) -> dict[int, bool]:
        cats = {c: True for c in self.thing_categories}
        cats.update({c: False for c in self.stuff_categories})
        return cats


@dataclass(frozen=True)
class PlantedPair:
    """Indices into the prediction list; front is the occludee."""

    front: int
    back: int


@dataclass
class Scene:
    gt: PanopticImage
    preds: list[InstancePrediction]
    stuff: StuffProbMap
    pairs: list[PlantedPair]
    spec: SceneSpec


def _shape_mask(
    h: int, w: int, cy: float, cx: float, ry: float, rx: float, kind: str
) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    if kind == "rect":
        return (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def _perturb(mask: np.ndarray, noise: float, rng: np.random.Generator) -> np.ndarray:
    """Flip boundary pixels with probability noise, keeping the mask
    nonempty."""
    if noise <= 0:
        return mask
    shifted = [np.roll(mask, s, axis=a) for a in (0, 1) for s in (1, -1)]
    any_n = np.logical_or.reduce(shifted)
    all_n = np.logical_and.reduce(shifted)
    boundary = (mask & ~all_n) | (~mask & any_n)
    flips = boundary & (rng.random(mask.shape) < noise)
    out = mask ^ flips
    if not out.any():
        return mask
    return out


def generate(spec: SceneSpec) -> Scene:
    """Build one scene: ground truth, overlapping predictions, stuff
    probabilities, and the planted front/back pair indices."""
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    half = max(1, spec.n_thing_categories // 2)

    # stuff: vertical bands, one category each, covering the whole image
    stuff_label = np.zeros((h, w), dtype=np.int32)
    edges = np.linspace(0, w, spec.n_stuff_regions + 1).astype(int)
    for i, cat in enumerate(spec.stuff_categories):
        stuff_label[:, edges[i]: edges[i + 1]] = cat

    occupied = np.zeros((h, w), dtype=bool)
    things = []  # (category, gt_mask, pred_mask, role)

    def place(radius_lo: float, radius_hi: float, max_tries: int = 200):
        for _ in range(max_tries):
            ry = rng.uniform(radius_lo, radius_hi) * h / 64
            rx = rng.uniform(radius_lo, radius_hi) * w / 64
            cy = rng.uniform(ry + 1, h - ry - 2)
            cx = rng.uniform(rx + 1, w - rx - 2)
            kind = "rect" if rng.random() < 0.5 else "ellipse"
            mask = _shape_mask(h, w, cy, cx, ry, rx, kind)
            if mask.any() and not (mask & occupied).any():
                return mask, (cy, cx, ry, rx, kind)
        raise GenerationError("could not place a shape without overlap")

    pairs: list[PlantedPair] = []
    for _ in range(spec.occlusion_pairs):
        outer, (cy, cx, ry, rx, kind) = place(10.0, 16.0)
        factor = rng.uniform(0.5, 0.7)
        inner_kind = "rect" if rng.random() < 0.5 else "ellipse"
        inner = _shape_mask(h, w, cy, cx, ry * factor, rx * factor, inner_kind)
        inner &= outer
        if not inner.any() or not (outer & ~inner).any():
            raise GenerationError("degenerate planted pair")
        occluder_cat = int(rng.integers(0, half))
        occludee_cat = int(rng.integers(half, spec.n_thing_categories))
        back_idx = len(things)
        things.append((occluder_cat, outer & ~inner, outer, "occluder"))
        front_idx = len(things)
        things.append((occludee_cat, inner, inner, "occludee"))
        pairs.append(PlantedPair(front=front_idx, back=back_idx))
        occupied |= outer

    for _ in range(spec.n_things - 2 * spec.occlusion_pairs):
        mask, _geo = place(4.0, 8.0)
        cat = int(rng.integers(0, spec.n_thing_categories))
        things.append((cat, mask, mask, "plain"))
        occupied |= mask

    # ground truth label map: things over stuff, then one stuff segment per
    # category still visible
    ids = np.zeros((h, w), dtype=np.int32)
    segments: list[SegmentInfo] = []
    for idx, (cat, gt_mask, _pm, _role) in enumerate(things):
        seg_id = idx + 1
        ids[gt_mask] = seg_id
        segments.append(
            SegmentInfo(
                id=seg_id,
                category=cat,
                is_thing=True,
                area=int(np.count_nonzero(gt_mask)),
            )
        )
    next_id = len(things) + 1
    for cat in spec.stuff_categories:
        region = (stuff_label == cat) & (ids == VOID)
        area = int(np.count_nonzero(region))
        if area == 0:
            continue
        ids[region] = next_id
        segments.append(SegmentInfo(id=next_id, category=cat, is_thing=False, area=area))
        next_id += 1
    gt = PanopticImage(ids=ids, segments=segments)
    gt.validate()

    # detection scores: occluders draw from a high Beta, occludees from a
    # low one (the class-frequency bias), with the ordering forced per pair
    # according to score_bias
    scores = []
    for cat, _gt_mask, _pm, role in things:
        if role == "occluder":
            s = rng.beta(8, 2)
        elif role == "occludee":
            s = rng.beta(4, 4) * 0.8
        else:
            s = rng.beta(6, 3)
        scores.append(float(np.clip(s, 1e-4, 1.0)))
    for pair in pairs:
        want_occluder_on_top = rng.random() < spec.score_bias
        hi = max(scores[pair.front], scores[pair.back])
        lo = min(scores[pair.front], scores[pair.back])
        if hi == lo:
            hi = min(1.0, lo + 1e-3)
        if want_occluder_on_top:
            scores[pair.back], scores[pair.front] = hi, lo
        else:
            scores[pair.back], scores[pair.front] = lo, hi

    preds = []
    for (cat, _gt_mask, pred_mask, _role), s in zip(things, scores):
        preds.append(
            InstancePrediction(
                category=cat,
                det_score=s,
                mask=_perturb(pred_mask, spec.noise, rng),
            )
        )

    k = len(spec.stuff_categories)
    probs = np.full((k, h, w), 0.1 / k)
    for i, cat in enumerate(spec.stuff_categories):
        probs[i][stuff_label == cat] += 0.9
    stuff = StuffProbMap(probs=probs, categories=list(spec.stuff_categories))

    return Scene(gt=gt, preds=preds, stuff=stuff, pairs=pairs, spec=spec)


def category_map(p: PanopticImage) -> np.ndarray:
    """Per-pixel category ids, -1 on void."""
    lut_size = max((s.id for s in p.segments), default=0) + 1
    lut = np.full(lut_size, -1, dtype=np.int32)
    for s in p.segments:
        lut[s.id] = s.category
    return lut[p.ids]


def oracle_ranking_scores(
    gt: PanopticImage, preds: list[InstancePrediction]
) -> list[RankedInstance]:
    """Upper-bound ranking scores derived from ground truth.

    For each overlapping prediction pair, the instance whose category owns
    the majority of the overlap in the GT is in front (0.9) and the other
    behind (0.1); instances not in any overlap stay neutral (0.5).
    """
    cats = category_map(gt)
    scores = [ORACLE_NEUTRAL] * len(preds)
    for i in range(len(preds)):
        for j in range(i + 1, len(preds)):
            overlap = preds[i].mask & preds[j].mask
            if not overlap.any():
                continue
            votes_i = int(np.count_nonzero(cats[overlap] == preds[i].category))
            votes_j = int(np.count_nonzero(cats[overlap] == preds[j].category))
            if votes_i == votes_j:
                continue
            front, back = (i, j) if votes_i > votes_j else (j, i)
            scores[front] = ORACLE_FRONT
            scores[back] = ORACLE_BACK
    return [RankedInstance(instance=p, ranking_score=s) for p, s in zip(preds, scores)]


def ranking_scene(scene: Scene) -> TrainScene:
    """Training example for the ranking module: channel labels are thing
    categories (already 0-based), -1 elsewhere."""
    cats = category_map(scene.gt)
    c = scene.spec.n_thing_categories
    label = np.where((cats >= 0) & (cats < c), cats, -1).astype(np.int32)
    return TrainScene(instances=scene.preds, label=label, name=f"seed{scene.spec.seed}")


def scene_seeds(master_seed: int, n: int) -> list[int]:
    """Per-scene seeds derived via SeedSequence spawning (the documented
    splitting rule)."""
    children = np.random.SeedSequence(master_seed).spawn(n)
    return [int(c.generate_state(1)[0]) for c in children]


# corpus layout:
#   categories.json, manifest.json
#   gt/<name>.png + gt/<name>.json
#   pred/<name>.instances.json + pred/<name>.stuff.npz


def write_scene(scene: Scene, name: str, root: Path) -> dict:
    root = Path(root)
    (root / "gt").mkdir(parents=True, exist_ok=True)
    (root / "pred").mkdir(parents=True, exist_ok=True)
    doc, rgb = write_panoptic_annotation(scene.gt, name, f"{name}.png")
    Image.fromarray(rgb, mode="RGB").save(root / "gt" / f"{name}.png", format="PNG")
    (root / "gt" / f"{name}.json").write_text(json.dumps(doc))
    write_instance_predictions(scene.preds, root / "pred" / f"{name}.instances.json")
    save_stuff_probs(scene.stuff, root / "pred" / f"{name}.stuff.npz")
    return {
        "name": name,
        "seed": scene.spec.seed,
        "n_thing_categories": scene.spec.n_thing_categories,
        "pairs": [{"front": p.front, "back": p.back} for p in scene.pairs],
    }


def write_corpus(spec: SceneSpec, n_scenes: int, root: Path) -> list[str]:
    """Materialize n_scenes variants of spec (per-scene derived seeds)."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    write_categories(spec.categories, root / "categories.json")
    entries = []
    for i, seed in enumerate(scene_seeds(spec.seed, n_scenes)):
        scene = generate(dataclasses.replace(spec, seed=seed))
        entries.append(write_scene(scene, f"scene_{i:04d}", root))
    (root / "manifest.json").write_text(json.dumps({"scenes": entries}, indent=1))
    return [e["name"] for e in entries]


@dataclass
class CorpusScene:
    name: str
    gt: PanopticImage
    preds: list[InstancePrediction]
    stuff: StuffProbMap
    pairs: list[PlantedPair]
    n_thing_categories: int


def read_corpus(root: Path) -> list[CorpusScene]:
    root = Path(root)
    cats = read_categories(root / "categories.json")
    manifest = json.loads((root / "manifest.json").read_text())
    scenes = []
    for entry in manifest["scenes"]:
        name = entry["name"]
        rgb = np.asarray(Image.open(root / "gt" / f"{name}.png").convert("RGB"))
        doc = json.loads((root / "gt" / f"{name}.json").read_text())
        gt = read_panoptic_annotation(doc, rgb, cats)
        preds = read_instance_predictions(root / "pred" / f"{name}.instances.json")
        stuff = load_stuff_probs(root / "pred" / f"{name}.stuff.npz")
        pairs = [PlantedPair(front=p["front"], back=p["back"]) for p in entry["pairs"]]
        scenes.append(
            CorpusScene(
                name=name,
                gt=gt,
                preds=preds,
                stuff=stuff,
                pairs=pairs,
                n_thing_categories=entry["n_thing_categories"],
            )
        )
    return scenes
