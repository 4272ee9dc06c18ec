"""Shared test helpers: random panoptic scenes and the brute-force
segment matcher used as the metric oracle."""

from __future__ import annotations

import numpy as np
from hypothesis import settings

from panorank.masks import VOID, PanopticImage, build_panoptic
from panorank.pq import MatchResult, compute_pq

settings.register_profile("ci", deadline=None)
settings.load_profile("ci")


def random_panoptic(
    rng: np.random.Generator,
    h: int,
    w: int,
    max_segments: int = 4,
    n_categories: int = 4,
    void_prob: float = 0.2,
) -> PanopticImage:
    """Voronoi-cell label map with random categories.

    Category parity decides thing/stuff (odd = thing) so the flag is
    consistent across independently drawn images.
    """
    n = int(rng.integers(1, max_segments + 1))
    seeds = rng.uniform(0, 1, (n, 2)) * [h, w]
    yy, xx = np.mgrid[0:h, 0:w]
    d = (yy[..., None] - seeds[:, 0]) ** 2 + (xx[..., None] - seeds[:, 1]) ** 2
    cell = np.argmin(d, axis=-1)
    ids = np.zeros((h, w), dtype=np.int32)
    categories = {}
    for k in range(n):
        if rng.random() < void_prob:
            continue  # this cell stays void
        seg_id = k + 1
        ids[cell == k] = seg_id
        cat = int(rng.integers(1, n_categories + 1))
        categories[seg_id] = (cat, cat % 2 == 1)
    return build_panoptic(ids, categories)


def brute_force_match(pred: PanopticImage, gt: PanopticImage) -> MatchResult:
    """Exhaustive matcher: enumerate every category-consistent pairing and
    keep one maximizing the TP count under the IOU > 0.5 rule (with the
    same void conventions as the production matcher)."""
    gt_void = gt.ids == VOID
    void_overlap = {}
    candidates = []
    for ps in pred.segments:
        pmask = pred.ids == ps.id
        void_overlap[ps.id] = int(np.count_nonzero(pmask & gt_void))
        for gs in gt.segments:
            if ps.category != gs.category:
                continue
            inter = int(np.count_nonzero(pmask & (gt.ids == gs.id)))
            union = ps.area + gs.area - inter - void_overlap[ps.id]
            iou = inter / union if union else 0.0
            if iou > 0.5:
                candidates.append((ps.id, gs.id, iou))

    best: list[tuple[int, int, float]] = []

    def search(i: int, used_p: set, used_g: set, cur: list):
        nonlocal best
        if len(cur) > len(best):
            best = list(cur)
        if i == len(candidates):
            return
        search(i + 1, used_p, used_g, cur)
        p, g, iou = candidates[i]
        if p not in used_p and g not in used_g:
            cur.append((p, g, iou))
            search(i + 1, used_p | {p}, used_g | {g}, cur)
            cur.pop()

    search(0, set(), set(), [])

    result = MatchResult()
    for s in pred.segments:
        result.is_thing[s.category] = s.is_thing
    for s in gt.segments:
        result.is_thing[s.category] = s.is_thing
    matched_p = {p for p, _, _ in best}
    matched_g = {g for _, g, _ in best}
    by_id_p = {s.id: s for s in pred.segments}
    by_id_g = {s.id: s for s in gt.segments}
    for p, g, iou in best:
        result.add_tp(by_id_p[p].category, p, g, iou)
    for s in pred.segments:
        if s.id in matched_p:
            continue
        if void_overlap[s.id] > 0.5 * s.area:
            continue
        result.add_fp(s.category, s.id)
    for s in gt.segments:
        if s.id not in matched_g:
            result.add_fn(s.category, s.id)
    return result


def counts(result: MatchResult) -> dict:
    """Per-category (tp, fp, fn) triples for equality checks."""
    out = {}
    for cat in result.categories:
        out[cat] = (
            len(result.tp.get(cat, [])),
            len(result.fp.get(cat, [])),
            len(result.fn.get(cat, [])),
        )
    return out


def oracle_pq(pred: PanopticImage, gt: PanopticImage):
    return compute_pq(brute_force_match(pred, gt))
