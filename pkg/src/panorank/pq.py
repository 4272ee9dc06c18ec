"""Segment matching and Panoptic Quality.

A predicted and a ground-truth segment match when they share a category
and their IOU exceeds 0.5; above that threshold the matching is provably
unique, so no assignment search is needed. Ground-truth void pixels are
excluded from the IOU union, and an unmatched prediction more than half
covered by void is discarded instead of counted as a false positive.

PQ = SQ * DQ per category, with SQ the mean IOU over matched pairs and DQ
the F1-style count ratio |TP| / (|TP| + |FP|/2 + |FN|/2). Aggregates are
unweighted means over the categories that occur in the ground truth.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .masks import VOID, MaskShapeError, PanopticImage

log = logging.getLogger(__name__)

MATCH_THRESHOLD = 0.5
_OFFSET = 1 << 32


@dataclass
class MatchResult:
    """Per-category TP/FP/FN bookkeeping, mergeable across images."""

    tp: dict[int, list[tuple[int, int, float]]] = field(default_factory=dict)
    fp: dict[int, list[int]] = field(default_factory=dict)
    fn: dict[int, list[int]] = field(default_factory=dict)
    is_thing: dict[int, bool] = field(default_factory=dict)

    def _bucket(self, table: dict, cat: int) -> list:
        return table.setdefault(cat, [])

    def add_tp(self, cat: int, pred_id: int, gt_id: int, iou: float) -> None:
        self._bucket(self.tp, cat).append((pred_id, gt_id, iou))

    def add_fp(self, cat: int, pred_id: int) -> None:
        self._bucket(self.fp, cat).append(pred_id)

    def add_fn(self, cat: int, gt_id: int) -> None:
        self._bucket(self.fn, cat).append(gt_id)

    def merge(self, other: "MatchResult") -> "MatchResult":
        """Accumulate counts from another result (associative, commutative
        up to list order; derived counts are order-independent)."""
        for cat, items in other.tp.items():
            self._bucket(self.tp, cat).extend(items)
        for cat, items in other.fp.items():
            self._bucket(self.fp, cat).extend(items)
        for cat, items in other.fn.items():
            self._bucket(self.fn, cat).extend(items)
        self.is_thing.update(other.is_thing)
        return self

    @property
    def categories(self) -> set[int]:
        return set(self.tp) | set(self.fp) | set(self.fn)


@dataclass(frozen=True)
class CategoryScore:
    pq: float
    sq: float
    dq: float
    n_tp: int
    n_fp: int
    n_fn: int
    is_thing: bool


@dataclass
class PqReport:
    per_category: dict[int, CategoryScore]
    aggregates: dict[str, tuple[float, float, float, int]]  # (pq, sq, dq, n)

    def to_json(self) -> str:
        doc = {
            "per_category": {
                str(c): {
                    "pq": s.pq,
                    "sq": s.sq,
                    "dq": s.dq,
                    "tp": s.n_tp,
                    "fp": s.n_fp,
                    "fn": s.n_fn,
                    "isthing": s.is_thing,
                }
                for c, s in sorted(self.per_category.items())
            },
            "aggregates": {
                name: {"pq": pq, "sq": sq, "dq": dq, "n": n}
                for name, (pq, sq, dq, n) in self.aggregates.items()
            },
        }
        return json.dumps(doc, indent=1)

    def to_table(self) -> str:
        """Percent-scale summary table, 4 decimal places."""
        lines = [f"{'split':<8} {'PQ':>10} {'SQ':>10} {'DQ':>10} {'N':>5}"]
        for name in ("all", "things", "stuff"):
            pq, sq, dq, n = self.aggregates[name]
            lines.append(
                f"{name:<8} {100 * pq:>10.4f} {100 * sq:>10.4f} {100 * dq:>10.4f} {n:>5}"
            )
        return "\n".join(lines)


def match_segments(pred: PanopticImage, gt: PanopticImage) -> MatchResult:
    """Match predicted segments to ground-truth segments for one image."""
    if pred.ids.shape != gt.ids.shape:
        raise MaskShapeError(
            f"pred/gt shapes differ: {pred.ids.shape} vs {gt.ids.shape}"
        )
    pred.validate()
    gt.validate()

    combined = gt.ids.astype(np.int64) * _OFFSET + pred.ids.astype(np.int64)
    pairs, counts = np.unique(combined, return_counts=True)
    inter: dict[tuple[int, int], int] = {}
    for key, cnt in zip(pairs.tolist(), counts.tolist()):
        inter[(key // _OFFSET, key % _OFFSET)] = cnt

    pred_by_id = {s.id: s for s in pred.segments}
    gt_by_id = {s.id: s for s in gt.segments}

    result = MatchResult()
    for s in pred.segments:
        result.is_thing[s.category] = s.is_thing
    for s in gt.segments:
        result.is_thing[s.category] = s.is_thing

    void_overlap = {
        p_id: inter.get((VOID, p_id), 0) for p_id in pred_by_id
    }

    matched_pred: set[int] = set()
    matched_gt: set[int] = set()
    for (g_id, p_id), cnt in inter.items():
        if g_id == VOID or p_id == VOID:
            continue
        ps, gs = pred_by_id[p_id], gt_by_id[g_id]
        if ps.category != gs.category:
            continue
        union = ps.area + gs.area - cnt - void_overlap[p_id]
        iou = cnt / union
        if iou > MATCH_THRESHOLD:
            result.add_tp(ps.category, p_id, g_id, iou)
            matched_pred.add(p_id)
            matched_gt.add(g_id)

    for p_id, ps in pred_by_id.items():
        if p_id in matched_pred:
            continue
        if void_overlap[p_id] > ps.area * MATCH_THRESHOLD:
            continue  # mostly over unlabeled ground truth: not a FP
        result.add_fp(ps.category, p_id)
    for g_id, gs in gt_by_id.items():
        if g_id not in matched_gt:
            result.add_fn(gs.category, g_id)
    return result


def compute_pq(matches: MatchResult) -> PqReport:
    """Turn accumulated match counts into per-category and split scores."""
    per_category: dict[int, CategoryScore] = {}
    sums = {"all": [], "things": [], "stuff": []}
    for cat in sorted(matches.categories):
        tps = matches.tp.get(cat, [])
        n_tp = len(tps)
        n_fp = len(matches.fp.get(cat, []))
        n_fn = len(matches.fn.get(cat, []))
        iou_sum = sum(iou for _, _, iou in tps)
        sq = iou_sum / n_tp if n_tp else 0.0
        denom = n_tp + 0.5 * n_fp + 0.5 * n_fn
        dq = n_tp / denom if denom else 0.0
        pq = sq * dq
        is_thing = matches.is_thing[cat]
        per_category[cat] = CategoryScore(pq, sq, dq, n_tp, n_fp, n_fn, is_thing)
        if n_tp + n_fn == 0:
            continue  # category never occurs in GT: not averaged
        sums["all"].append((pq, sq, dq))
        sums["things" if is_thing else "stuff"].append((pq, sq, dq))

    aggregates = {}
    for name, rows in sums.items():
        n = len(rows)
        if n:
            pq = sum(r[0] for r in rows) / n
            sq = sum(r[1] for r in rows) / n
            dq = sum(r[2] for r in rows) / n
        else:
            pq = sq = dq = 0.0
        aggregates[name] = (pq, sq, dq, n)
    return PqReport(per_category=per_category, aggregates=aggregates)


def _empty_prediction(gt: PanopticImage) -> MatchResult:
    result = MatchResult()
    for s in gt.segments:
        result.is_thing[s.category] = s.is_thing
        result.add_fn(s.category, s.id)
    return result


def evaluate_dataset(
    preds: dict[str, PanopticImage],
    gts: dict[str, PanopticImage],
    jobs: int = 1,
) -> PqReport:
    """Match every image and fold the results into one report.

    Images without a prediction count all their GT segments as FN (with a
    warning). Accumulation runs in sorted image-key order so the report is
    identical for any worker count.
    """
    keys = sorted(gts)

    def one(key: str) -> MatchResult:
        if key not in preds:
            return _empty_prediction(gts[key])
        return match_segments(preds[key], gts[key])

    missing = [k for k in keys if k not in preds]
    for k in missing:
        log.warning("no prediction for image %s; counting all GT as FN", k)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, keys))
    else:
        results = [one(k) for k in keys]

    total = MatchResult()
    for r in results:
        total.merge(r)
    return compute_pq(total)
