"""Score-aware detection evaluation.

Matching at a score threshold t_s only lets detections with score strictly
above t_s claim ground truth; everything else stays a scored false positive.
AP is averaged over the ten IoU thresholds 0.50:0.05:0.95 and over
categories with at least one ground-truth instance, using 101-point
interpolation with a monotone precision envelope. AP at t_s = 0 coincides
with the plain protocol because every positive-score detection is eligible
there; the mean of AP over t_s in {0.0, ..., 0.9} is the headline number.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import BBox, iou
from .dataset import Dataset
from .errors import (
    CategoryOutOfRangeError,
    DatasetMismatchError,
    NoGroundTruthError,
)


@dataclass(frozen=True)
class Detection:
    image_id: int
    bbox: BBox
    category: int
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")
        if self.category < 0:
            raise ValueError(f"category must be non-negative, got {self.category}")


def _default_iou_thresholds() -> tuple[float, ...]:
    return tuple(round(0.50 + 0.05 * i, 2) for i in range(10))


def _default_score_thresholds() -> tuple[float, ...]:
    return tuple(round(0.1 * i, 1) for i in range(10))


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: tuple[float, ...] = field(default_factory=_default_iou_thresholds)
    score_thresholds: tuple[float, ...] = field(default_factory=_default_score_thresholds)
    max_dets: int = 100
    recall_points: int = 101

    def __post_init__(self):
        for name in ("iou_thresholds", "score_thresholds"):
            vals = getattr(self, name)
            if not vals or list(vals) != sorted(vals):
                raise ValueError(f"{name} must be non-empty and ascending")
        if any(not 0.0 <= t < 1.0 for t in self.score_thresholds):
            raise ValueError("score thresholds must lie in [0, 1)")
        if self.max_dets < 1:
            raise ValueError(f"max_dets must be >= 1, got {self.max_dets}")
        if self.recall_points < 2:
            raise ValueError(f"recall_points must be >= 2, got {self.recall_points}")


@dataclass(frozen=True)
class EvalResult:
    """AP per (IoU threshold, score threshold), plus the aggregates.

    ap_table[i][j] is the category-mean AP at iou_thresholds[i] and
    score_thresholds[j]; ap_at_s[j] averages column j over IoU thresholds;
    ap_at_s_mean averages ap_at_s. categories lists the category ids that
    carried ground truth and entered the means.
    """

    ap_table: tuple[tuple[float, ...], ...]
    ap_at_s: tuple[float, ...]
    ap_at_s_mean: float
    categories: tuple[int, ...]
    iou_thresholds: tuple[float, ...]
    score_thresholds: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "ap_at_s_mean": self.ap_at_s_mean,
            "ap_at_s": list(self.ap_at_s),
            "ap_table": [list(row) for row in self.ap_table],
            "categories": list(self.categories),
            "iou_thresholds": list(self.iou_thresholds),
            "score_thresholds": list(self.score_thresholds),
        }


def _greedy_labels(
    ious_sorted: np.ndarray, scores_sorted: np.ndarray, t_iou: float, t_s: float
) -> np.ndarray:
    """TP flags for score-sorted detections against one image-category's GT.

    Walks detections best-score first; a detection whose score is not
    strictly above t_s is a false positive and never claims ground truth.
    Otherwise it takes the unmatched GT with the highest IoU, provided that
    IoU is strictly above t_iou (first GT in input order on exact ties).
    """
    n_det, n_gt = ious_sorted.shape
    labels = np.zeros(n_det, dtype=bool)
    taken = np.zeros(n_gt, dtype=bool)
    for d in range(n_det):
        if scores_sorted[d] <= t_s or n_gt == 0:
            continue
        free = ~taken
        if not free.any():
            continue
        row = np.where(free, ious_sorted[d], -1.0)
        g = int(np.argmax(row))
        if row[g] > t_iou:
            labels[d] = True
            taken[g] = True
    return labels


def match_image(
    gt_boxes: Sequence[BBox],
    detections: Sequence[Detection],
    t_iou: float,
    t_s: float,
) -> tuple[np.ndarray, int]:
    """Match one image's same-category detections against its ground truth.

    Args:
        gt_boxes: ground-truth boxes (already filtered to one category).
        detections: detections for the same image and category.
        t_iou: IoU must be strictly above this to match.
        t_s: scores must be strictly above this to be eligible.

    Returns:
        (tp flags aligned with the input detection order, number of
        ground-truth boxes left unmatched).
    """
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))
    ious_sorted = np.asarray(
        [[iou(detections[i].bbox, g) for g in gt_boxes] for i in order], dtype=np.float64
    ).reshape(len(detections), len(gt_boxes))
    scores_sorted = np.asarray([detections[i].score for i in order], dtype=np.float64)
    labels_sorted = _greedy_labels(ious_sorted, scores_sorted, t_iou, t_s)
    labels = np.zeros(len(detections), dtype=bool)
    labels[list(order)] = labels_sorted
    return labels, len(gt_boxes) - int(labels_sorted.sum())


def average_precision(
    tp_ranked: np.ndarray, num_gt: int, recall_points: int = 101
) -> float:
    """Interpolated AP from rank-ordered TP flags.

    Precision is made monotone from the right, then sampled at evenly spaced
    recall points (0 to 1 inclusive); points beyond the achieved recall
    contribute zero. num_gt = 0 is defined as AP 0.
    """
    if num_gt < 0:
        raise ValueError(f"num_gt must be >= 0, got {num_gt}")
    if num_gt == 0:
        return 0.0
    tp_ranked = np.asarray(tp_ranked, dtype=bool)
    if tp_ranked.size == 0:
        return 0.0
    cum_tp = np.cumsum(tp_ranked)
    ranks = np.arange(1, tp_ranked.size + 1)
    recall = cum_tp / num_gt
    precision = cum_tp / ranks
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    # arange/denominator gives each grid point as the correctly rounded double
    # i/(points-1); linspace's step accumulation lands an ulp off at several
    # indices, which flips >= comparisons for recalls that are exact grid
    # rationals (e.g. recall 7/10 vs threshold 0.70).
    thresholds = np.arange(recall_points, dtype=np.float64) / (recall_points - 1)
    idx = np.searchsorted(recall, thresholds, side="left")
    sampled = np.where(idx < recall.size, envelope[np.minimum(idx, recall.size - 1)], 0.0)
    return float(sampled.mean())


def evaluate(
    ground_truth: Dataset, detections: Sequence[Detection], cfg: EvalConfig = EvalConfig()
) -> EvalResult:
    """Full score-aware evaluation of a detection set.

    Detections are capped to the top cfg.max_dets per image by score (ties
    keep input order) before any matching. For every category holding at
    least one ground-truth box, detections are matched per image at each
    (IoU threshold, score threshold) pair, ranked globally by (-score, input
    order), and summarized by 101-point AP; the table averages over those
    categories.

    Raises:
        NoGroundTruthError: the dataset has no annotations at all.
        DatasetMismatchError: a detection references an unknown image.
        CategoryOutOfRangeError: a detection category is out of range.
    """
    if ground_truth.total_annotations() == 0:
        raise NoGroundTruthError("cannot evaluate against a dataset with no annotations")
    image_ids = {im.image_id for im in ground_truth.images}
    for det in detections:
        if det.image_id not in image_ids:
            raise DatasetMismatchError(f"detection references unknown image {det.image_id}")
        if det.category >= ground_truth.num_categories:
            raise CategoryOutOfRangeError(
                f"detection category {det.category} outside "
                f"[0, {ground_truth.num_categories})"
            )

    # Per-image cap: keep the max_dets best scores, stable on ties.
    by_image: dict[int, list[tuple[int, Detection]]] = {}
    for idx, det in enumerate(detections):
        by_image.setdefault(det.image_id, []).append((idx, det))
    kept: list[tuple[int, Detection]] = []
    for img_dets in by_image.values():
        ranked = sorted(img_dets, key=lambda p: (-p[1].score, p[0]))
        kept.extend(ranked[: cfg.max_dets])

    gt_counts = ground_truth.annotations_per_category()
    categories = tuple(c for c in range(ground_truth.num_categories) if gt_counts[c] > 0)

    n_iou = len(cfg.iou_thresholds)
    n_score = len(cfg.score_thresholds)
    ap_sum = np.zeros((n_iou, n_score), dtype=np.float64)

    for cat in categories:
        num_gt = gt_counts[cat]
        # Group this category's surviving detections per image, each with its
        # global rank key, then precompute the per-image IoU matrices once.
        per_image: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        for im in ground_truth.images:
            gts = [a.bbox for a in im.annotations if a.category == cat]
            dets = [
                (gidx, det)
                for gidx, det in kept
                if det.image_id == im.image_id and det.category == cat
            ]
            if not dets:
                continue
            dets.sort(key=lambda p: (-p[1].score, p[0]))
            scores = np.asarray([d.score for _, d in dets], dtype=np.float64)
            keys = np.asarray([g for g, _ in dets], dtype=np.int64)
            ious = np.asarray(
                [[iou(d.bbox, g) for g in gts] for _, d in dets], dtype=np.float64
            ).reshape(len(dets), len(gts))
            per_image.append((scores, keys, ious))

        if per_image:
            all_scores = np.concatenate([s for s, _, _ in per_image])
            all_keys = np.concatenate([k for _, k, _ in per_image])
            global_order = np.lexsort((all_keys, -all_scores))
        else:
            global_order = np.zeros(0, dtype=np.int64)

        for i, t_iou in enumerate(cfg.iou_thresholds):
            for j, t_s in enumerate(cfg.score_thresholds):
                if per_image:
                    labels = np.concatenate(
                        [
                            _greedy_labels(ious, scores, t_iou, t_s)
                            for scores, _, ious in per_image
                        ]
                    )[global_order]
                else:
                    labels = np.zeros(0, dtype=bool)
                ap_sum[i, j] += average_precision(labels, num_gt, cfg.recall_points)

    ap_table = ap_sum / len(categories)
    ap_at_s = ap_table.mean(axis=0)
    return EvalResult(
        ap_table=tuple(tuple(float(v) for v in row) for row in ap_table),
        ap_at_s=tuple(float(v) for v in ap_at_s),
        ap_at_s_mean=float(ap_at_s.mean()),
        categories=categories,
        iou_thresholds=tuple(cfg.iou_thresholds),
        score_thresholds=tuple(cfg.score_thresholds),
    )
