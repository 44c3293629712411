"""Similarity-based pseudo-label generation and its focal-style loss.

Pipeline, given a feature map F and a sparse target heatmap Y:

1. Pool a unit reference feature per labeled category, weighting F by that
   category's Gaussian channel in Y.
2. Collect every non-center cell's unit feature into a query matrix.
3. Score queries against references with cosine similarity clamped to [0, 1].
4. Keep, per cell, only the best category, and only when it beats the
   similarity threshold; write v * eta there.
5. Merge the mined map into Y with a clamped sum.

The loss is a focal variant that treats exact-1.0 cells as positives and
everything else as weighted background; it returns the analytic gradient
with respect to the prediction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import as_feature_map, as_heatmap, l2_normalize_rows
from .errors import EmptyReferenceError

PREDICTION_EPS = 1e-7


@dataclass(frozen=True)
class SplgConfig:
    """Mining and loss knobs.

    eta scales mined values, t_sim is the similarity gate, gamma and alpha
    are the focal exponents on prediction and soft-target weight.
    """

    eta: float = 1.0
    t_sim: float = 0.6
    gamma: float = 2.0
    alpha: float = 4.0

    def __post_init__(self):
        if not 0.0 < self.eta <= 1.0:
            raise ValueError(f"eta must lie in (0, 1], got {self.eta}")
        if not 0.0 < self.t_sim < 1.0:
            raise ValueError(f"t_sim must lie in (0, 1), got {self.t_sim}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")


@dataclass(frozen=True)
class ReferenceBank:
    """Unit reference feature per labeled category; rows align with categories."""

    categories: tuple[int, ...]
    features: np.ndarray  # (N, D), rows unit norm

    def __post_init__(self):
        if len(self.categories) != self.features.shape[0] or not self.categories:
            raise ValueError("one feature row per category required")


@dataclass(frozen=True)
class UnlabeledSet:
    """Non-center cells: their (y, x) positions and unit feature rows."""

    positions: np.ndarray  # (K, 2) int, (y, x), scan order
    features: np.ndarray  # (K, D), rows unit norm
    height: int
    width: int


def extract_reference_features(
    features: np.ndarray, target: np.ndarray, categories: Sequence[int]
) -> ReferenceBank:
    """Gaussian-pooled, l2-normalized reference feature per category.

    Row i is l2(sum_yx target[y, x, c_i] * features[y, x, :]).

    Raises:
        EmptyReferenceError: a requested category's channel is identically 0.
        ZeroVectorError: the weighted sum cancels to the zero vector.
    """
    F = as_feature_map(features, "features")
    Y = as_heatmap(target, "target")
    if F.shape[:2] != Y.shape[:2]:
        raise ValueError(f"grid mismatch: features {F.shape[:2]} vs target {Y.shape[:2]}")
    if len(categories) == 0:
        raise EmptyReferenceError("no categories to pool references for")
    cats = tuple(int(c) for c in categories)
    for c in cats:
        if not 0 <= c < Y.shape[2]:
            raise ValueError(f"category {c} outside target channels [0, {Y.shape[2]})")
        if not np.any(Y[:, :, c]):
            raise EmptyReferenceError(f"category {c} has no support in the target heatmap")
    pooled = np.einsum("yxc,yxd->cd", Y[:, :, list(cats)], F)
    return ReferenceBank(categories=cats, features=l2_normalize_rows(pooled))


def collect_unlabeled(features: np.ndarray, target: np.ndarray) -> UnlabeledSet:
    """All cells that are not a labeled center, with unit feature rows.

    Labeled centers are the exact-1.0 peaks of the target heatmap. Positions
    come out in (y asc, x asc) scan order.
    """
    F = as_feature_map(features, "features")
    Y = as_heatmap(target, "target")
    if F.shape[:2] != Y.shape[:2]:
        raise ValueError(f"grid mismatch: features {F.shape[:2]} vs target {Y.shape[:2]}")
    h, w = F.shape[:2]
    center_mask = np.any(Y == 1.0, axis=2)
    positions = np.argwhere(~center_mask).astype(np.int64)
    if positions.shape[0] == 0:
        feats = np.zeros((0, F.shape[2]), dtype=np.float64)
    else:
        feats = l2_normalize_rows(F[positions[:, 0], positions[:, 1], :])
    return UnlabeledSet(positions=positions, features=feats, height=h, width=w)


def similarity(unlabeled: UnlabeledSet, bank: ReferenceBank) -> np.ndarray:
    """Cosine scores clamped to [0, 1]; shape (K, N), rows follow positions."""
    s = unlabeled.features @ bank.features.T
    return np.clip(s, 0.0, 1.0)


def build_pseudo_heatmap(
    scores: np.ndarray,
    unlabeled: UnlabeledSet,
    bank: ReferenceBank,
    cfg: SplgConfig,
    num_categories: int,
) -> np.ndarray:
    """Mined heatmap: per cell, the best category's v * eta where v > t_sim.

    Every position gets at most one nonzero channel; values land in
    (t_sim * eta, eta]. Cells whose best score ties across categories take
    the lowest-index reference column.
    """
    if num_categories < 1:
        raise ValueError(f"num_categories must be >= 1, got {num_categories}")
    for c in bank.categories:
        if c >= num_categories:
            raise ValueError(f"bank category {c} >= num_categories {num_categories}")
    out = np.zeros((unlabeled.height, unlabeled.width, num_categories), dtype=np.float64)
    k = unlabeled.positions.shape[0]
    if k == 0:
        return out
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (k, len(bank.categories)):
        raise ValueError(
            f"scores shape {scores.shape} does not match "
            f"{k} positions x {len(bank.categories)} references"
        )
    best_col = np.argmax(scores, axis=1)
    best_val = scores[np.arange(k), best_col]
    hit = best_val > cfg.t_sim
    if np.any(hit):
        ys = unlabeled.positions[hit, 0]
        xs = unlabeled.positions[hit, 1]
        cats = np.asarray(bank.categories)[best_col[hit]]
        out[ys, xs, cats] = best_val[hit] * cfg.eta
    return out


def merge_targets(target: np.ndarray, pseudo: np.ndarray) -> np.ndarray:
    """Clamped sum of rendered and mined targets: clip(Y + Ytilde, 0, 1)."""
    Y = as_heatmap(target, "target")
    P = as_heatmap(pseudo, "pseudo")
    if Y.shape != P.shape:
        raise ValueError(f"shape mismatch: {Y.shape} vs {P.shape}")
    return np.clip(Y + P, 0.0, 1.0)


def clamp_prediction(pred: np.ndarray, eps: float = PREDICTION_EPS) -> np.ndarray:
    """Clamp a probability map into [eps, 1 - eps] for loss evaluation."""
    return np.clip(np.asarray(pred, dtype=np.float64), eps, 1.0 - eps)


def splg_loss(
    pred: np.ndarray, merged: np.ndarray, cfg: SplgConfig = SplgConfig()
) -> tuple[float, np.ndarray]:
    """Focal loss over the merged target, normalized by the positive count.

    Cells where the merged target is exactly 1.0 are positives and contribute
    (1 - p)^gamma * log(p); every other cell contributes
    (1 - t)^alpha * p^gamma * log(1 - p), so mined soft cells are background
    with a sharply reduced weight. The sum is negated and divided by the
    number of positives (floored at 1).

    Args:
        pred: prediction map with values strictly inside (0, 1).
        merged: merged target map in [0, 1].
        cfg: loss exponents.

    Returns:
        (loss, gradient of the loss with respect to pred).
    """
    p = as_feature_map(pred, "pred")
    t = as_heatmap(merged, "merged")
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: pred {p.shape} vs merged {t.shape}")
    if p.size and (p.min() <= 0.0 or p.max() >= 1.0):
        raise ValueError("pred values must lie strictly inside (0, 1); clamp first")

    pos = t == 1.0
    n_pos = max(int(pos.sum()), 1)
    one_minus_p = 1.0 - p
    log_p = np.log(p)
    log_1mp = np.log(one_minus_p)
    g, a = cfg.gamma, cfg.alpha

    pos_term = one_minus_p**g * log_p
    neg_w = (1.0 - t) ** a
    neg_term = neg_w * p**g * log_1mp
    loss = -(pos_term[pos].sum() + neg_term[~pos].sum()) / n_pos

    grad = np.empty_like(p)
    grad_pos = -(-g * one_minus_p ** (g - 1.0) * log_p + one_minus_p**g / p) / n_pos
    grad_neg = -neg_w * (g * p ** (g - 1.0) * log_1mp - p**g / one_minus_p) / n_pos
    grad[pos] = grad_pos[pos]
    grad[~pos] = grad_neg[~pos]
    return float(loss), grad


def splg_pipeline(
    features: np.ndarray,
    target: np.ndarray,
    categories: Sequence[int],
    cfg: SplgConfig = SplgConfig(),
) -> tuple[np.ndarray, np.ndarray, ReferenceBank, UnlabeledSet, np.ndarray]:
    """Run mining end to end.

    Returns:
        (pseudo, merged, bank, unlabeled, scores).
    """
    bank = extract_reference_features(features, target, categories)
    unlabeled = collect_unlabeled(features, target)
    scores = similarity(unlabeled, bank)
    pseudo = build_pseudo_heatmap(scores, unlabeled, bank, cfg, target.shape[2])
    merged = merge_targets(target, pseudo)
    return pseudo, merged, bank, unlabeled, scores
