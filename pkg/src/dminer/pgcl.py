"""Group contrastive loss over mined cells.

One query per labeled category (its center feature), one primary key per
query (the Gaussian-pooled reference), and m keys picked from the highest
prediction peaks. Keys whose self-predicted class matches a query's class
form that query's positive group; every key and every primary key appears in
each query's partition function, so positives compete with each other.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import as_feature_map, as_heatmap, l2_normalize_rows
from .errors import InvalidTemperatureError, NotEnoughCellsError
from .splg import extract_reference_features


@dataclass(frozen=True)
class PgclConfig:
    """Group size, softmax temperature, and the loss weight."""

    m: int = 128
    tau: float = 0.07
    lambda_pgcl: float = 0.1

    def __post_init__(self):
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if self.tau <= 0:
            raise InvalidTemperatureError(f"tau must be positive, got {self.tau}")
        if self.lambda_pgcl < 0:
            raise ValueError(f"lambda_pgcl must be >= 0, got {self.lambda_pgcl}")


@dataclass(frozen=True)
class QuerySet:
    """Per labeled category: the center feature f_q and primary key f_k0."""

    categories: tuple[int, ...]
    f_q: np.ndarray  # (N, D), unit rows
    f_k0: np.ndarray  # (N, D), unit rows

    def __post_init__(self):
        n = len(self.categories)
        if n == 0 or self.f_q.shape[0] != n or self.f_k0.shape[0] != n:
            raise ValueError("one f_q and f_k0 row per category required")


@dataclass(frozen=True)
class PositiveSet:
    """Selected cells: positions, unit key rows, and the group mask.

    mask[i, j] = 1 when key j self-predicts query i's class; each column has
    at most one nonzero entry (classes are disjoint across queries).
    """

    positions: np.ndarray  # (m, 2) int, (y, x)
    keys: np.ndarray  # (m, D), unit rows
    mask: np.ndarray  # (N, m) in {0.0, 1.0}

    def __post_init__(self):
        m = self.positions.shape[0]
        if self.keys.shape[0] != m or self.mask.shape[1] != m:
            raise ValueError("positions, keys and mask disagree on m")
        if np.any(self.mask.sum(axis=0) > 1.0):
            raise ValueError("a key may belong to at most one query's group")


@dataclass(frozen=True)
class PgclGrads:
    f_q: np.ndarray
    f_k: np.ndarray
    f_k0: np.ndarray


def select_topm(
    pred: np.ndarray, m: int, labeled_centers: Sequence[tuple[int, int]]
) -> tuple[np.ndarray, np.ndarray]:
    """Pick the m highest-prediction cells, excluding labeled centers.

    A cell is scored by its maximum over channels and self-labeled with the
    argmax channel. Ordering is deterministic: score descending, then y, x,
    channel ascending.

    Args:
        pred: (H, W, C) prediction map.
        m: number of cells to select.
        labeled_centers: (y, x) cells to exclude.

    Returns:
        (positions (m, 2) int array, self_labels (m,) int array).

    Raises:
        NotEnoughCellsError: fewer than m cells remain after exclusion.
    """
    p = as_feature_map(pred, "pred")
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    h, w = p.shape[:2]
    excluded = np.zeros((h, w), dtype=bool)
    for y, x in labeled_centers:
        if not (0 <= y < h and 0 <= x < w):
            raise ValueError(f"labeled center ({y}, {x}) outside {h}x{w} grid")
        excluded[y, x] = True
    available = h * w - int(excluded.sum())
    if available < m:
        raise NotEnoughCellsError(f"requested m={m} but only {available} cells are available")

    cell_score = p.max(axis=2)
    cell_label = p.argmax(axis=2)  # lowest channel wins ties
    ys, xs = np.nonzero(~excluded)
    scores = cell_score[ys, xs]
    order = np.lexsort((xs, ys, -scores))[:m]
    positions = np.stack([ys[order], xs[order]], axis=1).astype(np.int64)
    labels = cell_label[positions[:, 0], positions[:, 1]].astype(np.int64)
    return positions, labels


def build_mask(query_categories: Sequence[int], self_labels: np.ndarray) -> np.ndarray:
    """Group membership matrix: mask[i, j] = 1 iff self_labels[j] == category i.

    Self labels outside the query categories simply yield all-zero columns;
    those keys still count as negatives inside every partition function.
    """
    cats = np.asarray(list(query_categories), dtype=np.int64)
    labels = np.asarray(self_labels, dtype=np.int64)
    return (labels[None, :] == cats[:, None]).astype(np.float64)


def build_queries(
    features: np.ndarray, target: np.ndarray, categories: Sequence[int]
) -> QuerySet:
    """Center features and pooled references for each labeled category.

    The labeled center of a category is its exact-1.0 peak in the target
    heatmap; exactly one per requested category is expected.
    """
    F = as_feature_map(features, "features")
    Y = as_heatmap(target, "target")
    if F.shape[:2] != Y.shape[:2]:
        raise ValueError(f"grid mismatch: features {F.shape[:2]} vs target {Y.shape[:2]}")
    cats = tuple(int(c) for c in categories)
    rows = []
    for c in cats:
        peaks = np.argwhere(Y[:, :, c] == 1.0)
        if peaks.shape[0] != 1:
            raise ValueError(
                f"category {c} has {peaks.shape[0]} labeled centers, expected exactly 1"
            )
        y, x = int(peaks[0, 0]), int(peaks[0, 1])
        rows.append(F[y, x, :])
    f_q = l2_normalize_rows(np.stack(rows, axis=0))
    bank = extract_reference_features(F, Y, cats)
    return QuerySet(categories=cats, f_q=f_q, f_k0=bank.features)


def build_positives(
    features: np.ndarray,
    positions: np.ndarray,
    self_labels: np.ndarray,
    query_categories: Sequence[int],
) -> PositiveSet:
    """Assemble keys and mask for already-selected cells."""
    F = as_feature_map(features, "features")
    keys = l2_normalize_rows(F[positions[:, 0], positions[:, 1], :])
    return PositiveSet(
        positions=np.asarray(positions, dtype=np.int64),
        keys=keys,
        mask=build_mask(query_categories, self_labels),
    )


def pgcl_loss(
    queries: QuerySet, positives: PositiveSet, cfg: PgclConfig = PgclConfig()
) -> tuple[float, PgclGrads]:
    """Group contrastive loss and its gradients.

    With logits a_ij = f_q_i . f_k_j / tau and b_iz = f_q_i . f_k0_z / tau,
    each query's partition sums exp over all m keys plus all N primary keys::

        L = -(1/m) sum_ij mask_ij * (a_ij - logZ_i)
            -(1/N) sum_i (b_ii - logZ_i)

    Gradients flow into queries, keys, and primary keys alike (there is no
    stop-gradient anywhere). Log-sum-exp is computed with max subtraction, so
    small temperatures stay finite.

    Returns:
        (loss, PgclGrads with arrays matching f_q, keys, f_k0).

    Raises:
        InvalidTemperatureError: cfg.tau <= 0 (checked at config build too).
    """
    if cfg.tau <= 0:
        raise InvalidTemperatureError(f"tau must be positive, got {cfg.tau}")
    Q = np.asarray(queries.f_q, dtype=np.float64)
    K = np.asarray(positives.keys, dtype=np.float64)
    K0 = np.asarray(queries.f_k0, dtype=np.float64)
    M = np.asarray(positives.mask, dtype=np.float64)
    n, d = Q.shape
    m = K.shape[0]
    if K.shape[1] != d or K0.shape != (n, d):
        raise ValueError("feature dimensions disagree between queries and keys")
    if M.shape != (n, m):
        raise ValueError(f"mask shape {M.shape} must be ({n}, {m})")

    tau = cfg.tau
    logits_k = Q @ K.T / tau  # (n, m)
    logits_0 = Q @ K0.T / tau  # (n, n)
    all_logits = np.concatenate([logits_k, logits_0], axis=1)
    row_max = all_logits.max(axis=1, keepdims=True)
    log_z = row_max[:, 0] + np.log(np.exp(all_logits - row_max).sum(axis=1))
    softmax = np.exp(all_logits - log_z[:, None])
    p_k, p_0 = softmax[:, :m], softmax[:, m:]

    diag = np.arange(n)
    group_terms = M * (logits_k - log_z[:, None])
    primary_terms = logits_0[diag, diag] - log_z
    loss = -group_terms.sum() / m - primary_terms.sum() / n

    coeff = (M.sum(axis=1) / m + 1.0 / n)[:, None]
    d_logits_k = -M / m + coeff * p_k
    d_logits_0 = coeff * p_0
    d_logits_0[diag, diag] -= 1.0 / n

    grads = PgclGrads(
        f_q=(d_logits_k @ K + d_logits_0 @ K0) / tau,
        f_k=d_logits_k.T @ Q / tau,
        f_k0=d_logits_0.T @ Q / tau,
    )
    return float(loss), grads
