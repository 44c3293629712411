"""Synthetic-scene optimization harness.

Builds a small scene whose feature map is category base embeddings plus
noise, keeps one annotation per category, and runs gradient descent on the
composite loss with the feature map and the offset/size head maps as free
parameters. The class prediction is sigmoid(scale * cosine(feature,
reference)), so the mining losses shape the features exactly the way the
training pipeline intends: unlabeled same-class cells drift toward the
references, pseudo labels accumulate, and the trajectory records it all.

Pseudo targets, the top-m selection, and the group mask are recomputed every
step but held constant inside a step (they are targets, not predictions).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Annotation, BBox, Grid
from .dataset import Dataset, ImageRecord, keep1_transform
from .errors import DivergedError, SceneTooCrowdedError
from .evaluation import Detection, EvalConfig, evaluate
from .heatmap import downsample_center, render_target
from .pgcl import (
    PgclConfig,
    PositiveSet,
    QuerySet,
    build_mask,
    pgcl_loss,
    select_topm,
)
from .splg import (
    ReferenceBank,
    SplgConfig,
    build_pseudo_heatmap,
    collect_unlabeled,
    merge_targets,
    splg_loss,
)


@dataclass(frozen=True)
class SceneSpec:
    """Synthetic scene layout.

    The grid is out_height x out_width cells at the given stride; every
    category gets instances_per_category instances on distinct cells, each
    cell's feature being the category's base embedding plus iid Gaussian
    noise (background cells use a separate embedding). Base embeddings are
    orthonormalized from the seed unless supplied.
    """

    out_height: int = 8
    out_width: int = 8
    stride: int = 4
    num_categories: int = 2
    instances_per_category: int = 3
    feature_dim: int = 16
    noise_sigma: float = 0.25
    seed: int = 0
    base_embeddings: np.ndarray | None = None

    def __post_init__(self):
        if self.out_height < 2 or self.out_width < 2:
            raise ValueError("grid must be at least 2x2")
        if self.num_categories < 1 or self.instances_per_category < 1:
            raise ValueError("need at least one category and one instance per category")
        if self.feature_dim < 2:
            raise ValueError(f"feature_dim must be >= 2, got {self.feature_dim}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")


@dataclass(frozen=True)
class TrainConfig:
    """Demo optimization knobs.

    lambda_pgcl lives on the pgcl config; the group size there defaults to a
    desk-scale 4 because an 8x8 scene only carries a handful of unlabeled
    instances, and a small group concentrates the per-key pull so that cells
    sitting just under the mining threshold can still be dragged across it.
    sigmoid_scale is the cosine-to-logit gain of the prediction head; it is
    deliberately soft (0.5) because a saturated head turns every sub-threshold
    cell into a full-strength focal negative that no contrastive pull can
    rescue. The offset/size maps train under head_lr, larger than the feature
    lr: their L1 gradients are constant-magnitude (sign / component count) and
    down-weighted by the loss weights, so at the feature lr they would crawl a
    fraction of a cell over a whole run. line_search halves the step whenever
    the refreshed loss would exceed the previous one (taking a zero step after
    max_halvings), which makes the recorded trajectory non-increasing.
    """

    steps: int = 200
    lr: float = 0.05
    head_lr: float = 0.5
    lambda_off: float = 1.0
    lambda_size: float = 0.1
    splg: SplgConfig = field(default_factory=SplgConfig)
    pgcl: PgclConfig = field(default_factory=lambda: PgclConfig(m=4))
    sigmoid_scale: float = 0.5
    line_search: bool = False
    max_halvings: int = 30

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.head_lr <= 0:
            raise ValueError(f"head_lr must be positive, got {self.head_lr}")
        if self.lambda_off < 0 or self.lambda_size < 0:
            raise ValueError("loss weights must be >= 0")
        if self.sigmoid_scale <= 0:
            raise ValueError(f"sigmoid_scale must be positive, got {self.sigmoid_scale}")
        if self.max_halvings < 1:
            raise ValueError(f"max_halvings must be >= 1, got {self.max_halvings}")


def gen_scene(spec: SceneSpec) -> tuple[np.ndarray, Dataset, Dataset]:
    """Create (features, full dataset, keep-one dataset) for a scene.

    Instance centers occupy distinct cells and each center cell carries its
    category's base embedding (boxes may span several cells, but only the
    center cell is stamped, so instances never clobber each other), so
    noise_sigma = 0 reproduces the base embeddings exactly at the centers.

    Raises:
        SceneTooCrowdedError: more instances than grid cells.
        ValueError: feature_dim < num_categories + 1 (orthonormal bases plus
            a distinct background direction no longer fit).
    """
    rng = np.random.default_rng(spec.seed)
    c, d = spec.num_categories, spec.feature_dim
    if d < c + 1:
        raise ValueError(
            f"feature_dim {d} must be at least num_categories + 1 = {c + 1}"
        )
    if spec.base_embeddings is not None:
        bases = np.asarray(spec.base_embeddings, dtype=np.float64)
        if bases.shape != (c, d):
            raise ValueError(f"base_embeddings must have shape ({c}, {d}), got {bases.shape}")
        norms = np.linalg.norm(bases, axis=1, keepdims=True)
        if np.any(norms == 0.0):
            raise ValueError("base embeddings must be nonzero")
        bases = bases / norms
        background = _orthogonal_direction(bases, rng)
    else:
        q, _ = np.linalg.qr(rng.standard_normal((d, c + 1)))
        bases = q[:, :c].T.copy()
        background = q[:, c].copy()

    h, w, s = spec.out_height, spec.out_width, spec.stride
    n_inst = c * spec.instances_per_category
    if n_inst > h * w:
        raise SceneTooCrowdedError(
            f"{n_inst} instances do not fit on a {h}x{w} grid"
        )
    cells = rng.choice(h * w, size=n_inst, replace=False)
    widths = s * rng.uniform(1.5, 3.0, size=n_inst)
    heights = s * rng.uniform(1.5, 3.0, size=n_inst)

    annotations: list[Annotation] = []
    mean_map = np.tile(background, (h, w, 1))
    for idx in range(n_inst):
        cat = idx // spec.instances_per_category
        cy_cell, cx_cell = divmod(int(cells[idx]), w)
        bbox = BBox(
            cx=(cx_cell + 0.5) * s,
            cy=(cy_cell + 0.5) * s,
            w=float(widths[idx]),
            h=float(heights[idx]),
        )
        annotations.append(Annotation(bbox=bbox, category=cat))
        mean_map[cy_cell, cx_cell, :] = bases[cat]

    features = mean_map + spec.noise_sigma * rng.standard_normal((h, w, d))
    full = Dataset(
        images=(
            ImageRecord(
                image_id=0,
                width=w * s,
                height=h * s,
                annotations=tuple(annotations),
            ),
        ),
        num_categories=c,
        category_names=tuple(f"cat{i}" for i in range(c)),
    )
    kept = keep1_transform(full, spec.seed)
    return features, full, kept


def _orthogonal_direction(bases: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """A unit vector orthogonal to every base row (resamples on cancellation)."""
    for _ in range(64):
        g = rng.standard_normal(bases.shape[1])
        g -= bases.T @ (bases @ g)
        norm = np.linalg.norm(g)
        if norm > 1e-9:
            return g / norm
    raise ValueError("could not find a direction orthogonal to the base embeddings")


def regression_losses(
    pred_off: np.ndarray,
    pred_size: np.ndarray,
    annotations: tuple[Annotation, ...] | list[Annotation],
    grid: Grid,
) -> tuple[float, float, np.ndarray, np.ndarray]:
    """L1 offset/size losses at labeled centers, with gradients.

    Targets at an annotation's center cell are (cx/s - px, cy/s - py) for the
    offset head and (w/s, h/s) for the size head; each loss is the mean
    absolute error over the 2 * K labeled components. Cells without a labeled
    center contribute nothing and receive zero gradient.
    """
    pred_off = np.asarray(pred_off, dtype=np.float64)
    pred_size = np.asarray(pred_size, dtype=np.float64)
    expected = (grid.out_height, grid.out_width, 2)
    if pred_off.shape != expected or pred_size.shape != expected:
        raise ValueError(f"head maps must have shape {expected}")
    if not annotations:
        raise ValueError("at least one labeled annotation is required")
    k = len(annotations)
    grad_off = np.zeros_like(pred_off)
    grad_size = np.zeros_like(pred_size)
    l_off = 0.0
    l_size = 0.0
    s = grid.stride
    for ann in annotations:
        px, py = downsample_center(ann.bbox, grid)
        t_off = np.array([ann.bbox.cx / s - px, ann.bbox.cy / s - py])
        t_size = np.array([ann.bbox.w / s, ann.bbox.h / s])
        d_off = pred_off[py, px] - t_off
        d_size = pred_size[py, px] - t_size
        l_off += np.abs(d_off).sum()
        l_size += np.abs(d_size).sum()
        grad_off[py, px] += np.sign(d_off) / (2.0 * k)
        grad_size[py, px] += np.sign(d_size) / (2.0 * k)
    return l_off / (2.0 * k), l_size / (2.0 * k), grad_off, grad_size


@dataclass(frozen=True)
class LossState:
    """Leaf inputs of the composite loss (gradients are taken at these)."""

    pred_heatmap: np.ndarray
    merged_target: np.ndarray
    queries: QuerySet
    positives: PositiveSet
    pred_off: np.ndarray
    pred_size: np.ndarray
    annotations: tuple[Annotation, ...]
    grid: Grid


@dataclass(frozen=True)
class TotalLossGrads:
    pred_heatmap: np.ndarray
    f_q: np.ndarray
    f_k: np.ndarray
    f_k0: np.ndarray
    pred_off: np.ndarray
    pred_size: np.ndarray


@dataclass(frozen=True)
class TotalLossResult:
    total: float
    splg: float
    pgcl: float
    off: float
    size: float
    grads: TotalLossGrads


def total_loss(state: LossState, cfg: TrainConfig = TrainConfig()) -> TotalLossResult:
    """Weighted sum of the four losses; gradients are the same weighted sums."""
    l_splg, d_pred = splg_loss(state.pred_heatmap, state.merged_target, cfg.splg)
    l_pgcl, pg = pgcl_loss(state.queries, state.positives, cfg.pgcl)
    l_off, l_size, g_off, g_size = regression_losses(
        state.pred_off, state.pred_size, state.annotations, state.grid
    )
    lam = cfg.pgcl.lambda_pgcl
    total = l_splg + lam * l_pgcl + cfg.lambda_off * l_off + cfg.lambda_size * l_size
    return TotalLossResult(
        total=float(total),
        splg=l_splg,
        pgcl=l_pgcl,
        off=l_off,
        size=l_size,
        grads=TotalLossGrads(
            pred_heatmap=d_pred,
            f_q=lam * pg.f_q,
            f_k=lam * pg.f_k,
            f_k0=lam * pg.f_k0,
            pred_off=cfg.lambda_off * g_off,
            pred_size=cfg.lambda_size * g_size,
        ),
    )


@dataclass(frozen=True)
class PseudoLabelMetrics:
    recall: float
    precision: float
    num_unlabeled: int
    num_pseudo_cells: int


def pseudo_label_metrics(
    pseudo: np.ndarray,
    full: Dataset,
    kept: Dataset,
    grid: Grid,
    footprint_level: float = 0.3,
) -> PseudoLabelMetrics:
    """Score mined cells against the instances the sparse set dropped.

    An unlabeled instance counts as recalled when at least one mined cell of
    its class lies inside its Gaussian footprint (cells where the instance's
    own rendered bump reaches footprint_level). Precision is the fraction of
    mined cells lying in such a footprint; with no mined cells it is
    vacuously 1.0.
    """
    num_categories = full.num_categories
    footprints = _unlabeled_footprints(full, kept, grid, num_categories, footprint_level)
    pos = np.argwhere(pseudo > 0.0)
    recalled = 0
    for mask, cat in footprints:
        if np.any(pseudo[:, :, cat][mask] > 0.0):
            recalled += 1
    covered = 0
    for y, x, c in pos:
        if any(cat == c and mask[y, x] for mask, cat in footprints):
            covered += 1
    n_pseudo = int(pos.shape[0])
    return PseudoLabelMetrics(
        recall=recalled / len(footprints) if footprints else 0.0,
        precision=covered / n_pseudo if n_pseudo else 1.0,
        num_unlabeled=len(footprints),
        num_pseudo_cells=n_pseudo,
    )


def _unlabeled_footprints(
    full: Dataset, kept: Dataset, grid: Grid, num_categories: int, level: float
) -> list[tuple[np.ndarray, int]]:
    """Per unlabeled instance: (cells its own bump reaches `level`, category)."""
    footprints: list[tuple[np.ndarray, int]] = []
    kept_by_image = {im.image_id: list(im.annotations) for im in kept.images}
    for im in full.images:
        remaining = kept_by_image.get(im.image_id, [])[:]
        for ann in im.annotations:
            if ann in remaining:
                remaining.remove(ann)  # labeled, not an unlabeled instance
                continue
            bump = render_target([ann], grid, num_categories)[:, :, ann.category]
            footprints.append((bump >= level, ann.category))
    return footprints


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class _DemoContext:
    """Constants of one demo run."""

    grid: Grid
    target: np.ndarray  # rendered from the kept annotations
    categories: tuple[int, ...]
    centers: np.ndarray  # (N, 2) (y, x), aligned with categories
    kept_annotations: tuple[Annotation, ...]
    full: Dataset
    kept: Dataset
    cfg: TrainConfig


@dataclass
class _DemoStructure:
    """Per-step constants: targets and selection derived from the features."""

    pseudo: np.ndarray
    merged: np.ndarray
    positions: np.ndarray
    mask: np.ndarray


@dataclass
class _StepEval:
    result: TotalLossResult
    metrics: PseudoLabelMetrics
    pred_heatmap: np.ndarray
    structure: _DemoStructure
    grad_features: np.ndarray
    grad_off: np.ndarray
    grad_size: np.ndarray


def _normalize_with_cache(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(features, axis=2)
    if np.any(norms == 0.0):
        raise ZeroDivisionError("zero feature vector in demo features")
    return features / norms[:, :, None], norms


def _pool_references(
    features: np.ndarray, target_sel: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    pooled = np.einsum("yxc,yxd->cd", target_sel, features)
    norms = np.linalg.norm(pooled, axis=1)
    if np.any(norms == 0.0):
        raise ZeroDivisionError("reference pooling cancelled to zero")
    return pooled / norms[:, None], pooled, norms


def _demo_structure(
    features: np.ndarray, unit: np.ndarray, refs: np.ndarray, ctx: _DemoContext
) -> _DemoStructure:
    """Recompute targets and selection (held constant within the step)."""
    cfg = ctx.cfg
    num_categories = ctx.target.shape[2]
    unlabeled = collect_unlabeled(features, ctx.target)
    scores = np.clip(unlabeled.features @ refs.T, 0.0, 1.0)
    bank = ReferenceBank(categories=ctx.categories, features=refs)
    pseudo = build_pseudo_heatmap(scores, unlabeled, bank, cfg.splg, num_categories)
    merged = merge_targets(ctx.target, pseudo)
    logits = cfg.sigmoid_scale * np.einsum("yxd,cd->yxc", unit, refs)
    pred = _sigmoid(logits)
    positions, labels = select_topm(pred, cfg.pgcl.m, [tuple(c) for c in ctx.centers])
    mask = build_mask(ctx.categories, labels)
    return _DemoStructure(pseudo=pseudo, merged=merged, positions=positions, mask=mask)


def _demo_eval(
    features: np.ndarray,
    pred_off: np.ndarray,
    pred_size: np.ndarray,
    ctx: _DemoContext,
    structure: _DemoStructure | None = None,
) -> _StepEval:
    """Loss, metrics, and the full-chain gradient at the given parameters.

    The prediction is sigmoid(scale * U G^T) with U the per-cell unit
    features and G the pooled unit references, so the gradient chains through
    both normalizations. The structure (targets, selection, mask) is treated
    as constant; pass one to evaluate against frozen targets.
    """
    cfg = ctx.cfg
    target_sel = ctx.target[:, :, list(ctx.categories)]
    unit, cell_norms = _normalize_with_cache(features)
    refs, pooled_raw, ref_norms = _pool_references(features, target_sel)
    if structure is None:
        structure = _demo_structure(features, unit, refs, ctx)

    logits = cfg.sigmoid_scale * np.einsum("yxd,cd->yxc", unit, refs)
    pred = _sigmoid(logits)

    cy, cx = ctx.centers[:, 0], ctx.centers[:, 1]
    queries = QuerySet(categories=ctx.categories, f_q=unit[cy, cx, :], f_k0=refs)
    ky, kx = structure.positions[:, 0], structure.positions[:, 1]
    positives = PositiveSet(
        positions=structure.positions, keys=unit[ky, kx, :], mask=structure.mask
    )
    state = LossState(
        pred_heatmap=pred,
        merged_target=structure.merged,
        queries=queries,
        positives=positives,
        pred_off=pred_off,
        pred_size=pred_size,
        annotations=ctx.kept_annotations,
        grid=ctx.grid,
    )
    result = total_loss(state, cfg)

    # Chain rule back to the raw feature map.
    d_logits = result.grads.pred_heatmap * pred * (1.0 - pred)
    d_unit = cfg.sigmoid_scale * np.einsum("yxc,cd->yxd", d_logits, refs)
    d_refs = cfg.sigmoid_scale * np.einsum("yxc,yxd->cd", d_logits, unit)
    np.add.at(d_unit, (cy, cx), result.grads.f_q)
    np.add.at(d_unit, (ky, kx), result.grads.f_k)
    d_refs += result.grads.f_k0

    d_pooled = (d_refs - (refs * d_refs).sum(axis=1, keepdims=True) * refs) / ref_norms[:, None]
    grad_features = np.einsum("yxc,cd->yxd", target_sel, d_pooled)
    grad_features += (
        d_unit - (unit * d_unit).sum(axis=2, keepdims=True) * unit
    ) / cell_norms[:, :, None]

    metrics = pseudo_label_metrics(structure.pseudo, ctx.full, ctx.kept, ctx.grid)
    return _StepEval(
        result=result,
        metrics=metrics,
        pred_heatmap=pred,
        structure=structure,
        grad_features=grad_features,
        grad_off=result.grads.pred_off,
        grad_size=result.grads.pred_size,
    )


def detections_from_prediction(
    pred_heatmap: np.ndarray,
    pred_off: np.ndarray,
    pred_size: np.ndarray,
    grid: Grid,
    image_id: int = 0,
    max_dets: int = 100,
) -> list[Detection]:
    """Decode channel-wise local maxima into detections.

    A cell is a peak when its value is >= its 8 neighbors on that channel.
    Boxes are rebuilt from the head maps: center (x + off) * stride, sides
    size * stride (floored at a hundredth of a cell to stay valid).
    """
    h, w, c = pred_heatmap.shape
    padded = np.full((h + 2, w + 2, c), -np.inf)
    padded[1:-1, 1:-1, :] = pred_heatmap
    is_peak = np.ones((h, w, c), dtype=bool)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            is_peak &= pred_heatmap >= padded[1 + dy : h + 1 + dy, 1 + dx : w + 1 + dx, :]
    peaks = np.argwhere(is_peak)
    scored = sorted(
        ((float(pred_heatmap[y, x, ch]), int(y), int(x), int(ch)) for y, x, ch in peaks),
        key=lambda t: (-t[0], t[1], t[2], t[3]),
    )[:max_dets]
    s = grid.stride
    dets = []
    for score, y, x, ch in scored:
        dets.append(
            Detection(
                image_id=image_id,
                bbox=BBox(
                    cx=(x + float(pred_off[y, x, 0])) * s,
                    cy=(y + float(pred_off[y, x, 1])) * s,
                    w=max(float(pred_size[y, x, 0]), 0.01) * s,
                    h=max(float(pred_size[y, x, 1]), 0.01) * s,
                ),
                category=ch,
                score=min(max(score, 0.0), 1.0),
            )
        )
    return dets


@dataclass(frozen=True)
class TrajectoryReport:
    """Per-step measurements of a demo run (lists have steps + 1 entries)."""

    steps: int
    seed: int
    loss_total: tuple[float, ...]
    loss_splg: tuple[float, ...]
    loss_pgcl: tuple[float, ...]
    loss_off: tuple[float, ...]
    loss_size: tuple[float, ...]
    pseudo_recall: tuple[float, ...]
    pseudo_precision: tuple[float, ...]
    ap_at_s_initial: float
    ap_at_s_final: float

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "seed": self.seed,
            "loss_total": list(self.loss_total),
            "loss_splg": list(self.loss_splg),
            "loss_pgcl": list(self.loss_pgcl),
            "loss_off": list(self.loss_off),
            "loss_size": list(self.loss_size),
            "pseudo_recall": list(self.pseudo_recall),
            "pseudo_precision": list(self.pseudo_precision),
            "ap_at_s_initial": self.ap_at_s_initial,
            "ap_at_s_final": self.ap_at_s_final,
        }


def train_demo(spec: SceneSpec = SceneSpec(), cfg: TrainConfig = TrainConfig()) -> TrajectoryReport:
    """Optimize a synthetic scene and record the trajectory.

    Plain gradient descent over the feature map and the offset/size head
    maps. With cfg.line_search enabled, a step is only accepted if the
    refreshed total loss does not exceed the previous recorded value (the
    step is halved up to cfg.max_halvings times, then skipped), making the
    recorded loss curve non-increasing.

    Raises:
        DivergedError: a non-finite loss appeared; .step holds the index.
    """
    features, full, kept = gen_scene(spec)
    grid = Grid(
        height=spec.out_height * spec.stride,
        width=spec.out_width * spec.stride,
        stride=spec.stride,
    )
    img = kept.images[0]
    categories = tuple(sorted({a.category for a in img.annotations}))
    anns_by_cat = {a.category: a for a in img.annotations}
    centers = np.asarray(
        [downsample_center(anns_by_cat[c].bbox, grid)[::-1] for c in categories],
        dtype=np.int64,
    )  # stored (y, x)
    target = render_target(img.annotations, grid, spec.num_categories)
    ctx = _DemoContext(
        grid=grid,
        target=target,
        categories=categories,
        centers=centers,
        kept_annotations=img.annotations,
        full=full,
        kept=kept,
        cfg=cfg,
    )

    pred_off = np.zeros((grid.out_height, grid.out_width, 2))
    pred_size = np.ones((grid.out_height, grid.out_width, 2))
    init_off, init_size = pred_off.copy(), pred_size.copy()

    evals: list[_StepEval] = []
    current = _demo_eval(features, pred_off, pred_size, ctx)
    _check_finite(current, 0)
    evals.append(current)
    for step in range(cfg.steps):
        if cfg.line_search:
            scale = 1.0
            accepted = None
            for _ in range(cfg.max_halvings):
                cand = (
                    features - scale * cfg.lr * current.grad_features,
                    pred_off - scale * cfg.head_lr * current.grad_off,
                    pred_size - scale * cfg.head_lr * current.grad_size,
                )
                cand_eval = _demo_eval(*cand, ctx)
                if (
                    np.isfinite(cand_eval.result.total)
                    and cand_eval.result.total <= current.result.total
                ):
                    accepted = (cand, cand_eval)
                    break
                scale /= 2.0
            if accepted is None:
                evals.append(current)  # zero step; parameters unchanged
                continue
            (features, pred_off, pred_size), current = accepted
        else:
            features = features - cfg.lr * current.grad_features
            pred_off = pred_off - cfg.head_lr * current.grad_off
            pred_size = pred_size - cfg.head_lr * current.grad_size
            current = _demo_eval(features, pred_off, pred_size, ctx)
        _check_finite(current, step + 1)
        evals.append(current)

    eval_cfg = EvalConfig()
    ap_initial = _scene_ap(evals[0], init_off, init_size, full, grid, eval_cfg)
    ap_final = _scene_ap(evals[-1], pred_off, pred_size, full, grid, eval_cfg)
    return TrajectoryReport(
        steps=cfg.steps,
        seed=spec.seed,
        loss_total=tuple(e.result.total for e in evals),
        loss_splg=tuple(e.result.splg for e in evals),
        loss_pgcl=tuple(e.result.pgcl for e in evals),
        loss_off=tuple(e.result.off for e in evals),
        loss_size=tuple(e.result.size for e in evals),
        pseudo_recall=tuple(e.metrics.recall for e in evals),
        pseudo_precision=tuple(e.metrics.precision for e in evals),
        ap_at_s_initial=ap_initial,
        ap_at_s_final=ap_final,
    )


def _check_finite(step_eval: _StepEval, step: int):
    if not np.isfinite(step_eval.result.total):
        raise DivergedError(f"non-finite total loss at step {step}", step=step)


def _scene_ap(
    step_eval: _StepEval,
    pred_off: np.ndarray,
    pred_size: np.ndarray,
    full: Dataset,
    grid: Grid,
    eval_cfg: EvalConfig,
) -> float:
    dets = detections_from_prediction(
        step_eval.pred_heatmap, pred_off, pred_size, grid, image_id=full.images[0].image_id
    )
    return evaluate(full, dets, eval_cfg).ap_at_s_mean
