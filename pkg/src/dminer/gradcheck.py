"""Finite-difference verification of every analytic gradient.

Each loss gets a stream of randomized instances; the analytic gradient is
compared coordinate-wise against the central-difference oracle. A coordinate
passes when |analytic - numeric| <= max(rtol * max(|analytic|, |numeric|),
atol). The reported figure per loss is the worst scaled error seen.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .core import Annotation, BBox, Grid, finite_diff_grad
from .harness import LossState, TrainConfig, regression_losses, total_loss
from .pgcl import PgclConfig, PositiveSet, QuerySet, pgcl_loss
from .splg import SplgConfig, splg_loss

DEFAULT_H = 1e-4
DEFAULT_RTOL = 1e-4
DEFAULT_ATOL = 1e-8

LOSS_NAMES = ("splg", "pgcl", "off", "size", "total")


@dataclass(frozen=True)
class GradCheckStats:
    loss: str
    instances: int
    max_scaled_error: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.max_scaled_error <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "loss": self.loss,
            "instances": self.instances,
            "max_scaled_error": self.max_scaled_error,
            "tolerance": self.tolerance,
            "ok": self.ok,
        }


@dataclass(frozen=True)
class GradCheckReport:
    stats: tuple[GradCheckStats, ...]
    elapsed_seconds: float

    @property
    def ok(self) -> bool:
        return all(s.ok for s in self.stats)

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "elapsed_seconds": self.elapsed_seconds,
            "losses": [s.to_dict() for s in self.stats],
        }


def _scaled_error(analytic: np.ndarray, numeric: np.ndarray, rtol: float, atol: float) -> float:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), atol / rtol)
    if analytic.size == 0:
        return 0.0
    return float((np.abs(analytic - numeric) / scale).max())


def random_splg_instance(rng: np.random.Generator):
    """Prediction away from {0, 1}; merged target mixing 0s, exact 1s, tails."""
    h, w, c = rng.integers(2, 7), rng.integers(2, 7), rng.integers(1, 5)
    pred = rng.uniform(0.05, 0.95, size=(h, w, c))
    merged = np.zeros((h, w, c))
    n_cells = h * w * c
    flat = merged.reshape(-1)
    n_pos = int(rng.integers(0, max(2, n_cells // 8)))
    if n_pos:
        flat[rng.choice(n_cells, size=n_pos, replace=False)] = 1.0
    soft = rng.random(n_cells) < 0.3
    soft &= flat != 1.0
    flat[soft] = rng.uniform(0.0, 0.999, size=int(soft.sum()))
    cfg = SplgConfig(
        eta=float(rng.uniform(0.5, 1.0)),
        t_sim=float(rng.uniform(0.3, 0.8)),
        gamma=float(rng.choice([1.5, 2.0, 3.0])),
        alpha=float(rng.choice([2.0, 4.0])),
    )
    return pred, merged, cfg


def random_pgcl_instance(rng: np.random.Generator):
    n = int(rng.integers(1, 4))
    m = int(rng.integers(1, 7))
    d = int(rng.choice([4, 8]))
    unit = lambda rows: rows / np.linalg.norm(rows, axis=1, keepdims=True)
    queries = QuerySet(
        categories=tuple(range(n)),
        f_q=unit(rng.standard_normal((n, d))),
        f_k0=unit(rng.standard_normal((n, d))),
    )
    mask = np.zeros((n, m))
    for j in range(m):
        if rng.random() < 0.6:
            mask[int(rng.integers(n)), j] = 1.0
    positives = PositiveSet(
        positions=np.stack(
            [rng.integers(0, 8, size=m), rng.integers(0, 8, size=m)], axis=1
        ).astype(np.int64),
        keys=unit(rng.standard_normal((m, d))),
        mask=mask,
    )
    cfg = PgclConfig(m=m, tau=float(rng.choice([0.07, 0.2, 1.0])))
    return queries, positives, cfg


def random_regression_instance(rng: np.random.Generator):
    """Head maps plus annotations, predictions kept off the L1 kinks."""
    h, w = int(rng.integers(2, 6)), int(rng.integers(2, 6))
    stride = 4
    grid = Grid(height=h * stride, width=w * stride, stride=stride)
    k = int(rng.integers(1, min(5, h * w) + 1))
    cells = rng.choice(h * w, size=k, replace=False)
    anns = []
    for cell in cells:
        cy_cell, cx_cell = divmod(int(cell), w)
        anns.append(
            Annotation(
                bbox=BBox(
                    cx=(cx_cell + float(rng.uniform(0.1, 0.9))) * stride,
                    cy=(cy_cell + float(rng.uniform(0.1, 0.9))) * stride,
                    w=float(rng.uniform(1.0, 3.0)) * stride,
                    h=float(rng.uniform(1.0, 3.0)) * stride,
                ),
                category=0,
            )
        )
    pred_off = rng.uniform(-1.0, 2.0, size=(h, w, 2))
    pred_size = rng.uniform(0.2, 4.0, size=(h, w, 2))
    # Push predictions at labeled cells away from their targets so the
    # perturbed evaluations never cross an absolute-value kink.
    for ann in anns:
        px = int(ann.bbox.cx // stride)
        py = int(ann.bbox.cy // stride)
        t_off = np.array([ann.bbox.cx / stride - px, ann.bbox.cy / stride - py])
        t_size = np.array([ann.bbox.w / stride, ann.bbox.h / stride])
        for pred, targ in ((pred_off, t_off), (pred_size, t_size)):
            delta = pred[py, px] - targ
            small = np.abs(delta) < 1e-2
            sign = np.where(delta >= 0, 1.0, -1.0)
            pred[py, px] = np.where(small, targ + sign * 1e-2, pred[py, px])
    return pred_off, pred_size, tuple(anns), grid


def random_total_instance(rng: np.random.Generator):
    pred, merged, splg_cfg = random_splg_instance(rng)
    queries, positives, pgcl_cfg = random_pgcl_instance(rng)
    pred_off, pred_size, anns, grid = random_regression_instance(rng)
    cfg = TrainConfig(splg=splg_cfg, pgcl=pgcl_cfg)
    state = LossState(
        pred_heatmap=pred,
        merged_target=merged,
        queries=queries,
        positives=positives,
        pred_off=pred_off,
        pred_size=pred_size,
        annotations=anns,
        grid=grid,
    )
    return state, cfg


def check_splg(rng, h, rtol, atol) -> float:
    pred, merged, cfg = random_splg_instance(rng)
    _, grad = splg_loss(pred, merged, cfg)
    numeric = finite_diff_grad(lambda p: splg_loss(p, merged, cfg)[0], pred, h)
    return _scaled_error(grad, numeric, rtol, atol)


def check_pgcl(rng, h, rtol, atol) -> float:
    queries, positives, cfg = random_pgcl_instance(rng)
    _, grads = pgcl_loss(queries, positives, cfg)
    worst = 0.0
    numeric_q = finite_diff_grad(
        lambda q: pgcl_loss(replace(queries, f_q=q), positives, cfg)[0], queries.f_q, h
    )
    worst = max(worst, _scaled_error(grads.f_q, numeric_q, rtol, atol))
    numeric_k = finite_diff_grad(
        lambda k: pgcl_loss(queries, replace(positives, keys=k), cfg)[0], positives.keys, h
    )
    worst = max(worst, _scaled_error(grads.f_k, numeric_k, rtol, atol))
    numeric_k0 = finite_diff_grad(
        lambda k0: pgcl_loss(replace(queries, f_k0=k0), positives, cfg)[0], queries.f_k0, h
    )
    return max(worst, _scaled_error(grads.f_k0, numeric_k0, rtol, atol))


def check_off(rng, h, rtol, atol) -> float:
    pred_off, pred_size, anns, grid = random_regression_instance(rng)
    _, _, grad_off, _ = regression_losses(pred_off, pred_size, anns, grid)
    numeric = finite_diff_grad(
        lambda p: regression_losses(p, pred_size, anns, grid)[0], pred_off, h
    )
    return _scaled_error(grad_off, numeric, rtol, atol)


def check_size(rng, h, rtol, atol) -> float:
    pred_off, pred_size, anns, grid = random_regression_instance(rng)
    _, _, _, grad_size = regression_losses(pred_off, pred_size, anns, grid)
    numeric = finite_diff_grad(
        lambda p: regression_losses(pred_off, p, anns, grid)[1], pred_size, h
    )
    return _scaled_error(grad_size, numeric, rtol, atol)


def check_total(rng, h, rtol, atol) -> float:
    state, cfg = random_total_instance(rng)
    result = total_loss(state, cfg)
    worst = 0.0
    leaves = [
        ("pred_heatmap", state.pred_heatmap, result.grads.pred_heatmap,
         lambda a: replace(state, pred_heatmap=a)),
        ("f_q", state.queries.f_q, result.grads.f_q,
         lambda a: replace(state, queries=replace(state.queries, f_q=a))),
        ("f_k", state.positives.keys, result.grads.f_k,
         lambda a: replace(state, positives=replace(state.positives, keys=a))),
        ("f_k0", state.queries.f_k0, result.grads.f_k0,
         lambda a: replace(state, queries=replace(state.queries, f_k0=a))),
        ("pred_off", state.pred_off, result.grads.pred_off,
         lambda a: replace(state, pred_off=a)),
        ("pred_size", state.pred_size, result.grads.pred_size,
         lambda a: replace(state, pred_size=a)),
    ]
    for _, value, analytic, rebuild in leaves:
        numeric = finite_diff_grad(lambda a: total_loss(rebuild(a), cfg).total, value, h)
        worst = max(worst, _scaled_error(analytic, numeric, rtol, atol))
    return worst


_CHECKS = {
    "splg": check_splg,
    "pgcl": check_pgcl,
    "off": check_off,
    "size": check_size,
    "total": check_total,
}


def run_gradcheck(
    instances: int = 100,
    seed: int = 0,
    h: float = DEFAULT_H,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
    losses: tuple[str, ...] = LOSS_NAMES,
) -> GradCheckReport:
    """Run the full finite-difference suite.

    Args:
        instances: randomized instances per loss.
        seed: base seed; each loss gets its own derived stream.
        h, rtol, atol: finite-difference step and tolerances.
        losses: subset of LOSS_NAMES to run.

    Returns:
        GradCheckReport with per-loss worst scaled errors.
    """
    start = time.perf_counter()
    stats = []
    for name in losses:
        if name not in _CHECKS:
            raise ValueError(f"unknown loss {name!r}; choose from {LOSS_NAMES}")
        # string hashes are randomized per process; index keeps streams stable
        rng = np.random.default_rng([seed, LOSS_NAMES.index(name)])
        worst = 0.0
        for _ in range(instances):
            worst = max(worst, _CHECKS[name](rng, h, rtol, atol))
        stats.append(
            GradCheckStats(
                loss=name, instances=instances, max_scaled_error=worst, tolerance=rtol
            )
        )
    return GradCheckReport(stats=tuple(stats), elapsed_seconds=time.perf_counter() - start)
