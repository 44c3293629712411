"""Command-line interface.

Subcommands: keep1, render-heatmap, splg, pgcl, pool, eval, demo, gradcheck.
Every subcommand accepts --config pointing at a flat ``key = value`` file;
explicit flags win over the file, and the DMINER_SEED environment variable
overrides a config-file seed (but not a --seed flag).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import io as dio
from .adapters import AnchorSpec, anchor_pseudo_pool
from .core import Grid
from .dataset import (
    keep1_transform,
    load_dataset,
    reduction_report,
    save_dataset,
)
from .errors import DMinerError
from .evaluation import EvalConfig, evaluate
from .gradcheck import run_gradcheck
from .harness import (
    SceneSpec,
    TrainConfig,
    pseudo_label_metrics,
    train_demo,
)
from .heatmap import labeled_centers, render_target
from .pgcl import PgclConfig, build_positives, build_queries, pgcl_loss, select_topm
from .splg import SplgConfig, splg_pipeline

ENV_SEED = "DMINER_SEED"


def _add_config_arg(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key = value config file; flags win")


def _load_config(args) -> dict[str, str]:
    if getattr(args, "config", None):
        return dio.parse_config_file(args.config)
    return {}


def _opt(args, cfg_file: dict[str, str], key: str, default):
    """Resolve one option: flag > config file > default."""
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if key in cfg_file:
        value = dio.coerce_config_value(cfg_file[key])
        if default is not None and not isinstance(value, type(default)):
            try:
                value = type(default)(value)
            except (TypeError, ValueError) as exc:
                raise ValueError(f"config key {key}: cannot interpret {cfg_file[key]!r}") from exc
        return value
    return default


def _opt_seed(args, cfg_file: dict[str, str], default: int = 0) -> int:
    """Seed precedence: --seed flag > DMINER_SEED > config file > default."""
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get(ENV_SEED)
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ValueError(f"{ENV_SEED} must be an integer, got {env!r}") from exc
    return _opt(args, cfg_file, "seed", default)


def _single_image(ds, image_id):
    if image_id is None:
        if len(ds.images) != 1:
            raise ValueError(
                f"dataset holds {len(ds.images)} images; pass --image-id to pick one"
            )
        return ds.images[0]
    for im in ds.images:
        if im.image_id == image_id:
            return im
    raise ValueError(f"image id {image_id} not present in the dataset")


def _print_json(obj):
    json.dump(obj, sys.stdout, indent=2)
    sys.stdout.write("\n")


def cmd_keep1(args) -> int:
    cfg_file = _load_config(args)
    seed = _opt_seed(args, cfg_file)
    full = load_dataset(args.gt, box_format=args.box_format)
    kept = keep1_transform(full, seed)
    save_dataset(kept, args.out)
    report = reduction_report(full, kept)
    _print_json({"seed": seed, "out": str(args.out), **report.to_dict()})
    return 0


def cmd_render_heatmap(args) -> int:
    cfg_file = _load_config(args)
    stride = _opt(args, cfg_file, "stride", 4)
    min_overlap = _opt(args, cfg_file, "min_overlap", 0.7)
    ds = load_dataset(args.gt, box_format=args.box_format)
    im = _single_image(ds, args.image_id)
    grid = Grid(height=im.height, width=im.width, stride=stride)
    target = render_target(im.annotations, grid, ds.num_categories, min_overlap)
    dio.save_tensor(args.out, target)
    _print_json(
        {
            "out": str(args.out),
            "image_id": im.image_id,
            "dims": list(target.shape),
            "stride": stride,
            "peaks": int((target == 1.0).sum()),
        }
    )
    return 0


def cmd_splg(args) -> int:
    cfg_file = _load_config(args)
    cfg = SplgConfig(
        eta=_opt(args, cfg_file, "eta", 1.0),
        t_sim=_opt(args, cfg_file, "t_sim", 0.6),
        gamma=_opt(args, cfg_file, "gamma", 2.0),
        alpha=_opt(args, cfg_file, "alpha", 4.0),
    )
    stride = _opt(args, cfg_file, "stride", 4)
    kept = load_dataset(args.gt, box_format=args.box_format)
    im = _single_image(kept, args.image_id)
    features = dio.load_tensor(args.features)
    grid = Grid(height=im.height, width=im.width, stride=stride)
    if features.shape[:2] != (grid.out_height, grid.out_width):
        raise ValueError(
            f"features {features.shape[:2]} do not match the "
            f"{grid.out_height}x{grid.out_width} grid at stride {stride}"
        )
    target = render_target(im.annotations, grid, kept.num_categories)
    categories = sorted({a.category for a in im.annotations})
    pseudo, merged, bank, unlabeled, scores = splg_pipeline(features, target, categories, cfg)
    dio.save_tensor(args.out, pseudo)
    if args.out_merged:
        dio.save_tensor(args.out_merged, merged)
    summary = {
        "out": str(args.out),
        "image_id": im.image_id,
        "categories": list(bank.categories),
        "unlabeled_cells": int(unlabeled.positions.shape[0]),
        "pseudo_cells": int((pseudo > 0).sum()),
        "max_score": float(scores.max()) if scores.size else 0.0,
        "eta": cfg.eta,
        "t_sim": cfg.t_sim,
    }
    if args.full_gt:
        full = load_dataset(args.full_gt, box_format=args.box_format)
        metrics = pseudo_label_metrics(
            pseudo,
            _subset_dataset(full, im.image_id),
            _subset_dataset(kept, im.image_id),
            grid,
        )
        summary["recall"] = metrics.recall
        summary["precision"] = metrics.precision
        summary["unlabeled_instances"] = metrics.num_unlabeled
    _print_json(summary)
    return 0


def _subset_dataset(ds, image_id):
    from .dataset import Dataset

    images = tuple(im for im in ds.images if im.image_id == image_id)
    if not images:
        raise ValueError(f"image id {image_id} not present in the dataset")
    return Dataset(
        images=images,
        num_categories=ds.num_categories,
        category_names=ds.category_names,
    )


def cmd_pgcl(args) -> int:
    cfg_file = _load_config(args)
    cfg = PgclConfig(
        m=_opt(args, cfg_file, "m", 12),
        tau=_opt(args, cfg_file, "tau", 0.07),
        lambda_pgcl=_opt(args, cfg_file, "lambda_pgcl", 0.1),
    )
    stride = _opt(args, cfg_file, "stride", 4)
    kept = load_dataset(args.gt, box_format=args.box_format)
    im = _single_image(kept, args.image_id)
    features = dio.load_tensor(args.features)
    pred = dio.load_tensor(args.pred)
    grid = Grid(height=im.height, width=im.width, stride=stride)
    target = render_target(im.annotations, grid, kept.num_categories)
    categories = sorted({a.category for a in im.annotations})
    queries = build_queries(features, target, categories)
    positions, labels = select_topm(pred, cfg.m, labeled_centers(target))
    positives = build_positives(features, positions, labels, categories)
    loss, grads = pgcl_loss(queries, positives, cfg)
    out = {
        "image_id": im.image_id,
        "m": cfg.m,
        "tau": cfg.tau,
        "loss": loss,
        "positions": [[int(y), int(x)] for y, x in positions],
        "self_labels": [int(v) for v in labels],
        "mask": positives.mask.astype(int).tolist(),
        "grad_norms": {
            "f_q": float(np.linalg.norm(grads.f_q)),
            "f_k": float(np.linalg.norm(grads.f_k)),
            "f_k0": float(np.linalg.norm(grads.f_k0)),
        },
    }
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(out, fh, indent=2)
            fh.write("\n")
    _print_json(out)
    return 0


def cmd_pool(args) -> int:
    spec = AnchorSpec(
        anchor_sizes=tuple(args.anchor_sizes),
        kernel_sizes=tuple(args.kernel_sizes),
    )
    pseudo = dio.load_tensor(getattr(args, "in"))
    pooled = anchor_pseudo_pool(pseudo, spec)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"dims": list(pseudo.shape), "outputs": []}
    for size, hm in pooled.items():
        path = out_dir / f"pooled_{size}.json"
        dio.save_tensor(path, hm)
        kernel = spec.kernel_sizes[spec.anchor_sizes.index(size)]
        manifest["outputs"].append(
            {"anchor_size": size, "kernel": kernel, "path": path.name, "max": float(hm.max())}
        )
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    _print_json(manifest)
    return 0


def cmd_eval(args) -> int:
    cfg_file = _load_config(args)
    max_dets = _opt(args, cfg_file, "max_dets", 100)
    if args.iou_thrs:
        iou_thresholds = tuple(args.iou_thrs)
    else:
        iou_thresholds = EvalConfig().iou_thresholds
    cfg = EvalConfig(iou_thresholds=iou_thresholds, max_dets=max_dets)
    gt = load_dataset(args.gt, box_format=args.box_format)
    dets = dio.load_detections(args.dets, box_format=args.box_format)
    result = evaluate(gt, dets, cfg)
    payload = result.to_dict()
    payload["num_detections"] = len(dets)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["score_threshold", "ap"])
            for t_s, ap in zip(result.score_thresholds, result.ap_at_s):
                writer.writerow([t_s, ap])
            writer.writerow(["mean", result.ap_at_s_mean])
    if args.svg:
        _plot_ap_curve(result, args.svg)
        payload["svg"] = str(args.svg)
    _print_json(payload)
    return 0


def _plot_ap_curve(result, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.plot(result.score_thresholds, result.ap_at_s, marker="o", label="AP at threshold")
    ax.axhline(result.ap_at_s_mean, linestyle="--", color="gray", label="mean")
    ax.set_xlabel("score threshold")
    ax.set_ylabel("AP")
    ax.set_ylim(0.0, 1.0)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def cmd_demo(args) -> int:
    cfg_file = _load_config(args)
    seed = _opt_seed(args, cfg_file)
    spec = SceneSpec(
        out_height=_opt(args, cfg_file, "grid_size", 8),
        out_width=_opt(args, cfg_file, "grid_size", 8),
        stride=_opt(args, cfg_file, "stride", 4),
        num_categories=_opt(args, cfg_file, "categories", 2),
        instances_per_category=_opt(args, cfg_file, "instances", 3),
        feature_dim=_opt(args, cfg_file, "feature_dim", 16),
        noise_sigma=_opt(args, cfg_file, "noise_sigma", 0.25),
        seed=seed,
    )
    cfg = TrainConfig(
        steps=_opt(args, cfg_file, "steps", 200),
        lr=_opt(args, cfg_file, "lr", 0.05),
        head_lr=_opt(args, cfg_file, "head_lr", 0.5),
        lambda_off=_opt(args, cfg_file, "lambda_off", 1.0),
        lambda_size=_opt(args, cfg_file, "lambda_size", 0.1),
        splg=SplgConfig(
            eta=_opt(args, cfg_file, "eta", 1.0),
            t_sim=_opt(args, cfg_file, "t_sim", 0.6),
        ),
        pgcl=PgclConfig(
            m=_opt(args, cfg_file, "m", 4),
            tau=_opt(args, cfg_file, "tau", 0.07),
            lambda_pgcl=_opt(args, cfg_file, "lambda_pgcl", 0.1),
        ),
        sigmoid_scale=_opt(args, cfg_file, "sigmoid_scale", 0.5),
        # store_true defaults to False, not None, so _opt cannot see the file
        line_search=args.line_search
        or bool("line_search" in cfg_file and dio.coerce_config_value(cfg_file["line_search"])),
    )
    report = train_demo(spec, cfg)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "report.json", "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
    with open(out_dir / "trajectory.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["step", "loss_total", "loss_splg", "loss_pgcl", "loss_off", "loss_size",
             "pseudo_recall", "pseudo_precision"]
        )
        for i in range(len(report.loss_total)):
            writer.writerow(
                [i, report.loss_total[i], report.loss_splg[i], report.loss_pgcl[i],
                 report.loss_off[i], report.loss_size[i], report.pseudo_recall[i],
                 report.pseudo_precision[i]]
            )
    summary = {
        "out_dir": str(out_dir),
        "seed": seed,
        "steps": cfg.steps,
        "loss_initial": report.loss_total[0],
        "loss_final": report.loss_total[-1],
        "recall_initial": report.pseudo_recall[0],
        "recall_final": report.pseudo_recall[-1],
        "ap_at_s_initial": report.ap_at_s_initial,
        "ap_at_s_final": report.ap_at_s_final,
    }
    if args.svg:
        _plot_trajectory(report, out_dir / "curves.svg")
        summary["svg"] = str(out_dir / "curves.svg")
    _print_json(summary)
    return 0


def _plot_trajectory(report, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    steps = range(len(report.loss_total))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(steps, report.loss_total, label="total")
    ax1.plot(steps, report.loss_splg, label="mining", alpha=0.7)
    ax1.plot(steps, report.loss_pgcl, label="contrastive", alpha=0.7)
    ax1.set_xlabel("step")
    ax1.set_ylabel("loss")
    ax1.legend()
    ax2.plot(steps, report.pseudo_recall, label="recall")
    ax2.plot(steps, report.pseudo_precision, label="precision", alpha=0.7)
    ax2.set_xlabel("step")
    ax2.set_ylim(-0.02, 1.02)
    ax2.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def cmd_gradcheck(args) -> int:
    report = run_gradcheck(instances=args.instances, seed=args.seed)
    for s in report.stats:
        status = "ok" if s.ok else "FAIL"
        print(
            f"{status:4s} {s.loss:5s} instances={s.instances} "
            f"max_scaled_error={s.max_scaled_error:.3e} tol={s.tolerance:.1e}"
        )
    print(f"elapsed {report.elapsed_seconds:.1f}s")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(report.to_dict(), fh, indent=2)
            fh.write("\n")
    return 0 if report.ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dminer",
        description="Pseudo-label mining, group contrastive loss, and score-aware evaluation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keep1", help="keep one annotation per category per image")
    p.add_argument("--gt", required=True, help="full annotation file")
    p.add_argument("--out", required=True, help="output annotation file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--box-format", choices=("cxcywh", "xywh"), default="cxcywh")
    _add_config_arg(p)
    p.set_defaults(func=cmd_keep1)

    p = sub.add_parser("render-heatmap", help="render the Gaussian target heatmap")
    p.add_argument("--gt", required=True)
    p.add_argument("--image-id", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--min-overlap", type=float, default=None, dest="min_overlap")
    p.add_argument("--out", required=True, help="tensor dump path")
    p.add_argument("--box-format", choices=("cxcywh", "xywh"), default="cxcywh")
    _add_config_arg(p)
    p.set_defaults(func=cmd_render_heatmap)

    p = sub.add_parser("splg", help="mine pseudo labels from a feature map")
    p.add_argument("--features", required=True, help="feature-map tensor dump")
    p.add_argument("--gt", required=True, help="sparse (kept) annotation file")
    p.add_argument("--full-gt", default=None, help="full annotations, enables recall scoring")
    p.add_argument("--image-id", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--t-sim", type=float, default=None, dest="t_sim")
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--out", required=True, help="pseudo-heatmap dump path")
    p.add_argument("--out-merged", default=None, help="optional merged-target dump path")
    p.add_argument("--box-format", choices=("cxcywh", "xywh"), default="cxcywh")
    _add_config_arg(p)
    p.set_defaults(func=cmd_splg)

    p = sub.add_parser("pgcl", help="select cells, build the mask, report loss and grads")
    p.add_argument("--features", required=True)
    p.add_argument("--pred", required=True, help="prediction heatmap dump")
    p.add_argument("--gt", required=True, help="sparse (kept) annotation file")
    p.add_argument("--image-id", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--lambda-pgcl", type=float, default=None, dest="lambda_pgcl")
    p.add_argument("--out", default=None)
    p.add_argument("--box-format", choices=("cxcywh", "xywh"), default="cxcywh")
    _add_config_arg(p)
    p.set_defaults(func=cmd_pgcl)

    p = sub.add_parser("pool", help="average-pool a pseudo heatmap per anchor size")
    p.add_argument("--in", required=True, help="pseudo-heatmap dump")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--anchor-sizes", type=int, nargs="+", default=[32, 64, 128, 256, 512])
    p.add_argument("--kernel-sizes", type=int, nargs="+", default=[1, 3, 5, 7, 9])
    p.set_defaults(func=cmd_pool)

    p = sub.add_parser("eval", help="score-aware detection evaluation")
    p.add_argument("--gt", required=True)
    p.add_argument("--dets", required=True)
    p.add_argument("--iou-thrs", type=float, nargs="+", default=None)
    p.add_argument("--max-dets", type=int, default=None, dest="max_dets")
    p.add_argument("--out", default=None, help="write the full AP table as JSON here")
    p.add_argument("--csv", default=None, help="write the per-threshold AP column as CSV here")
    p.add_argument("--svg", default=None, help="write the AP-vs-threshold curve here")
    p.add_argument("--box-format", choices=("cxcywh", "xywh"), default="cxcywh")
    _add_config_arg(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("demo", help="optimize a synthetic scene and record the trajectory")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--head-lr", type=float, default=None, dest="head_lr")
    p.add_argument("--grid-size", type=int, default=None, dest="grid_size")
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--categories", type=int, default=None)
    p.add_argument("--instances", type=int, default=None)
    p.add_argument("--feature-dim", type=int, default=None, dest="feature_dim")
    p.add_argument("--noise-sigma", type=float, default=None, dest="noise_sigma")
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--t-sim", type=float, default=None, dest="t_sim")
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--lambda-pgcl", type=float, default=None, dest="lambda_pgcl")
    p.add_argument("--lambda-off", type=float, default=None, dest="lambda_off")
    p.add_argument("--lambda-size", type=float, default=None, dest="lambda_size")
    p.add_argument("--sigmoid-scale", type=float, default=None, dest="sigmoid_scale")
    p.add_argument("--line-search", action="store_true")
    p.add_argument("--svg", action="store_true", help="also write curves.svg")
    _add_config_arg(p)
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", default=None, help="also write the report here")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DMinerError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
