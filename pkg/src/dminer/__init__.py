"""Single-annotation detection training tools.

Pseudo-label mining from labeled-center feature similarity, a group
contrastive loss over high-scoring cells, Gaussian target rendering,
anchor- and FPN-style adapters, a score-aware AP evaluator, and a
self-contained synthetic-scene optimization demo.
"""

from .adapters import (
    DEFAULT_ANCHOR_SIZES,
    DEFAULT_KERNEL_SIZES,
    AnchorSpec,
    FpnLevelConfig,
    anchor_pseudo_pool,
    average_pool2d,
    default_fpn_config,
)
from .core import (
    ALLOWED_STRIDES,
    Annotation,
    BBox,
    Grid,
    finite_diff_grad,
    iou,
    l2_normalize,
    l2_normalize_rows,
)
from .dataset import (
    Dataset,
    ImageRecord,
    ReductionReport,
    keep1_transform,
    load_dataset,
    parse_dataset,
    reduction_report,
    save_dataset,
)
from .errors import (
    CategoryOutOfRangeError,
    CenterOutOfGridError,
    DatasetMismatchError,
    DivergedError,
    DMinerError,
    DumpFormatError,
    EmptyReferenceError,
    InvalidLevelConfigError,
    InvalidSizeError,
    InvalidTemperatureError,
    MalformedAnnotationsError,
    NonFiniteLossError,
    NoGroundTruthError,
    NotEnoughCellsError,
    SceneTooCrowdedError,
    ZeroVectorError,
)
from .evaluation import (
    Detection,
    EvalConfig,
    EvalResult,
    average_precision,
    evaluate,
    match_image,
)
from .gradcheck import GradCheckReport, GradCheckStats, run_gradcheck
from .harness import (
    LossState,
    PseudoLabelMetrics,
    SceneSpec,
    TotalLossResult,
    TrainConfig,
    TrajectoryReport,
    gen_scene,
    pseudo_label_metrics,
    regression_losses,
    total_loss,
    train_demo,
)
from .heatmap import (
    downsample_center,
    gaussian_radius,
    gaussian_sigma,
    labeled_centers,
    render_target,
)
from .io import (
    load_detections,
    load_tensor,
    parse_config_file,
    save_detections,
    save_tensor,
)
from .pgcl import (
    PgclConfig,
    PgclGrads,
    PositiveSet,
    QuerySet,
    build_mask,
    build_positives,
    build_queries,
    pgcl_loss,
    select_topm,
)
from .splg import (
    ReferenceBank,
    SplgConfig,
    UnlabeledSet,
    build_pseudo_heatmap,
    collect_unlabeled,
    extract_reference_features,
    merge_targets,
    similarity,
    splg_loss,
    splg_pipeline,
)

__version__ = "0.1.0"

__all__ = [
    "ALLOWED_STRIDES",
    "DEFAULT_ANCHOR_SIZES",
    "DEFAULT_KERNEL_SIZES",
    "AnchorSpec",
    "Annotation",
    "BBox",
    "CategoryOutOfRangeError",
    "CenterOutOfGridError",
    "Dataset",
    "DatasetMismatchError",
    "Detection",
    "DivergedError",
    "DMinerError",
    "DumpFormatError",
    "EmptyReferenceError",
    "EvalConfig",
    "EvalResult",
    "FpnLevelConfig",
    "GradCheckReport",
    "GradCheckStats",
    "Grid",
    "ImageRecord",
    "InvalidLevelConfigError",
    "InvalidSizeError",
    "InvalidTemperatureError",
    "LossState",
    "MalformedAnnotationsError",
    "NoGroundTruthError",
    "NonFiniteLossError",
    "NotEnoughCellsError",
    "PgclConfig",
    "PgclGrads",
    "PositiveSet",
    "PseudoLabelMetrics",
    "QuerySet",
    "ReductionReport",
    "ReferenceBank",
    "SceneSpec",
    "SceneTooCrowdedError",
    "SplgConfig",
    "TotalLossResult",
    "TrainConfig",
    "TrajectoryReport",
    "UnlabeledSet",
    "ZeroVectorError",
    "anchor_pseudo_pool",
    "average_pool2d",
    "average_precision",
    "build_mask",
    "build_positives",
    "build_pseudo_heatmap",
    "build_queries",
    "collect_unlabeled",
    "default_fpn_config",
    "downsample_center",
    "evaluate",
    "extract_reference_features",
    "finite_diff_grad",
    "gaussian_radius",
    "gaussian_sigma",
    "gen_scene",
    "iou",
    "keep1_transform",
    "l2_normalize",
    "l2_normalize_rows",
    "labeled_centers",
    "load_dataset",
    "load_detections",
    "load_tensor",
    "match_image",
    "merge_targets",
    "parse_config_file",
    "parse_dataset",
    "pgcl_loss",
    "pseudo_label_metrics",
    "reduction_report",
    "regression_losses",
    "render_target",
    "run_gradcheck",
    "save_dataset",
    "save_detections",
    "save_tensor",
    "select_topm",
    "similarity",
    "splg_loss",
    "splg_pipeline",
    "total_loss",
    "train_demo",
]
