"""crowdbox: box-regression losses with repulsion, NMS, and crowd-occlusion evaluation."""

__version__ = "0.1.0"
SCHEMA_VERSION = 1

from .geometry import Box, BoxGradient, area, intersection_area, iog, iog_gradient, iou, iou_gradient
from .losses import (
    LossBreakdown,
    LossConfig,
    LossGradients,
    attraction_loss,
    repbox_loss,
    repgt_loss,
    smooth_l1,
    smooth_ln,
    total_loss,
    total_loss_gradient,
)
from .assignment import AssignmentSet, assign, designate_targets, partition_by_target, repulsion_targets, select_positives
from .nms import Detection, greedy_nms
from .evaluation import (
    Annotation,
    EvalReport,
    FpTaxonomy,
    SubsetSpec,
    SUBSETS,
    classify_false_positives,
    evaluate,
    fppi_missrate_curve,
    log_average_miss_rate,
    match_detections,
    missed_by_score,
    occlusion_ratio,
    occlusion_subset,
)
from .simulator import (
    OptimizerConfig,
    SceneConfig,
    Trajectory,
    generate_proposals,
    generate_scene,
    nms_sensitivity_sweep,
    optimize,
)
from .gradcheck import GradCheckReport, finite_difference_gradients, run_grad_check

__all__ = [
    "__version__",
    "SCHEMA_VERSION",
    "Box",
    "BoxGradient",
    "area",
    "intersection_area",
    "iou",
    "iog",
    "iou_gradient",
    "iog_gradient",
    "LossConfig",
    "LossBreakdown",
    "LossGradients",
    "smooth_l1",
    "smooth_ln",
    "attraction_loss",
    "repgt_loss",
    "repbox_loss",
    "total_loss",
    "total_loss_gradient",
    "AssignmentSet",
    "select_positives",
    "designate_targets",
    "repulsion_targets",
    "partition_by_target",
    "assign",
    "Detection",
    "greedy_nms",
    "Annotation",
    "SubsetSpec",
    "SUBSETS",
    "EvalReport",
    "FpTaxonomy",
    "occlusion_ratio",
    "occlusion_subset",
    "match_detections",
    "fppi_missrate_curve",
    "log_average_miss_rate",
    "classify_false_positives",
    "missed_by_score",
    "evaluate",
    "SceneConfig",
    "OptimizerConfig",
    "Trajectory",
    "generate_scene",
    "generate_proposals",
    "optimize",
    "nms_sensitivity_sweep",
    "GradCheckReport",
    "finite_difference_gradients",
    "run_grad_check",
]
