"""Monocular relative pose estimation of a truss object, end to end.

Synthetic dataset generation with reprojection validation, toy-scale CNN
pose regressors (plain, branched, and parallel topologies) on a minimal
numpy autodiff core, the combined translation/rotation loss, and the
matching evaluation metrics. The sklearn-style entry point is
PoseRegressor; the CLI (``trusspose``) drives the full pipeline.
"""

from .geometry import (
    DegenerateQuaternion,
    Pose,
    Quaternion,
    Translation,
    combined_loss,
    normalize,
    quat_multiply,
    rotation_angle,
    rotation_loss,
    translation_loss,
)
from .camera import (
    BehindCamera,
    CameraIntrinsics,
    PixelPoint,
    ValidationReport,
    default_intrinsics,
    project,
    reproject_vertices,
    validate_label,
)
from .models import PoseModel, PoseOutput, TopologyConfig, build_model
from .regressor import PoseRegressor, load_design_matrix
from .scenegen import (
    DatasetConfig,
    DatasetManifest,
    MeshModel,
    Sample,
    build_truss,
    generate_dataset,
    render,
)
from .training import TrainConfig, TrainLog, loss_batch, train
from .evaluation import (
    MetricsReport,
    activation_heatmap,
    distance_profile,
    evaluate,
    rank_by_error,
)

__version__ = "0.1.0"

__all__ = [
    "BehindCamera",
    "CameraIntrinsics",
    "DatasetConfig",
    "DatasetManifest",
    "DegenerateQuaternion",
    "MeshModel",
    "MetricsReport",
    "PixelPoint",
    "Pose",
    "PoseModel",
    "PoseOutput",
    "PoseRegressor",
    "Quaternion",
    "Sample",
    "TopologyConfig",
    "TrainConfig",
    "TrainLog",
    "Translation",
    "ValidationReport",
    "activation_heatmap",
    "build_model",
    "build_truss",
    "combined_loss",
    "default_intrinsics",
    "distance_profile",
    "evaluate",
    "generate_dataset",
    "load_design_matrix",
    "loss_batch",
    "normalize",
    "project",
    "quat_multiply",
    "rank_by_error",
    "render",
    "reproject_vertices",
    "rotation_angle",
    "rotation_loss",
    "train",
    "translation_loss",
    "validate_label",
]
