"""rigidreg: global rigid registration of 3D point clouds.

A weighted closed-form alignment with an exact derivative through the
solver, robust gradient refinement over a continuous 6D rotation
parameterization, and a RANSAC safeguard for low-confidence inputs, plus a
synthetic evaluation harness and simple file formats.
"""

from .correspondence import (
    CorrespondenceSet,
    FeatureConfig,
    FileWeighter,
    HeuristicWeighter,
    InlierLabels,
    OracleWeighter,
    UniformWeighter,
    WeightProvider,
    WeightVector,
    bce_score,
    compute_features,
    feature_dimension,
    label_inliers,
    match_nearest,
    weigh,
)
from .errors import (
    AllWeightsFiltered,
    DegenerateConfiguration,
    DegenerateRepresentation,
    DimensionMismatch,
    EmptyCloud,
    EmptyCorrespondences,
    FileFormatError,
    LengthMismatch,
    MissingFeatures,
    NoActiveCorrespondences,
    NoConsensus,
    NotARotation,
    NumericallyUnstableGradient,
    RegistrationError,
    RegistrationFailed,
    TooFewCorrespondences,
    UnsupportedFormat,
    WeightLengthMismatch,
)
from .evaluation import (
    BenchmarkReport,
    FilePairSpec,
    PairMetrics,
    PairRecord,
    Preset,
    PRESETS,
    SyntheticPair,
    SyntheticPairSpec,
    generate_pair,
    indoor_preset,
    outdoor_preset,
    pair_metrics,
    rotation_error,
    run_benchmark,
    translation_error,
    translation_error_squared,
    worker_count,
)
from .geometry import (
    PointCloud,
    RigidTransform,
    SpatialIndex,
    apply_transform,
    build_index,
    compose,
    orthonormalize,
    voxel_downsample,
)
from .io import (
    parse_config_file,
    parse_suite_file,
    pose_json,
    read_ply,
    read_pose_json,
    read_weight_file,
    report_to_dict,
    write_curves_csv,
    write_ply,
    write_pose_json,
    write_report_json,
    write_weight_file,
)
from .pipeline import (
    PipelineConfig,
    register,
    register_with_correspondences,
    resolve_weighter,
)
from .procrustes import (
    NormalizedWeights,
    ProcrustesSolution,
    grad_weights,
    normalize_weights,
    solve,
)
from .ransac import RansacConfig, inlier_fraction, ransac_register
from .refine import (
    RefineConfig,
    RefineTrace,
    Rot6D,
    energy,
    energy_gradient,
    matrix_to_rot6d,
    refine,
    rot6d_to_matrix,
)
from .results import MAIN_BRANCH, SAFEGUARD_BRANCH, RegistrationResult

__version__ = "0.1.0"

__all__ = [
    "AllWeightsFiltered",
    "BenchmarkReport",
    "CorrespondenceSet",
    "DegenerateConfiguration",
    "DegenerateRepresentation",
    "DimensionMismatch",
    "EmptyCloud",
    "EmptyCorrespondences",
    "FeatureConfig",
    "FileFormatError",
    "FilePairSpec",
    "FileWeighter",
    "HeuristicWeighter",
    "InlierLabels",
    "LengthMismatch",
    "MAIN_BRANCH",
    "MissingFeatures",
    "NoActiveCorrespondences",
    "NoConsensus",
    "NormalizedWeights",
    "NotARotation",
    "NumericallyUnstableGradient",
    "OracleWeighter",
    "PRESETS",
    "PairMetrics",
    "PairRecord",
    "PipelineConfig",
    "PointCloud",
    "Preset",
    "ProcrustesSolution",
    "RansacConfig",
    "RefineConfig",
    "RefineTrace",
    "RegistrationError",
    "RegistrationFailed",
    "RegistrationResult",
    "RigidTransform",
    "Rot6D",
    "SAFEGUARD_BRANCH",
    "SpatialIndex",
    "SyntheticPair",
    "SyntheticPairSpec",
    "TooFewCorrespondences",
    "UniformWeighter",
    "UnsupportedFormat",
    "WeightLengthMismatch",
    "WeightProvider",
    "WeightVector",
    "apply_transform",
    "bce_score",
    "build_index",
    "compose",
    "compute_features",
    "energy",
    "energy_gradient",
    "feature_dimension",
    "generate_pair",
    "grad_weights",
    "indoor_preset",
    "inlier_fraction",
    "label_inliers",
    "match_nearest",
    "matrix_to_rot6d",
    "normalize_weights",
    "orthonormalize",
    "outdoor_preset",
    "pair_metrics",
    "parse_config_file",
    "parse_suite_file",
    "pose_json",
    "read_ply",
    "read_pose_json",
    "read_weight_file",
    "refine",
    "register",
    "register_with_correspondences",
    "report_to_dict",
    "resolve_weighter",
    "rot6d_to_matrix",
    "rotation_error",
    "run_benchmark",
    "solve",
    "translation_error",
    "translation_error_squared",
    "voxel_downsample",
    "weigh",
    "worker_count",
    "write_curves_csv",
    "write_ply",
    "write_pose_json",
    "write_report_json",
    "write_weight_file",
]
