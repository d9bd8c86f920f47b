"""refpose: camera pose refinement against a 3D mesh via render-and-match.

Given an initial pose estimate, a triangle mesh of the scene, and 2D-2D
feature matches between the real image and a rendering from the current
estimate, the toolkit lifts matches to 2D-3D correspondences through the
rendered depth, rejects outliers with LO-RANSAC (P3P minimal solver), and
refits the pose by nonlinear least squares, iterating the whole loop.
It also quantifies pose uncertainty (first-order, Monte Carlo, inlier
subsampling) and scores localization accuracy (fixed thresholds,
per-image thresholds, maximum reprojection difference).
"""

from .correspond import Corr2D3D, MatchSet, lift, lift_all, load_matches, write_matches
from .errors import (
    BehindCamera,
    DegenerateConfiguration,
    DivergedBehindCamera,
    EmptyInput,
    EmptyMatches,
    LengthMismatch,
    NoModelFound,
    ParseError,
    RefposeError,
    SingularInformation,
    SubsetTooSmall,
    TooFewCorrespondences,
)
from .geometry import (
    Camera,
    Pose,
    PoseError,
    perturb,
    pose_error,
    project,
    project_many,
    unproject,
)
from .metrics import (
    DEFAULT_POSE_THRESHOLDS,
    DEFAULT_REPROJECTION_THRESHOLDS_PX,
    EvalReport,
    ThresholdSet,
    fixed_threshold_accuracy,
    max_reprojection_diff,
    per_image_threshold_accuracy,
    reprojection_accuracy,
)
from .optimize import RefineConfig, optimize_pose, reprojection_errors
from .ransac import (
    DEFAULT_CELL_PX,
    RansacConfig,
    RansacResult,
    effective_inliers,
    lo_ransac,
    p3p,
)
from .refine import FileMatchProvider, IterationRecord, RefineResult, refine
from .render import DepthMap, TriMesh, depth_at, render_depth, render_flat_color
from .synth import (
    SceneSpec,
    SimMatcherSpec,
    SimulatedMatcher,
    benchmark_scene,
    make_scene,
    sensitivity_grid,
    simulate_matches,
)
from .uncertainty import (
    DEFAULT_SAMPLING_RATIOS,
    NoiseModel,
    UncertaintyEstimate,
    first_order,
    monte_carlo,
    sampling_uncertainty,
)

__version__ = "0.1.0"
