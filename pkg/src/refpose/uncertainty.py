"""Pose uncertainty quantification around a refined pose.

Three estimators, all reporting median position (m) and rotation (deg)
spreads in the tangent space at the refined pose:

* first-order: invert the Gauss-Newton information matrix and sample the
  resulting 6D Gaussian;
* Monte Carlo: re-solve the pose from noiselessly reprojected points with
  synthetic pixel noise added;
* sampling: re-solve (LO-RANSAC + refit) on random subsets of the inliers
  and measure the spread of the resulting poses.

These quantify the stability of the local minimum given the matches, not
the difference to the unknown true pose.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .correspond import Corr2D3D
from .errors import BehindCamera, RefposeError, SingularInformation, SubsetTooSmall
from .geometry import Camera, Pose, pose_error, project_many
from .optimize import RefineConfig, optimize_pose, residuals_and_jacobian
from .ransac import RansacConfig, lo_ransac
from .seeding import derive_rng, derive_seed

DEFAULT_SAMPLES_FIRST_ORDER = 1000
DEFAULT_SAMPLES_MONTE_CARLO = 200
DEFAULT_SAMPLES_SAMPLING = 50
DEFAULT_SAMPLING_RATIOS = (0.5, 0.3, 0.1)

_MAX_FAILURE_FRACTION = 0.1


@dataclass(frozen=True)
class NoiseModel:
    """Isotropic pixel observation noise, identical for every feature."""

    sigma_px: float = 1.0

    def __post_init__(self):
        if self.sigma_px <= 0:
            raise ValueError("sigma_px must be positive")


@dataclass(frozen=True)
class UncertaintyEstimate:
    position_unc: float  # meters
    rotation_unc: float  # degrees
    method: str  # "first-order" | "monte-carlo" | "sampling"
    num_samples: int
    ratio: Optional[float] = None  # sampling ratio, where applicable

    def label(self) -> str:
        if self.method == "sampling" and self.ratio is not None:
            return f"sampling({self.ratio:g})"
        return self.method


def _pose_information(inliers: Corr2D3D, pose: Pose, cam: Camera) -> np.ndarray:
    res, jac = residuals_and_jacobian(inliers, pose, cam)
    if res is None:
        raise BehindCamera("inlier point behind the camera at the refined pose")
    return jac.T @ jac


def first_order(
    inliers: Corr2D3D,
    pose: Pose,
    cam: Camera,
    noise: NoiseModel = NoiseModel(),
    num_samples: int = DEFAULT_SAMPLES_FIRST_ORDER,
    seed: int = 0,
) -> UncertaintyEstimate:
    """Sample the inverse information matrix of the least-squares problem.

    The 6x6 covariance lives in the right-tangent space at ``pose``
    (rotation axis-angle first, translation second); medians of the
    sampled subvector norms are reported.
    """
    info = _pose_information(inliers, pose, cam)
    w, v = np.linalg.eigh(info)
    if w[0] <= 0 or w[0] <= w[-1] * 1e-12:
        raise SingularInformation(
            f"information matrix rank deficient (eigenvalues {w})"
        )
    # sqrt of (J^T J)^-1, scaled by sigma afterwards so the estimate is
    # exactly linear in the noise level under a fixed seed
    factor = v @ np.diag(1.0 / np.sqrt(w))
    rng = derive_rng(seed)
    samples = rng.standard_normal((num_samples, 6)) @ factor.T * noise.sigma_px
    rot = np.linalg.norm(samples[:, :3], axis=1)
    pos = np.linalg.norm(samples[:, 3:], axis=1)
    return UncertaintyEstimate(
        position_unc=float(np.median(pos)),
        rotation_unc=float(np.degrees(np.median(rot))),
        method="first-order",
        num_samples=num_samples,
    )


def monte_carlo(
    inliers: Corr2D3D,
    pose: Pose,
    cam: Camera,
    noise: NoiseModel = NoiseModel(),
    num_samples: int = DEFAULT_SAMPLES_MONTE_CARLO,
    seed: int = 0,
    lm_cfg: RefineConfig = RefineConfig(),
) -> UncertaintyEstimate:
    """Re-solve from noiselessly reprojected observations plus pixel noise."""
    ideal, in_front = project_many(inliers.points, pose, cam)
    if not in_front.all():
        raise BehindCamera("inlier point behind the camera at the refined pose")

    pos_err, rot_err = [], []
    failures = 0
    last_exc: Optional[Exception] = None
    for s in range(num_samples):
        rng = derive_rng(seed, s)
        noisy = ideal + rng.normal(0.0, noise.sigma_px, ideal.shape)
        try:
            solved = optimize_pose(Corr2D3D(noisy, inliers.points), pose, cam, lm_cfg)
        except RefposeError as exc:
            failures += 1
            last_exc = exc
            continue
        err = pose_error(pose, solved)
        pos_err.append(err.position_err)
        rot_err.append(err.rotation_err)
    if failures > _MAX_FAILURE_FRACTION * num_samples:
        raise RefposeError(
            f"{failures}/{num_samples} re-solves failed"
        ) from last_exc
    return UncertaintyEstimate(
        position_unc=float(np.median(pos_err)),
        rotation_unc=float(np.median(rot_err)),
        method="monte-carlo",
        num_samples=num_samples,
    )


def sampling_uncertainty(
    inliers: Corr2D3D,
    pose: Pose,
    cam: Camera,
    ratio: float,
    num_samples: int = DEFAULT_SAMPLES_SAMPLING,
    seed: int = 0,
    ransac_cfg: RansacConfig = RansacConfig(),
    lm_cfg: RefineConfig = RefineConfig(),
) -> UncertaintyEstimate:
    """Spread of poses re-estimated from random inlier subsets."""
    if not 0.0 < ratio <= 1.0:
        raise ValueError("ratio must lie in (0, 1]")
    n = len(inliers)
    m = math.ceil(ratio * n)
    if m < 3:
        raise SubsetTooSmall(f"ratio {ratio} of {n} inliers keeps {m} < 3 points")

    pos_err, rot_err = [], []
    failures = 0
    last_exc: Optional[Exception] = None
    for s in range(num_samples):
        rng = derive_rng(seed, s)
        subset = inliers.subset(rng.choice(n, size=m, replace=False))
        sub_cfg = RansacConfig(
            inlier_threshold_px=ransac_cfg.inlier_threshold_px,
            max_iterations=ransac_cfg.max_iterations,
            confidence=ransac_cfg.confidence,
            lo_refit_rounds=ransac_cfg.lo_refit_rounds,
            rng_seed=derive_seed(seed, s, 1),
        )
        try:
            consensus = lo_ransac(subset, cam, sub_cfg)
            solved = optimize_pose(
                consensus.inliers(subset), consensus.pose, cam, lm_cfg
            )
        except RefposeError as exc:
            failures += 1
            last_exc = exc
            continue
        err = pose_error(pose, solved)
        pos_err.append(err.position_err)
        rot_err.append(err.rotation_err)
    if failures > _MAX_FAILURE_FRACTION * num_samples:
        raise RefposeError(
            f"{failures}/{num_samples} subset re-solves failed"
        ) from last_exc
    return UncertaintyEstimate(
        position_unc=float(np.median(pos_err)),
        rotation_unc=float(np.median(rot_err)),
        method="sampling",
        num_samples=num_samples,
        ratio=ratio,
    )
