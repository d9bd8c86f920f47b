"""Nonlinear least-squares pose refinement over 2D-3D correspondences.

Minimizes the total squared reprojection error with Levenberg-Marquardt on
the 6-dim tangent space at the current estimate (right-multiplicative
increments, rotation first). Robustness against outliers is not handled
here; callers pass RANSAC inliers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .correspond import Corr2D3D
from .errors import DivergedBehindCamera, TooFewCorrespondences
from .geometry import EPS_Z, Camera, Pose, perturb, project_many, skew

_LAMBDA_MAX = 1e15
_LAMBDA_UP = 10.0
_LAMBDA_DOWN = 0.3


@dataclass(frozen=True)
class RefineConfig:
    """Knobs for the refinement loop and its inner LM solver."""

    iterations: int = 5
    min_effective_inliers: int = 10  # acceptance requires strictly more
    lm_max_steps: int = 100
    lm_tol_grad: float = 1e-10
    lm_tol_step: float = 1e-12
    lm_lambda_init: float = 1e-4
    early_exit_step_m: Optional[float] = None  # off by default

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


@dataclass
class OptimizeInfo:
    """Diagnostics from one LM run."""

    cost_trace: list  # total squared pixel error after each accepted step
    num_steps: int
    reason: str


def reprojection_errors(corrs: Corr2D3D, pose: Pose, cam: Camera) -> np.ndarray:
    """Per-correspondence pixel error; +inf where the point is behind."""
    pixels, in_front = project_many(corrs.points, pose, cam)
    err = np.full(len(corrs), np.inf)
    err[in_front] = np.linalg.norm(pixels[in_front] - corrs.pixels[in_front], axis=1)
    return err


def _distortion_jacobian(xy: np.ndarray, cam: Camera) -> np.ndarray:
    """(N,2,2) Jacobian of distorted w.r.t. undistorted normalized coords."""
    x, y = xy[:, 0], xy[:, 1]
    k1, k2, p1, p2 = cam.distortion
    r2 = x * x + y * y
    radial = 1.0 + k1 * r2 + k2 * r2 * r2
    dr_dx = 2.0 * x * (k1 + 2.0 * k2 * r2)
    dr_dy = 2.0 * y * (k1 + 2.0 * k2 * r2)
    jac = np.empty((len(xy), 2, 2))
    jac[:, 0, 0] = radial + x * dr_dx + 2.0 * p1 * y + 6.0 * p2 * x
    jac[:, 0, 1] = x * dr_dy + 2.0 * p1 * x + 2.0 * p2 * y
    jac[:, 1, 0] = y * dr_dx + 2.0 * p1 * x + 2.0 * p2 * y
    jac[:, 1, 1] = radial + y * dr_dy + 6.0 * p1 * y + 2.0 * p2 * x
    return jac


def residuals_and_jacobian(corrs: Corr2D3D, pose: Pose, cam: Camera):
    """Stacked residuals (2N,) and analytic Jacobian (2N,6) at ``pose``.

    The Jacobian is taken w.r.t. a right-multiplicative increment
    ``(omega, t)`` evaluated at zero. Returns None for both when any
    point falls behind the camera.
    """
    p_cam = pose.transform_inverse(corrs.points)
    z = p_cam[:, 2]
    if np.any(z <= EPS_Z):
        return None, None
    n = len(corrs)

    xy = p_cam[:, :2] / z[:, None]
    uv = cam.pixel_from_normalized(cam.distort(xy))
    res = (uv - corrs.pixels).reshape(-1)

    # d(normalized)/d(p_cam)
    d_xy = np.zeros((n, 2, 3))
    d_xy[:, 0, 0] = 1.0 / z
    d_xy[:, 1, 1] = 1.0 / z
    d_xy[:, 0, 2] = -p_cam[:, 0] / (z * z)
    d_xy[:, 1, 2] = -p_cam[:, 1] / (z * z)

    if cam.has_distortion:
        d_xy = _distortion_jacobian(xy, cam) @ d_xy
    d_xy[:, 0, :] *= cam.fx
    d_xy[:, 1, :] *= cam.fy

    # d(p_cam)/d(omega, t): rotation part skew(p_cam), translation part -I
    d_pose = np.zeros((n, 3, 6))
    for i in range(n):
        d_pose[i, :, :3] = skew(p_cam[i])
    d_pose[:, :, 3:] = -np.eye(3)

    jac = (d_xy @ d_pose).reshape(-1, 6)
    return res, jac


def _cost_at(corrs: Corr2D3D, pose: Pose, cam: Camera) -> Optional[float]:
    """Total squared pixel error, or None if any point is behind."""
    p_cam = pose.transform_inverse(corrs.points)
    if np.any(p_cam[:, 2] <= EPS_Z):
        return None
    xy = p_cam[:, :2] / p_cam[:, 2][:, None]
    uv = cam.pixel_from_normalized(cam.distort(xy))
    diff = uv - corrs.pixels
    return float(np.sum(diff * diff))


def apply_step(pose: Pose, delta: np.ndarray) -> Pose:
    """Right-multiplicative 6-vector update (omega, t)."""
    return perturb(pose, delta[:3], delta[3:])


def optimize_pose(
    inliers: Corr2D3D,
    initial: Pose,
    cam: Camera,
    cfg: RefineConfig = RefineConfig(),
    full_output: bool = False,
):
    """Local minimizer of the total squared reprojection error.

    Correspondences behind the camera at ``initial`` are excluded from the
    problem; at least 3 must remain. Steps that would push any remaining
    point behind the camera are rejected and damping is raised.
    """
    if len(inliers) < 3:
        raise TooFewCorrespondences(f"{len(inliers)} < 3 correspondences")

    in_front = initial.transform_inverse(inliers.points)[:, 2] > EPS_Z
    if int(in_front.sum()) < 3:
        raise DivergedBehindCamera(
            "fewer than 3 points in front of the camera at the initial pose"
        )
    active = inliers if in_front.all() else inliers.subset(in_front)

    pose = initial
    res, jac = residuals_and_jacobian(active, pose, cam)
    cost = float(res @ res)
    lam = cfg.lm_lambda_init
    trace = [cost]
    reason = "max_steps"
    steps = 0

    for _ in range(cfg.lm_max_steps):
        grad = jac.T @ res
        if np.max(np.abs(grad)) < cfg.lm_tol_grad:
            reason = "gradient"
            break
        hess = jac.T @ jac
        accepted = False
        behind_reject = False
        while lam <= _LAMBDA_MAX:
            try:
                delta = np.linalg.solve(hess + lam * np.eye(6), -grad)
            except np.linalg.LinAlgError:
                lam *= _LAMBDA_UP
                continue
            if np.linalg.norm(delta) < cfg.lm_tol_step:
                reason = "step_size"
                break
            candidate = apply_step(pose, delta)
            new_cost = _cost_at(active, candidate, cam)
            if new_cost is not None and new_cost < cost:
                pose = candidate
                cost = new_cost
                trace.append(cost)
                lam = max(lam * _LAMBDA_DOWN, 1e-15)
                accepted = True
                break
            behind_reject = new_cost is None
            lam *= _LAMBDA_UP
        if not accepted:
            if lam > _LAMBDA_MAX:
                if behind_reject:
                    raise DivergedBehindCamera(
                        "damping exhausted with points behind the camera"
                    )
                reason = "damping_exhausted"
            break
        steps += 1
        res, jac = residuals_and_jacobian(active, pose, cam)

    info = OptimizeInfo(cost_trace=trace, num_steps=steps, reason=reason)
    if full_output:
        return pose, info
    return pose
