"""Levenberg-Marquardt pose solver tests.

The analytic Jacobian is checked against central finite differences, and
the optimum is cross-checked against scipy's independent least-squares
implementation on the same residual.
"""

import numpy as np
import pytest

from refpose.correspond import Corr2D3D
from refpose.errors import DivergedBehindCamera, TooFewCorrespondences
from refpose.geometry import Pose, perturb, pose_error, project_many
from refpose.optimize import (
    apply_step,
    optimize_pose,
    reprojection_errors,
    residuals_and_jacobian,
)

from conftest import make_correspondences


def numeric_jacobian(corrs, pose, cam, h=1e-6):
    jac = np.zeros((2 * len(corrs), 6))
    for k in range(6):
        delta = np.zeros(6)
        delta[k] = h
        rp, _ = residuals_and_jacobian(corrs, apply_step(pose, delta), cam)
        rm, _ = residuals_and_jacobian(corrs, apply_step(pose, -delta), cam)
        jac[:, k] = (rp - rm) / (2 * h)
    return jac


def random_perturbed(pose, rng, rot_deg, trans_m):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    return perturb(pose, axis * np.radians(rot_deg), direction * trans_m)


class TestJacobian:
    @pytest.mark.parametrize("distorted", [False, True])
    def test_matches_central_differences(self, cam, cam_distorted, distorted):
        camera = cam_distorted if distorted else cam
        rng = np.random.default_rng(11)
        for _ in range(100):
            pose = random_perturbed(Pose.identity(), rng, rng.uniform(0, 60), rng.uniform(0, 3))
            z = rng.uniform(2.0, 12.0, 5)
            pts_cam = np.stack(
                [rng.uniform(-0.5, 0.5, 5) * z, rng.uniform(-0.4, 0.4, 5) * z, z],
                axis=1,
            )
            pts = pose.transform(pts_cam)
            pixels, _ = project_many(pts, pose, camera)
            corrs = Corr2D3D(pixels + rng.normal(0, 2, pixels.shape), pts)
            _, jac = residuals_and_jacobian(corrs, pose, camera)
            num = numeric_jacobian(corrs, pose, camera)
            scale = max(1.0, np.max(np.abs(jac)))
            assert np.max(np.abs(jac - num)) / scale < 1e-4


class TestOptimizePose:
    def test_zero_residual_recovery(self, exact_corrs, cam):
        corrs, truth = exact_corrs
        rng = np.random.default_rng(5)
        for _ in range(5):
            start = random_perturbed(truth, rng, 5.0, 0.5)
            solved = optimize_pose(corrs, start, cam)
            err = pose_error(truth, solved)
            assert err.position_err < 1e-6
            assert err.rotation_err < 1e-5

    def test_already_optimal_is_fixed_point(self, exact_corrs, cam):
        corrs, truth = exact_corrs
        solved = optimize_pose(corrs, truth, cam)
        err = pose_error(truth, solved)
        assert err.position_err < 1e-9 and err.rotation_err < 1e-9

    def test_too_few_correspondences(self, exact_corrs, cam):
        corrs, truth = exact_corrs
        with pytest.raises(TooFewCorrespondences):
            optimize_pose(corrs.subset(np.array([0, 1])), truth, cam)

    def test_cost_monotone_on_accepted_steps(self, cam):
        truth = perturb(Pose.identity(), (0.2, -0.1, 0.15), (0.4, 0.2, -0.3))
        corrs = make_correspondences(cam, truth, n=60, seed=8)
        rng = np.random.default_rng(9)
        noisy = Corr2D3D(corrs.pixels + rng.normal(0, 2.0, corrs.pixels.shape), corrs.points)
        start = random_perturbed(truth, rng, 8.0, 1.0)
        _, info = optimize_pose(noisy, start, cam, full_output=True)
        costs = np.array(info.cost_trace)
        assert np.all(np.diff(costs) <= 0)

    def test_all_points_behind_raises(self, cam):
        # Points strictly behind the start pose cannot be optimized.
        pts = np.array([[0.0, 0.0, -5.0], [1.0, 0.0, -6.0], [0.0, 1.0, -4.0]])
        corrs = Corr2D3D(np.array([[320.0, 240.0]] * 3), pts)
        with pytest.raises(DivergedBehindCamera):
            optimize_pose(corrs, Pose.identity(), cam)

    def test_matches_scipy_least_squares(self, cam):
        least_squares = pytest.importorskip("scipy.optimize").least_squares
        truth = perturb(Pose.identity(), (0.1, 0.2, -0.1), (0.5, -0.5, 0.3))
        corrs = make_correspondences(cam, truth, n=40, seed=12)
        rng = np.random.default_rng(13)
        noisy = Corr2D3D(corrs.pixels + rng.normal(0, 1.5, corrs.pixels.shape), corrs.points)
        start = random_perturbed(truth, rng, 4.0, 0.4)

        ours, info = optimize_pose(noisy, start, cam, full_output=True)

        def residual(delta):
            r, _ = residuals_and_jacobian(noisy, apply_step(start, delta), cam)
            return r

        ref = least_squares(residual, np.zeros(6), method="lm", xtol=1e-15, ftol=1e-15)
        ref_cost = 2.0 * ref.cost  # scipy reports 0.5 * sum of squares
        assert info.cost_trace[-1] == pytest.approx(ref_cost, rel=1e-8)
        ref_pose = apply_step(start, ref.x)
        err = pose_error(ours, ref_pose)
        assert err.position_err < 1e-6 and err.rotation_err < 1e-5

    def test_distorted_camera_recovery(self, cam_distorted):
        truth = perturb(Pose.identity(), (0.05, -0.1, 0.2), (0.2, 0.1, -0.2))
        corrs = make_correspondences(cam_distorted, truth, n=80, seed=14)
        rng = np.random.default_rng(15)
        start = random_perturbed(truth, rng, 5.0, 0.5)
        solved = optimize_pose(corrs, start, cam_distorted)
        err = pose_error(truth, solved)
        assert err.position_err < 1e-6 and err.rotation_err < 1e-5


class TestReprojectionErrors:
    def test_exact_points_have_zero_error(self, exact_corrs, cam):
        corrs, truth = exact_corrs
        errs = reprojection_errors(corrs, truth, cam)
        assert np.max(errs) < 1e-9

    def test_points_behind_get_infinite_error(self, cam):
        corrs = Corr2D3D(
            np.array([[320.0, 240.0], [320.0, 240.0]]),
            np.array([[0.0, 0.0, 5.0], [0.0, 0.0, -5.0]]),
        )
        errs = reprojection_errors(corrs, Pose.identity(), cam)
        assert np.isfinite(errs[0])
        assert np.isinf(errs[1])
