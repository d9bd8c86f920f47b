"""P3P and LO-RANSAC tests, all against synthesize-and-recover oracles."""

import numpy as np
import pytest

from refpose.correspond import Corr2D3D
from refpose.errors import (
    DegenerateConfiguration,
    NoModelFound,
    TooFewCorrespondences,
)
from refpose.geometry import Pose, perturb, pose_error, project_many
from refpose.optimize import reprojection_errors
from refpose.ransac import RansacConfig, effective_inliers, lo_ransac, p3p

from conftest import make_correspondences


def make_noisy(cam, truth, n=100, sigma=1.0, outlier_ratio=0.3, seed=0):
    corrs = make_correspondences(cam, truth, n=n, seed=seed)
    rng = np.random.default_rng(seed + 1000)
    pixels = corrs.pixels + rng.normal(0, sigma, corrs.pixels.shape)
    outliers = rng.random(n) < outlier_ratio
    pixels[outliers] = rng.uniform(
        [0, 0], [cam.width, cam.height], (int(outliers.sum()), 2)
    )
    return Corr2D3D(pixels, corrs.points), outliers


class TestP3P:
    def test_synthesize_and_recover(self, cam):
        rng = np.random.default_rng(21)
        for trial in range(50):
            truth = perturb(Pose.identity(), rng.normal(size=3) * 0.4,
                            rng.normal(size=3) * 1.5)
            corrs = make_correspondences(cam, truth, n=3, seed=trial + 300)
            solutions = p3p(corrs, cam)
            assert 1 <= len(solutions) <= 4
            best = min(
                (pose_error(truth, s) for s in solutions),
                key=lambda e: e.position_err,
            )
            assert best.position_err < 1e-6
            assert best.rotation_err < 1e-6

    def test_every_solution_reprojects_exactly(self, cam):
        rng = np.random.default_rng(22)
        for trial in range(20):
            truth = perturb(Pose.identity(), rng.normal(size=3) * 0.3,
                            rng.normal(size=3))
            corrs = make_correspondences(cam, truth, n=3, seed=trial + 600)
            for pose in p3p(corrs, cam):
                errs = reprojection_errors(corrs, pose, cam)
                assert np.max(errs) <= 1e-6

    def test_collinear_points_degenerate(self, cam):
        pts = np.array([[0.0, 0, 5], [0.5, 0, 5], [1.0, 0, 5]])
        px, _ = project_many(pts, Pose.identity(), cam)
        with pytest.raises(DegenerateConfiguration):
            p3p(Corr2D3D(px, pts), cam)

    def test_duplicated_point_degenerate(self, cam):
        pts = np.array([[0.0, 0, 5], [0.0, 0, 5], [1.0, 1, 5]])
        px, _ = project_many(pts, Pose.identity(), cam)
        with pytest.raises(DegenerateConfiguration):
            p3p(Corr2D3D(px, pts), cam)

    def test_wrong_count_rejected(self, cam, exact_corrs):
        corrs, _ = exact_corrs
        with pytest.raises(TooFewCorrespondences):
            p3p(corrs.subset(np.array([0, 1])), cam)
        with pytest.raises(ValueError):
            p3p(corrs.subset(np.arange(4)), cam)

    def test_distorted_camera(self, cam_distorted):
        rng = np.random.default_rng(23)
        truth = perturb(Pose.identity(), rng.normal(size=3) * 0.2, rng.normal(size=3))
        corrs = make_correspondences(cam_distorted, truth, n=3, seed=77)
        solutions = p3p(corrs, cam_distorted)
        best = min((pose_error(truth, s) for s in solutions),
                   key=lambda e: e.position_err)
        assert best.position_err < 1e-6 and best.rotation_err < 1e-6


class TestEffectiveInliers:
    def test_clustered_points_count_once(self):
        # All five inside one 50x50 cell
        px = np.array([[10, 10], [20, 20], [30, 30], [40, 40], [49, 49]])
        assert effective_inliers(px, 640, 480) == 1

    def test_three_distinct_cells(self):
        px = np.array([[10, 10], [110, 10], [10, 110]])
        assert effective_inliers(px, 640, 480) == 3

    def test_empty(self):
        assert effective_inliers(np.empty((0, 2)), 640, 480) == 0

    def test_bounded_by_cell_count(self):
        rng = np.random.default_rng(1)
        px = rng.uniform([0, 0], [640, 480], (500, 2))
        n_cells = int(np.ceil(640 / 50) * np.ceil(480 / 50))
        eff = effective_inliers(px, 640, 480)
        assert eff <= min(500, n_cells)

    def test_custom_cell_size(self):
        px = np.array([[10, 10], [30, 10]])
        assert effective_inliers(px, 640, 480, cell_px=20) == 2
        assert effective_inliers(px, 640, 480, cell_px=50) == 1

    def test_rejects_bad_cell(self):
        with pytest.raises(ValueError):
            effective_inliers(np.zeros((1, 2)), 640, 480, cell_px=0)


class TestLoRansac:
    def test_outlier_free_recovers_exactly(self, exact_corrs, cam):
        corrs, truth = exact_corrs
        result = lo_ransac(corrs, cam, RansacConfig(rng_seed=1))
        assert result.inlier_count == len(corrs)
        err = pose_error(truth, result.pose)
        assert err.position_err < 1e-6 and err.rotation_err < 1e-6

    def test_robust_to_outliers(self, cam):
        truth = perturb(Pose.identity(), (0.1, -0.2, 0.3), (0.5, -0.3, 0.2))
        ok = 0
        for seed in range(8):
            corrs, _ = make_noisy(cam, truth, sigma=1.0, outlier_ratio=0.3, seed=seed)
            result = lo_ransac(corrs, cam, RansacConfig(rng_seed=seed))
            err = pose_error(truth, result.pose)
            if err.position_err < 0.05 and err.rotation_err < 0.1 and result.inlier_count >= 60:
                ok += 1
        assert ok >= 7

    def test_too_few_correspondences(self, cam):
        with pytest.raises(TooFewCorrespondences):
            lo_ransac(Corr2D3D(np.zeros((2, 2)), np.zeros((2, 3))), cam)

    def test_no_model_on_degenerate_input(self, cam):
        # All 3D points identical: every sample is degenerate.
        corrs = Corr2D3D(
            np.array([[10.0, 10.0], [20.0, 20.0], [30.0, 30.0], [40.0, 40.0]]),
            np.tile(np.array([[0.0, 0.0, 5.0]]), (4, 1)),
        )
        with pytest.raises(NoModelFound):
            lo_ransac(corrs, cam, RansacConfig(max_iterations=50, rng_seed=0))

    def test_inliers_satisfy_threshold(self, cam):
        truth = perturb(Pose.identity(), (0.1, 0.0, -0.2), (0.3, 0.1, 0.0))
        corrs, _ = make_noisy(cam, truth, sigma=1.5, outlier_ratio=0.2, seed=5)
        cfg = RansacConfig(rng_seed=3)
        result = lo_ransac(corrs, cam, cfg)
        errs = reprojection_errors(corrs.subset(result.inlier_mask), result.pose, cam)
        assert np.all(errs < cfg.inlier_threshold_px)
        assert result.effective_inlier_count <= result.inlier_count

    def test_deterministic_given_seed(self, cam):
        truth = perturb(Pose.identity(), (0.0, 0.1, 0.2), (0.2, -0.1, 0.4))
        corrs, _ = make_noisy(cam, truth, seed=9)
        a = lo_ransac(corrs, cam, RansacConfig(rng_seed=42))
        b = lo_ransac(corrs, cam, RansacConfig(rng_seed=42))
        assert np.array_equal(a.pose.rotation, b.pose.rotation)
        assert np.array_equal(a.pose.center, b.pose.center)
        assert np.array_equal(a.inlier_mask, b.inlier_mask)

    def test_permutation_invariance(self, cam):
        truth = perturb(Pose.identity(), (0.1, 0.1, -0.1), (0.3, 0.0, 0.2))
        corrs, _ = make_noisy(cam, truth, seed=17)
        rng = np.random.default_rng(99)
        order = rng.permutation(len(corrs))
        shuffled = corrs.subset(order)
        a = lo_ransac(corrs, cam, RansacConfig(rng_seed=7))
        b = lo_ransac(shuffled, cam, RansacConfig(rng_seed=7))
        assert np.array_equal(a.pose.rotation, b.pose.rotation)
        assert np.array_equal(a.pose.center, b.pose.center)
        assert np.array_equal(a.inlier_mask[order], b.inlier_mask)

    def test_validation(self):
        with pytest.raises(ValueError):
            RansacConfig(inlier_threshold_px=0.0)
        with pytest.raises(ValueError):
            RansacConfig(confidence=1.0)
