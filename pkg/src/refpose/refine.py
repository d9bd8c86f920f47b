"""Iterative render-match-lift-estimate pose refinement.

Each round renders the mesh from the current estimate, obtains 2D-2D
matches against that rendering from a match provider, lifts them to 2D-3D
through the rendered depth, rejects outliers with LO-RANSAC and refits the
pose by nonlinear least squares. Matching against a fresh rendering every
round is what lets the estimate keep improving.
"""

from __future__ import annotations

import glob
import os
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .correspond import Corr2D3D, MatchSet, lift_all, load_matches
from .errors import RefposeError
from .geometry import Camera, Pose, pose_error
from .optimize import RefineConfig, optimize_pose, reprojection_errors
from .ransac import DEFAULT_CELL_PX, RansacConfig, lo_ransac
from .render import DepthMap, TriMesh, render_depth
from .seeding import derive_seed

# Called once per round with (iteration, render pose, rendered depth);
# returns the match sets between the real image and that rendering.
MatchProvider = Callable[[int, Pose, DepthMap], Sequence[MatchSet]]


@dataclass(frozen=True)
class IterationRecord:
    """Diagnostics of one successful refinement round."""

    iteration: int
    pose: Pose
    num_matches: int
    num_lifted: int
    inlier_count: int
    effective_inlier_count: int
    mean_reproj_px: float
    max_reproj_px: float


@dataclass
class RefineResult:
    pose: Pose
    accepted: bool
    trace: list[IterationRecord] = field(default_factory=list)
    inliers: Corr2D3D = field(default_factory=lambda: Corr2D3D([], []))
    failure: Optional[str] = None

    @property
    def iterations_run(self) -> int:
        return len(self.trace)


class FileMatchProvider:
    """Reads per-iteration match files written by an external matcher.

    Layout: ``<root>/<image_id>/iter<k>*.txt``; several files per
    iteration (one per rendering source) are lifted together. Returns an
    empty list when the iteration has no files yet, which makes the
    refinement stop and report, enabling checkpoint/resume workflows.
    """

    def __init__(self, root, image_id: str):
        self.root = os.fspath(root)
        self.image_id = image_id

    def __call__(self, iteration: int, pose: Pose, dm: DepthMap) -> list[MatchSet]:
        pattern = os.path.join(self.root, self.image_id, f"iter{iteration}*.txt")
        return [load_matches(p) for p in sorted(glob.glob(pattern))]


def refine(
    initial: Pose,
    mesh: TriMesh,
    cam: Camera,
    matcher: MatchProvider,
    cfg: RefineConfig = RefineConfig(),
    ransac_cfg: RansacConfig = RansacConfig(),
    cell_px: float = DEFAULT_CELL_PX,
    on_render: Optional[Callable[[int, Pose, DepthMap], None]] = None,
) -> RefineResult:
    """Run the refinement loop from an initial pose estimate.

    Never raises for data-dependent failures: a round that cannot produce
    a pose stops the loop and the result keeps the last good estimate with
    ``accepted`` reflecting whether the effective-inlier rule was met by
    the last completed round. ``on_render`` is invoked after each render
    (checkpoint hook for external matchers).
    """
    result = RefineResult(pose=initial, accepted=False)
    pose = initial

    for iteration in range(1, cfg.iterations + 1):
        dm = render_depth(mesh, pose, cam)
        if on_render is not None:
            on_render(iteration, pose, dm)

        try:
            match_sets = list(matcher(iteration, pose, dm))
        except RefposeError as exc:
            result.failure = f"iteration {iteration}: {exc}"
            break
        if not match_sets:
            result.failure = f"iteration {iteration}: no matches provided"
            break
        num_matches = sum(len(m) for m in match_sets)

        corrs = lift_all(match_sets, dm, pose, cam)
        if len(corrs) < 3:
            result.failure = (
                f"iteration {iteration}: only {len(corrs)} matches with valid depth"
            )
            break

        iter_cfg = RansacConfig(
            inlier_threshold_px=ransac_cfg.inlier_threshold_px,
            max_iterations=ransac_cfg.max_iterations,
            confidence=ransac_cfg.confidence,
            lo_refit_rounds=ransac_cfg.lo_refit_rounds,
            rng_seed=derive_seed(ransac_cfg.rng_seed, iteration),
        )
        try:
            consensus = lo_ransac(corrs, cam, iter_cfg, cell_px)
            inliers = consensus.inliers(corrs)
            refined = optimize_pose(inliers, consensus.pose, cam, cfg)
        except RefposeError as exc:
            result.failure = f"iteration {iteration}: {exc}"
            break

        errs = reprojection_errors(inliers, refined, cam)
        record = IterationRecord(
            iteration=iteration,
            pose=refined,
            num_matches=num_matches,
            num_lifted=len(corrs),
            inlier_count=consensus.inlier_count,
            effective_inlier_count=consensus.effective_inlier_count,
            mean_reproj_px=float(np.mean(errs)),
            max_reproj_px=float(np.max(errs)),
        )
        result.trace.append(record)

        step = pose_error(pose, refined)
        pose = refined
        result.pose = refined
        result.inliers = inliers
        result.accepted = (
            consensus.effective_inlier_count > cfg.min_effective_inliers
        )

        if (
            cfg.early_exit_step_m is not None
            and step.position_err < cfg.early_exit_step_m
            and iteration > 1
        ):
            break

    return result
