"""P3P minimal solver and locally optimized RANSAC over 2D-3D matches.

The minimal solver follows the classic three-point distance formulation:
law-of-cosines constraints along the three viewing rays reduce to a quartic
in a distance ratio; each admissible root gives camera-frame points whose
alignment to the model points yields a pose. Candidate poses are polished
with Newton steps on the exactly-determined 3-point system so they
reproject the sample to machine precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .correspond import Corr2D3D
from .errors import (
    DegenerateConfiguration,
    NoModelFound,
    RefposeError,
    TooFewCorrespondences,
)
from .geometry import Camera, Pose, bearing_vectors, pose_error
from .optimize import (
    RefineConfig,
    apply_step,
    optimize_pose,
    reprojection_errors,
    residuals_and_jacobian,
)

DEFAULT_CELL_PX = 50.0


@dataclass(frozen=True)
class RansacConfig:
    inlier_threshold_px: float = 4.0
    max_iterations: int = 10000
    confidence: float = 0.9999
    lo_refit_rounds: int = 10
    rng_seed: int = 0

    def __post_init__(self):
        if self.inlier_threshold_px <= 0:
            raise ValueError("inlier threshold must be positive")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must lie in (0, 1)")


@dataclass(frozen=True)
class RansacResult:
    pose: Pose
    inlier_mask: np.ndarray  # bool, in the caller's correspondence order
    inlier_count: int
    effective_inlier_count: int

    def inliers(self, corrs: Corr2D3D) -> Corr2D3D:
        return corrs.subset(self.inlier_mask)


def effective_inliers(pixels, image_width, image_height, cell_px: float = DEFAULT_CELL_PX) -> int:
    """Number of grid cells occupied by at least one inlier pixel.

    The image is partitioned into cell_px x cell_px cells; clustered
    inliers therefore count once.
    """
    if cell_px <= 0:
        raise ValueError("cell_px must be positive")
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    if len(pixels) == 0:
        return 0
    nx = max(int(math.ceil(image_width / cell_px)), 1)
    ny = max(int(math.ceil(image_height / cell_px)), 1)
    ix = np.clip(np.floor(pixels[:, 0] / cell_px).astype(int), 0, nx - 1)
    iy = np.clip(np.floor(pixels[:, 1] / cell_px).astype(int), 0, ny - 1)
    return len(np.unique(iy * nx + ix))


def _absolute_orientation(src: np.ndarray, dst: np.ndarray) -> Pose:
    """Rigid transform with dst = R @ src + c (least squares, SVD)."""
    src_c = src.mean(axis=0)
    dst_c = dst.mean(axis=0)
    h = (src - src_c).T @ (dst - dst_c)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return Pose(rot, dst_c - rot @ src_c)


def _polish(corrs: Corr2D3D, pose: Pose, cam: Camera) -> Pose:
    """Newton iterations on the square 3-point system (6 residuals, 6 dof)."""
    for _ in range(10):
        res, jac = residuals_and_jacobian(corrs, pose, cam)
        if res is None:
            return pose
        if np.max(np.abs(res)) < 1e-12:
            break
        try:
            delta = np.linalg.solve(jac, -res)
        except np.linalg.LinAlgError:
            break
        pose = apply_step(pose, delta)
    return pose


def _polyval(coeffs: np.ndarray, x: float) -> float:
    return float(np.polyval(coeffs, x))


def p3p(corrs: Corr2D3D, cam: Camera, reproj_tol: float = 1e-6) -> list[Pose]:
    """Up to four poses, each reprojecting the 3 points within reproj_tol px."""
    if len(corrs) < 3:
        raise TooFewCorrespondences("p3p needs exactly 3 correspondences")
    if len(corrs) != 3:
        raise ValueError("p3p needs exactly 3 correspondences")

    pts = corrs.points
    scale = max(np.linalg.norm(pts - pts.mean(axis=0), axis=1).max(), 1e-12)
    d12 = np.linalg.norm(pts[0] - pts[1])
    d13 = np.linalg.norm(pts[0] - pts[2])
    d23 = np.linalg.norm(pts[1] - pts[2])
    if min(d12, d13, d23) < 1e-9 * scale:
        raise DegenerateConfiguration("duplicated 3D point")
    if np.linalg.norm(np.cross(pts[1] - pts[0], pts[2] - pts[0])) < 1e-9 * scale * scale:
        raise DegenerateConfiguration("collinear 3D points")

    rays = bearing_vectors(corrs.pixels, cam)
    cos_a = float(rays[1] @ rays[2])
    cos_b = float(rays[0] @ rays[2])
    cos_g = float(rays[0] @ rays[1])
    if max(abs(cos_a), abs(cos_b), abs(cos_g)) > 1.0 - 1e-12:
        raise DegenerateConfiguration("coincident bearing vectors")

    a2, b2, c2 = d23 * d23, d13 * d13, d12 * d12
    m = (a2 - c2) / b2
    q = c2 / b2

    # Distances s2 = u*s1, s3 = v*s1. Eliminating u leaves a quartic in v;
    # coefficients are assembled with polynomial arithmetic (descending order).
    n_poly = np.array([m - 1.0, -2.0 * m * cos_b, m + 1.0])
    d_poly = np.array([-2.0 * cos_a, 2.0 * cos_g])
    g_poly = np.array([q, -2.0 * q * cos_b, q])
    dd = np.polymul(d_poly, d_poly)
    quartic = (
        np.polyadd(
            np.polyadd(dd, np.polymul(n_poly, n_poly)),
            -2.0 * cos_g * np.polymul(n_poly, d_poly),
        )
    )
    quartic = np.polysub(quartic, np.polymul(g_poly, dd))

    roots = np.roots(quartic)
    dq = np.polyder(quartic)
    solutions: list[Pose] = []
    for root in roots:
        if abs(root.imag) > 1e-6 * (1.0 + abs(root.real)):
            continue
        v = float(root.real)
        # Newton polish of the quartic root
        for _ in range(3):
            f = _polyval(quartic, v)
            fp = _polyval(dq, v)
            if fp == 0.0:
                break
            v -= f / fp
        denom = _polyval(d_poly, v)
        if abs(denom) < 1e-12:
            continue
        u = _polyval(n_poly, v) / denom
        s1_sq = b2 / (1.0 + v * v - 2.0 * v * cos_b)
        if s1_sq <= 0.0:
            continue
        s1 = math.sqrt(s1_sq)
        s2, s3 = u * s1, v * s1
        if min(s1, s2, s3) <= 0.0:
            continue
        cam_pts = np.array([s1 * rays[0], s2 * rays[1], s3 * rays[2]])
        pose = _polish(corrs, _absolute_orientation(cam_pts, pts), cam)
        errs = reprojection_errors(corrs, pose, cam)
        if np.max(errs) > reproj_tol:
            continue
        if any(
            pose_error(pose, kept).position_err < 1e-9 * max(scale, 1.0)
            and pose_error(pose, kept).rotation_err < 1e-9
            for kept in solutions
        ):
            continue
        solutions.append(pose)
    return solutions[:4]


def _needed_iterations(inlier_ratio: float, confidence: float) -> float:
    w3 = inlier_ratio**3
    if w3 <= 0.0:
        return math.inf
    if w3 >= 1.0:
        return 1.0
    return math.ceil(math.log1p(-confidence) / math.log1p(-w3))


def _local_optimize(corrs, pose, mask, cam, cfg, lm_cfg):
    """Refit on the current inliers until the consensus set stabilizes."""
    threshold = cfg.inlier_threshold_px
    best_pose, best_mask = pose, mask
    best_count = int(mask.sum())
    for _ in range(cfg.lo_refit_rounds):
        if best_count < 3:
            break
        try:
            refit = optimize_pose(corrs.subset(best_mask), best_pose, cam, lm_cfg)
        except RefposeError:
            break
        errs = reprojection_errors(corrs, refit, cam)
        new_mask = errs < threshold
        new_count = int(new_mask.sum())
        if new_count < best_count:
            break
        stable = new_count == best_count and bool(np.all(new_mask == best_mask))
        best_pose, best_mask, best_count = refit, new_mask, new_count
        if stable:
            break
    return best_pose, best_mask, best_count


def lo_ransac(
    corrs: Corr2D3D,
    cam: Camera,
    cfg: RansacConfig = RansacConfig(),
    cell_px: float = DEFAULT_CELL_PX,
) -> RansacResult:
    """Locally optimized RANSAC around the P3P solver.

    Sampling indices are drawn over a canonical ordering of the
    correspondences (sorted by pixel, then point), so the result depends
    on the seed but not on the caller's ordering.
    """
    n = len(corrs)
    if n < 3:
        raise TooFewCorrespondences(f"{n} < 3 correspondences")

    canonical = np.lexsort(
        (
            corrs.points[:, 2],
            corrs.points[:, 1],
            corrs.points[:, 0],
            corrs.pixels[:, 1],
            corrs.pixels[:, 0],
        )
    )
    sorted_corrs = corrs.subset(canonical)
    rng = np.random.default_rng(cfg.rng_seed)
    lm_cfg = RefineConfig()

    best_pose = None
    best_mask = None
    best_count = 0
    needed = math.inf
    iteration = 0
    while iteration < cfg.max_iterations and iteration < needed:
        iteration += 1
        sample = rng.choice(n, size=3, replace=False)
        try:
            candidates = p3p(sorted_corrs.subset(sample), cam)
        except DegenerateConfiguration:
            continue
        for pose in candidates:
            errs = reprojection_errors(sorted_corrs, pose, cam)
            mask = errs < cfg.inlier_threshold_px
            count = int(mask.sum())
            if count <= best_count:
                continue
            pose, mask, count = _local_optimize(
                sorted_corrs, pose, mask, cam, cfg, lm_cfg
            )
            if count > best_count:
                best_pose, best_mask, best_count = pose, mask, count
                needed = _needed_iterations(best_count / n, cfg.confidence)

    if best_pose is None or best_count < 3:
        raise NoModelFound(
            f"no pose with >= 3 inliers after {iteration} iterations"
        )

    mask_original = np.zeros(n, dtype=bool)
    mask_original[canonical] = best_mask
    eff = effective_inliers(
        corrs.pixels[mask_original], cam.width, cam.height, cell_px
    )
    return RansacResult(
        pose=best_pose,
        inlier_mask=mask_original,
        inlier_count=best_count,
        effective_inlier_count=eff,
    )
