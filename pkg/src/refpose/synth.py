"""Synthetic scenes, simulated matchers, and experiment drivers.

The harness replaces the external feature stack with a controllable
simulator: scenes are generated meshes with feature points sampled on the
surface, and matches between a "real" view (true pose, optional noise and
outliers) and a rendering (current estimate) are produced by projection.
Everything is deterministic per seed.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .correspond import MatchSet
from .geometry import Camera, Pose, perturb, pose_error, project_many, rotation_from_axis_angle
from .optimize import RefineConfig
from .ransac import RansacConfig
from .refine import RefineResult, refine
from .render import TriMesh, render_depth
from .seeding import derive_rng, derive_seed

LAYOUTS = ("plane-grid", "box-courtyard", "random-facade")

# Success rule for initialization-sensitivity sweeps: the refined pose
# must land within 0.25 m and 1.0 deg of the true pose.
SUCCESS_POS_M = 0.25
SUCCESS_ROT_DEG = 1.0


@dataclass(frozen=True)
class SceneSpec:
    layout: str = "box-courtyard"
    extent: float = 20.0  # meters
    triangle_target: int = 200
    density: float = 0.15  # feature points per square meter
    rng_seed: int = 0

    def __post_init__(self):
        if self.layout not in LAYOUTS:
            raise ValueError(f"unknown layout {self.layout!r}; choose from {LAYOUTS}")
        if self.extent <= 0:
            raise ValueError("extent must be positive")
        if self.density <= 0:
            raise ValueError("density must be positive")


@dataclass(frozen=True)
class SimMatcherSpec:
    sigma_px: float = 1.0
    outlier_ratio: float = 0.0  # 1.0 = every match replaced by an outlier
    detection_rate: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.sigma_px < 0:
            raise ValueError("sigma_px must be >= 0")
        if not 0.0 <= self.outlier_ratio <= 1.0:
            raise ValueError("outlier_ratio must lie in [0, 1]")
        if not 0.0 < self.detection_rate <= 1.0:
            raise ValueError("detection_rate must lie in (0, 1]")


def _grid_rect(corner, edge_u, edge_v, nu, nv, v_off):
    """Vertices and faces of a rectangle subdivided into nu x nv cells."""
    corner = np.asarray(corner, float)
    edge_u = np.asarray(edge_u, float)
    edge_v = np.asarray(edge_v, float)
    verts = []
    for j in range(nv + 1):
        for i in range(nu + 1):
            verts.append(corner + edge_u * (i / nu) + edge_v * (j / nv))
    faces = []
    for j in range(nv):
        for i in range(nu):
            a = v_off + j * (nu + 1) + i
            b, c, d = a + 1, a + nu + 1, a + nu + 2
            faces.append([a, b, d])
            faces.append([a, d, c])
    return verts, faces


def _subdivisions(width, height, cells):
    nu = max(1, round(math.sqrt(cells * width / height)))
    nv = max(1, math.ceil(cells / nu))
    return nu, nv


def _build_rects(rects, triangle_target):
    """rects: list of (corner, edge_u, edge_v). Subdivision follows area."""
    areas = [np.linalg.norm(np.cross(eu, ev)) for _, eu, ev in rects]
    total = sum(areas)
    verts: list = []
    faces: list = []
    for (corner, eu, ev), area in zip(rects, areas):
        cells = max(1, round(triangle_target / 2 * area / total))
        nu, nv = _subdivisions(np.linalg.norm(eu), np.linalg.norm(ev), cells)
        v, f = _grid_rect(corner, eu, ev, nu, nv, len(verts))
        verts.extend(v)
        faces.extend(f)
    return np.array(verts), np.array(faces)


def _layout_rects(spec: SceneSpec, rng: np.random.Generator):
    e = spec.extent
    if spec.layout == "plane-grid":
        # One square plane facing the canonical camera at distance = extent.
        return [
            (
                np.array([-e / 2, -e / 2, e]),
                np.array([e, 0.0, 0.0]),
                np.array([0.0, e, 0.0]),
            )
        ]
    if spec.layout == "box-courtyard":
        # Open box seen from the origin looking +z: front wall, two side
        # walls, a floor below the camera, and a free-standing pillar for
        # occlusion and mid-range depth. Depth spans 0.1*extent (near
        # floor) to extent (front wall). Surfaces extend well past the
        # canonical frustum so moderately perturbed viewpoints still see
        # most of the scene.
        x = 0.5 * e
        y_lo, y_hi = -0.4 * e, 0.08 * e
        z_near, z_far = 0.1 * e, e
        ey = np.array([0.0, y_hi - y_lo, 0.0])
        return [
            (np.array([-0.6 * e, y_lo, z_far]), np.array([1.2 * e, 0, 0]), ey),
            (np.array([-x, y_lo, z_near]), np.array([0, 0, z_far - z_near]), ey),
            (np.array([x, y_lo, z_near]), np.array([0, 0, z_far - z_near]), ey),
            (
                np.array([-x, y_hi, z_near]),  # floor
                np.array([2 * x, 0, 0]),
                np.array([0, 0, z_far - z_near]),
            ),
            (
                np.array([-0.075 * e, -0.1 * e, 0.4 * e]),  # pillar face
                np.array([0.075 * e, 0, 0]),
                np.array([0, 0.15 * e, 0]),
            ),
        ]
    # random-facade: fronto-parallel quads at random depths
    rects = []
    n_quads = max(3, spec.triangle_target // 16)
    for _ in range(n_quads):
        z = rng.uniform(0.3 * e, e)
        half = 0.64 * z  # keep quads roughly inside a standard frustum
        cx = rng.uniform(-half * 0.6, half * 0.6)
        cy = rng.uniform(-half * 0.45, half * 0.45)
        w = rng.uniform(0.15 * e, 0.35 * e)
        h = rng.uniform(0.15 * e, 0.35 * e)
        rects.append(
            (
                np.array([cx - w / 2, cy - h / 2, z]),
                np.array([w, 0.0, 0.0]),
                np.array([0.0, h, 0.0]),
            )
        )
    return rects


def _sample_on_faces(verts, faces, count, rng):
    a = verts[faces[:, 0]]
    b = verts[faces[:, 1]]
    c = verts[faces[:, 2]]
    areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    probs = areas / areas.sum()
    chosen = rng.choice(len(faces), size=count, p=probs)
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    w0 = 1.0 - r1
    w1 = r1 * (1.0 - r2)
    w2 = r1 * r2
    return (
        a[chosen] * w0[:, None] + b[chosen] * w1[:, None] + c[chosen] * w2[:, None]
    )


def make_scene(spec: SceneSpec):
    """Generate (TriMesh, feature points); every point lies on a face."""
    rng = derive_rng(spec.rng_seed)
    verts, faces = _build_rects(_layout_rects(spec, rng), spec.triangle_target)
    area = 0.5 * np.sum(
        np.linalg.norm(
            np.cross(
                verts[faces[:, 1]] - verts[faces[:, 0]],
                verts[faces[:, 2]] - verts[faces[:, 0]],
            ),
            axis=1,
        )
    )
    count = max(4, round(area * spec.density))
    points = _sample_on_faces(verts, faces, count, rng)
    colors = rng.integers(60, 220, size=(len(verts), 3)).astype(np.uint8)
    return TriMesh(verts, faces, colors), points


def benchmark_camera() -> Camera:
    return Camera(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)


def benchmark_scene(seed: int = 0):
    """Reference synthetic rig: mesh, feature points, camera, true pose.

    A courtyard-style scene with depths spanning roughly 2-20 m and about
    100 feature points, expressed in a model frame that differs from the
    camera frame by a fixed rigid transform (to exercise conventions).
    """
    spec = SceneSpec(layout="box-courtyard", extent=20.0, triangle_target=200,
                     density=0.11, rng_seed=seed)
    mesh, points = make_scene(spec)
    to_model = Pose(
        rotation_from_axis_angle(np.array([0.3, 1.0, 0.2]) * 0.9),
        np.array([5.0, -3.0, 12.0]),
    )
    mesh_model = TriMesh(to_model.transform(mesh.vertices), mesh.faces, mesh.colors)
    return mesh_model, to_model.transform(points), benchmark_camera(), to_model


def _occlusion_mask(points, pose: Pose, cam: Camera, dm) -> np.ndarray:
    """True where each point's depth agrees with the rendered depth map.

    The tolerance grows with depth to absorb nearest-pixel lookup error on
    slanted surfaces while still rejecting points hidden behind a nearer
    surface.
    """
    p_cam = pose.transform_inverse(points)
    px, in_front = project_many(points, pose, cam)
    ok = np.zeros(len(points), dtype=bool)
    for i in range(len(points)):
        if not in_front[i]:
            continue
        d = dm.value_at(px[i])
        if d is None:
            continue
        z = p_cam[i, 2]
        ok[i] = abs(z - d) <= 0.05 + 0.03 * z
    return ok


def simulate_matches(
    points: np.ndarray,
    render_pose: Pose,
    true_pose: Pose,
    cam: Camera,
    spec: SimMatcherSpec,
    image_id: str = "image",
    render_id: str = "render",
    true_depth=None,
    render_depth=None,
) -> MatchSet:
    """Project features into the true view (noisy) and the rendered view.

    Points behind either camera or outside either image are dropped; the
    remaining real-image observations get Gaussian noise, a fraction are
    replaced by uniform outliers, and detection_rate thins the survivors.
    When depth maps for the two views are supplied, points occluded by the
    mesh in either view are dropped as well (a feature matcher can only
    match what both images actually show).
    """
    rng = derive_rng(spec.rng_seed)
    points = np.asarray(points, dtype=float)
    u_true, front_true = project_many(points, true_pose, cam)
    u_rend, front_rend = project_many(points, render_pose, cam)
    keep = front_true & front_rend
    keep[keep] &= cam.contains(u_true[keep]) & cam.contains(u_rend[keep])
    if true_depth is not None:
        keep &= _occlusion_mask(points, true_pose, cam, true_depth)
    if render_depth is not None:
        keep &= _occlusion_mask(points, render_pose, cam, render_depth)
    u = u_true[keep]
    u_r = u_rend[keep]
    n = len(u)
    if spec.sigma_px > 0:
        u = u + rng.normal(0.0, spec.sigma_px, (n, 2))
    if spec.outlier_ratio > 0:
        is_outlier = rng.random(n) < spec.outlier_ratio
        u[is_outlier] = rng.uniform(
            [0.0, 0.0], [cam.width, cam.height], (int(is_outlier.sum()), 2)
        )
    if spec.detection_rate < 1.0:
        detected = rng.random(n) < spec.detection_rate
        u, u_r = u[detected], u_r[detected]
    return MatchSet(image_id, render_id, np.concatenate([u, u_r], axis=1))


class SimulatedMatcher:
    """Match provider backed by :func:`simulate_matches`.

    Draws fresh noise per refinement iteration from seeds derived off the
    matcher spec, and can record every produced MatchSet (used to dump
    reproducible per-iteration fixtures). When constructed with the scene
    mesh, matches are occlusion-aware: the true view is rendered once and
    the refinement loop's own rendering covers the estimate view.
    """

    def __init__(self, points, true_pose: Pose, cam: Camera, spec: SimMatcherSpec,
                 image_id: str = "image", mesh: Optional[TriMesh] = None,
                 true_depth=None):
        self.points = np.asarray(points, dtype=float)
        self.true_pose = true_pose
        self.cam = cam
        self.spec = spec
        self.image_id = image_id
        self.recorded: list[tuple[int, MatchSet]] = []
        if true_depth is None and mesh is not None:
            true_depth = render_depth(mesh, true_pose, cam)
        self._true_depth = true_depth

    def __call__(self, iteration: int, pose: Pose, dm) -> list[MatchSet]:
        per_iter = replace(
            self.spec, rng_seed=derive_seed(self.spec.rng_seed, iteration)
        )
        matches = simulate_matches(
            self.points, pose, self.true_pose, self.cam, per_iter,
            image_id=self.image_id, render_id=f"iter{iteration}",
            true_depth=self._true_depth,
            render_depth=dm if self._true_depth is not None else None,
        )
        self.recorded.append((iteration, matches))
        return [matches]


@dataclass
class SensitivityResult:
    """Success counts of refinement trials over a perturbation grid."""

    rot_levels_deg: tuple
    trans_levels_m: tuple
    trials: int
    # iteration index -> (n_rot, n_trans) success counts
    success_counts: dict

    def rates(self, iteration: int) -> np.ndarray:
        return self.success_counts[iteration] / float(self.trials)


def random_perturbation(pose: Pose, rot_deg: float, trans_m: float,
                        rng: np.random.Generator) -> Pose:
    """Offset a pose by exact magnitudes along uniformly random directions."""

    def unit(v):
        n = np.linalg.norm(v)
        return v / n if n > 0 else np.array([1.0, 0.0, 0.0])

    axis = unit(rng.normal(size=3))
    direction = unit(rng.normal(size=3))
    return perturb(pose, axis * math.radians(rot_deg), direction * trans_m)


def sensitivity_grid(
    mesh: TriMesh,
    points: np.ndarray,
    true_pose: Pose,
    cam: Camera,
    rot_levels_deg: Sequence[float],
    trans_levels_m: Sequence[float],
    trials: int = 50,
    matcher_spec: SimMatcherSpec = SimMatcherSpec(sigma_px=1.0, outlier_ratio=0.2),
    refine_cfg: RefineConfig = RefineConfig(),
    ransac_cfg: RansacConfig = RansacConfig(),
    base_seed: int = 0,
    record_iterations: Sequence[int] = (1,),
) -> SensitivityResult:
    """Success-rate matrices of refinement from perturbed initializations.

    Each cell runs ``trials`` refinements from poses perturbed by the
    cell's exact rotation/translation magnitudes along random directions.
    Success means landing within (0.25 m, 1.0 deg) of the true pose;
    counts are recorded after the final iteration and after each iteration
    listed in ``record_iterations``. Per-trial seeds are derived from
    (base_seed, cell, trial) so results are schedule-independent.
    """
    if not rot_levels_deg or not trans_levels_m:
        raise ValueError("rotation and translation levels must be nonempty")
    final_it = refine_cfg.iterations
    iters = sorted(set(list(record_iterations) + [final_it]))
    counts = {
        it: np.zeros((len(rot_levels_deg), len(trans_levels_m)), dtype=int)
        for it in iters
    }
    true_depth = render_depth(mesh, true_pose, cam)

    for i, rot in enumerate(rot_levels_deg):
        for j, trans in enumerate(trans_levels_m):
            cell = i * len(trans_levels_m) + j
            for trial in range(trials):
                rng = derive_rng(base_seed, cell, trial)
                start = random_perturbation(true_pose, rot, trans, rng)
                matcher = SimulatedMatcher(
                    points, true_pose, cam,
                    replace(
                        matcher_spec,
                        rng_seed=derive_seed(base_seed, cell, trial, 1),
                    ),
                    true_depth=true_depth,
                )
                per_trial_ransac = replace(
                    ransac_cfg, rng_seed=derive_seed(base_seed, cell, trial, 2)
                )
                result = refine(
                    start, mesh, cam, matcher, refine_cfg, per_trial_ransac
                )
                for it in iters:
                    achieved = _pose_after(result, it, start)
                    err = pose_error(true_pose, achieved)
                    if err.within(SUCCESS_POS_M, SUCCESS_ROT_DEG):
                        counts[it][i, j] += 1
    return SensitivityResult(
        rot_levels_deg=tuple(rot_levels_deg),
        trans_levels_m=tuple(trans_levels_m),
        trials=trials,
        success_counts=counts,
    )


def _pose_after(result: RefineResult, iteration: int, start: Pose) -> Pose:
    """Pose estimate in effect once ``iteration`` rounds have completed."""
    pose = start
    for record in result.trace:
        if record.iteration <= iteration:
            pose = record.pose
    return pose


def grid_to_csv(result: SensitivityResult) -> str:
    """CSV with one block per recorded iteration count."""
    buf = io.StringIO()
    buf.write("iteration,rot_deg,trans_m,successes,trials,rate\n")
    for it in sorted(result.success_counts):
        counts = result.success_counts[it]
        for i, rot in enumerate(result.rot_levels_deg):
            for j, trans in enumerate(result.trans_levels_m):
                c = int(counts[i, j])
                buf.write(
                    f"{it},{rot:g},{trans:g},{c},{result.trials},"
                    f"{c / result.trials:.6f}\n"
                )
    return buf.getvalue()


def grid_to_heatmap(result: SensitivityResult, iteration: Optional[int] = None) -> str:
    """Plotter-agnostic matrix heatmap: blank-line separated rows of
    ``rot trans rate`` triples (gnuplot splot compatible)."""
    if iteration is None:
        iteration = max(result.success_counts)
    counts = result.success_counts[iteration]
    lines = [f"# success rate after iteration {iteration}",
             "# rot_deg trans_m rate"]
    for i, rot in enumerate(result.rot_levels_deg):
        for j, trans in enumerate(result.trans_levels_m):
            lines.append(f"{rot:g} {trans:g} {counts[i, j] / result.trials:.6f}")
        lines.append("")
    return "\n".join(lines)
