"""Command-line interface.

Subcommands:

* ``refine``      batch pose refinement from per-iteration match files
* ``eval``        score estimated poses against reference poses
* ``uncertainty`` per-image pose uncertainty estimates
* ``synth``       generate a synthetic end-to-end fixture (scene, poses,
                  per-iteration match files, expected refined poses)
* ``sensitivity`` initialization-robustness sweep on a synthetic scene

Every randomized command takes ``--seed`` (default from ``REFPOSE_SEED``,
else 0) and echoes it into its outputs; two runs with the same arguments
produce byte-identical files. ``--parallel`` (default from
``REFPOSE_PARALLEL``, else 1) bounds per-image parallelism.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

from . import formats
from .correspond import write_matches
from .errors import RefposeError
from .geometry import Camera, Pose, pose_error
from .metrics import (
    DEFAULT_REPROJECTION_THRESHOLDS_PX,
    EvalReport,
    ThresholdSet,
    fixed_threshold_accuracy,
    max_reprojection_diff,
    per_image_threshold_accuracy,
    reprojection_accuracy,
)
from .optimize import RefineConfig
from .ransac import DEFAULT_CELL_PX, RansacConfig
from .refine import FileMatchProvider, refine
from .seeding import derive_rng, derive_seed, name_key
from .synth import (
    SceneSpec,
    SimMatcherSpec,
    SimulatedMatcher,
    benchmark_scene,
    grid_to_csv,
    grid_to_heatmap,
    make_scene,
    random_perturbation,
    sensitivity_grid,
)
from .uncertainty import (
    DEFAULT_SAMPLES_FIRST_ORDER,
    DEFAULT_SAMPLES_MONTE_CARLO,
    DEFAULT_SAMPLES_SAMPLING,
    NoiseModel,
    first_order,
    monte_carlo,
    sampling_uncertainty,
)


def _env_int(name: str, fallback: int) -> int:
    value = os.environ.get(name)
    return int(value) if value else fallback


def _image_ransac_config(args, base_seed: int, image: str) -> RansacConfig:
    return RansacConfig(
        inlier_threshold_px=args.threshold_px,
        max_iterations=args.ransac_iterations,
        confidence=args.confidence,
        rng_seed=derive_seed(base_seed, name_key(image)),
    )


def _refine_cfg(args) -> RefineConfig:
    return RefineConfig(
        iterations=args.iterations,
        min_effective_inliers=args.min_effective_inliers,
    )


def _add_refine_params(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--iterations", type=int, default=5,
                        help="refinement rounds (default 5)")
    parser.add_argument("--min-effective-inliers", type=int, default=10,
                        help="accept only with strictly more effective inliers")
    parser.add_argument("--cell-px", type=float, default=DEFAULT_CELL_PX,
                        help="effective-inlier grid cell size in pixels")
    parser.add_argument("--threshold-px", type=float, default=4.0,
                        help="RANSAC inlier threshold in pixels")
    parser.add_argument("--ransac-iterations", type=int, default=10000)
    parser.add_argument("--confidence", type=float, default=0.9999)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int,
                        default=_env_int("REFPOSE_SEED", 0))


# ---------------------------------------------------------------------------
# refine

@dataclass
class RunConfig:
    """Resolved inputs for a batch refinement run."""

    mesh_path: str
    cameras: dict
    init_poses: dict
    match_dir: str
    out_dir: str
    refine_cfg: RefineConfig
    cell_px: float
    seed: int
    parallel: int
    checkpoints: bool

    @staticmethod
    def from_args(args) -> "RunConfig":
        """Load and validate; every referenced path must exist."""
        for label, path in (("mesh", args.mesh), ("cameras", args.cameras),
                            ("poses", args.poses), ("matches", args.matches)):
            if not os.path.exists(path):
                raise FileNotFoundError(f"{label} path {path!r} does not exist")
        return RunConfig(
            mesh_path=args.mesh,
            cameras=formats.read_cameras(args.cameras),
            init_poses=formats.read_poses(args.poses),
            match_dir=args.matches,
            out_dir=args.out,
            refine_cfg=_refine_cfg(args),
            cell_px=args.cell_px,
            seed=args.seed,
            parallel=args.parallel,
            checkpoints=not args.no_checkpoints,
        )


def _refine_one(task):
    """Worker: refine a single image; returns (name, pose, result summary)."""
    (name, mesh_path, cam, init_pose, match_dir, out_dir, cfg, ransac_cfg,
     cell_px, checkpoints) = task
    mesh = formats.read_ply(mesh_path)

    def on_render(iteration, pose, dm):
        if not checkpoints:
            return
        ck = os.path.join(out_dir, "checkpoints", name)
        formats.write_depth_checkpoint(dm, os.path.join(ck, f"iter{iteration}.pfm"))
        formats.write_poses(
            os.path.join(ck, f"iter{iteration}_pose.txt"), {name: pose}
        )

    result = refine(
        init_pose, mesh, cam, FileMatchProvider(match_dir, name),
        cfg, ransac_cfg, cell_px, on_render=on_render,
    )
    if len(result.inliers):
        formats.write_corrs(
            os.path.join(out_dir, "inliers", f"{name}.txt"), name, result.inliers
        )
    summary = {
        "accepted": result.accepted,
        "iterations_run": result.iterations_run,
        "failure": result.failure,
        "trace": [
            {
                "iteration": r.iteration,
                "num_matches": r.num_matches,
                "num_lifted": r.num_lifted,
                "inlier_count": r.inlier_count,
                "effective_inlier_count": r.effective_inlier_count,
                "mean_reproj_px": r.mean_reproj_px,
                "max_reproj_px": r.max_reproj_px,
            }
            for r in result.trace
        ],
    }
    return name, result.pose, summary


def cmd_refine(args) -> int:
    try:
        run = RunConfig.from_args(args)
    except (RefposeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    tasks = [
        (
            name, run.mesh_path, formats.camera_for_image(run.cameras, name),
            run.init_poses[name], run.match_dir, run.out_dir, run.refine_cfg,
            _image_ransac_config(args, run.seed, name),
            run.cell_px, run.checkpoints,
        )
        for name in sorted(run.init_poses)
    ]
    if run.parallel > 1:
        with ProcessPoolExecutor(max_workers=run.parallel) as pool:
            outcomes = list(pool.map(_refine_one, tasks))
    else:
        outcomes = [_refine_one(t) for t in tasks]

    outcomes.sort(key=lambda item: item[0])
    refined = {name: pose for name, pose, _ in outcomes}
    formats.write_poses(os.path.join(run.out_dir, "poses_refined.txt"), refined)
    report = {
        "command": "refine",
        "seed": run.seed,
        "config": {
            "iterations": run.refine_cfg.iterations,
            "min_effective_inliers": run.refine_cfg.min_effective_inliers,
            "cell_px": run.cell_px,
            "inlier_threshold_px": args.threshold_px,
        },
        "images": {name: summary for name, _, summary in outcomes},
    }
    formats.write_json(os.path.join(run.out_dir, "report.json"), report)
    for name, _, summary in outcomes:
        status = "accepted" if summary["accepted"] else "rejected"
        note = f" ({summary['failure']})" if summary["failure"] else ""
        print(f"{name}: {status}{note}")
    return 0


# ---------------------------------------------------------------------------
# eval

def _parse_pose_thresholds(text: str) -> ThresholdSet:
    pairs = []
    for chunk in text.split(":"):
        c, r = chunk.split(",")
        pairs.append((float(c), float(r)))
    return ThresholdSet(tuple(pairs))


def cmd_eval(args) -> int:
    try:
        refs = formats.read_poses(args.ref)
        ests = formats.read_poses(args.est)
    except (RefposeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    missing = sorted(set(refs) - set(ests))
    extra = sorted(set(ests) - set(refs))
    if missing or extra:
        if missing:
            print(f"error: images missing from estimates: {missing}", file=sys.stderr)
        if extra:
            print(f"error: images missing from references: {extra}", file=sys.stderr)
        return 1

    names = sorted(refs)
    errors = [pose_error(refs[n], ests[n]) for n in names]
    try:
        thresholds = _parse_pose_thresholds(args.pose_thresholds)
    except ValueError as exc:
        print(f"error: --pose-thresholds: {exc}", file=sys.stderr)
        return 1
    report = EvalReport(
        image_names=names,
        pose_errors=errors,
        reproj_diffs=None,
        pose_thresholds=thresholds,
        pose_accuracy=fixed_threshold_accuracy(errors, thresholds),
        metadata={"seed": args.seed, "reference": args.ref, "estimates": args.est},
    )

    if args.inliers:
        if not args.cameras:
            print("error: --inliers requires --cameras", file=sys.stderr)
            return 1
        try:
            cameras = formats.read_cameras(args.cameras)
            diffs = []
            for n in names:
                _, corrs = formats.read_corrs(
                    os.path.join(args.inliers, f"{n}.txt")
                )
                diffs.append(
                    max_reprojection_diff(
                        refs[n], ests[n], corrs.points,
                        formats.camera_for_image(cameras, n),
                    )
                )
        except (RefposeError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        try:
            thresholds_px = tuple(
                float(t) for t in args.reproj_thresholds.split(",")
            )
        except ValueError as exc:
            print(f"error: --reproj-thresholds: {exc}", file=sys.stderr)
            return 1
        report.reproj_diffs = diffs
        report.reproj_thresholds = thresholds_px
        report.reproj_accuracy = reprojection_accuracy(diffs, thresholds_px)

    for spec in args.sampling_unc or []:
        ratio_text, _, path = spec.partition("=")
        try:
            ratio = float(ratio_text)
            _, per_image = formats.read_uncertainties(path)
            thresholds_list = [per_image[n] for n in names]
        except (RefposeError, OSError, KeyError, ValueError) as exc:
            print(f"error: --sampling-unc {spec}: {exc}", file=sys.stderr)
            return 1
        report.sampling_accuracy[ratio] = per_image_threshold_accuracy(
            errors, thresholds_list
        )
        report.per_image_thresholds[f"sampling({ratio:g})"] = per_image

    for spec in args.extra_unc or []:
        label, _, path = spec.partition("=")
        try:
            _, per_image = formats.read_uncertainties(path)
            thresholds_list = [per_image[n] for n in names]
        except (RefposeError, OSError, KeyError) as exc:
            print(f"error: --extra-unc {spec}: {exc}", file=sys.stderr)
            return 1
        report.non_headline_accuracy[label] = per_image_threshold_accuracy(
            errors, thresholds_list
        )
        report.per_image_thresholds[label] = per_image

    formats.write_json(args.out, report.to_json_dict())
    table = report.to_table(label=os.path.basename(args.est))
    if args.table:
        with formats.atomic_write(args.table) as fh:
            fh.write(table)
    print(table, end="")
    return 0


# ---------------------------------------------------------------------------
# uncertainty

def cmd_uncertainty(args) -> int:
    try:
        poses = formats.read_poses(args.poses)
        cameras = formats.read_cameras(args.cameras)
    except (RefposeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    noise = NoiseModel(sigma_px=args.sigma_px)
    estimates = {}
    for name in sorted(poses):
        path = os.path.join(args.inliers, f"{name}.txt")
        try:
            _, corrs = formats.read_corrs(path)
        except (RefposeError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        cam = formats.camera_for_image(cameras, name)
        seed = derive_seed(args.seed, name_key(name))
        try:
            if args.method == "first-order":
                est = first_order(
                    corrs, poses[name], cam, noise,
                    args.samples or DEFAULT_SAMPLES_FIRST_ORDER, seed,
                )
            elif args.method == "monte-carlo":
                est = monte_carlo(
                    corrs, poses[name], cam, noise,
                    args.samples or DEFAULT_SAMPLES_MONTE_CARLO, seed,
                )
            else:
                est = sampling_uncertainty(
                    corrs, poses[name], cam, args.ratio,
                    args.samples or DEFAULT_SAMPLES_SAMPLING, seed,
                )
        except RefposeError as exc:
            print(f"error: {name}: {exc}", file=sys.stderr)
            return 1
        estimates[name] = est
        print(
            f"{name}: {est.label()} position={est.position_unc:.6g} m "
            f"rotation={est.rotation_unc:.6g} deg"
        )

    formats.write_uncertainties(
        args.out, estimates, args.method,
        args.samples
        or {
            "first-order": DEFAULT_SAMPLES_FIRST_ORDER,
            "monte-carlo": DEFAULT_SAMPLES_MONTE_CARLO,
            "sampling": DEFAULT_SAMPLES_SAMPLING,
        }[args.method],
        args.seed,
        ratio=args.ratio if args.method == "sampling" else None,
    )
    return 0


# ---------------------------------------------------------------------------
# synth

def cmd_synth(args) -> int:
    cam = Camera(
        fx=args.fx, fy=args.fy, cx=args.cx, cy=args.cy,
        width=args.width, height=args.height,
    )
    if args.layout == "benchmark":
        mesh, points, _, base_pose = benchmark_scene(args.scene_seed)
    else:
        spec = SceneSpec(
            layout=args.layout, extent=args.extent,
            triangle_target=args.triangles, density=args.density,
            rng_seed=args.scene_seed,
        )
        mesh, points = make_scene(spec)
        base_pose = Pose.identity()

    os.makedirs(args.out, exist_ok=True)
    formats.write_ply(mesh, os.path.join(args.out, "mesh.ply"))
    formats.write_cameras(os.path.join(args.out, "cameras.txt"), {"default": cam})

    matcher_spec = SimMatcherSpec(
        sigma_px=args.sigma_px, outlier_ratio=args.outlier_ratio,
        detection_rate=args.detection_rate,
    )
    cfg = RefineConfig(iterations=args.iterations)

    true_poses = {}
    init_poses = {}
    for i in range(args.images):
        name = f"img{i:03d}"
        rng = derive_rng(args.seed, name_key(name))
        true_pose = random_perturbation(
            base_pose, rng.uniform(0.0, 2.0), rng.uniform(0.0, 0.5), rng
        )
        true_poses[name] = true_pose
        init_poses[name] = random_perturbation(
            true_pose, args.perturb_rot_deg, args.perturb_trans_m, rng
        )
    formats.write_poses(os.path.join(args.out, "poses_true.txt"), true_poses)
    formats.write_poses(os.path.join(args.out, "poses_init.txt"), init_poses)
    # Refine from the *reloaded* initial poses so a later `refine` run over
    # the emitted files reproduces the expected poses bit for bit.
    init_poses = formats.read_poses(os.path.join(args.out, "poses_init.txt"))

    expected = {}
    accepted = {}
    for name in sorted(init_poses):
        matcher = SimulatedMatcher(
            points, true_poses[name], cam,
            replace(matcher_spec, rng_seed=derive_seed(args.seed, name_key(name), 1)),
            image_id=name, mesh=mesh,
        )
        ransac_cfg = RansacConfig(
            rng_seed=derive_seed(args.seed, name_key(name))
        )
        result = refine(init_poses[name], mesh, cam, matcher, cfg, ransac_cfg)
        for iteration, matches in matcher.recorded:
            write_matches(
                matches,
                os.path.join(args.out, "matches", name, f"iter{iteration}.txt"),
            )
        if len(result.inliers):
            formats.write_corrs(
                os.path.join(args.out, "inliers", f"{name}.txt"),
                name, result.inliers,
            )
        expected[name] = result.pose
        accepted[name] = result.accepted
        err = pose_error(true_poses[name], result.pose)
        print(
            f"{name}: accepted={result.accepted} "
            f"final err {err.position_err:.2e} m / {err.rotation_err:.2e} deg"
        )

    formats.write_poses(
        os.path.join(args.out, "poses_refined_expected.txt"), expected
    )
    formats.write_json(
        os.path.join(args.out, "manifest.json"),
        {
            "command": "synth",
            "seed": args.seed,
            "scene_seed": args.scene_seed,
            "layout": args.layout,
            "images": args.images,
            "iterations": args.iterations,
            "sigma_px": args.sigma_px,
            "outlier_ratio": args.outlier_ratio,
            "detection_rate": args.detection_rate,
            "perturb_rot_deg": args.perturb_rot_deg,
            "perturb_trans_m": args.perturb_trans_m,
            "accepted": accepted,
        },
    )
    return 0


# ---------------------------------------------------------------------------
# sensitivity

def cmd_sensitivity(args) -> int:
    mesh, points, cam, true_pose = benchmark_scene(args.scene_seed)
    rot_levels = [float(x) for x in args.rot_levels.split(",")]
    trans_levels = [float(x) for x in args.trans_levels.split(",")]
    result = sensitivity_grid(
        mesh, points, true_pose, cam,
        rot_levels, trans_levels,
        trials=args.trials,
        matcher_spec=SimMatcherSpec(
            sigma_px=args.sigma_px, outlier_ratio=args.outlier_ratio
        ),
        refine_cfg=RefineConfig(iterations=args.iterations),
        base_seed=args.seed,
    )
    os.makedirs(args.out, exist_ok=True)
    with formats.atomic_write(os.path.join(args.out, "grid.csv")) as fh:
        fh.write(f"# seed={args.seed} scene_seed={args.scene_seed}\n")
        fh.write(grid_to_csv(result))
    for it in sorted(result.success_counts):
        with formats.atomic_write(
            os.path.join(args.out, f"heatmap_iter{it}.dat")
        ) as fh:
            fh.write(grid_to_heatmap(result, it) + "\n")
    final = max(result.success_counts)
    print(f"success rates after iteration {final} (rows=rot, cols=trans):")
    for i, rot in enumerate(result.rot_levels_deg):
        rates = " ".join(
            f"{result.success_counts[final][i, j] / result.trials:.2f}"
            for j in range(len(result.trans_levels_m))
        )
        print(f"  rot {rot:5.1f} deg: {rates}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="refpose",
        description="Camera pose refinement against a 3D mesh, with "
        "uncertainty estimation and localization accuracy metrics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("refine", help="batch-refine poses from match files")
    p.add_argument("--mesh", required=True, help="scene mesh (ASCII PLY)")
    p.add_argument("--cameras", required=True, help="camera file")
    p.add_argument("--poses", required=True, help="initial pose estimates")
    p.add_argument("--matches", required=True,
                   help="directory with <image>/iter<k>*.txt match files")
    p.add_argument("--out", required=True, help="output directory")
    _add_refine_params(p)
    p.add_argument("--parallel", type=int,
                   default=_env_int("REFPOSE_PARALLEL", 1),
                   help="images refined concurrently")
    p.add_argument("--no-checkpoints", action="store_true",
                   help="skip writing per-iteration depth/pose checkpoints")
    _add_common(p)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("eval", help="score estimated poses against references")
    p.add_argument("--ref", required=True, help="reference pose file")
    p.add_argument("--est", required=True, help="estimated pose file")
    p.add_argument("--out", required=True, help="output report JSON")
    p.add_argument("--table", help="also write the text table here")
    p.add_argument("--cameras", help="camera file (for reprojection metric)")
    p.add_argument("--inliers",
                   help="directory with reference inlier files <image>.txt")
    p.add_argument("--pose-thresholds", default="0.25,2:0.5,5:5,10",
                   help="colon-separated m,deg pairs")
    p.add_argument("--reproj-thresholds",
                   default=",".join(f"{t:g}" for t in
                                    DEFAULT_REPROJECTION_THRESHOLDS_PX),
                   help="comma-separated pixel thresholds")
    p.add_argument("--sampling-unc", action="append", metavar="RATIO=PATH",
                   help="sampling uncertainty file used as per-image "
                   "thresholds (repeatable)")
    p.add_argument("--extra-unc", action="append", metavar="LABEL=PATH",
                   help="first-order/monte-carlo threshold file; reported "
                   "outside the headline table (repeatable)")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("uncertainty", help="per-image pose uncertainty")
    p.add_argument("--poses", required=True, help="refined pose file")
    p.add_argument("--inliers", required=True,
                   help="directory with <image>.txt inlier files")
    p.add_argument("--cameras", required=True)
    p.add_argument("--method", required=True,
                   choices=["first-order", "monte-carlo", "sampling"])
    p.add_argument("--ratio", type=float, default=0.5,
                   help="sampling ratio (sampling method only)")
    p.add_argument("--samples", type=int, default=0,
                   help="override the method's default sample count")
    p.add_argument("--sigma-px", type=float, default=1.0)
    p.add_argument("--out", required=True, help="output uncertainty file")
    _add_common(p)
    p.set_defaults(func=cmd_uncertainty)

    p = sub.add_parser("synth", help="generate a synthetic fixture")
    p.add_argument("--out", required=True)
    p.add_argument("--images", type=int, default=6)
    p.add_argument("--layout", default="benchmark",
                   choices=["benchmark", "plane-grid", "box-courtyard",
                            "random-facade"])
    p.add_argument("--scene-seed", type=int, default=0)
    p.add_argument("--extent", type=float, default=20.0)
    p.add_argument("--triangles", type=int, default=200)
    p.add_argument("--density", type=float, default=0.15)
    p.add_argument("--sigma-px", type=float, default=1.0)
    p.add_argument("--outlier-ratio", type=float, default=0.0)
    p.add_argument("--detection-rate", type=float, default=1.0)
    p.add_argument("--perturb-rot-deg", type=float, default=5.0)
    p.add_argument("--perturb-trans-m", type=float, default=1.0)
    p.add_argument("--iterations", type=int, default=5)
    p.add_argument("--width", type=int, default=640)
    p.add_argument("--height", type=int, default=480)
    p.add_argument("--fx", type=float, default=500.0)
    p.add_argument("--fy", type=float, default=500.0)
    p.add_argument("--cx", type=float, default=320.0)
    p.add_argument("--cy", type=float, default=240.0)
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sensitivity", help="initialization-robustness sweep")
    p.add_argument("--out", required=True)
    p.add_argument("--scene-seed", type=int, default=0)
    p.add_argument("--rot-levels", default="0,5,10",
                   help="comma-separated rotation magnitudes (deg)")
    p.add_argument("--trans-levels", default="0,2.5,5",
                   help="comma-separated translation magnitudes (m)")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--iterations", type=int, default=5)
    p.add_argument("--sigma-px", type=float, default=1.0)
    p.add_argument("--outlier-ratio", type=float, default=0.2)
    _add_common(p)
    p.set_defaults(func=cmd_sensitivity)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
