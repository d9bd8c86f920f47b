"""Localization accuracy scoring.

Three complementary measures over a set of images:

* pose error against fixed (position, rotation) thresholds shared by the
  whole dataset;
* pose error against per-image thresholds taken from uncertainty
  estimates of the reference poses;
* maximum reprojection difference: the largest pixel displacement of any
  reference inlier 3D point between the reference and estimated poses,
  scored against pixel thresholds. Being an image-space measure it adapts
  to scene depth implicitly.

All thresholds are strict (error must be < threshold to count).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyInput, LengthMismatch
from .geometry import Camera, Pose, PoseError, project_many
from .uncertainty import UncertaintyEstimate

DEFAULT_POSE_THRESHOLDS = ((0.25, 2.0), (0.5, 5.0), (5.0, 10.0))
DEFAULT_REPROJECTION_THRESHOLDS_PX = (10.0, 20.0, 50.0, 100.0)


@dataclass(frozen=True)
class ThresholdSet:
    """Increasing (position m, rotation deg) threshold pairs."""

    pairs: tuple = DEFAULT_POSE_THRESHOLDS

    def __post_init__(self):
        pairs = tuple((float(c), float(r)) for c, r in self.pairs)
        if not pairs:
            raise ValueError("at least one threshold pair required")
        for (c0, r0), (c1, r1) in zip(pairs, pairs[1:]):
            if c1 < c0 or r1 < r0:
                raise ValueError("thresholds must be non-decreasing componentwise")
        object.__setattr__(self, "pairs", pairs)

    def labels(self) -> list[str]:
        return [f"{c:g}m,{r:g}deg" for c, r in self.pairs]


def fixed_threshold_accuracy(
    errors: Sequence[PoseError], thresholds: ThresholdSet = ThresholdSet()
) -> list[float]:
    """Percentage of images strictly below each (position, rotation) pair."""
    if len(errors) == 0:
        raise EmptyInput("no pose errors to aggregate")
    out = []
    for c_j, r_j in thresholds.pairs:
        hits = sum(1 for e in errors if e.position_err < c_j and e.rotation_err < r_j)
        out.append(100.0 * hits / len(errors))
    return out


def per_image_threshold_accuracy(
    errors: Sequence[PoseError], per_image: Sequence[UncertaintyEstimate]
) -> float:
    """Percentage of images whose error is inside their own uncertainty."""
    if len(errors) != len(per_image):
        raise LengthMismatch(
            f"{len(errors)} errors vs {len(per_image)} per-image thresholds"
        )
    if len(errors) == 0:
        raise EmptyInput("no pose errors to aggregate")
    hits = sum(
        1
        for e, u in zip(errors, per_image)
        if e.position_err < u.position_unc and e.rotation_err < u.rotation_unc
    )
    return 100.0 * hits / len(errors)


def max_reprojection_diff(
    ref: Pose, est: Pose, points, cam: Camera
) -> float:
    """Largest pixel displacement of any 3D point between the two poses.

    Returns +inf when a point is behind either camera, which fails every
    threshold downstream. Symmetric in (ref, est).
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) == 0:
        raise EmptyInput("no 3D points for reprojection difference")
    px_ref, front_ref = project_many(points, ref, cam)
    px_est, front_est = project_many(points, est, cam)
    if not (front_ref.all() and front_est.all()):
        return float("inf")
    return float(np.max(np.linalg.norm(px_ref - px_est, axis=1)))


def reprojection_accuracy(
    r_values: Sequence[float],
    thresholds: Sequence[float] = DEFAULT_REPROJECTION_THRESHOLDS_PX,
) -> list[float]:
    """Percentage of images with max reprojection difference below each px bound."""
    r_values = list(r_values)
    if not r_values:
        raise EmptyInput("no reprojection differences to aggregate")
    return [
        100.0 * sum(1 for r in r_values if r < t) / len(r_values) for t in thresholds
    ]


@dataclass
class EvalReport:
    """Per-image errors plus aggregate accuracies for every metric."""

    image_names: list[str]
    pose_errors: list[PoseError]
    reproj_diffs: Optional[list[float]]
    pose_thresholds: ThresholdSet
    pose_accuracy: list[float]
    sampling_accuracy: dict = field(default_factory=dict)  # ratio -> percentage
    reproj_thresholds: tuple = DEFAULT_REPROJECTION_THRESHOLDS_PX
    reproj_accuracy: Optional[list[float]] = None
    # first-order / monte-carlo based accuracies; computed on request but
    # kept out of the headline table since they under-estimate accuracy
    non_headline_accuracy: dict = field(default_factory=dict)
    # label -> {image: UncertaintyEstimate} of the per-image thresholds used
    per_image_thresholds: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        per_image = {}
        for i, name in enumerate(self.image_names):
            entry = {
                "position_err_m": self.pose_errors[i].position_err,
                "rotation_err_deg": self.pose_errors[i].rotation_err,
            }
            if self.reproj_diffs is not None:
                r = self.reproj_diffs[i]
                entry["max_reproj_diff_px"] = r if np.isfinite(r) else "inf"
            for label, per_name in self.per_image_thresholds.items():
                est = per_name.get(name)
                if est is not None:
                    entry[f"threshold_{label}"] = [
                        est.position_unc, est.rotation_unc,
                    ]
            per_image[name] = entry
        doc = {
            "metadata": dict(self.metadata),
            "thresholds": {
                "pose": [list(p) for p in self.pose_thresholds.pairs],
                "reprojection_px": list(self.reproj_thresholds),
                "comparison": "strict (<)",
            },
            "accuracy": {
                "pose_error_pct": self.pose_accuracy,
            },
            "per_image": per_image,
        }
        if self.sampling_accuracy:
            doc["accuracy"]["sampling_pct"] = {
                f"{ratio:g}": pct for ratio, pct in sorted(
                    self.sampling_accuracy.items(), reverse=True
                )
            }
        if self.reproj_accuracy is not None:
            doc["accuracy"]["reprojection_diff_pct"] = self.reproj_accuracy
        if self.non_headline_accuracy:
            doc["accuracy"]["non_headline_pct"] = {
                "note": "per-image first-order/monte-carlo thresholds "
                "under-estimate accuracy; excluded from the headline table",
                **self.non_headline_accuracy,
            }
        return doc

    def to_table(self, label: str = "estimates") -> str:
        """Fixed-width text table, one row per estimate set."""

        def fmt(values):
            return "/".join(f"{v:.1f}" for v in values)

        headers = ["", "Pose Error"]
        sub = ["", "/".join(self.pose_thresholds.labels())]
        cells = [label, fmt(self.pose_accuracy)]
        if self.sampling_accuracy:
            ratios = sorted(self.sampling_accuracy, reverse=True)
            headers.append("Sampling")
            sub.append("(" + "/".join(f"{r:.0%}" for r in ratios) + ")")
            cells.append(fmt(self.sampling_accuracy[r] for r in ratios))
        if self.reproj_accuracy is not None:
            headers.append("Reprojection Diff.")
            sub.append(
                "(" + "/".join(f"{t:g}" for t in self.reproj_thresholds) + " px)"
            )
            cells.append(fmt(self.reproj_accuracy))
        widths = [
            max(len(h), len(s), len(c)) for h, s, c in zip(headers, sub, cells)
        ]
        lines = []
        for row in (headers, sub):
            lines.append(
                "  ".join(col.ljust(w) for col, w in zip(row, widths)).rstrip()
            )
        lines.append("-" * len(lines[0]))
        lines.append(
            "  ".join(col.ljust(w) for col, w in zip(cells, widths)).rstrip()
        )
        return "\n".join(lines) + "\n"
