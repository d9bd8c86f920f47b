"""Rigid camera poses, the camera model, and the pose-difference metric.

Conventions used throughout the toolkit:

* A :class:`Pose` maps camera-frame coordinates to model-frame coordinates,
  ``p_model = R @ p_cam + c``, so ``c`` is the camera center expressed in the
  model frame (camera-to-world).
* Tangent-space increments are 6-vectors ``(omega, t)``: ``omega`` is an
  axis-angle rotation in radians, ``t`` a translation in meters. They act on
  the right, ``T * (exp(omega), t)``, so a pure ``t`` moves the center by
  exactly ``|t|`` and a pure ``omega`` rotates by exactly ``|omega|``.
* Angles are radians internally; reported errors are degrees.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera

EPS_Z = 1e-6  # minimum camera-frame depth (m) for a projectable point


def skew(v: np.ndarray) -> np.ndarray:
    """3x3 cross-product matrix of a 3-vector."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotation_from_axis_angle(omega) -> np.ndarray:
    """Rodrigues formula; safe at the zero-angle limit."""
    omega = np.asarray(omega, dtype=float)
    theta = np.linalg.norm(omega)
    if theta < 1e-12:
        w = skew(omega)
        return np.eye(3) + w + 0.5 * (w @ w)
    axis = omega / theta
    w = skew(axis)
    return np.eye(3) + np.sin(theta) * w + (1.0 - np.cos(theta)) * (w @ w)


def axis_angle_from_rotation(rot: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rotation_from_axis_angle`; returns ``theta * axis``."""
    trace = np.clip((np.trace(rot) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(trace)
    if theta < 1e-10:
        # First-order: rot ~ I + skew(omega)
        return 0.5 * np.array(
            [rot[2, 1] - rot[1, 2], rot[0, 2] - rot[2, 0], rot[1, 0] - rot[0, 1]]
        )
    if np.pi - theta < 1e-6:
        # Near pi the antisymmetric part vanishes; recover the axis from
        # the symmetric part rot ~ 2*axis*axis^T - I.
        a = np.sqrt(np.clip((np.diag(rot) + 1.0) / 2.0, 0.0, None))
        k = int(np.argmax(a))
        axis = np.empty(3)
        axis[k] = a[k]
        for j in range(3):
            if j != k:
                axis[j] = (rot[k, j] + rot[j, k]) / (4.0 * a[k])
        axis /= np.linalg.norm(axis)
        return theta * axis
    v = np.array(
        [rot[2, 1] - rot[1, 2], rot[0, 2] - rot[2, 0], rot[1, 0] - rot[0, 1]]
    )
    return theta / (2.0 * np.sin(theta)) * v


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Pose:
    """Camera-to-model rigid transform ``p_model = rotation @ p_cam + center``."""

    rotation: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        rot = _frozen(self.rotation)
        c = _frozen(self.center)
        if rot.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {rot.shape}")
        if c.shape != (3,):
            raise ValueError(f"center must be a 3-vector, got {c.shape}")
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-9):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > 1e-9:
            raise ValueError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "center", c)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_matrix(mat: np.ndarray) -> "Pose":
        """Build from a 4x4 homogeneous camera-to-model matrix."""
        mat = np.asarray(mat, dtype=float)
        return Pose(mat[:3, :3], mat[:3, 3])

    def matrix(self) -> np.ndarray:
        mat = np.eye(4)
        mat[:3, :3] = self.rotation
        mat[:3, 3] = self.center
        return mat

    def inverse(self) -> "Pose":
        return Pose(self.rotation.T, -self.rotation.T @ self.center)

    def compose(self, other: "Pose") -> "Pose":
        """``self @ other``: apply ``other`` first, then ``self``."""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.center + self.center,
        )

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Camera-frame points (N,3) or (3,) to model frame."""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.center

    def transform_inverse(self, points: np.ndarray) -> np.ndarray:
        """Model-frame points (N,3) or (3,) to camera frame."""
        points = np.asarray(points, dtype=float)
        return (points - self.center) @ self.rotation


def perturb(pose: Pose, rot_axis_angle, trans) -> Pose:
    """Right-multiplicative tangent update of a pose.

    The rotation is composed on the right (``R @ exp(omega)``) and the
    translation is applied in the camera frame, so the center moves by
    exactly ``|trans|`` meters and the orientation by exactly
    ``|rot_axis_angle|`` radians.
    """
    rot_axis_angle = np.asarray(rot_axis_angle, dtype=float)
    trans = np.asarray(trans, dtype=float)
    return Pose(
        pose.rotation @ rotation_from_axis_angle(rot_axis_angle),
        pose.center + pose.rotation @ trans,
    )


@dataclass(frozen=True)
class PoseError:
    """Position (m) and rotation (deg) difference between two poses."""

    position_err: float
    rotation_err: float

    def within(self, pos_m: float, rot_deg: float) -> bool:
        """Strictly below both bounds."""
        return self.position_err < pos_m and self.rotation_err < rot_deg


def pose_error(ref: Pose, est: Pose) -> PoseError:
    """Center distance and geodesic rotation angle between two poses.

    The angle is arccos((trace(R_ref^-1 R_est) - 1) / 2); it is evaluated
    as atan2(|antisymmetric part|, (trace - 1) / 2), which is the same
    angle but keeps precision near 0 and 180 degrees and needs no
    clamping against trace drift.
    """
    pos = float(np.linalg.norm(ref.center - est.center))
    q = ref.rotation.T @ est.rotation
    sin_vec = 0.5 * np.array(
        [q[2, 1] - q[1, 2], q[0, 2] - q[2, 0], q[1, 0] - q[0, 1]]
    )
    cos_term = (np.trace(q) - 1.0) / 2.0
    ang = np.degrees(np.arctan2(np.linalg.norm(sin_vec), cos_term))
    return PoseError(pos, float(ang))


@dataclass(frozen=True)
class Camera:
    """Pinhole camera with 4-coefficient radial-tangential distortion."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    distortion: np.ndarray = field(default_factory=lambda: np.zeros(4))

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        d = np.zeros(4)
        given = np.asarray(self.distortion, dtype=float).ravel()
        if given.size > 4:
            raise ValueError("at most 4 distortion coefficients (k1 k2 p1 p2)")
        d[: given.size] = given
        object.__setattr__(self, "distortion", _frozen(d))

    @property
    def has_distortion(self) -> bool:
        return bool(np.any(self.distortion != 0.0))

    def k_matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def distort(self, xy: np.ndarray) -> np.ndarray:
        """Apply distortion to normalized coordinates, (N,2) or (2,)."""
        xy = np.asarray(xy, dtype=float)
        x, y = xy[..., 0], xy[..., 1]
        k1, k2, p1, p2 = self.distortion
        r2 = x * x + y * y
        radial = 1.0 + k1 * r2 + k2 * r2 * r2
        xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
        yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
        return np.stack([xd, yd], axis=-1)

    def undistort(self, xy: np.ndarray, iterations: int = 10, tol: float = 1e-10) -> np.ndarray:
        """Invert :meth:`distort` by fixed-point iteration on normalized coords."""
        xy = np.asarray(xy, dtype=float)
        if not self.has_distortion:
            return xy.copy()
        x_d, y_d = xy[..., 0], xy[..., 1]
        k1, k2, p1, p2 = self.distortion
        x, y = x_d.copy(), y_d.copy()
        for _ in range(iterations):
            r2 = x * x + y * y
            radial = 1.0 + k1 * r2 + k2 * r2 * r2
            x_new = (x_d - (2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x))) / radial
            y_new = (y_d - (p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y)) / radial
            delta = max(np.max(np.abs(x_new - x)), np.max(np.abs(y_new - y)))
            x, y = x_new, y_new
            if delta < tol:
                break
        return np.stack([x, y], axis=-1)

    def pixel_from_normalized(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        return np.stack(
            [self.fx * xy[..., 0] + self.cx, self.fy * xy[..., 1] + self.cy], axis=-1
        )

    def normalized_from_pixel(self, uv: np.ndarray) -> np.ndarray:
        uv = np.asarray(uv, dtype=float)
        return np.stack(
            [(uv[..., 0] - self.cx) / self.fx, (uv[..., 1] - self.cy) / self.fy], axis=-1
        )

    def contains(self, uv: np.ndarray) -> np.ndarray:
        """True where pixel coordinates fall inside [0, w) x [0, h)."""
        uv = np.asarray(uv, dtype=float)
        u, v = uv[..., 0], uv[..., 1]
        return (u >= 0) & (u < self.width) & (v >= 0) & (v < self.height)


def project(point, pose: Pose, cam: Camera, eps_z: float = EPS_Z) -> np.ndarray:
    """Project a model-frame 3D point to a (distorted) pixel.

    Raises :class:`BehindCamera` when the camera-frame depth is <= ``eps_z``.
    The result may lie outside the image bounds; callers filter.
    """
    p_cam = pose.transform_inverse(np.asarray(point, dtype=float))
    z = p_cam[2]
    if z <= eps_z:
        raise BehindCamera(f"point depth {z:.3g} m is not in front of the camera")
    xy = p_cam[:2] / z
    return cam.pixel_from_normalized(cam.distort(xy))


def project_many(points, pose: Pose, cam: Camera, eps_z: float = EPS_Z):
    """Vectorized projection of (N,3) model-frame points.

    Returns ``(pixels, in_front)``; rows of ``pixels`` where ``in_front``
    is false are NaN instead of raising.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    p_cam = pose.transform_inverse(points)
    z = p_cam[:, 2]
    in_front = z > eps_z
    xy = np.full((len(points), 2), np.nan)
    zs = np.where(in_front, z, 1.0)
    xy[in_front] = (p_cam[:, :2] / zs[:, None])[in_front]
    pixels = np.full((len(points), 2), np.nan)
    pixels[in_front] = cam.pixel_from_normalized(cam.distort(xy[in_front]))
    return pixels, in_front


def unproject(uv, depth: float, pose: Pose, cam: Camera) -> np.ndarray:
    """Lift a pixel with known camera-frame z-depth to a model-frame point."""
    xy = cam.undistort(cam.normalized_from_pixel(np.asarray(uv, dtype=float)))
    p_cam = np.array([xy[0] * depth, xy[1] * depth, depth])
    return pose.transform(p_cam)


def bearing_vectors(uv: np.ndarray, cam: Camera) -> np.ndarray:
    """Unit camera-frame rays for (N,2) pixels, after undistortion."""
    xy = cam.undistort(cam.normalized_from_pixel(np.asarray(uv, dtype=float)))
    rays = np.concatenate([xy, np.ones(xy.shape[:-1] + (1,))], axis=-1)
    return rays / np.linalg.norm(rays, axis=-1, keepdims=True)
