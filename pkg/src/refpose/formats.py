"""Text and binary interchange formats.

All writers are atomic (temp file + rename) and keep full float precision
(17 significant digits), so every reader/writer pair round-trips exactly.

* pose files: ``poses-v1 convention=w2c`` header, then one
  ``<name> qw qx qy qz tx ty tz`` line per image. Records store the
  world-to-camera rotation and translation (the common SfM export
  convention); the in-memory :class:`~refpose.geometry.Pose` is
  camera-to-world, converted at this boundary.
* camera files: ``camera-v1 <id> PINHOLE_RT <w> <h> <fx> <fy> <cx> <cy>
  <k1> <k2> <p1> <p2>``, one line per camera. The id ``default`` applies
  to images without their own entry.
* meshes: ASCII PLY with optional uchar vertex RGB.
* depth checkpoints: PFM, grayscale float32, little-endian (scale -1.0),
  rows bottom-to-top per the format convention.
* 2D-3D correspondence files: ``corr-v1 <image_id>`` header, then
  ``u_x u_y p_x p_y p_z`` lines.
* uncertainty files: ``unc-v1 method=<m> [ratio=<k>] samples=<n> seed=<s>``
  header, then ``<name> <position_unc_m> <rotation_unc_deg>`` lines.
"""

from __future__ import annotations

import json
import os
from typing import Optional

import numpy as np

from .correspond import Corr2D3D
from .errors import ParseError
from .geometry import Camera, Pose
from .ioutil import atomic_write
from .render import DepthMap, TriMesh
from .uncertainty import UncertaintyEstimate

POSES_MAGIC = "poses-v1"
CAMERA_MAGIC = "camera-v1"
CORR_MAGIC = "corr-v1"
UNC_MAGIC = "unc-v1"

__all__ = [
    "PoseRecord", "atomic_write", "quat_from_rotation", "rotation_from_quat",
    "w2c_from_pose", "pose_from_w2c", "record_from_pose",
    "write_poses", "read_poses", "write_pose_records", "read_pose_records",
    "write_cameras", "read_cameras", "camera_for_image",
    "write_ply", "read_ply", "write_pfm", "read_pfm",
    "write_depth_checkpoint", "read_depth_checkpoint",
    "write_corrs", "read_corrs", "write_uncertainties", "read_uncertainties",
    "write_json",
]


def _g17(x: float) -> str:
    return f"{float(x):.17g}"


# ---------------------------------------------------------------------------
# quaternions

def quat_from_rotation(rot: np.ndarray) -> np.ndarray:
    """(qw, qx, qy, qz) with a canonical non-negative scalar part."""
    m = np.asarray(rot, dtype=float)
    t = np.trace(m)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s,
             (m[1, 0] - m[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(m)))
        if i == 0:
            s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
            q = np.array(
                [(m[2, 1] - m[1, 2]) / s, 0.25 * s,
                 (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
            )
        elif i == 1:
            s = np.sqrt(1.0 - m[0, 0] + m[1, 1] - m[2, 2]) * 2.0
            q = np.array(
                [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s,
                 0.25 * s, (m[1, 2] + m[2, 1]) / s]
            )
        else:
            s = np.sqrt(1.0 - m[0, 0] - m[1, 1] + m[2, 2]) * 2.0
            q = np.array(
                [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s,
                 (m[1, 2] + m[2, 1]) / s, 0.25 * s]
            )
    q /= np.linalg.norm(q)
    if q[0] < 0 or (q[0] == 0 and q[np.argmax(np.abs(q))] < 0):
        q = -q
    return q


def rotation_from_quat(q: np.ndarray) -> np.ndarray:
    qw, qx, qy, qz = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qz * qw), 2 * (qx * qz + qy * qw)],
            [2 * (qx * qy + qz * qw), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qx * qw)],
            [2 * (qx * qz - qy * qw), 2 * (qy * qz + qx * qw), 1 - 2 * (qx * qx + qy * qy)],
        ]
    )


def w2c_from_pose(pose: Pose):
    """World-to-camera (R, t) of a camera-to-world pose; involutive."""
    rot = pose.rotation.T
    return rot, -rot @ pose.center


def pose_from_w2c(rot: np.ndarray, t: np.ndarray) -> Pose:
    rot = np.asarray(rot, dtype=float)
    return Pose(rot.T, -rot.T @ np.asarray(t, dtype=float))


# ---------------------------------------------------------------------------
# pose files

class PoseRecord:
    """One pose-file line: image name, unit w2c quaternion, translation.

    Keeping the quaternion verbatim (instead of converting through a
    rotation matrix and back) is what makes read/write round trips byte
    identical.
    """

    __slots__ = ("name", "quat", "translation")

    def __init__(self, name: str, quat, translation):
        quat = np.asarray(quat, dtype=float)
        translation = np.asarray(translation, dtype=float)
        if quat.shape != (4,) or translation.shape != (3,):
            raise ValueError("quaternion must be length 4, translation length 3")
        if abs(np.linalg.norm(quat) - 1.0) > 1e-6:
            raise ValueError(f"quaternion norm {np.linalg.norm(quat):.8f} is not 1")
        self.name = name
        self.quat = quat
        self.translation = translation

    def pose(self) -> Pose:
        """Camera-to-world pose of this record."""
        return pose_from_w2c(rotation_from_quat(self.quat), self.translation)


def record_from_pose(name: str, pose: Pose) -> PoseRecord:
    rot, t = w2c_from_pose(pose)
    return PoseRecord(name, quat_from_rotation(rot), t)


def write_pose_records(path, records) -> None:
    with atomic_write(path) as fh:
        fh.write(f"{POSES_MAGIC} convention=w2c\n")
        for rec in records:
            fields = [rec.name] + [_g17(v) for v in (*rec.quat, *rec.translation)]
            fh.write(" ".join(fields) + "\n")


def read_pose_records(path) -> list:
    path = os.fspath(path)
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith(POSES_MAGIC):
        raise ParseError(f"expected '{POSES_MAGIC}' header", line=1, path=path)
    header = lines[0].split()
    if "convention=w2c" not in header[1:]:
        raise ParseError("unknown pose convention", line=1, path=path)
    records = []
    for lineno, raw in enumerate(lines[1:], start=2):
        text = raw.strip()
        if not text:
            continue
        fields = text.split()
        if len(fields) != 8:
            raise ParseError(
                f"expected '<name> qw qx qy qz tx ty tz', got {len(fields)} fields",
                line=lineno, path=path,
            )
        try:
            vals = [float(f) for f in fields[1:]]
        except ValueError:
            raise ParseError("non-numeric pose field", line=lineno, path=path)
        try:
            records.append(PoseRecord(fields[0], vals[:4], vals[4:]))
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno, path=path)
    return records


def write_poses(path, poses: dict) -> None:
    write_pose_records(
        path, [record_from_pose(name, pose) for name, pose in poses.items()]
    )


def read_poses(path) -> dict:
    return {rec.name: rec.pose() for rec in read_pose_records(path)}


# ---------------------------------------------------------------------------
# camera files

def write_cameras(path, cameras: dict) -> None:
    with atomic_write(path) as fh:
        for cam_id, cam in cameras.items():
            fields = [
                CAMERA_MAGIC, cam_id, "PINHOLE_RT",
                str(cam.width), str(cam.height),
                _g17(cam.fx), _g17(cam.fy), _g17(cam.cx), _g17(cam.cy),
            ] + [_g17(v) for v in cam.distortion]
            fh.write(" ".join(fields) + "\n")


def read_cameras(path) -> dict:
    path = os.fspath(path)
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    cameras: dict = {}
    for lineno, raw in enumerate(lines, start=1):
        text = raw.strip()
        if not text:
            continue
        fields = text.split()
        if len(fields) != 13 or fields[0] != CAMERA_MAGIC or fields[2] != "PINHOLE_RT":
            raise ParseError(
                f"expected '{CAMERA_MAGIC} <id> PINHOLE_RT <w> <h> <fx> <fy> "
                "<cx> <cy> <k1> <k2> <p1> <p2>'",
                line=lineno, path=path,
            )
        try:
            w, h = int(fields[3]), int(fields[4])
            vals = [float(f) for f in fields[5:]]
        except ValueError:
            raise ParseError("non-numeric camera field", line=lineno, path=path)
        cameras[fields[1]] = Camera(
            fx=vals[0], fy=vals[1], cx=vals[2], cy=vals[3],
            width=w, height=h, distortion=np.array(vals[4:]),
        )
    if not cameras:
        raise ParseError("no camera entries", line=1, path=path)
    return cameras


def camera_for_image(cameras: dict, name: str) -> Camera:
    if name in cameras:
        return cameras[name]
    if "default" in cameras:
        return cameras["default"]
    raise KeyError(f"no camera entry for image {name!r} and no 'default'")


# ---------------------------------------------------------------------------
# PLY meshes (ASCII)

def write_ply(mesh: TriMesh, path) -> None:
    has_color = mesh.colors is not None
    with atomic_write(path) as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(mesh.vertices)}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        if has_color:
            fh.write(
                "property uchar red\nproperty uchar green\nproperty uchar blue\n"
            )
        fh.write(f"element face {len(mesh.faces)}\n")
        fh.write("property list uchar int vertex_indices\n")
        fh.write("end_header\n")
        for i, v in enumerate(mesh.vertices):
            line = f"{_g17(v[0])} {_g17(v[1])} {_g17(v[2])}"
            if has_color:
                c = mesh.colors[i]
                line += f" {c[0]} {c[1]} {c[2]}"
            fh.write(line + "\n")
        for f in mesh.faces:
            fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")


def read_ply(path) -> TriMesh:
    path = os.fspath(path)
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError("not a PLY file", line=1, path=path)

    n_vertex = n_face = 0
    vertex_props: list[str] = []
    current = None
    body_start = None
    for lineno, raw in enumerate(lines[1:], start=2):
        text = raw.strip()
        if text == "end_header":
            body_start = lineno  # 1-based line *after* this is lines[lineno]
            break
        fields = text.split()
        if not fields or fields[0] == "comment":
            continue
        if fields[0] == "format":
            if fields[1] != "ascii":
                raise ParseError("only ASCII PLY supported", line=lineno, path=path)
        elif fields[0] == "element":
            current = fields[1]
            if current == "vertex":
                n_vertex = int(fields[2])
            elif current == "face":
                n_face = int(fields[2])
            else:
                raise ParseError(
                    f"unsupported element {current!r}", line=lineno, path=path
                )
        elif fields[0] == "property" and current == "vertex":
            vertex_props.append(fields[-1])
    if body_start is None:
        raise ParseError("missing end_header", line=len(lines), path=path)
    if vertex_props[:3] != ["x", "y", "z"]:
        raise ParseError(
            "vertex properties must start with x y z", line=1, path=path
        )
    has_color = vertex_props[3:6] == ["red", "green", "blue"]

    rows = lines[body_start:]
    if len(rows) < n_vertex + n_face:
        raise ParseError(
            f"expected {n_vertex + n_face} body lines, found {len(rows)}",
            line=len(lines), path=path,
        )
    verts = np.empty((n_vertex, 3))
    colors = np.empty((n_vertex, 3), dtype=np.uint8) if has_color else None
    for i in range(n_vertex):
        fields = rows[i].split()
        try:
            verts[i] = [float(f) for f in fields[:3]]
            if has_color:
                colors[i] = [int(f) for f in fields[3:6]]
        except (ValueError, IndexError):
            raise ParseError("bad vertex line", line=body_start + 1 + i, path=path)
    faces = np.empty((n_face, 3), dtype=np.int64)
    for i in range(n_face):
        fields = rows[n_vertex + i].split()
        if not fields or fields[0] != "3":
            raise ParseError(
                "only triangle faces supported",
                line=body_start + 1 + n_vertex + i, path=path,
            )
        try:
            faces[i] = [int(f) for f in fields[1:4]]
        except (ValueError, IndexError):
            raise ParseError(
                "bad face line", line=body_start + 1 + n_vertex + i, path=path
            )
    return TriMesh(verts, faces, colors)


# ---------------------------------------------------------------------------
# PFM depth checkpoints

def write_pfm(array: np.ndarray, path) -> None:
    array = np.asarray(array, dtype=np.float32)
    if array.ndim != 2:
        raise ValueError("PFM writer expects a 2D grayscale array")
    with atomic_write(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{array.shape[1]} {array.shape[0]}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(np.flipud(array).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    path = os.fspath(path)
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"Pf":
            raise ParseError("not a grayscale PFM file", line=1, path=path)
        dims = fh.readline().split()
        if len(dims) != 2:
            raise ParseError("bad PFM dimensions", line=2, path=path)
        width, height = int(dims[0]), int(dims[1])
        scale = float(fh.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(width * height * 4), dtype=dtype)
    if data.size != width * height:
        raise ParseError("truncated PFM payload", line=4, path=path)
    return np.flipud(data.reshape(height, width)).astype(np.float32)


def write_depth_checkpoint(dm: DepthMap, path) -> None:
    write_pfm(dm.depth, path)


def read_depth_checkpoint(path) -> DepthMap:
    data = read_pfm(path).astype(np.float64)
    return DepthMap(data.shape[1], data.shape[0], data)


# ---------------------------------------------------------------------------
# 2D-3D correspondence files

def write_corrs(path, image_id: str, corrs: Corr2D3D) -> None:
    with atomic_write(path) as fh:
        fh.write(f"{CORR_MAGIC} {image_id}\n")
        for (ux, uy), (px, py, pz) in zip(corrs.pixels, corrs.points):
            fh.write(" ".join(_g17(v) for v in (ux, uy, px, py, pz)) + "\n")


def read_corrs(path):
    path = os.fspath(path)
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith(CORR_MAGIC):
        raise ParseError(f"expected '{CORR_MAGIC}' header", line=1, path=path)
    image_id = lines[0].split()[1] if len(lines[0].split()) > 1 else ""
    pixels, points = [], []
    for lineno, raw in enumerate(lines[1:], start=2):
        text = raw.strip()
        if not text:
            continue
        fields = text.split()
        if len(fields) != 5:
            raise ParseError(
                f"expected 5 fields, got {len(fields)}", line=lineno, path=path
            )
        try:
            vals = [float(f) for f in fields]
        except ValueError:
            raise ParseError("non-numeric correspondence field", line=lineno, path=path)
        pixels.append(vals[:2])
        points.append(vals[2:])
    return image_id, Corr2D3D(np.array(pixels).reshape(-1, 2),
                              np.array(points).reshape(-1, 3))


# ---------------------------------------------------------------------------
# uncertainty files

def write_uncertainties(path, estimates: dict, method: str,
                        num_samples: int, seed: int,
                        ratio: Optional[float] = None) -> None:
    with atomic_write(path) as fh:
        header = f"{UNC_MAGIC} method={method}"
        if ratio is not None:
            header += f" ratio={ratio:g}"
        header += f" samples={num_samples} seed={seed}"
        fh.write(header + "\n")
        for name, est in estimates.items():
            fh.write(f"{name} {_g17(est.position_unc)} {_g17(est.rotation_unc)}\n")


def read_uncertainties(path):
    """Returns (meta dict, {image: UncertaintyEstimate})."""
    path = os.fspath(path)
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith(UNC_MAGIC):
        raise ParseError(f"expected '{UNC_MAGIC}' header", line=1, path=path)
    meta = {}
    for token in lines[0].split()[1:]:
        key, _, value = token.partition("=")
        meta[key] = value
    method = meta.get("method", "unknown")
    ratio = float(meta["ratio"]) if "ratio" in meta else None
    samples = int(meta.get("samples", 0))
    out = {}
    for lineno, raw in enumerate(lines[1:], start=2):
        text = raw.strip()
        if not text:
            continue
        fields = text.split()
        if len(fields) != 3:
            raise ParseError(
                f"expected '<name> <pos> <rot>', got {len(fields)} fields",
                line=lineno, path=path,
            )
        try:
            pos, rot = float(fields[1]), float(fields[2])
        except ValueError:
            raise ParseError("non-numeric uncertainty field", line=lineno, path=path)
        out[fields[0]] = UncertaintyEstimate(
            position_unc=pos, rotation_unc=rot, method=method,
            num_samples=samples, ratio=ratio,
        )
    return meta, out


# ---------------------------------------------------------------------------
# JSON reports

def write_json(path, doc: dict) -> None:
    """Stable key order (insertion order), trailing newline."""
    with atomic_write(path) as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
