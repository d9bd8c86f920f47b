"""Software z-buffer rasterizer for triangle meshes.

Depth values are camera-frame z (not ray length), so lifting a pixel back
to 3D is a single unprojection. Triangles are rasterized in undistorted
pinhole coordinates; each output pixel is sampled at the undistorted
position of its own center, which makes the rendered depth exact through
the full camera model instead of a warped approximation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import Camera, Pose

RENDER_NEAR = 1e-4  # near-plane clip depth (m)
_BBOX_MARGIN_PX = 3  # candidate-pixel margin when distortion warps the grid


@dataclass(frozen=True)
class TriMesh:
    """Indexed triangle mesh with optional per-vertex RGB (uint8)."""

    vertices: np.ndarray
    faces: np.ndarray
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("face index out of range")
        if len(f) and np.any(
            (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
        ):
            raise ValueError("degenerate face with repeated vertex index")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        if self.colors is not None:
            c = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
            if len(c) != len(v):
                raise ValueError("colors must match vertex count")
            object.__setattr__(self, "colors", c)

    @property
    def num_faces(self) -> int:
        return len(self.faces)


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel camera-frame z-depth; uncovered pixels hold +inf."""

    width: int
    height: int
    depth: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=np.float64)
        if d.shape != (self.height, self.width):
            raise ValueError("depth grid shape does not match width/height")
        finite = np.isfinite(d)
        if np.any(d[finite] <= 0.0):
            raise ValueError("valid depth values must be positive")
        d = d.copy()
        d.setflags(write=False)
        object.__setattr__(self, "depth", d)

    @property
    def valid_mask(self) -> np.ndarray:
        return np.isfinite(self.depth)

    def value_at(self, uv) -> Optional[float]:
        """Nearest-pixel depth lookup; None when out of bounds or uncovered."""
        u, v = float(uv[0]), float(uv[1])
        i, j = int(round(u)), int(round(v))
        if not (0 <= i < self.width and 0 <= j < self.height):
            return None
        d = self.depth[j, i]
        return float(d) if np.isfinite(d) else None


def depth_at(dm: DepthMap, uv) -> Optional[float]:
    return dm.value_at(uv)


def _clip_near(tri: np.ndarray, eps: float) -> list[np.ndarray]:
    """Clip one camera-frame triangle against the plane z = eps."""
    inside = tri[:, 2] > eps
    n_in = int(inside.sum())
    if n_in == 3:
        return [tri]
    if n_in == 0:
        return []
    poly = []
    for k in range(3):
        a, b = tri[k], tri[(k + 1) % 3]
        if inside[k]:
            poly.append(a)
        if inside[k] != inside[(k + 1) % 3]:
            t = (eps - a[2]) / (b[2] - a[2])
            poly.append(a + t * (b - a))
    return [
        np.array([poly[0], poly[k], poly[k + 1]]) for k in range(1, len(poly) - 1)
    ]


_GRID_CACHE: dict[tuple, np.ndarray] = {}
_GRID_CACHE_MAX = 8


def _undistorted_grid(cam: Camera) -> np.ndarray:
    """(H, W, 2) undistorted pinhole coordinates of every pixel center.

    Cached per camera; the iterative undistortion over the full grid is
    the expensive part of rendering with a distorted model.
    """
    key = (cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height) + tuple(
        cam.distortion
    )
    grid = _GRID_CACHE.get(key)
    if grid is None:
        ii, jj = np.meshgrid(np.arange(cam.width), np.arange(cam.height))
        uv = np.stack([ii, jj], axis=-1).astype(float)
        xy = cam.undistort(cam.normalized_from_pixel(uv.reshape(-1, 2)))
        grid = cam.pixel_from_normalized(xy).reshape(cam.height, cam.width, 2)
        grid.setflags(write=False)
        if len(_GRID_CACHE) >= _GRID_CACHE_MAX:
            _GRID_CACHE.pop(next(iter(_GRID_CACHE)))
        _GRID_CACHE[key] = grid
    return grid


def _candidate_window(cam: Camera, lo: np.ndarray, hi: np.ndarray):
    """Output-pixel index window whose samples may fall in an undistorted bbox."""
    if not cam.has_distortion:
        x0 = int(np.ceil(lo[0]))
        x1 = int(np.floor(hi[0]))
        y0 = int(np.ceil(lo[1]))
        y1 = int(np.floor(hi[1]))
    else:
        xs = np.array([lo[0], 0.5 * (lo[0] + hi[0]), hi[0]])
        ys = np.array([lo[1], 0.5 * (lo[1] + hi[1]), hi[1]])
        gx, gy = np.meshgrid(xs, ys)
        border = np.stack([gx.ravel(), gy.ravel()], axis=-1)
        mapped = cam.pixel_from_normalized(
            cam.distort(cam.normalized_from_pixel(border))
        )
        x0 = int(np.floor(mapped[:, 0].min())) - _BBOX_MARGIN_PX
        x1 = int(np.ceil(mapped[:, 0].max())) + _BBOX_MARGIN_PX
        y0 = int(np.floor(mapped[:, 1].min())) - _BBOX_MARGIN_PX
        y1 = int(np.ceil(mapped[:, 1].max())) + _BBOX_MARGIN_PX
    return (
        max(x0, 0),
        min(x1, cam.width - 1),
        max(y0, 0),
        min(y1, cam.height - 1),
    )


def _rasterize(mesh: TriMesh, pose: Pose, cam: Camera, face_colors=None):
    depth = np.full((cam.height, cam.width), np.inf)
    color = (
        np.zeros((cam.height, cam.width, 3), dtype=np.uint8)
        if face_colors is not None
        else None
    )
    if mesh.num_faces == 0:
        return depth, color

    v_cam = pose.transform_inverse(mesh.vertices)
    grid = _undistorted_grid(cam) if cam.has_distortion else None

    for fi, face in enumerate(mesh.faces):
        for tri in _clip_near(v_cam[face], RENDER_NEAR):
            z = tri[:, 2]
            px = tri[:, :2] / z[:, None]
            px[:, 0] = px[:, 0] * cam.fx + cam.cx
            px[:, 1] = px[:, 1] * cam.fy + cam.cy

            x0, x1, y0, y1 = _candidate_window(
                cam, px.min(axis=0), px.max(axis=0)
            )
            if x1 < x0 or y1 < y0:
                continue

            if grid is None:
                sx, sy = np.meshgrid(
                    np.arange(x0, x1 + 1, dtype=float),
                    np.arange(y0, y1 + 1, dtype=float),
                )
            else:
                window = grid[y0 : y1 + 1, x0 : x1 + 1]
                sx, sy = window[..., 0], window[..., 1]

            ax, ay = px[0]
            bx, by = px[1]
            cx_, cy_ = px[2]
            denom = (bx - ax) * (cy_ - ay) - (cx_ - ax) * (by - ay)
            if abs(denom) < 1e-14:
                continue
            lb = ((sx - ax) * (cy_ - ay) - (cx_ - ax) * (sy - ay)) / denom
            lc = ((bx - ax) * (sy - ay) - (sx - ax) * (by - ay)) / denom
            la = 1.0 - lb - lc
            inside = (la >= 0.0) & (lb >= 0.0) & (lc >= 0.0)
            if not inside.any():
                continue

            inv_z = la / z[0] + lb / z[1] + lc / z[2]
            tile = depth[y0 : y1 + 1, x0 : x1 + 1]
            with np.errstate(divide="ignore"):
                z_px = np.where(inside & (inv_z > 0.0), 1.0 / inv_z, np.inf)
            closer = z_px < tile
            if closer.any():
                tile[closer] = z_px[closer]
                if color is not None:
                    color[y0 : y1 + 1, x0 : x1 + 1][closer] = face_colors[fi]

    return depth, color


def render_depth(mesh: TriMesh, pose: Pose, cam: Camera) -> DepthMap:
    """Z-buffer depth rendering; both triangle orientations are kept."""
    depth, _ = _rasterize(mesh, pose, cam)
    return DepthMap(cam.width, cam.height, depth)


def render_flat_color(mesh: TriMesh, pose: Pose, cam: Camera) -> np.ndarray:
    """Flat-shaded RGB render for debug overlays; black where uncovered."""
    if mesh.colors is not None:
        face_colors = (
            mesh.colors[mesh.faces].astype(np.float64).mean(axis=1).astype(np.uint8)
        )
    else:
        face_colors = np.full((mesh.num_faces, 3), 200, dtype=np.uint8)
    _, color = _rasterize(mesh, pose, cam, face_colors)
    return color
