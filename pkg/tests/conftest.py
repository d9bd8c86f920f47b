import numpy as np
import pytest

from refpose.geometry import Camera, Pose, perturb, project_many
from refpose.correspond import Corr2D3D
from refpose.render import TriMesh
from refpose.synth import benchmark_scene


@pytest.fixture
def cam():
    """Plain pinhole camera used by most unit tests."""
    return Camera(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)


@pytest.fixture
def cam_distorted():
    return Camera(
        fx=500.0, fy=480.0, cx=321.5, cy=238.0, width=640, height=480,
        distortion=(-0.08, 0.012, 0.0011, -0.0007),
    )


@pytest.fixture
def plane_mesh():
    """Two triangles forming a large square at camera-frame z = 2."""
    verts = np.array(
        [[-10, -10, 2], [10, -10, 2], [10, 10, 2], [-10, 10, 2]], dtype=float
    )
    faces = np.array([[0, 1, 2], [0, 2, 3]])
    return TriMesh(verts, faces)


@pytest.fixture(scope="session")
def bench():
    """Reference synthetic rig shared by the slower pipeline tests."""
    mesh, points, cam, true_pose = benchmark_scene()
    return mesh, points, cam, true_pose


def make_correspondences(cam, true_pose, n=100, seed=0, depth=(2.0, 15.0)):
    """Exact 2D-3D correspondences spread across the camera frustum."""
    rng = np.random.default_rng(seed)
    z = rng.uniform(depth[0], depth[1], n)
    x = rng.uniform(-0.55, 0.55, n) * z
    y = rng.uniform(-0.4, 0.4, n) * z
    points = true_pose.transform(np.stack([x, y, z], axis=1))
    pixels, in_front = project_many(points, true_pose, cam)
    assert in_front.all()
    return Corr2D3D(pixels, points)


@pytest.fixture
def exact_corrs(cam):
    true_pose = perturb(
        Pose.identity(), np.array([0.1, -0.2, 0.3]), np.array([0.5, -0.3, 0.2])
    )
    return make_correspondences(cam, true_pose, n=100, seed=1), true_pose
