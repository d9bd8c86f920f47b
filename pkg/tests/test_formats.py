"""File-format round-trip and convention tests."""

import numpy as np
import pytest

from refpose import formats
from refpose.correspond import Corr2D3D
from refpose.errors import ParseError
from refpose.geometry import Camera, Pose, perturb, pose_error
from refpose.render import DepthMap, TriMesh
from refpose.synth import SceneSpec, make_scene
from refpose.uncertainty import UncertaintyEstimate


def random_poses(n, seed=0):
    rng = np.random.default_rng(seed)
    return {
        f"img{i:03d}": perturb(
            Pose.identity(), rng.normal(size=3), rng.normal(size=3) * 4.0
        )
        for i in range(n)
    }


class TestQuaternions:
    def test_round_trip(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            q = rng.normal(size=4)
            q /= np.linalg.norm(q)
            if q[0] < 0:
                q = -q
            back = formats.quat_from_rotation(formats.rotation_from_quat(q))
            assert np.allclose(back, q, atol=1e-12)

    def test_canonical_sign(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            q = rng.normal(size=4)
            q /= np.linalg.norm(q)
            rot = formats.rotation_from_quat(q)
            assert formats.quat_from_rotation(rot)[0] >= 0

    def test_identity(self):
        assert np.allclose(formats.quat_from_rotation(np.eye(3)), [1, 0, 0, 0])

    def test_half_turns(self):
        # trace = -1 branch for each principal axis
        for axis in range(3):
            rot = -np.eye(3)
            rot[axis, axis] = 1.0
            q = formats.quat_from_rotation(rot)
            assert np.allclose(formats.rotation_from_quat(q), rot, atol=1e-12)


class TestPoseFiles:
    def test_conversion_is_involutive(self):
        for name, pose in random_poses(10, seed=4).items():
            rot, t = formats.w2c_from_pose(pose)
            back = formats.pose_from_w2c(rot, t)
            rot2, t2 = formats.w2c_from_pose(back)
            assert np.allclose(rot2, rot, atol=1e-13)
            assert np.allclose(t2, t, atol=1e-12)
            err = pose_error(pose, back)
            assert err.position_err < 1e-12 and err.rotation_err < 1e-11

    def test_write_read_semantics(self, tmp_path):
        poses = random_poses(8, seed=5)
        path = tmp_path / "poses.txt"
        formats.write_poses(path, poses)
        again = formats.read_poses(path)
        assert list(again) == list(poses)
        for name in poses:
            err = pose_error(poses[name], again[name])
            assert err.position_err < 1e-12
            assert err.rotation_err < 1e-11

    def test_file_round_trip_is_byte_identical(self, tmp_path):
        # read -> write must preserve every record at 17 significant digits
        p1 = tmp_path / "a.txt"
        p2 = tmp_path / "b.txt"
        formats.write_poses(p1, random_poses(8, seed=6))
        formats.write_pose_records(p2, formats.read_pose_records(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_header_is_documented_convention(self, tmp_path):
        path = tmp_path / "poses.txt"
        formats.write_poses(path, random_poses(1))
        assert path.read_text().splitlines()[0] == "poses-v1 convention=w2c"

    def test_rejects_bad_quaternion_norm(self, tmp_path):
        path = tmp_path / "poses.txt"
        path.write_text("poses-v1 convention=w2c\nimg 2 0 0 0 1 2 3\n")
        with pytest.raises(ParseError) as exc:
            formats.read_poses(path)
        assert exc.value.line == 2

    def test_rejects_wrong_field_count(self, tmp_path):
        path = tmp_path / "poses.txt"
        path.write_text("poses-v1 convention=w2c\nimg 1 0 0 0 1 2\n")
        with pytest.raises(ParseError):
            formats.read_poses(path)

    def test_w2c_convention_content(self, tmp_path):
        # A camera at center c with identity rotation stores t = -c.
        path = tmp_path / "poses.txt"
        formats.write_poses(path, {"x": Pose(np.eye(3), np.array([1.0, 2.0, 3.0]))})
        fields = path.read_text().splitlines()[1].split()
        assert [float(v) for v in fields[1:5]] == [1.0, 0.0, 0.0, 0.0]
        assert [float(v) for v in fields[5:]] == [-1.0, -2.0, -3.0]


class TestCameraFiles:
    def test_round_trip(self, tmp_path):
        cams = {
            "default": Camera(fx=500.5, fy=499.25, cx=320.125, cy=240.0,
                              width=640, height=480,
                              distortion=(-0.08, 0.012, 0.0011, -0.0007)),
            "imgX": Camera(fx=260.0, fy=260.0, cx=160.0, cy=120.0,
                           width=320, height=240),
        }
        path = tmp_path / "cameras.txt"
        formats.write_cameras(path, cams)
        again = formats.read_cameras(path)
        assert set(again) == set(cams)
        for key in cams:
            a, b = cams[key], again[key]
            assert (a.fx, a.fy, a.cx, a.cy, a.width, a.height) == (
                b.fx, b.fy, b.cx, b.cy, b.width, b.height
            )
            assert np.array_equal(a.distortion, b.distortion)

    def test_camera_for_image_fallback(self, tmp_path):
        cams = {"default": Camera(fx=1, fy=1, cx=0, cy=0, width=2, height=2)}
        assert formats.camera_for_image(cams, "anything") is cams["default"]
        with pytest.raises(KeyError):
            formats.camera_for_image({}, "img")

    def test_parse_error_reports_line(self, tmp_path):
        path = tmp_path / "cameras.txt"
        path.write_text("camera-v1 a PINHOLE_RT 640\n")
        with pytest.raises(ParseError) as exc:
            formats.read_cameras(path)
        assert exc.value.line == 1


class TestPly:
    def test_round_trip_with_colors(self, tmp_path):
        mesh, _ = make_scene(SceneSpec(rng_seed=3, triangle_target=40))
        path = tmp_path / "mesh.ply"
        formats.write_ply(mesh, path)
        again = formats.read_ply(path)
        assert np.array_equal(again.vertices, mesh.vertices)
        assert np.array_equal(again.faces, mesh.faces)
        assert np.array_equal(again.colors, mesh.colors)

    def test_round_trip_without_colors(self, tmp_path):
        mesh = TriMesh(np.array([[0.1, 0.2, 0.3], [1, 0, 0], [0, 1, 0.0]]),
                       np.array([[0, 1, 2]]))
        path = tmp_path / "mesh.ply"
        formats.write_ply(mesh, path)
        again = formats.read_ply(path)
        assert np.array_equal(again.vertices, mesh.vertices)
        assert again.colors is None

    def test_rejects_non_ply(self, tmp_path):
        path = tmp_path / "bad.ply"
        path.write_text("obj\n")
        with pytest.raises(ParseError):
            formats.read_ply(path)

    def test_rejects_non_triangle_faces(self, tmp_path):
        path = tmp_path / "quad.ply"
        path.write_text(
            "ply\nformat ascii 1.0\nelement vertex 4\n"
            "property float x\nproperty float y\nproperty float z\n"
            "element face 1\nproperty list uchar int vertex_indices\n"
            "end_header\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n"
        )
        with pytest.raises(ParseError):
            formats.read_ply(path)


class TestPfm:
    def test_round_trip_exact_float32(self, tmp_path):
        rng = np.random.default_rng(8)
        data = rng.uniform(0.5, 30.0, (48, 64)).astype(np.float32)
        data[10, 20] = np.inf
        path = tmp_path / "depth.pfm"
        formats.write_pfm(data, path)
        again = formats.read_pfm(path)
        assert again.dtype == np.float32
        assert np.array_equal(again, data)

    def test_header_is_little_endian(self, tmp_path):
        path = tmp_path / "d.pfm"
        formats.write_pfm(np.zeros((2, 3), dtype=np.float32), path)
        head = path.read_bytes().split(b"\n")[:3]
        assert head[0] == b"Pf"
        assert head[1] == b"3 2"
        assert float(head[2]) == -1.0

    def test_depth_checkpoint_round_trip(self, tmp_path):
        rng = np.random.default_rng(9)
        depth = rng.uniform(1, 5, (24, 32))
        depth[0, 0] = np.inf
        dm = DepthMap(32, 24, depth)
        path = tmp_path / "ck.pfm"
        formats.write_depth_checkpoint(dm, path)
        again = formats.read_depth_checkpoint(path)
        assert (again.width, again.height) == (32, 24)
        assert np.array_equal(
            again.depth, depth.astype(np.float32).astype(np.float64)
        )


class TestCorrFiles:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(10)
        corrs = Corr2D3D(rng.uniform(0, 640, (12, 2)), rng.normal(size=(12, 3)) * 7)
        path = tmp_path / "c.txt"
        formats.write_corrs(path, "imgZ", corrs)
        image_id, again = formats.read_corrs(path)
        assert image_id == "imgZ"
        assert np.array_equal(again.pixels, corrs.pixels)
        assert np.array_equal(again.points, corrs.points)

    def test_parse_error_line(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("corr-v1 img\n1 2 3 4 5\n1 2 3\n")
        with pytest.raises(ParseError) as exc:
            formats.read_corrs(path)
        assert exc.value.line == 3


class TestUncertaintyFiles:
    def test_round_trip(self, tmp_path):
        ests = {
            "a": UncertaintyEstimate(0.012345678901234567, 0.5, "sampling", 50, 0.5),
            "b": UncertaintyEstimate(1e-9, 180.0, "sampling", 50, 0.5),
        }
        path = tmp_path / "unc.txt"
        formats.write_uncertainties(path, ests, "sampling", 50, seed=7, ratio=0.5)
        meta, again = formats.read_uncertainties(path)
        assert meta["method"] == "sampling"
        assert meta["ratio"] == "0.5"
        assert meta["seed"] == "7"
        for k in ests:
            assert again[k].position_unc == ests[k].position_unc
            assert again[k].rotation_unc == ests[k].rotation_unc
            assert again[k].ratio == 0.5

    def test_seed_recorded_in_header(self, tmp_path):
        path = tmp_path / "unc.txt"
        formats.write_uncertainties(path, {}, "monte-carlo", 200, seed=13)
        assert "seed=13" in path.read_text().splitlines()[0]


class TestJsonReports:
    def test_stable_key_order_and_trailing_newline(self, tmp_path):
        path = tmp_path / "r.json"
        formats.write_json(path, {"b": 1, "a": {"z": 2, "y": 3}})
        text = path.read_text()
        assert text.endswith("\n")
        assert text.index('"b"') < text.index('"a"')
        assert text.index('"z"') < text.index('"y"')

    def test_atomic_write_leaves_no_temp_files(self, tmp_path):
        path = tmp_path / "sub" / "r.json"
        formats.write_json(path, {"x": 1})
        leftovers = [p for p in (tmp_path / "sub").iterdir() if p.name != "r.json"]
        assert leftovers == []
