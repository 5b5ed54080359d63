import json
import math
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from trusspose.camera import default_intrinsics, project_points
from trusspose.geometry import Pose, Quaternion, Translation
from trusspose.scenegen import (
    DatasetConfig,
    DatasetManifest,
    EmptyBBox,
    InvalidDimensions,
    MeshModel,
    ObjectOutOfFrame,
    PoseSampler,
    build_truss,
    asymmetry_margin,
    generate_dataset,
    load_arrays,
    make_bounded_image,
    render,
    validate_dataset,
    vertex_bbox,
)
from trusspose.scenegen.dataset import _split_assignment, render_sample


def front_pose(d=0.7, q=None):
    return Pose(Translation(0, 0, d), q if q is not None else Quaternion.identity())


class TestBuildTruss:
    def test_bounding_box_exact(self):
        mesh = build_truss(0.38, 0.2, 0.05)
        lo, hi = mesh.bounding_box()
        np.testing.assert_allclose(hi - lo, [0.38, 0.2, 0.05], atol=1e-12)
        np.testing.assert_allclose(hi, -lo, atol=1e-12)  # centered at the origin

    def test_asymmetric_under_principal_flips(self):
        mesh = build_truss()
        assert asymmetry_margin(mesh.vertices) > 1e-3

    def test_deterministic(self):
        a = build_truss()
        b = build_truss()
        assert np.array_equal(a.vertices, b.vertices)
        assert np.array_equal(a.triangles, b.triangles)

    @pytest.mark.parametrize("dims", [(-1, 0.2, 0.05), (0.38, 0, 0.05), (0.1, 0.2, -3)])
    def test_invalid_dimensions(self, dims):
        with pytest.raises(InvalidDimensions):
            build_truss(*dims)

    def test_symmetric_mesh_rejected(self):
        # a cube is symmetric under all three 180-degree rotations
        corners = np.array(
            [[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=float
        )
        with pytest.raises(ValueError, match="symmetric"):
            MeshModel(corners, np.array([[0, 1, 2]]), name="cube")

    def test_triangle_indices_validated(self):
        with pytest.raises(ValueError, match="out of range"):
            MeshModel(np.array([[0.0, 0, 0], [1, 0.2, 0], [0, 1, 0.3]]),
                      np.array([[0, 1, 5]]))

    def test_normals_point_outward(self):
        mesh = build_truss()
        normals = mesh.face_normals()
        tri_centers = mesh.vertices[mesh.triangles].mean(axis=1)
        # each strut is a box of 12 triangles; normals face away from its center
        for s in range(len(mesh.triangles) // 12):
            block = slice(12 * s, 12 * (s + 1))
            center = mesh.vertices[8 * s : 8 * (s + 1)].mean(axis=0)
            outward = np.einsum("ij,ij->i", normals[block], tri_centers[block] - center)
            assert np.all(outward > 0)


class TestRender:
    def _single_triangle_mesh(self):
        # generic triangle: asymmetric under all principal flips
        verts = np.array([[-0.05, -0.03, 0.001], [0.06, -0.01, 0.002], [0.01, 0.05, -0.004]])
        return MeshModel(verts, np.array([[0, 1, 2]]), name="tri")

    def test_ambient_only_when_light_antiparallel(self):
        mesh = self._single_triangle_mesh()
        K = default_intrinsics(64, focal=60.0)
        pose = front_pose(0.5)
        normal = mesh.face_normals()[0]  # object frame == camera frame (identity pose)
        image = render(mesh, pose, K, light_dir=-normal, ambient=0.02, star_p=0.0)
        assert image.max() == pytest.approx(0.02, abs=1e-6)
        assert image.min() == 0.0

    def test_lit_face_brighter_than_ambient(self):
        mesh = self._single_triangle_mesh()
        K = default_intrinsics(64, focal=60.0)
        normal = mesh.face_normals()[0]
        image = render(mesh, front_pose(0.5), K, light_dir=normal, star_p=0.0)
        assert image.max() > 0.5

    def test_bit_identical_rerender(self):
        from trusspose.geometry import normalize

        mesh = build_truss()
        K = default_intrinsics(64)
        pose = front_pose(0.8, normalize(Quaternion(0.9, (0.1, 0.3, 0.2))))
        a = render(mesh, pose, K, light_dir=(0, 0, -1), star_p=0.0)
        b = render(mesh, pose, K, light_dir=(0, 0, -1), star_p=0.0)
        assert np.array_equal(a, b)

    def test_star_noise_deterministic_and_background_only(self):
        mesh = build_truss()
        K = default_intrinsics(64)
        pose = front_pose(0.8)
        a = render(mesh, pose, K, (0, 0, -1), star_p=0.05,
                   rng=np.random.default_rng(3))
        b = render(mesh, pose, K, (0, 0, -1), star_p=0.05,
                   rng=np.random.default_rng(3))
        clean = render(mesh, pose, K, (0, 0, -1), star_p=0.0)
        assert np.array_equal(a, b)
        stars = (a == 1.0) & (clean == 0.0)
        assert stars.sum() > 0
        # stars appear only where the background was empty
        assert np.array_equal(a[~stars], clean[~stars])

    def test_object_out_of_frame(self):
        mesh = build_truss()
        K = default_intrinsics(64)
        with pytest.raises(ObjectOutOfFrame):
            render(mesh, Pose(Translation(5.0, 0, 1.0), Quaternion.identity()), K, (0, 0, -1))

    def test_silhouette_matches_reprojection_extent(self):
        mesh = build_truss()
        K = default_intrinsics(64)
        rng = np.random.default_rng(4)
        from trusspose.geometry import random_unit_quaternion

        for _ in range(5):
            pose = front_pose(0.75, random_unit_quaternion(rng))
            image = render(mesh, pose, K, (0.2, -0.4, -0.8), star_p=0.0)
            ys, xs = np.nonzero(image > 0)
            uv, _ = project_points(K, pose, mesh.vertices)
            x0, y0, x1, y1 = vertex_bbox(uv, K.width, K.height)
            assert abs(xs.min() - x0) <= 2 and abs(ys.min() - y0) <= 2
            assert abs(xs.max() - (x1 - 1)) <= 2 and abs(ys.max() - (y1 - 1)) <= 2


class TestBoundedImage:
    def test_full_frame_bbox_is_identity(self):
        rng = np.random.default_rng(5)
        image = rng.random((32, 32)).astype(np.float32)
        out = make_bounded_image(image, (0, 0, 32, 32))
        np.testing.assert_allclose(out, image, atol=1e-6)

    def test_object_centered_after_crop(self):
        image = np.zeros((64, 64), dtype=np.float32)
        image[20:40, 8:24] = 1.0  # fully inside the left half, away from edges
        out = make_bounded_image(image, (8, 20, 24, 40))
        ys, xs = np.nonzero(out > 0.5)
        cy, cx = ys.mean(), xs.mean()
        assert abs(cx - 31.5) <= 3 and abs(cy - 31.5) <= 3

    def test_empty_bbox_raises(self):
        image = np.zeros((16, 16), dtype=np.float32)
        with pytest.raises(EmptyBBox):
            make_bounded_image(image, (5, 5, 6, 6))

    def test_channels_preserved(self):
        image = np.zeros((16, 16, 3), dtype=np.float32)
        image[4:12, 4:12, 1] = 1.0
        out = make_bounded_image(image, (4, 4, 12, 12))
        assert out.shape == (16, 16, 3)
        assert out[:, :, 1].max() > 0.9 and out[:, :, 0].max() == 0.0


@pytest.fixture(scope="module")
def sampler():
    config = DatasetConfig()
    mesh = config.mesh()
    return PoseSampler(config.intrinsics(), mesh.bounding_radius,
                       config.distance_range, config.frame_margin_px)


class TestPoseSampler:
    def test_distances_in_range(self, sampler):
        rng = np.random.default_rng(6)
        distances = np.array([sampler.sample(rng).translation.norm() for _ in range(10_000)])
        assert distances.min() >= 0.3 and distances.max() <= 1.0

    def test_distances_uniform_chi_squared(self, sampler):
        rng = np.random.default_rng(7)
        distances = np.array([sampler.sample(rng).translation.norm() for _ in range(10_000)])
        counts, _ = np.histogram(distances, bins=20, range=(0.3, 1.0))
        result = stats.chisquare(counts)
        assert result.pvalue > 0.01

    def test_rotation_mean_dot_is_centered(self, sampler):
        rng = np.random.default_rng(8)
        fixed = np.array([0.5, 0.5, 0.5, 0.5])
        dots = np.array(
            [float(sampler.sample(rng).rotation.as_array() @ fixed) for _ in range(10_000)]
        )
        # dot with any fixed unit quaternion has mean 0 and std 1/2
        assert abs(dots.mean()) < 3 * 0.5 / math.sqrt(len(dots))

    def test_rotations_are_unit(self, sampler):
        rng = np.random.default_rng(9)
        for _ in range(100):
            assert sampler.sample(rng).rotation.is_unit(tol=1e-9)

    def test_seed_reproducibility(self, sampler):
        a = [sampler.sample(np.random.default_rng(10)).seven() for _ in range(1)]
        b = [sampler.sample(np.random.default_rng(10)).seven() for _ in range(1)]
        assert np.array_equal(a, b)

    def test_whole_object_always_in_frame(self, sampler):
        config = DatasetConfig()
        mesh = config.mesh()
        K = config.intrinsics()
        rng = np.random.default_rng(11)
        for _ in range(200):
            pose = sampler.sample(rng)
            uv, depth = project_points(K, pose, mesh.vertices)
            assert np.all(depth > 0)
            assert uv[:, 0].min() >= 0 and uv[:, 0].max() <= K.width
            assert uv[:, 1].min() >= 0 and uv[:, 1].max() <= K.height

    def test_infeasible_range_rejected(self):
        config = DatasetConfig()
        mesh = config.mesh()
        with pytest.raises(ValueError, match="cannot fit"):
            PoseSampler(default_intrinsics(64, focal=200.0), mesh.bounding_radius,
                        (0.3, 1.0))


class TestSplitAssignment:
    def test_exact_80_20_at_100(self):
        split = _split_assignment(seed=0, count=100, split_fraction=0.8)
        assert split.count("train") == 80
        assert split.count("test") == 20

    def test_split_disjoint_exhaustive(self):
        split = _split_assignment(seed=1, count=37, split_fraction=0.8)
        assert len(split) == 37
        assert set(split) == {"train", "test"}
        assert split.count("train") == round(0.8 * 37)


class TestGenerateDataset:
    def test_layout_and_manifest(self, tiny_dataset):
        assert (tiny_dataset / "manifest.json").exists()
        manifest = DatasetManifest.load(tiny_dataset / "manifest.json")
        assert len(manifest.records) == 24
        for sub in ("images", "bounded", "labels"):
            assert len(list((tiny_dataset / sub).iterdir())) == 24

    def test_label_quaternions_unit(self, tiny_dataset):
        for label_path in sorted((tiny_dataset / "labels").glob("*.json")):
            pose = json.loads(label_path.read_text())["pose"]
            assert abs(np.linalg.norm(pose[3:]) - 1.0) < 1e-6

    def test_all_samples_validate(self, tiny_dataset):
        reports = validate_dataset(tiny_dataset)
        assert all(r.passed for r in reports)

    def test_bbox_contains_reprojected_vertices(self, tiny_dataset):
        manifest = DatasetManifest.load(tiny_dataset / "manifest.json")
        mesh = manifest.config.mesh()
        K = manifest.config.intrinsics()
        for record in manifest.records:
            pose = Pose.from_seven(record["pose"])
            uv, _ = project_points(K, pose, mesh.vertices)
            x0, y0, x1, y1 = record["bbox"]
            inside = (
                (uv[:, 0] >= x0) & (uv[:, 0] <= x1) & (uv[:, 1] >= y0) & (uv[:, 1] <= y1)
            )
            assert inside.mean() >= 0.95

    def test_distance_positive_and_recorded(self, tiny_dataset):
        manifest = DatasetManifest.load(tiny_dataset / "manifest.json")
        for record in manifest.records:
            t = np.array(record["pose"][:3])
            assert record["distance"] == pytest.approx(np.linalg.norm(t))
            assert record["distance"] > 0

    def test_regeneration_byte_identical(self, tmp_path):
        config = DatasetConfig(count=8, seed=21)
        generate_dataset(config, tmp_path / "a")
        generate_dataset(config, tmp_path / "b")
        files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
        assert files_a == files_b
        for rel in files_a:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel

    def test_load_arrays_split_filter(self, tiny_dataset):
        train = load_arrays(tiny_dataset, split="train")
        test = load_arrays(tiny_dataset, split="test")
        assert len(train) + len(test) == 24
        assert train.images.dtype == np.uint8
        assert train.poses.shape[1] == 7

    def test_render_sample_deterministic(self):
        config = DatasetConfig(count=2, seed=33)
        a, light_a = render_sample(config, 1)
        b, light_b = render_sample(config, 1)
        assert np.array_equal(a.image, b.image)
        assert np.array_equal(light_a, light_b)
