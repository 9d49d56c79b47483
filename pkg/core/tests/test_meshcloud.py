import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from core.exceptions import ExportError, LibraryFileError, MeshError
from core.meshcloud import (
    CloudConfig,
    PointCloud,
    TriMesh,
    export_stl,
    load_stl,
    pattern_cloud,
    pattern_to_mesh,
    read_ply,
    subdivide,
    voxel_downsample,
    write_ply,
)
from core.patterngen import Pattern, boundary_edges

from .factories import grid


def sorted_rows(points):
    points = np.asarray(points, dtype=float)
    keys = np.round(points, 5)
    return points[np.lexsort(keys.T[::-1])]


def pattern_area_mm2(pattern, g, scale_mm):
    return sum(g.triangle_area(t) for t in pattern.triangle_ids) * (scale_mm / g.extent) ** 2


class PrismTest(SimpleTestCase):
    def setUp(self):
        self.grid = grid()
        self.pattern = Pattern((0, 1, 2, 7, 8, 15, 16, 22, 30, 31))

    def test_prism_is_watertight_with_expected_volume(self):
        mesh = pattern_to_mesh(self.pattern, self.grid, scale_mm=5.0, depth_mm=1.0)
        self.assertTrue(mesh.is_watertight)
        self.assertAlmostEqual(mesh.volume, pattern_area_mm2(self.pattern, self.grid, 5.0), places=9)

    def test_triangles_touching_at_one_vertex(self):
        pairs = [
            (i, j)
            for i in range(self.grid.triangle_count)
            for j in range(i)
            if len(set(self.grid.triangles[i]) & set(self.grid.triangles[j])) == 1
        ]
        mesh = pattern_to_mesh(Pattern(pairs[0]), self.grid)
        self.assertTrue(mesh.is_watertight)
        self.assertGreater(mesh.volume, 0)

    def test_face_count(self):
        mesh = pattern_to_mesh(self.pattern, self.grid)
        walls = 2 * len(boundary_edges(self.pattern, self.grid))
        self.assertEqual(mesh.face_count, 2 * self.pattern.n + walls)

    def test_depth_scales_volume(self):
        shallow = pattern_to_mesh(self.pattern, self.grid, depth_mm=0.5)
        deep = pattern_to_mesh(self.pattern, self.grid, depth_mm=2.0)
        self.assertAlmostEqual(deep.volume, 4 * shallow.volume, places=9)

    def test_rejects_bad_input(self):
        with self.assertRaises(MeshError):
            pattern_to_mesh(Pattern(()), self.grid)
        with self.assertRaises(MeshError):
            pattern_to_mesh(self.pattern, self.grid, depth_mm=0.0)


class SubdivideTest(SimpleTestCase):
    def setUp(self):
        self.mesh = pattern_to_mesh(Pattern((3, 4, 5, 11, 12)), grid())

    def test_edges_respect_bound(self):
        fine = subdivide(self.mesh, 0.2)
        self.assertLessEqual(fine.max_edge(), 0.2)
        self.assertTrue(fine.is_watertight)
        self.assertAlmostEqual(fine.volume, self.mesh.volume, places=9)

    def test_area_is_preserved(self):
        fine = subdivide(self.mesh, 0.1)
        self.assertGreater(fine.face_count, self.mesh.face_count)
        self.assertAlmostEqual(fine.area, self.mesh.area, places=9)

    def test_already_fine_mesh_is_unchanged(self):
        self.assertIs(subdivide(self.mesh, 100.0), self.mesh)

    def test_rejects_non_positive_bound(self):
        with self.assertRaises(MeshError):
            subdivide(self.mesh, 0.0)


class VoxelTest(SimpleTestCase):
    def test_points_in_one_voxel_collapse_to_their_centroid(self):
        cloud = PointCloud([[0.01, 0.01, 0.0], [0.05, 0.03, 0.0], [0.5, 0.5, 0.0]])
        reduced = voxel_downsample(cloud, 0.2)
        self.assertEqual(len(reduced), 2)
        np.testing.assert_allclose(sorted(reduced.points.tolist()), [[0.03, 0.02, 0.0], [0.5, 0.5, 0.0]])

    def test_at_most_one_point_per_voxel(self):
        rng = np.random.default_rng(4)
        reduced = voxel_downsample(PointCloud(rng.uniform(0, 2, (5000, 3))), 0.5)
        self.assertLessEqual(len(reduced), 4 ** 3)
        keys = np.floor(reduced.points / 0.5)
        self.assertEqual(len(np.unique(keys, axis=0)), len(reduced))

    def test_second_pass_changes_nothing(self):
        rng = np.random.default_rng(5)
        once = voxel_downsample(PointCloud(rng.uniform(-1, 1, (3000, 3))), 0.2)
        twice = voxel_downsample(once, 0.2)
        np.testing.assert_allclose(sorted_rows(twice.points), sorted_rows(once.points))

    def test_sparse_grid_passes_through(self):
        axis = np.arange(5) * 0.3 + 0.05
        points = np.array(np.meshgrid(axis, axis, [0.0])).reshape(3, -1).T
        reduced = voxel_downsample(PointCloud(points), 0.2)
        self.assertEqual(len(reduced), len(points))
        np.testing.assert_allclose(sorted_rows(reduced.points), sorted_rows(points))

    def test_empty_cloud(self):
        self.assertEqual(len(voxel_downsample(PointCloud(np.zeros((0, 3))), 0.2)), 0)

    def test_rejects_non_finite_points(self):
        with self.assertRaises(MeshError):
            PointCloud([[0.0, np.nan, 1.0]])

    def test_pattern_cloud_lies_on_the_imprint_face(self):
        g = grid()
        cloud = pattern_cloud(Pattern(tuple(range(12))), g, 5.0, CloudConfig(depth_mm=1.0, voxel_mm=0.2))
        self.assertGreater(len(cloud), 50)
        np.testing.assert_allclose(cloud.points[:, 2], 1.0)
        self.assertTrue(np.all(np.abs(cloud.xy) <= 2.5 + 1e-9))


class FileFormatTest(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)

    def test_binary_stl_layout(self):
        mesh = pattern_to_mesh(Pattern((0, 1, 2, 3)), grid())
        path = self.dir / 'prism.stl'
        export_stl(mesh, path)
        self.assertEqual(path.stat().st_size, 84 + 50 * mesh.face_count)
        loaded = load_stl(path)
        self.assertEqual(len(loaded.faces), mesh.face_count)
        self.assertAlmostEqual(loaded.volume, mesh.volume, places=4)

    def test_stl_into_missing_directory_names_the_path(self):
        mesh = pattern_to_mesh(Pattern((0, 1)), grid())
        path = self.dir / 'missing' / 'prism.stl'
        with self.assertRaises(ExportError) as ctx:
            export_stl(mesh, path)
        self.assertIn(str(path), str(ctx.exception))

    def test_stl_keeps_every_face_corner(self):
        mesh = pattern_to_mesh(Pattern((0, 1, 2, 7, 8)), grid())
        path = self.dir / 'prism.stl'
        export_stl(mesh, path)
        loaded = load_stl(path)
        np.testing.assert_allclose(
            sorted_rows(loaded.vertices[loaded.faces].reshape(-1, 3)),
            sorted_rows(mesh.vertices[mesh.faces].reshape(-1, 3)),
            atol=1e-6,
        )

    def test_mesh_without_faces_is_not_exported(self):
        empty = TriMesh(vertices=np.zeros((0, 3)), faces=np.zeros((0, 3), dtype=np.int64))
        path = self.dir / 'empty.stl'
        with self.assertRaises(MeshError):
            export_stl(empty, path)
        self.assertFalse(path.exists())

    def test_ply_round_trip(self):
        rng = np.random.default_rng(2)
        cloud = PointCloud(rng.uniform(-5, 5, (200, 3)))
        path = self.dir / 'cloud.ply'
        write_ply(cloud, path)
        text = path.read_text()
        self.assertTrue(text.startswith('ply\nformat ascii 1.0\n'))
        self.assertIn('element vertex 200\n', text)
        np.testing.assert_allclose(read_ply(path).points, cloud.points, atol=1e-5)

    def test_ply_with_faces_before_vertices(self):
        path = self.dir / 'mesh.ply'
        path.write_text(
            'ply\nformat ascii 1.0\n'
            'element face 1\nproperty list uchar int vertex_indices\n'
            'element vertex 3\nproperty float x\nproperty float y\nproperty float z\n'
            'end_header\n'
            '3 0 1 2\n'
            '0 0 0\n1 0 0\n0 1 0\n'
        )
        np.testing.assert_allclose(read_ply(path).points, [[0, 0, 0], [1, 0, 0], [0, 1, 0]])

    def test_ply_without_vertex_data(self):
        path = self.dir / 'short.ply'
        path.write_text('ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\n'
                        'property float z\nend_header\n')
        with self.assertRaises(LibraryFileError):
            read_ply(path)

    def test_missing_ply(self):
        with self.assertRaises(LibraryFileError):
            read_ply(self.dir / 'absent.ply')

    def test_not_a_ply(self):
        path = self.dir / 'cloud.ply'
        path.write_text('solid nothing\n')
        with self.assertRaises(LibraryFileError):
            read_ply(path)
