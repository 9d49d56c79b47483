"""
Pattern prisms, subdivision and voxelized point clouds.

The prism of a pattern is the union of its triangles extruded to
``depth_mm``; faces interior to the union are never emitted, so the mesh is
watertight without boolean operations. The registration source cloud is
sampled from the subdivided prism.
"""
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import trimesh

from .exceptions import ExportError, LibraryFileError, MeshError
from .patterngen import boundary_edges, scaled_points, validate_pattern

logger = logging.getLogger(__name__)

MIN_FACE_AREA = 1e-9
MAX_SUBDIVISION_LEVELS = 12


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def to_trimesh(self):
        return trimesh.Trimesh(vertices=self.vertices, faces=self.faces, process=False)

    @property
    def face_count(self):
        return len(self.faces)

    @property
    def volume(self):
        return float(self.to_trimesh().volume)

    @property
    def area(self):
        return float(self.to_trimesh().area)

    @property
    def is_watertight(self):
        return bool(self.to_trimesh().is_watertight)

    def edge_lengths(self):
        if not len(self.faces):
            return np.zeros(0)
        corners = self.vertices[self.faces]
        edges = corners[:, [1, 2, 0]] - corners
        return np.linalg.norm(edges, axis=2).ravel()

    def max_edge(self):
        lengths = self.edge_lengths()
        return float(lengths.max()) if len(lengths) else 0.0


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    valid: np.ndarray = None

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(points)):
            raise MeshError("point cloud has non-finite coordinates")
        object.__setattr__(self, 'points', points)
        if self.valid is not None:
            object.__setattr__(self, 'valid', np.asarray(self.valid, dtype=bool).reshape(-1))

    def __len__(self):
        return len(self.points)

    @property
    def xy(self):
        return self.points[:, :2]

    def valid_points(self):
        if self.valid is None:
            return self.points
        return self.points[self.valid]

    def centroid(self):
        return self.valid_points().mean(axis=0)


@dataclass(frozen=True)
class CloudConfig:
    depth_mm: float = 1.0
    # Maximum edge length after subdivision, in grid units.
    subdivision: float = 0.1
    voxel_mm: float = 0.2
    full_prism: bool = False


def pattern_to_mesh(pattern, grid, scale_mm=5.0, depth_mm=1.0):
    """Extrude the selected triangles into one watertight prism (mm, z from 0 to depth)."""
    if not scale_mm > 0:
        raise MeshError(f"scale_mm must be positive, got {scale_mm}")
    if not depth_mm > 0:
        raise MeshError(f"depth_mm must be positive, got {depth_mm}")
    if pattern.n == 0:
        raise MeshError("cannot extrude an empty pattern")
    validate_pattern(pattern, grid)

    triangles = grid.triangles[list(pattern.triangle_ids)]
    local, copies = _split_pinches(triangles)
    count = len(copies)

    xy = scaled_points(grid, scale_mm)[copies]
    vertices = np.vstack([
        np.column_stack([xy, np.zeros(count)]),
        np.column_stack([xy, np.full(count, float(depth_mm))]),
    ])

    owner = {}
    for row, tri in enumerate(triangles.tolist()):
        for k in range(3):
            owner[(tri[k], tri[(k + 1) % 3])] = (row, k)

    faces = [local + count, local[:, [0, 2, 1]]]
    walls = []
    for u, v in boundary_edges(pattern, grid):
        row, k = owner[(u, v)]
        u0, v0 = local[row, k], local[row, (k + 1) % 3]
        walls.append((u0, v0, v0 + count))
        walls.append((u0, v0 + count, u0 + count))
    if walls:
        faces.append(np.array(walls, dtype=np.int64))

    mesh = TriMesh(vertices=vertices, faces=np.vstack(faces).astype(np.int64))
    face_areas = mesh.to_trimesh().area_faces
    if np.any(face_areas <= MIN_FACE_AREA):
        raise MeshError("extrusion produced a degenerate face")
    return mesh


def _split_pinches(triangles):
    """
    Local vertex ids for every triangle corner, plus the grid vertex behind each id.

    Triangles around a grid vertex that are joined only through that vertex
    get separate copies of it, so the extruded wall edge there is shared by
    exactly two faces.
    """
    corners_of = {}
    for row, tri in enumerate(triangles.tolist()):
        for k, vertex in enumerate(tri):
            corners_of.setdefault(vertex, []).append((row, k))

    local = np.empty(triangles.shape, dtype=np.int64)
    copies = []
    for vertex in sorted(corners_of):
        corners = corners_of[vertex]
        others = [set(triangles[row].tolist()) - {vertex} for row, _ in corners]
        fan = list(range(len(corners)))

        def root(i):
            while fan[i] != i:
                fan[i] = fan[fan[i]]
                i = fan[i]
            return i

        for i in range(len(corners)):
            for j in range(i):
                if others[i] & others[j]:
                    fan[root(i)] = root(j)

        ids = {}
        for i, (row, k) in enumerate(corners):
            r = root(i)
            if r not in ids:
                ids[r] = len(copies)
                copies.append(vertex)
            local[row, k] = ids[r]
    return local, np.array(copies, dtype=np.int64)


def subdivide(mesh, max_edge):
    """Midpoint-subdivide every face until the longest edge is at most ``max_edge``."""
    if not max_edge > 0:
        raise MeshError(f"max_edge must be positive, got {max_edge}")
    vertices, faces = mesh.vertices, mesh.faces
    levels = 0
    while TriMesh(vertices, faces).max_edge() > max_edge:
        if levels == MAX_SUBDIVISION_LEVELS:
            raise MeshError(f"max_edge {max_edge} needs more than {levels} subdivision levels")
        vertices, faces = trimesh.remesh.subdivide(vertices, faces)
        levels += 1
    if levels == 0:
        return mesh
    logger.debug("Subdivided %d -> %d faces in %d levels", len(mesh.faces), len(faces), levels)
    return TriMesh(vertices=np.asarray(vertices, dtype=float), faces=np.asarray(faces, dtype=np.int64))


def voxel_downsample(cloud, voxel_mm=0.2):
    """Replace the points of every occupied voxel by their centroid."""
    if not voxel_mm > 0:
        raise MeshError(f"voxel size must be positive, got {voxel_mm}")
    points = cloud.valid_points()
    if not len(points):
        return PointCloud(np.zeros((0, 3)))

    keys = np.floor(points / voxel_mm).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    sums = np.zeros((len(counts), 3))
    np.add.at(sums, inverse, points)
    return PointCloud(sums / counts[:, None])


def pattern_cloud(pattern, grid, scale_mm, config):
    """Registration source cloud: the imprint (top) face of the subdivided prism, voxelized."""
    mesh = pattern_to_mesh(pattern, grid, scale_mm, config.depth_mm)
    fine = subdivide(mesh, config.subdivision * scale_mm / grid.extent)
    points = fine.vertices
    if not config.full_prism:
        points = points[np.abs(points[:, 2] - config.depth_mm) < 1e-9]
    return voxel_downsample(PointCloud(points), config.voxel_mm)


def export_stl(mesh, path):
    """Write a binary STL (80-byte header, 50-byte facets, normals from the winding)."""
    if mesh.face_count == 0:
        raise MeshError("refusing to export a mesh without faces")
    if not mesh.is_watertight:
        raise MeshError("refusing to export a mesh that is not watertight")
    try:
        Path(path).write_bytes(trimesh.exchange.stl.export_stl(mesh.to_trimesh()))
    except OSError as exc:
        raise ExportError(f"could not write STL: {exc.strerror or exc}", path=path) from exc


def load_stl(path):
    try:
        loaded = trimesh.load_mesh(str(path), file_type='stl')
    except (OSError, ValueError) as exc:
        raise LibraryFileError(f"could not read STL: {exc}", path=path) from exc
    return TriMesh(
        vertices=np.asarray(loaded.vertices, dtype=float),
        faces=np.asarray(loaded.faces, dtype=np.int64),
    )


def write_ply(cloud, path):
    """ASCII PLY 1.0 with float x, y, z in mm."""
    try:
        data = trimesh.exchange.ply.export_ply(trimesh.PointCloud(cloud.points), encoding='ascii')
        Path(path).write_bytes(data)
    except OSError as exc:
        raise ExportError(f"could not write PLY: {exc.strerror or exc}", path=path) from exc


def read_ply(path):
    """Vertex x, y, z of a PLY file; any face or other elements are ignored."""
    if not Path(path).is_file():
        raise LibraryFileError("PLY file not found", path=path)
    try:
        loaded = trimesh.load(str(path), file_type='ply', process=False)
    except (OSError, ValueError, KeyError, IndexError, TypeError, AttributeError) as exc:
        raise LibraryFileError(f"could not read PLY: {exc}", path=path) from exc

    vertices = getattr(loaded, 'vertices', None)
    if vertices is None or not len(vertices):
        raise LibraryFileError("PLY file holds no vertices", path=path)
    return PointCloud(np.asarray(vertices, dtype=float))
