"""
Triangulated pattern grid and simulated-annealing pattern synthesis.

A pattern is a set of triangles picked from a Delaunay triangulation of a
staggered point lattice. Candidates are annealed towards a target
connectivity: the number of picked triangles that share an edge with at
least one other picked triangle.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import Delaunay

from .exceptions import ConfigurationError, GridError, InfeasiblePatternError, InvalidPatternError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TriGrid:
    points: np.ndarray
    triangles: np.ndarray
    adjacency: tuple
    extent: float
    divisions: int

    @property
    def grid_id(self):
        return f"staggered-{self.divisions}"

    @property
    def triangle_count(self):
        return len(self.triangles)

    def triangle_area(self, index):
        a, b, c = self.points[self.triangles[index]]
        return 0.5 * abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))

    def hull_point_count(self):
        """Points lying on the boundary of the square (hull vertices and collinear hull points)."""
        tol = 1e-9 * self.extent
        on_edge = (
            (np.abs(self.points[:, 0]) < tol)
            | (np.abs(self.points[:, 0] - self.extent) < tol)
            | (np.abs(self.points[:, 1]) < tol)
            | (np.abs(self.points[:, 1] - self.extent) < tol)
        )
        return int(np.count_nonzero(on_edge))


@dataclass(frozen=True)
class Pattern:
    triangle_ids: tuple
    grid_id: str = ''

    def __post_init__(self):
        ids = tuple(sorted({int(t) for t in self.triangle_ids}))
        object.__setattr__(self, 'triangle_ids', ids)

    @property
    def n(self):
        return len(self.triangle_ids)


@dataclass(frozen=True)
class AnnealSchedule:
    t0: float = 1.0
    beta: float = 0.01
    max_iters: int = 5000
    seed: object = None

    def __post_init__(self):
        if not self.t0 > 0:
            raise ConfigurationError(f"t0 must be positive, got {self.t0}")
        if not self.beta > 0:
            raise ConfigurationError(f"beta must be positive, got {self.beta}")
        if self.max_iters < 1:
            raise ConfigurationError(f"max_iters must be at least 1, got {self.max_iters}")

    def temperature(self, k):
        """Linear multiplicative cooling: T_k = t0 / (1 + beta * k)."""
        return self.t0 / (1.0 + self.beta * k)


@dataclass(frozen=True)
class GenerationConfig:
    divisions: int = 4
    extent: float = 4.0
    n_min: int = 10
    n_max: int = 20
    alpha: float = 0.1

    def __post_init__(self):
        if self.n_min < 1 or self.n_min > self.n_max:
            raise ConfigurationError(f"invalid triangle range [{self.n_min}, {self.n_max}]")
        if self.alpha < 0:
            raise ConfigurationError(f"alpha must be non-negative, got {self.alpha}")

    @property
    def n_range(self):
        return (self.n_min, self.n_max)


@dataclass
class AnnealResult:
    pattern: Pattern
    energy: int
    connectivity: int
    converged: bool
    iterations: int
    trace: list = field(default_factory=list)


def build_staggered_grid(divisions, extent=1.0):
    """
    Delaunay-triangulate a staggered lattice of ``divisions + 1`` rows.

    Even rows hold ``divisions + 1`` evenly spaced points. Odd rows are shifted
    by half a column pitch and keep the square's side points, so the hull stays
    the full square. The triangulation is computed on the unit square and
    scaled afterwards; the topology does not depend on ``extent``.
    """
    if int(divisions) != divisions or divisions < 2:
        raise GridError(f"divisions must be an integer >= 2, got {divisions}")
    if not extent > 0:
        raise GridError(f"extent must be positive, got {extent}")
    divisions = int(divisions)

    pitch = 1.0 / divisions
    rows = []
    for r in range(divisions + 1):
        y = r * pitch
        if r % 2 == 0:
            xs = [c * pitch for c in range(divisions + 1)]
        else:
            xs = [0.0] + [(c + 0.5) * pitch for c in range(divisions)] + [1.0]
        rows.extend((x, y) for x in xs)
    unit_points = np.array(rows, dtype=float)

    tri = Delaunay(unit_points)
    if len(tri.coplanar):
        raise GridError(f"{len(tri.coplanar)} lattice points were left out of the triangulation")

    triangles, order = _canonical_triangles(unit_points, tri.simplices)
    adjacency = _edge_adjacency(tri.neighbors, order)

    points = unit_points * float(extent)
    points.setflags(write=False)
    triangles.setflags(write=False)
    grid = TriGrid(
        points=points,
        triangles=triangles,
        adjacency=adjacency,
        extent=float(extent),
        divisions=divisions,
    )
    logger.debug("Built %s: %d points, %d triangles", grid.grid_id, len(points), len(triangles))
    return grid


def _canonical_triangles(points, simplices):
    """Counter-clockwise triangles in a fixed order, plus the simplex index behind each row."""
    canonical = []
    for index, (a, b, c) in enumerate(simplices.tolist()):
        pa, pb, pc = points[a], points[b], points[c]
        cross = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pb[1] - pa[1]) * (pc[0] - pa[0])
        if abs(cross) < 1e-12:
            raise GridError(f"degenerate triangle ({a}, {b}, {c}) in triangulation")
        if cross < 0:
            b, c = c, b
        # rotate so the smallest index leads, keeping counter-clockwise order
        loop = [a, b, c]
        start = loop.index(min(loop))
        canonical.append((loop[start:] + loop[:start], index))
    canonical.sort(key=lambda item: (sorted(item[0]), item[0]))
    triangles = np.array([loop for loop, _ in canonical], dtype=np.int64)
    order = np.array([index for _, index in canonical], dtype=np.int64)
    return triangles, order


def _edge_adjacency(neighbors, order):
    """Edge neighbours per canonical triangle from the Delaunay ``neighbors`` table (-1 on the hull)."""
    rank = np.empty(len(order), dtype=np.int64)
    rank[order] = np.arange(len(order))
    return tuple(
        tuple(sorted(int(rank[nb]) for nb in neighbors[simplex] if nb >= 0))
        for simplex in order.tolist()
    )


def boundary_edges(pattern, grid):
    """Directed (counter-clockwise) edges of the selected region's outline."""
    selected = set(validate_pattern(pattern, grid).triangle_ids)
    edges = []
    for t in pattern.triangle_ids:
        a, b, c = grid.triangles[t].tolist()
        for u, v in ((a, b), (b, c), (c, a)):
            shared = any(
                {u, v} <= set(grid.triangles[nb].tolist())
                for nb in grid.adjacency[t]
                if nb in selected
            )
            if not shared:
                edges.append((u, v))
    return edges


def scaled_points(grid, scale_mm):
    """Grid points in mm, in the pattern frame (grid square centred on the origin)."""
    return (np.asarray(grid.points) - grid.extent / 2.0) * (scale_mm / grid.extent)


def pattern_triangles_mm(pattern, grid, scale_mm):
    """Selected triangles as a (n, 3, 2) array of counter-clockwise corners in mm."""
    validate_pattern(pattern, grid)
    points = scaled_points(grid, scale_mm)
    ids = np.asarray(pattern.triangle_ids, dtype=np.int64)
    return points[grid.triangles[ids]] if len(ids) else np.zeros((0, 3, 2))


def validate_pattern(pattern, grid):
    bad = [t for t in pattern.triangle_ids if t < 0 or t >= grid.triangle_count]
    if bad:
        raise InvalidPatternError(
            f"triangle ids {bad} are out of range for {grid.grid_id} "
            f"({grid.triangle_count} triangles)"
        )
    return pattern


def _selected_connectivity(selected, adjacency):
    """Size of every edge-connected component of two or more selected triangles, summed."""
    ids = sorted(selected)
    if not ids:
        return 0
    position = {t: k for k, t in enumerate(ids)}
    rows, cols = [], []
    for t in ids:
        for nb in adjacency[t]:
            if nb in position:
                rows.append(position[t])
                cols.append(position[nb])
    graph = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(ids), len(ids)))
    _, labels = connected_components(graph, directed=False)
    sizes = np.bincount(labels)
    return int(sizes[sizes >= 2].sum())


def connectivity(pattern, grid):
    """Number of selected triangles with at least one selected edge-neighbour."""
    validate_pattern(pattern, grid)
    return _selected_connectivity(set(pattern.triangle_ids), grid.adjacency)


def anneal_pattern(grid, n, target_connectivity, schedule):
    """
    Anneal a selection of ``n`` triangles towards ``target_connectivity``.

    Moves swap one selected triangle for one unselected triangle, both drawn
    uniformly. The energy is ``|connectivity - target|``; uphill moves are
    accepted with probability ``exp(-dE / T_k)``. Stops as soon as E reaches 0.
    """
    total = grid.triangle_count
    if not 1 <= n <= total:
        raise InfeasiblePatternError(f"n={n} is outside [1, {total}] for {grid.grid_id}")
    if not 0 <= target_connectivity <= n:
        raise InfeasiblePatternError(f"target connectivity {target_connectivity} is outside [0, {n}]")

    rng = np.random.default_rng(schedule.seed)
    current = [int(t) for t in rng.choice(total, size=n, replace=False)]
    chosen = set(current)
    pool = [t for t in range(total) if t not in chosen]

    def energy_of(selection):
        return abs(_selected_connectivity(selection, grid.adjacency) - target_connectivity)

    energy = energy_of(chosen)
    best, best_energy = sorted(current), energy
    trace = [best_energy]

    iterations = 0
    for k in range(schedule.max_iters):
        if best_energy == 0 or not pool:
            break
        iterations = k + 1
        i = int(rng.integers(n))
        j = int(rng.integers(len(pool)))
        out, into = current[i], pool[j]

        chosen.discard(out)
        chosen.add(into)
        candidate = energy_of(chosen)
        delta = candidate - energy
        if delta <= 0 or rng.random() < math.exp(-delta / schedule.temperature(k)):
            current[i], pool[j] = into, out
            energy = candidate
            if energy < best_energy:
                best, best_energy = sorted(current), energy
        else:
            chosen.discard(into)
            chosen.add(out)
        trace.append(best_energy)

    pattern = Pattern(tuple(best), grid.grid_id)
    converged = best_energy == 0
    if not converged:
        logger.warning(
            "Annealing stopped at energy %d after %d iterations (n=%d, target=%d)",
            best_energy, iterations, n, target_connectivity,
        )
    return AnnealResult(
        pattern=pattern,
        energy=best_energy,
        connectivity=_selected_connectivity(set(best), grid.adjacency),
        converged=converged,
        iterations=iterations,
        trace=trace,
    )


def sample_generation_params(rng, n_range=(10, 20)):
    """Draw N uniformly from ``n_range`` and a target connectivity uniformly from [N-2, N]."""
    n_min, n_max = n_range
    if n_min < 1 or n_min > n_max:
        raise ConfigurationError(f"empty triangle range [{n_min}, {n_max}]")
    n = int(rng.integers(n_min, n_max + 1))
    target = int(rng.integers(max(n - 2, 0), n + 1))
    return n, target
