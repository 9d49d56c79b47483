"""
Simulated tactile sensor and the evaluation harness.

The sensor frame has its origin at the centre of the sensing window; a
library pattern grasped with zero perturbation sits centred in the window.
A perturbation (x, y, theta_z) moves the pattern by p -> R(theta_z) p + (x, y),
which is exactly the transform ``refine_pose`` recovers.
"""
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from shapely.geometry import Point, Polygon
from shapely.affinity import rotate, translate

from .exceptions import ConfigurationError, ImprintOutsideWindowError
from .meshcloud import PointCloud
from .registration import RigidTransform2D, refine_pose
from .shapemetrics import Mask, classify, pixel_count, rasterize_triangles

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SensorSpec:
    width_mm: float = 16.0
    height_mm: float = 12.0
    pitch: float = 0.05
    depth_mm: float = 1.0
    depth_noise_sigma: float = 0.02
    dropout_fraction: float = 0.05

    def __post_init__(self):
        if not self.pitch > 0:
            raise ConfigurationError(f"sensor pitch must be positive, got {self.pitch}")
        if not (self.width_mm > 0 and self.height_mm > 0):
            raise ConfigurationError("sensor window must have positive size")
        if self.depth_noise_sigma < 0:
            raise ConfigurationError("depth noise sigma must be non-negative")
        if not 0 <= self.dropout_fraction < 1:
            raise ConfigurationError("dropout fraction must lie in [0, 1)")

    @property
    def shape(self):
        return pixel_count(self.height_mm, self.pitch), pixel_count(self.width_mm, self.pitch)

    @property
    def origin(self):
        return (-self.width_mm / 2.0, -self.height_mm / 2.0)

    def noiseless(self):
        return SensorSpec(self.width_mm, self.height_mm, self.pitch, self.depth_mm, 0.0, 0.0)


@dataclass(frozen=True)
class Perturbation:
    x: float = 0.0
    y: float = 0.0
    theta_z: float = 0.0

    def as_transform(self):
        return RigidTransform2D(self.x, self.y, self.theta_z)


@dataclass(frozen=True)
class PerturbationRanges:
    x: tuple = (-2.5, 2.5)
    y: tuple = (-2.5, 2.5)
    theta_z: tuple = (-3.0, 3.0)

    def __post_init__(self):
        for name in ('x', 'y', 'theta_z'):
            low, high = getattr(self, name)
            if low > high:
                raise ConfigurationError(f"invalid {name} range [{low}, {high}]")


@dataclass(frozen=True)
class InsertionSpec:
    """Peg and hole of one shadow box: square/rectangle sides or cylinder diameters (mm)."""

    peg_side: float
    hole_side: float
    shape: str = 'square'
    peg_width: float = None
    hole_width: float = None

    PRESETS = {
        'cube': ('square', 30.2, 31.6, None, None),
        'cube-tight': ('square', 30.2, 30.7, None, None),
        'stairs': ('rectangle', 46.2, 48.5, 20.3, 22.3),
        'cylinder': ('cylinder', 30.2, 31.5, None, None),
    }

    def __post_init__(self):
        if self.shape not in ('square', 'rectangle', 'cylinder'):
            raise ConfigurationError(f"unknown peg shape '{self.shape}'")
        if not self.hole_side > self.peg_side:
            raise ConfigurationError("hole must be larger than the peg")
        if self.shape == 'rectangle' and not (self.hole_width or 0) > (self.peg_width or 0) > 0:
            raise ConfigurationError("rectangular hole must be wider than the peg")

    @classmethod
    def square(cls, peg_side, hole_side):
        return cls(peg_side=peg_side, hole_side=hole_side)

    @classmethod
    def preset(cls, name):
        try:
            shape, peg, hole, peg_width, hole_width = cls.PRESETS[name]
        except KeyError:
            raise ConfigurationError(f"unknown insertion preset '{name}'") from None
        return cls(peg_side=peg, hole_side=hole, shape=shape, peg_width=peg_width, hole_width=hole_width)

    def _box(self, length, width):
        width = length if width is None else width
        return Polygon([
            (-length / 2, -width / 2), (length / 2, -width / 2),
            (length / 2, width / 2), (-length / 2, width / 2),
        ])

    def peg_outline(self):
        return self._box(self.peg_side, self.peg_width)

    def hole_outline(self):
        return self._box(self.hole_side, self.hole_width)


@dataclass
class Imprint:
    mask: Mask
    cloud: PointCloud
    partial: bool = False


@dataclass
class ClassificationReport:
    total: int
    correct: int
    trials: list = field(default_factory=list)
    confusions: list = field(default_factory=list)
    mean_ms: float = 0.0

    @property
    def accuracy(self):
        return self.correct / self.total if self.total else 0.0


@dataclass
class RefinementRow:
    offset: float
    y_ref: float
    theta_z: float
    error_mm: float
    error_percent: float
    converged: bool


@dataclass
class InsertionReport:
    trials: int
    successes: int
    with_refinement: bool
    spec: InsertionSpec
    rows: list = field(default_factory=list)

    @property
    def rate(self):
        return self.successes / self.trials if self.trials else 0.0


def trial_rng(seed, trial):
    """Independent stream for one trial, reproducible regardless of scheduling."""
    return np.random.default_rng([int(seed), int(trial)])


def sample_perturbation(rng, ranges=None):
    ranges = ranges or PerturbationRanges()
    return Perturbation(
        x=float(rng.uniform(*ranges.x)) if ranges.x[0] < ranges.x[1] else float(ranges.x[0]),
        y=float(rng.uniform(*ranges.y)) if ranges.y[0] < ranges.y[1] else float(ranges.y[0]),
        theta_z=float(rng.uniform(*ranges.theta_z)) if ranges.theta_z[0] < ranges.theta_z[1] else float(ranges.theta_z[0]),
    )


def render_imprint(entry, pert, sensor, rng):
    """
    Tactile image mask and indentation cloud of ``entry`` under ``pert``.

    The cloud holds the centre of every set pixel at depth ``depth_mm`` plus
    Gaussian noise, with ``dropout_fraction`` of the points removed at random.
    """
    transform = pert.as_transform()
    corners = entry.triangles_mm.reshape(-1, 2)
    moved = transform.apply(corners).reshape(entry.triangles_mm.shape)

    mask = rasterize_triangles(moved, sensor.pitch, sensor.origin, sensor.shape)
    if mask.is_empty():
        raise ImprintOutsideWindowError(f"pattern '{entry.label}' lies outside the sensor window under {pert}")

    lo, hi = moved.reshape(-1, 2).min(axis=0), moved.reshape(-1, 2).max(axis=0)
    half_w, half_h = sensor.width_mm / 2.0, sensor.height_mm / 2.0
    partial = bool(lo[0] < -half_w or lo[1] < -half_h or hi[0] > half_w or hi[1] > half_h)
    if partial:
        logger.warning("Imprint of '%s' is only partially inside the sensor window", entry.label)

    xy = mask.pixel_centers_mm()
    z = np.full(len(xy), sensor.depth_mm)
    if sensor.depth_noise_sigma > 0:
        z = z + rng.normal(0.0, sensor.depth_noise_sigma, size=len(xy))
    points = np.column_stack([xy, z])
    if sensor.dropout_fraction > 0:
        points = points[rng.random(len(points)) >= sensor.dropout_fraction]
    return Imprint(mask=mask, cloud=PointCloud(points), partial=partial)


def insertion_success(residual, spec):
    """
    Whether the peg, displaced by ``residual``, fits inside the hole.

    Square and rectangular pegs fit when every corner of the rotated, offset
    peg lies inside the hole outline; a cylinder fits when the centre offset
    plus the peg radius stays within the hole radius.
    """
    if abs(residual.theta_z) >= 45.0:
        raise ConfigurationError(f"residual rotation {residual.theta_z} deg is outside (-45, 45)")
    if spec.shape == 'cylinder':
        offset = math.hypot(residual.x, residual.y)
        return offset + spec.peg_side / 2.0 <= spec.hole_side / 2.0
    peg = translate(rotate(spec.peg_outline(), residual.theta_z, origin=(0, 0)), residual.x, residual.y)
    hole = spec.hole_outline()
    return all(hole.covers(Point(x, y)) for x, y in list(peg.exterior.coords)[:-1])


def eval_classification(library, k, trials_per_pattern, sensor, seed, ranges=None, emit=None):
    """Classify simulated imprints of ``k`` random entries against the whole library."""
    if not 1 <= k <= len(library):
        raise ConfigurationError(f"k={k} must lie in [1, {len(library)}] for this library")
    chosen = np.random.default_rng([int(seed)]).choice(len(library), size=k, replace=False)
    report = ClassificationReport(total=0, correct=0)
    elapsed = []
    trial = 0
    for index in sorted(int(i) for i in chosen):
        entry = library[index]
        for repeat in range(trials_per_pattern):
            rng = trial_rng(seed, trial)
            trial += 1
            pert = sample_perturbation(rng, ranges)
            imprint = render_imprint(entry, pert, sensor, rng)
            started = time.perf_counter()
            result = classify(imprint.mask, library)
            elapsed.append((time.perf_counter() - started) * 1000.0)

            ok = result.label == entry.label
            report.total += 1
            report.correct += int(ok)
            report.trials.append({
                'label': entry.label,
                'predicted': result.label,
                'correct': ok,
                'loss': result.loss,
                'margin': result.runner_up_margin,
                'perturbation': asdict(pert),
            })
            if not ok:
                report.confusions.append((entry.label, result.label))
            if emit is not None:
                emit(f"{entry.label}_{repeat}", imprint)
    report.mean_ms = float(np.mean(elapsed)) if elapsed else 0.0
    logger.info(
        "Classification: %d/%d correct, %.1f ms per query", report.correct, report.total, report.mean_ms
    )
    return report


def eval_refinement(entry, offsets, sensor, seed, params=None, voxel_mm=None, emit=None):
    """Recover pure Y offsets by pose refinement and tabulate the errors."""
    if not offsets:
        raise ConfigurationError("no offsets given")
    if any(offset == 0 for offset in offsets):
        raise ConfigurationError("offset 0 has no defined percent error; leave it out")
    rows = []
    for trial, offset in enumerate(offsets):
        imprint = render_imprint(entry, Perturbation(y=float(offset)), sensor, trial_rng(seed, trial))
        result = refine_pose(imprint.cloud, imprint.mask, entry, params, voxel_mm=voxel_mm)
        error = abs(result.y_ref - offset)
        rows.append(RefinementRow(
            offset=float(offset),
            y_ref=result.y_ref,
            theta_z=result.theta_z,
            error_mm=error,
            error_percent=error / abs(offset) * 100.0,
            converged=result.converged,
        ))
        if emit is not None:
            emit(f"{entry.label}_y{offset:+.1f}", imprint)
    return rows


def eval_insertion(entry, spec, n_trials, with_refinement, sensor, seed, ranges=None, params=None,
                   voxel_mm=None, emit=None):
    """
    Monte Carlo peg-in-hole trials under random grasp perturbations.

    The grasp pushes the part to its centroid along X and the gripper reports
    theta_z, so the residual is (0, y, 0) before refinement and
    (0, y - y_ref, 0) after it. Trial ``t`` draws from ``trial_rng(seed, t)``
    whether or not refinement runs, so both modes see the same perturbations.
    """
    if n_trials < 1:
        raise ConfigurationError("n_trials must be at least 1")
    report = InsertionReport(trials=n_trials, successes=0, with_refinement=with_refinement, spec=spec)
    for trial in range(n_trials):
        rng = trial_rng(seed, trial)
        pert = sample_perturbation(rng, ranges)
        y_ref = 0.0
        if with_refinement:
            imprint = render_imprint(entry, pert, sensor, rng)
            result = refine_pose(
                imprint.cloud, imprint.mask, entry, params, theta_z=pert.theta_z, voxel_mm=voxel_mm
            )
            y_ref = result.y_ref
            if emit is not None:
                emit(f"{entry.label}_t{trial:02d}", imprint)
        residual = Perturbation(x=0.0, y=pert.y - y_ref, theta_z=0.0)
        ok = insertion_success(residual, spec)
        report.successes += int(ok)
        report.rows.append({
            'perturbation': asdict(pert),
            'y_ref': y_ref,
            'residual_y': residual.y,
            'success': ok,
        })
    logger.info(
        "Insertion (%s, refinement=%s): %d/%d", spec.shape, with_refinement, report.successes, n_trials
    )
    return report
