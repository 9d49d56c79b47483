"""
Planar rigid registration of a library pattern cloud onto an imprint cloud.

The main solver is a Gaussian-mixture EM in the coherent point drift family: the
transformed source points are mixture centres with a shared, annealed
bandwidth plus a uniform outlier component, and each M-step is a weighted
Procrustes fit restricted to (tx, ty, theta_z). A nearest-neighbour ICP is
kept as a baseline. Depth is ignored; the imprint is a constant-depth
surface.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .exceptions import ConfigurationError, DegenerateGeometryError, EmptyMaskError, RegistrationError
from .meshcloud import voxel_downsample

logger = logging.getLogger(__name__)

MIN_POINTS = 10


def normalize_angle(degrees):
    """Wrap an angle into (-180, 180]."""
    wrapped = math.fmod(degrees, 360.0)
    if wrapped <= -180.0:
        wrapped += 360.0
    elif wrapped > 180.0:
        wrapped -= 360.0
    return wrapped


@dataclass(frozen=True)
class RigidTransform2D:
    """p -> R(theta_z) p + (tx, ty); translations in mm, angle in degrees."""

    tx: float = 0.0
    ty: float = 0.0
    theta_z: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, 'tx', float(self.tx))
        object.__setattr__(self, 'ty', float(self.ty))
        object.__setattr__(self, 'theta_z', normalize_angle(float(self.theta_z)))

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_rotation(cls, rotation, translation):
        theta = math.degrees(math.atan2(rotation[1, 0], rotation[0, 0]))
        return cls(translation[0], translation[1], theta)

    @property
    def rotation(self):
        theta = math.radians(self.theta_z)
        c, s = math.cos(theta), math.sin(theta)
        return np.array([[c, -s], [s, c]])

    @property
    def translation(self):
        return np.array([self.tx, self.ty])

    def as_matrix(self):
        matrix = np.eye(3)
        matrix[:2, :2] = self.rotation
        matrix[:2, 2] = self.translation
        return matrix

    def apply(self, points):
        """Transform (n, 2) or (n, 3) points; z is left untouched."""
        points = np.asarray(points, dtype=float)
        moved = points.copy()
        moved[:, :2] = points[:, :2] @ self.rotation.T + self.translation
        return moved

    def compose(self, other):
        """The transform applying ``other`` first, then ``self``."""
        translation = self.rotation @ other.translation + self.translation
        return RigidTransform2D(translation[0], translation[1], self.theta_z + other.theta_z)

    def inverse(self):
        translation = -(self.rotation.T @ self.translation)
        return RigidTransform2D(translation[0], translation[1], -self.theta_z)

    def is_close(self, other, tol_mm=1e-9, tol_deg=1e-9):
        return (
            abs(self.tx - other.tx) <= tol_mm
            and abs(self.ty - other.ty) <= tol_mm
            and abs(normalize_angle(self.theta_z - other.theta_z)) <= tol_deg
        )


@dataclass(frozen=True)
class RegistrationParams:
    max_iterations: int = 50
    convergence_tol: float = 1e-3
    sigma0: float = 1.0
    outlier_weight: float = 0.1
    sigma_decay: float = 0.7
    sigma_min: float = 0.1
    method: str = 'em'

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be at least 1")
        if not (self.convergence_tol > 0 and self.sigma0 > 0 and self.sigma_min > 0):
            raise ConfigurationError("tolerance and bandwidths must be positive")
        if not 0 < self.sigma_decay <= 1:
            raise ConfigurationError("sigma_decay must lie in (0, 1]")
        if not 0 <= self.outlier_weight < 1:
            raise ConfigurationError("outlier_weight must lie in [0, 1)")
        if self.method not in ('em', 'icp'):
            raise ConfigurationError(f"unknown registration method '{self.method}'")


@dataclass
class RefinementResult:
    transform: RigidTransform2D
    residual_rmse: float
    converged: bool
    iterations: int = 0
    trace: list = field(default_factory=list)

    @property
    def y_ref(self):
        return self.transform.ty

    @property
    def x_ref(self):
        return self.transform.tx

    @property
    def theta_z(self):
        return self.transform.theta_z


def initial_align(source, imprint_mask):
    """Translate the source centroid onto the centre of the imprint mask's bounding box."""
    if not len(source):
        raise RegistrationError("source cloud is empty")
    if imprint_mask.is_empty():
        raise EmptyMaskError("imprint mask is empty")
    cx, cy = imprint_mask.bbox_center_mm()
    centroid = source.centroid()
    return RigidTransform2D(cx - centroid[0], cy - centroid[1], 0.0)


def _procrustes(source, target, weights=None, fix_rotation=None):
    """Weighted least-squares planar rigid fit mapping ``source`` rows onto ``target`` rows.

    ``weights`` is an (m, n) matrix pairing source row m with target column n,
    or None for one-to-one pairs.
    """
    if weights is None:
        total = len(source)
        mu_s = source.mean(axis=0)
        mu_t = target.mean(axis=0)
        cross = (target - mu_t).T @ (source - mu_s)
    else:
        total = weights.sum()
        if total <= 1e-12:
            raise RegistrationError("no correspondences carry weight; clouds are too far apart")
        mu_s = weights.sum(axis=1) @ source / total
        mu_t = weights.sum(axis=0) @ target / total
        cross = (target - mu_t).T @ weights.T @ (source - mu_s)

    if fix_rotation is not None:
        rotation = RigidTransform2D(theta_z=fix_rotation).rotation
        translation = mu_t - rotation @ mu_s
        return RigidTransform2D(translation[0], translation[1], fix_rotation)

    u, singular, vt = np.linalg.svd(cross)
    if singular[0] <= 1e-12 or singular[1] <= 1e-9 * singular[0]:
        raise DegenerateGeometryError(
            "rank-deficient cross-covariance: point sets are collinear or coincident"
        )
    correction = np.diag([1.0, np.sign(np.linalg.det(u @ vt)) or 1.0])
    rotation = u @ correction @ vt
    return RigidTransform2D.from_rotation(rotation, mu_t - rotation @ mu_s)


def _rmse(tree, points):
    distances, _ = tree.query(points)
    return float(np.sqrt(np.mean(distances ** 2)))


def register(source, target, init=None, params=None, fix_rotation=None):
    """
    Find the planar rigid transform carrying ``source`` onto ``target``.

    ``fix_rotation`` (degrees) pins theta_z and solves translation only. The
    returned transform is the lowest nearest-neighbour RMSE iterate (``init``
    included); ``trace`` holds that best-so-far RMSE after every iteration.
    """
    params = params or RegistrationParams()
    init = init or RigidTransform2D.identity()
    if len(source) < MIN_POINTS or len(target) < MIN_POINTS:
        raise RegistrationError(
            f"registration needs at least {MIN_POINTS} points per cloud "
            f"(source {len(source)}, target {len(target)})"
        )
    if fix_rotation is not None:
        init = RigidTransform2D(init.tx, init.ty, fix_rotation)

    src = source.valid_points()[:, :2]
    tgt = target.valid_points()[:, :2]
    tree = cKDTree(tgt)

    current = init
    best, best_rmse = init, _rmse(tree, init.apply(src))
    trace = [best_rmse]
    converged = False
    sigma = params.sigma0
    iterations = 0

    for iterations in range(1, params.max_iterations + 1):
        moved = current.apply(src)
        if params.method == 'icp':
            _, nearest = tree.query(moved)
            update = _procrustes(src, tgt[nearest], fix_rotation=fix_rotation)
        else:
            weights = _posteriors(moved, tgt, sigma, params.outlier_weight)
            update = _procrustes(src, tgt, weights, fix_rotation=fix_rotation)

        shift = float(np.linalg.norm(update.apply(src) - moved, axis=1).mean())
        current = update
        rmse = _rmse(tree, current.apply(src))
        if rmse < best_rmse:
            best, best_rmse = current, rmse
        trace.append(best_rmse)
        logger.debug("iteration %d: sigma=%.3f shift=%.5f rmse=%.5f", iterations, sigma, shift, rmse)

        at_floor = params.method == 'icp' or sigma <= params.sigma_min
        if shift < params.convergence_tol and at_floor:
            converged = True
            break
        sigma = max(sigma * params.sigma_decay, params.sigma_min)

    if not converged:
        logger.warning("Registration did not converge in %d iterations (rmse %.4f mm)", iterations, best_rmse)
    return RefinementResult(
        transform=best,
        residual_rmse=best_rmse,
        converged=converged,
        iterations=iterations,
        trace=trace,
    )


def _posteriors(moved, target, sigma, outlier_weight):
    """E-step: responsibility of each (moved) source point for each target point."""
    sq = cdist(moved, target, 'sqeuclidean')
    gauss = np.exp(-sq / (2.0 * sigma ** 2))
    m, n = sq.shape
    outlier = (2.0 * math.pi * sigma ** 2) * outlier_weight / (1.0 - outlier_weight) * m / n
    return gauss / (gauss.sum(axis=0, keepdims=True) + outlier)


def refine_pose(imprint_cloud, imprint_mask, entry, params=None, theta_z=None, voxel_mm=None):
    """
    Pose of a library entry in the imprint frame: initial alignment, then registration.

    The imprint cloud is voxelized to ``voxel_mm`` before registration when
    given. ``theta_z`` supplies an externally known rotation.
    """
    target = imprint_cloud if voxel_mm is None else voxel_downsample(imprint_cloud, voxel_mm)
    init = initial_align(entry.cloud, imprint_mask)
    if theta_z is not None:
        # rotate about the bbox centre so the initial centroid match is kept
        centroid = entry.cloud.centroid()[:2]
        spin = RigidTransform2D(theta_z=theta_z)
        centre = init.apply(centroid[None, :])[0, :2]
        offset = centre - spin.apply(centroid[None, :])[0, :2]
        init = RigidTransform2D(offset[0], offset[1], theta_z)
    result = register(entry.cloud, target, init, params, fix_rotation=theta_z)
    logger.debug(
        "Refined '%s': y_ref=%.3f mm theta_z=%.3f deg rmse=%.4f",
        entry.label, result.y_ref, result.theta_z, result.residual_rmse,
    )
    return result
