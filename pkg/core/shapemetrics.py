"""
Masks, Hu-moment dispersion and IoU classification.

Library masks are rendered in the pattern frame (pattern square centred on
the origin, ``margin_mm`` of empty border), with row index growing along +Y.
Admission keeps the minimum pairwise Hu distance of the library above
``alpha``; classification returns the entry whose dilated mask has the
lowest IoU loss against the imprint once both are centred on their bounding
boxes.
"""
import logging
import math
from dataclasses import dataclass

import cv2
import numpy as np

from . import meshcloud
from .exceptions import (
    ConfigurationError,
    EmptyMaskError,
    InvalidPatternError,
    LibraryError,
    MaskError,
    MaskMismatchError,
)
from .patterngen import pattern_triangles_mm, validate_pattern

logger = logging.getLogger(__name__)

HU_EPSILON = 1e-8
MAX_SKIPPED_HU_TERMS = 2
EDGE_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class Mask:
    bits: np.ndarray
    pitch: float
    origin: tuple = (0.0, 0.0)

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2:
            raise MaskError(f"mask must be two-dimensional, got shape {bits.shape}")
        if not self.pitch > 0:
            raise MaskError(f"pitch must be positive, got {self.pitch}")
        object.__setattr__(self, 'bits', bits.astype(bool))
        object.__setattr__(self, 'origin', (float(self.origin[0]), float(self.origin[1])))

    @property
    def width(self):
        return self.bits.shape[1]

    @property
    def height(self):
        return self.bits.shape[0]

    @property
    def area_px(self):
        return int(np.count_nonzero(self.bits))

    def is_empty(self):
        return not self.bits.any()

    def bbox(self):
        """(row_start, row_stop, col_start, col_stop) of the set pixels, or None."""
        rows = np.flatnonzero(self.bits.any(axis=1))
        if not len(rows):
            return None
        cols = np.flatnonzero(self.bits.any(axis=0))
        return int(rows[0]), int(rows[-1]) + 1, int(cols[0]), int(cols[-1]) + 1

    def bbox_center_mm(self):
        box = self.bbox()
        if box is None:
            raise EmptyMaskError("empty mask has no bounding box")
        r0, r1, c0, c1 = box
        x = self.origin[0] + 0.5 * (c0 + c1) * self.pitch
        y = self.origin[1] + 0.5 * (r0 + r1) * self.pitch
        return x, y

    def pixel_centers_mm(self):
        """(x, y) coordinates of every set pixel centre, row-major order."""
        rows, cols = np.nonzero(self.bits)
        x = self.origin[0] + (cols + 0.5) * self.pitch
        y = self.origin[1] + (rows + 0.5) * self.pitch
        return np.column_stack([x, y])

    def to_image(self):
        return np.where(self.bits, 255, 0).astype(np.uint8)


@dataclass(frozen=True)
class HuSignature:
    # H_m = -sign(h_m) * log10|h_m|; a raw moment of exactly 0 is stored as 0.0.
    values: tuple

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        if len(values) != 7:
            raise ValueError(f"a Hu signature has 7 values, got {len(values)}")
        object.__setattr__(self, 'values', values)

    def as_array(self):
        return np.array(self.values)


@dataclass(frozen=True)
class HuComparison:
    distance: float
    skipped: int
    absolute_fallback: bool


@dataclass(frozen=True)
class IoUComparison:
    loss: float
    both_empty: bool


@dataclass(frozen=True)
class RasterConfig:
    scale_mm: float = 5.0
    pitch: float = 0.05
    margin_mm: float = 0.25
    dilation_radius_px: int = 2
    rotations_deg: tuple = (0.0,)

    def __post_init__(self):
        if not self.pitch > 0 or self.pitch > self.scale_mm / 16.0:
            raise ConfigurationError(
                f"pitch {self.pitch} mm must be positive and at most scale/16 = {self.scale_mm / 16.0} mm"
            )
        if self.margin_mm < self.dilation_radius_px * self.pitch:
            raise ConfigurationError("margin must leave room for the dilation radius")


@dataclass(frozen=True)
class ClassificationResult:
    label: str
    loss: float
    runner_up_margin: float
    index: int
    rotation_deg: float = 0.0


@dataclass(eq=False)
class LibraryEntry:
    label: str
    pattern: object
    mask: Mask
    dilated: Mask
    hu: HuSignature
    cloud: meshcloud.PointCloud
    triangles_mm: np.ndarray


def pixel_count(length, pitch):
    return int(math.ceil(length / pitch - 1e-9))


def rasterize_triangles(triangles_mm, pitch, origin, shape):
    """Set every pixel whose centre lies inside (or on the edge of) any triangle."""
    height, width = shape
    bits = np.zeros((height, width), dtype=bool)
    for tri in np.asarray(triangles_mm, dtype=float):
        lo = tri.min(axis=0)
        hi = tri.max(axis=0)
        c0 = max(int(math.floor((lo[0] - origin[0]) / pitch - 0.5)), 0)
        c1 = min(int(math.ceil((hi[0] - origin[0]) / pitch - 0.5)) + 1, width)
        r0 = max(int(math.floor((lo[1] - origin[1]) / pitch - 0.5)), 0)
        r1 = min(int(math.ceil((hi[1] - origin[1]) / pitch - 0.5)) + 1, height)
        if c0 >= c1 or r0 >= r1:
            continue
        xs = origin[0] + (np.arange(c0, c1) + 0.5) * pitch
        ys = origin[1] + (np.arange(r0, r1) + 0.5) * pitch
        px, py = np.meshgrid(xs, ys)

        a, b, c = tri
        orientation = np.sign((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
        if orientation == 0:
            continue
        inside = np.ones(px.shape, dtype=bool)
        for p, q in ((a, b), (b, c), (c, a)):
            edge = (q[0] - p[0]) * (py - p[1]) - (q[1] - p[1]) * (px - p[0])
            inside &= orientation * edge >= -EDGE_TOLERANCE
        bits[r0:r1, c0:c1] |= inside
    return Mask(bits=bits, pitch=pitch, origin=origin)


def rasterize(pattern, grid, scale_mm=5.0, pitch=0.05, margin_mm=0.25):
    """Render a pattern scaled to ``scale_mm`` into a mask of the pattern frame."""
    if not pitch > 0 or pitch > scale_mm / 16.0:
        raise ConfigurationError(f"pitch {pitch} mm is coarser than scale/16 for a {scale_mm} mm pattern")
    validate_pattern(pattern, grid)
    if pattern.n == 0:
        raise InvalidPatternError("cannot rasterize a pattern with zero area")

    side = pixel_count(scale_mm + 2 * margin_mm, pitch)
    origin = (-scale_mm / 2.0 - margin_mm, -scale_mm / 2.0 - margin_mm)
    mask = rasterize_triangles(pattern_triangles_mm(pattern, grid, scale_mm), pitch, origin, (side, side))
    if mask.is_empty():
        raise InvalidPatternError("pattern covers no pixel centre at this pitch")
    return mask


def elliptical_kernel(radius_px):
    size = 2 * radius_px + 1
    return cv2.getStructuringElement(cv2.MORPH_ELLIPSE, (size, size))


def dilate(mask, radius_px):
    """Morphological dilation with an elliptical structuring element of the given radius."""
    if int(radius_px) != radius_px or radius_px < 1:
        raise ConfigurationError(f"dilation radius must be an integer >= 1, got {radius_px}")
    grown = cv2.dilate(mask.bits.astype(np.uint8), elliptical_kernel(int(radius_px)))
    return Mask(bits=grown > 0, pitch=mask.pitch, origin=mask.origin)


def hu_signature(mask):
    if mask.is_empty():
        raise EmptyMaskError("cannot compute Hu moments of an empty mask")
    moments = cv2.moments(mask.bits.astype(np.uint8), binaryImage=True)
    raw = cv2.HuMoments(moments).ravel()
    logged = np.zeros(7)
    nonzero = raw != 0
    logged[nonzero] = -np.sign(raw[nonzero]) * np.log10(np.abs(raw[nonzero]))
    return HuSignature(tuple(logged))


def compare_hu(a, b):
    """
    Hu distance d(a, b) = sum_m |H_a - H_b| / |H_a|, normalised by the first argument.

    Terms with |H_a| < 1e-8 are skipped; with more than two skipped terms the
    distance falls back to the plain sum of absolute differences.
    """
    ha, hb = a.as_array(), b.as_array()
    diff = np.abs(ha - hb)
    small = np.abs(ha) < HU_EPSILON
    skipped = int(np.count_nonzero(small))
    if skipped > MAX_SKIPPED_HU_TERMS:
        logger.debug("Hu distance: %d near-zero terms, using absolute differences", skipped)
        return HuComparison(float(diff.sum()), skipped, True)
    if skipped:
        logger.debug("Hu distance: skipped %d near-zero terms", skipped)
    return HuComparison(float((diff[~small] / np.abs(ha[~small])).sum()), skipped, False)


def hu_distance(a, b):
    return compare_hu(a, b).distance


def hu_distances_from(a, table):
    """d(a, row) for every row of a (k, 7) table of signatures."""
    ha = a.as_array()
    diff = np.abs(np.asarray(table) - ha)
    small = np.abs(ha) < HU_EPSILON
    if np.count_nonzero(small) > MAX_SKIPPED_HU_TERMS:
        return diff.sum(axis=1)
    return (diff[:, ~small] / np.abs(ha[~small])).sum(axis=1)


def hu_distances_to(table, b):
    """d(row, b) for every row of a (k, 7) table of signatures."""
    table = np.asarray(table)
    diff = np.abs(table - b.as_array())
    magnitude = np.abs(table)
    small = magnitude < HU_EPSILON
    relative = np.where(small, 0.0, diff / np.where(small, 1.0, magnitude)).sum(axis=1)
    fallback = np.count_nonzero(small, axis=1) > MAX_SKIPPED_HU_TERMS
    return np.where(fallback, diff.sum(axis=1), relative)


def symmetric_hu_distance(a, b):
    return min(hu_distance(a, b), hu_distance(b, a))


def compare_masks(i, p):
    if i.bits.shape != p.bits.shape:
        raise MaskMismatchError(f"mask shapes differ: {i.bits.shape} vs {p.bits.shape}")
    if not math.isclose(i.pitch, p.pitch, rel_tol=1e-9):
        raise MaskMismatchError(f"mask pitches differ: {i.pitch} vs {p.pitch}")
    union = np.count_nonzero(i.bits | p.bits)
    if union == 0:
        logger.warning("IoU of two empty masks is undefined; reporting loss 1")
        return IoUComparison(1.0, True)
    intersection = np.count_nonzero(i.bits & p.bits)
    return IoUComparison(1.0 - intersection / union, False)


def iou_loss(i, p):
    """1 - |i & p| / |i | p| for two masks on the same pixel grid."""
    return compare_masks(i, p).loss


class PatternLibrary:
    """Ordered collection of admitted patterns with their masks, signatures and clouds."""

    def __init__(self, grid, alpha=0.1, raster=None, cloud=None):
        self.grid = grid
        self.alpha = float(alpha)
        self.raster = raster or RasterConfig()
        self.cloud_config = cloud or meshcloud.CloudConfig()
        # GenerationRecord of the run that built this library, when known
        self.generation = None
        self.entries = []
        self._labels = {}
        self._id_sets = set()
        self._hu_rows = []
        self._stack = None

    @property
    def scale_mm(self):
        return self.raster.scale_mm

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, index):
        return self.entries[index]

    def labels(self):
        return [entry.label for entry in self.entries]

    def index_of(self, label):
        try:
            return self._labels[label]
        except KeyError:
            raise LibraryError(f"no entry labelled '{label}'") from None

    def entry(self, label):
        return self.entries[self.index_of(label)]

    def contains(self, pattern):
        return pattern.triangle_ids in self._id_sets

    def hu_table(self):
        return np.array(self._hu_rows).reshape(-1, 7)

    def default_label(self, index=None):
        return f"p{len(self.entries) if index is None else index:04d}"

    def rasterize(self, pattern):
        return rasterize(
            pattern, self.grid, self.raster.scale_mm, self.raster.pitch, self.raster.margin_mm
        )

    def make_entry(self, pattern, label, mask=None, hu=None, cloud=None):
        mask = mask if mask is not None else self.rasterize(pattern)
        return LibraryEntry(
            label=label,
            pattern=pattern,
            mask=mask,
            dilated=dilate(mask, self.raster.dilation_radius_px),
            hu=hu if hu is not None else hu_signature(mask),
            cloud=cloud if cloud is not None else meshcloud.pattern_cloud(
                pattern, self.grid, self.raster.scale_mm, self.cloud_config
            ),
            triangles_mm=pattern_triangles_mm(pattern, self.grid, self.raster.scale_mm),
        )

    def append(self, entry):
        """Add an entry without the dispersion check (loading, or after ``admit``)."""
        if entry.label in self._labels:
            raise LibraryError(f"duplicate label '{entry.label}'")
        self._labels[entry.label] = len(self.entries)
        self._id_sets.add(entry.pattern.triangle_ids)
        self._hu_rows.append(entry.hu.as_array())
        self.entries.append(entry)
        self._stack = None

    def nearest_distance(self, hu):
        """Smallest symmetrised Hu distance from ``hu`` to any entry (inf when empty)."""
        if not self.entries:
            return math.inf
        table = self.hu_table()
        return float(np.minimum(hu_distances_from(hu, table), hu_distances_to(table, hu)).min())

    def dispersion(self):
        """Brute-force minimum symmetrised Hu distance over all entry pairs."""
        table = self.hu_table()
        best = math.inf
        for i in range(1, len(table)):
            signature = self.entries[i].hu
            earlier = table[:i]
            pair = np.minimum(hu_distances_from(signature, earlier), hu_distances_to(earlier, signature))
            best = min(best, float(pair.min()))
        return best

    def classification_stack(self):
        """Dilated masks cropped to their bounding boxes and centred on one square canvas."""
        if self._stack is None:
            crops = [_crop(entry.dilated.bits) for entry in self.entries]
            largest = max(max(crop.shape) for crop in crops)
            side = int(math.ceil(largest * 1.25)) + 8
            flat = np.stack([_centre_on_canvas(crop, side).ravel() for crop in crops]).astype(np.float32)
            self._stack = (flat, flat.sum(axis=1), side)
        return self._stack


def _crop(bits):
    rows = np.flatnonzero(bits.any(axis=1))
    cols = np.flatnonzero(bits.any(axis=0))
    if not len(rows):
        return bits[:0, :0]
    return bits[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1]


def _centre_on_canvas(crop, side):
    height, width = crop.shape
    if height > side:
        trim = (height - side) // 2
        crop = crop[trim:trim + side]
        height = side
    if width > side:
        trim = (width - side) // 2
        crop = crop[:, trim:trim + side]
        width = side
    canvas = np.zeros((side, side), dtype=bool)
    top = (side - height) // 2
    left = (side - width) // 2
    canvas[top:top + height, left:left + width] = crop
    return canvas


def _rotated_views(bits, side, rotations_deg):
    base = _centre_on_canvas(_crop(bits), side)
    centre = ((side - 1) / 2.0, (side - 1) / 2.0)
    views, angles = [], []
    for angle in rotations_deg:
        if angle == 0:
            view = base
        else:
            matrix = cv2.getRotationMatrix2D(centre, float(angle), 1.0)
            turned = cv2.warpAffine(base.astype(np.uint8), matrix, (side, side), flags=cv2.INTER_NEAREST)
            if not turned.any():
                continue
            view = _centre_on_canvas(_crop(turned > 0), side)
        views.append(view.ravel())
        angles.append(float(angle))
    return np.stack(views).astype(np.float32), angles


def admit(library, candidate, label=None):
    """
    Append ``candidate`` iff its symmetrised Hu distance to every entry exceeds alpha.

    A candidate whose triangle set is already in the library is always rejected.
    """
    validate_pattern(candidate, library.grid)
    if library.contains(candidate):
        logger.debug("Rejected %s: duplicate triangle set", candidate.triangle_ids)
        return False

    mask = library.rasterize(candidate)
    hu = hu_signature(mask)
    nearest = library.nearest_distance(hu)
    if nearest <= library.alpha:
        logger.debug("Rejected %s: Hu distance %.4f <= alpha %.4f", candidate.triangle_ids, nearest, library.alpha)
        return False

    label = label if label is not None else library.default_label()
    library.append(library.make_entry(candidate, label, mask=mask, hu=hu))
    return True


def _match_pitch(imprint, pitch):
    if math.isclose(imprint.pitch, pitch, rel_tol=1e-9):
        return imprint.bits
    factor = imprint.pitch / pitch
    size = (max(1, round(imprint.width * factor)), max(1, round(imprint.height * factor)))
    resized = cv2.resize(imprint.bits.astype(np.uint8), size, interpolation=cv2.INTER_NEAREST)
    return resized > 0


def classify(imprint, library, rotations_deg=None):
    """
    Label of the entry minimising the IoU loss against ``imprint``.

    The imprint and every dilated library mask are centred on their bounding
    boxes before comparison. The imprint is also tried at each angle of
    ``rotations_deg`` (default: the library's raster setting) and each entry
    keeps its best loss. Ties go to the lowest entry index.
    """
    if not len(library):
        raise LibraryError("cannot classify against an empty library")
    if imprint.is_empty():
        raise EmptyMaskError("imprint mask is empty")
    if rotations_deg is None:
        rotations_deg = library.raster.rotations_deg
    rotations_deg = tuple(rotations_deg) or (0.0,)

    stack, areas, side = library.classification_stack()
    views, angles = _rotated_views(_match_pitch(imprint, library.raster.pitch), side, rotations_deg)

    intersection = stack @ views.T
    union = areas[:, None] + views.sum(axis=1)[None, :] - intersection
    losses = 1.0 - intersection / union
    best_view = losses.argmin(axis=1)
    per_entry = losses[np.arange(len(losses)), best_view]

    order = np.argsort(per_entry, kind='stable')
    winner = int(order[0])
    margin = float(per_entry[order[1]] - per_entry[winner]) if len(order) > 1 else math.inf
    return ClassificationResult(
        label=library.entries[winner].label,
        loss=float(per_entry[winner]),
        runner_up_margin=margin,
        index=winner,
        rotation_deg=angles[int(best_view[winner])],
    )
