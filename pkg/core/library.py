"""
Library generation and on-disk persistence.

A saved library is a directory holding ``manifest.json`` and, per entry,
``p{index:04}.png`` (8-bit mask), ``p{index:04}.ply`` (ASCII registration
cloud) and ``p{index:04}.stl`` (binary prism for printing).
"""
import io
import logging
import math
import os
import time
from dataclasses import dataclass, replace
from pathlib import Path

import cv2
import numpy as np
from rest_framework.exceptions import ParseError
from rest_framework.parsers import JSONParser
from rest_framework.renderers import JSONRenderer

from . import meshcloud
from .exceptions import (
    ConfigurationError,
    DispersionError,
    ExportError,
    HuConsistencyError,
    LibraryFileError,
    ManifestFormatError,
    ManifestVersionError,
)
from .patterngen import (
    AnnealSchedule,
    GenerationConfig,
    Pattern,
    anneal_pattern,
    build_staggered_grid,
    sample_generation_params,
)
from .serializers import MANIFEST_VERSION, ManifestSerializer, flatten_errors
from .shapemetrics import (
    HuSignature,
    Mask,
    PatternLibrary,
    RasterConfig,
    admit,
    hu_signature,
    pixel_count,
)

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.json'
HU_TOLERANCE = 1e-9


@dataclass
class GenerationRecord:
    config: GenerationConfig
    schedule: AnnealSchedule
    seed: int
    attempts: int = 0


@dataclass
class GenerationReport:
    admitted: int
    attempts: int
    duplicates: int
    too_close: int
    unconverged: int
    elapsed_s: float


def entry_stem(index):
    return f"p{index:04d}"


def object_label(index, stl_name):
    """Label tying a pattern number to the object it is embossed on: ``p0007_bracket``."""
    stem = Path(stl_name).stem
    if not stem:
        raise ConfigurationError(f"cannot derive an object name from '{stl_name}'")
    return f"{entry_stem(index)}_{stem}"


def fresh_seed():
    return int(np.random.SeedSequence().entropy % (2 ** 32))


def build_library(count, config, schedule, raster=None, cloud=None, library=None, labels=(),
                  max_attempts=None, progress=None):
    """
    Anneal candidates and admit them until ``count`` new entries are in the library.

    Attempt ``a`` draws (N, target) from ``default_rng([seed, a, 0])`` and
    anneals with seed ``[seed, a, 1]``, where ``seed`` is ``schedule.seed``.
    Passing an existing ``library`` extends it, continuing its attempt counter
    under its recorded seed.
    Only candidates that reach their target connectivity are offered to
    ``admit``. ``labels`` name the first new entries; the rest get ``p{index:04}``.
    """
    if count < 0:
        raise ConfigurationError(f"count must be non-negative, got {count}")
    if library is None:
        grid = build_staggered_grid(config.divisions, config.extent)
        library = PatternLibrary(grid, config.alpha, raster, cloud)
    seed = schedule.seed
    attempt = 0
    if library.generation is not None:
        if seed is not None and seed != library.generation.seed:
            raise ConfigurationError(
                f"library was generated with seed {library.generation.seed}; cannot extend it with seed {seed}"
            )
        seed = library.generation.seed
        attempt = library.generation.attempts
    if seed is None:
        seed = fresh_seed()
    max_attempts = max_attempts if max_attempts is not None else max(100 * count, 100)

    labels = list(labels)
    started = time.perf_counter()
    first_attempt = attempt
    admitted = duplicates = too_close = unconverged = 0
    while admitted < count and attempt - first_attempt < max_attempts:
        params_rng = np.random.default_rng([seed, attempt, 0])
        n, target = sample_generation_params(params_rng, config.n_range)
        result = anneal_pattern(library.grid, n, target, replace(schedule, seed=[seed, attempt, 1]))
        attempt += 1
        if not result.converged:
            unconverged += 1
            continue
        if library.contains(result.pattern):
            duplicates += 1
            continue
        label = labels[admitted] if admitted < len(labels) else library.default_label()
        if admit(library, result.pattern, label):
            admitted += 1
            if progress is not None:
                progress(admitted, attempt - first_attempt)
        else:
            too_close += 1

    library.generation = GenerationRecord(config=config, schedule=replace(schedule, seed=seed), seed=seed,
                                          attempts=attempt)
    report = GenerationReport(
        admitted=admitted,
        attempts=attempt - first_attempt,
        duplicates=duplicates,
        too_close=too_close,
        unconverged=unconverged,
        elapsed_s=time.perf_counter() - started,
    )
    if admitted < count:
        logger.warning(
            "Library is short: admitted %d of %d patterns in %d attempts", admitted, count, report.attempts
        )
    else:
        logger.info(
            "Admitted %d patterns in %d attempts (%.1f s); library holds %d",
            admitted, report.attempts, report.elapsed_s, len(library),
        )
    return library, report


def manifest_data(library):
    record = library.generation
    config = record.config if record else GenerationConfig(alpha=library.alpha)
    schedule = record.schedule if record else AnnealSchedule()
    raster, cloud = library.raster, library.cloud_config
    return {
        'version': MANIFEST_VERSION,
        'grid': {
            'kind': 'staggered',
            'divisions': library.grid.divisions,
            'extent': library.grid.extent,
            'point_count': len(library.grid.points),
            'triangle_count': library.grid.triangle_count,
        },
        'generation': {
            'n_min': config.n_min,
            'n_max': config.n_max,
            'alpha': library.alpha,
            'seed': record.seed if record else None,
            'attempts': record.attempts if record else 0,
            'schedule': {'t0': schedule.t0, 'beta': schedule.beta, 'max_iters': schedule.max_iters},
        },
        'raster': {
            'scale_mm': raster.scale_mm,
            'pitch': raster.pitch,
            'margin_mm': raster.margin_mm,
            'dilation_radius_px': raster.dilation_radius_px,
            'depth_mm': cloud.depth_mm,
            'subdivision': cloud.subdivision,
            'voxel_mm': cloud.voxel_mm,
        },
        'entries': [
            {
                'label': entry.label,
                'triangle_ids': list(entry.pattern.triangle_ids),
                'hu': list(entry.hu.values),
                'mask': f"{entry_stem(index)}.png",
                'cloud': f"{entry_stem(index)}.ply",
                'stl': f"{entry_stem(index)}.stl",
            }
            for index, entry in enumerate(library)
        ],
    }


def save_library(library, directory):
    """Write every entry file, then the manifest (replaced atomically)."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ExportError(f"could not create library directory: {exc.strerror or exc}", path=directory) from exc

    depth = library.cloud_config.depth_mm
    for index, entry in enumerate(library):
        stem = entry_stem(index)
        write_mask_image(entry.mask, directory / f"{stem}.png")
        meshcloud.write_ply(entry.cloud, directory / f"{stem}.ply")
        mesh = meshcloud.pattern_to_mesh(entry.pattern, library.grid, library.scale_mm, depth)
        meshcloud.export_stl(mesh, directory / f"{stem}.stl")

    payload = JSONRenderer().render(manifest_data(library), renderer_context={'indent': 2})
    manifest = directory / MANIFEST_NAME
    staging = directory / f".{MANIFEST_NAME}.tmp"
    try:
        staging.write_bytes(payload)
        os.replace(staging, manifest)
    except OSError as exc:
        raise ExportError(f"could not write manifest: {exc.strerror or exc}", path=manifest) from exc
    logger.info("Saved %d entries to %s", len(library), directory)


def _check_version(version, path):
    try:
        major, minor = (int(part) for part in str(version).split('.'))
        supported_major, supported_minor = (int(part) for part in MANIFEST_VERSION.split('.'))
    except ValueError:
        raise ManifestVersionError(f"unreadable manifest version '{version}'", path=path) from None
    if major != supported_major or minor > supported_minor:
        raise ManifestVersionError(
            f"manifest version {version} is not supported (this build reads {MANIFEST_VERSION})", path=path
        )


def read_manifest(directory):
    path = Path(directory) / MANIFEST_NAME
    try:
        with open(path, 'rb') as handle:
            data = JSONParser().parse(io.BytesIO(handle.read()))
    except FileNotFoundError:
        raise LibraryFileError("library manifest is missing", path=path) from None
    except OSError as exc:
        raise LibraryFileError(f"could not read manifest: {exc.strerror or exc}", path=path) from exc
    except ParseError as exc:
        raise ManifestFormatError(f"manifest is not valid JSON: {exc.detail}", path=path) from exc
    if not isinstance(data, dict):
        raise ManifestFormatError("manifest must be a JSON object", path=path)

    _check_version(data.get('version'), path)
    serializer = ManifestSerializer(data=data)
    if not serializer.is_valid():
        raise ManifestFormatError("; ".join(flatten_errors(serializer.errors)), path=path)
    return serializer.validated_data


def _read_mask(path, raster):
    try:
        image = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    except cv2.error as exc:
        raise LibraryFileError(f"could not read mask: {exc}", path=path) from exc
    if image is None:
        raise LibraryFileError("mask image is missing or unreadable", path=path)
    side = pixel_count(raster.scale_mm + 2 * raster.margin_mm, raster.pitch)
    if image.shape != (side, side):
        raise LibraryFileError(f"mask is {image.shape[1]}x{image.shape[0]} px, expected {side}x{side}", path=path)
    origin = (-raster.scale_mm / 2.0 - raster.margin_mm, -raster.scale_mm / 2.0 - raster.margin_mm)
    return Mask(bits=image >= 128, pitch=raster.pitch, origin=origin)


def load_library(directory, strict=True, rotations_deg=None):
    """
    Hydrate a saved library.

    With ``strict`` (the default) every STL is parsed, each stored Hu
    signature is recomputed from its mask and must match within 1e-9, and the
    dispersion invariant is re-verified by brute force.
    """
    directory = Path(directory)
    manifest = read_manifest(directory)
    grid_data, generation, raster_data = manifest['grid'], manifest['generation'], manifest['raster']

    grid = build_staggered_grid(grid_data['divisions'], grid_data['extent'])
    if len(grid.points) != grid_data['point_count'] or grid.triangle_count != grid_data['triangle_count']:
        raise ManifestFormatError(
            f"grid {grid.grid_id} has {len(grid.points)} points and {grid.triangle_count} triangles, "
            f"manifest says {grid_data['point_count']} and {grid_data['triangle_count']}",
            path=directory / MANIFEST_NAME,
        )

    raster_kwargs = {} if rotations_deg is None else {'rotations_deg': tuple(rotations_deg)}
    try:
        raster = RasterConfig(
            scale_mm=raster_data['scale_mm'],
            pitch=raster_data['pitch'],
            margin_mm=raster_data['margin_mm'],
            dilation_radius_px=raster_data['dilation_radius_px'],
            **raster_kwargs,
        )
        cloud = meshcloud.CloudConfig(
            depth_mm=raster_data['depth_mm'],
            subdivision=raster_data['subdivision'],
            voxel_mm=raster_data['voxel_mm'],
        )
        config = GenerationConfig(
            divisions=grid_data['divisions'],
            extent=grid_data['extent'],
            n_min=generation['n_min'],
            n_max=generation['n_max'],
            alpha=generation['alpha'],
        )
        schedule = AnnealSchedule(seed=generation['seed'], **generation['schedule'])
    except ConfigurationError as exc:
        raise ManifestFormatError(str(exc), path=directory / MANIFEST_NAME) from exc

    library = PatternLibrary(grid, generation['alpha'], raster, cloud)
    for item in manifest['entries']:
        pattern = Pattern(tuple(item['triangle_ids']), grid.grid_id)
        if pattern.triangle_ids[-1] >= grid.triangle_count:
            raise ManifestFormatError(
                f"entry '{item['label']}' references triangle {pattern.triangle_ids[-1]} "
                f"but {grid.grid_id} has {grid.triangle_count}",
                path=directory / MANIFEST_NAME,
            )
        mask = _read_mask(directory / item['mask'], raster)
        stored = HuSignature(tuple(item['hu']))
        stl_path = directory / item['stl']
        if not stl_path.is_file():
            raise LibraryFileError("STL file is missing", path=stl_path)
        if strict:
            _check_hu(item['label'], stored, hu_signature(mask), directory / item['mask'])
            meshcloud.load_stl(stl_path)
        points = meshcloud.read_ply(directory / item['cloud'])
        library.append(library.make_entry(pattern, item['label'], mask=mask, hu=stored, cloud=points))

    if generation['seed'] is not None:
        library.generation = GenerationRecord(
            config=config, schedule=schedule, seed=generation['seed'], attempts=generation['attempts']
        )

    if strict and len(library) > 1:
        delta = library.dispersion()
        if not delta > library.alpha:
            raise DispersionError(
                f"library dispersion {delta:.6g} does not exceed alpha {library.alpha}", path=directory
            )
    logger.info("Loaded %d entries from %s", len(library), directory)
    return library


def _check_hu(label, stored, recomputed, path):
    a, b = stored.as_array(), recomputed.as_array()
    worst = float(np.max(np.abs(a - b)))
    if not math.isfinite(worst) or worst > HU_TOLERANCE:
        raise HuConsistencyError(
            f"entry '{label}': stored Hu values differ from the mask by up to {worst:.3g}", path=path
        )


def write_mask_image(mask, path):
    """8-bit grayscale image, 255 for set pixels; row 0 is written as the top image row."""
    try:
        written = cv2.imwrite(str(path), mask.to_image())
    except cv2.error as exc:
        raise ExportError(f"could not write mask: {exc}", path=path) from exc
    if not written:
        raise ExportError("could not write mask", path=path)


def read_mask_image(path, pitch):
    """
    Imprint mask from an 8-bit image (set where >= 128) or a 1-bit PBM (set where 1).

    The mask is placed in the sensor frame: the image is centred on the origin.
    """
    path = Path(path)
    try:
        image = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    except cv2.error as exc:
        raise LibraryFileError(f"could not read mask: {exc}", path=path) from exc
    if image is None:
        raise LibraryFileError("mask image is missing or unreadable", path=path)
    # PBM stores ink (1) as black
    bits = image < 128 if path.suffix.lower() == '.pbm' else image >= 128
    height, width = bits.shape
    return Mask(bits=bits, pitch=pitch, origin=(-width * pitch / 2.0, -height * pitch / 2.0))


def imprint_writer(directory):
    """Callback for the evaluation harness: writes ``<name>.png`` and ``<name>.ply`` per imprint."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ExportError(f"could not create output directory: {exc.strerror or exc}", path=directory) from exc

    def emit(name, imprint):
        write_mask_image(imprint.mask, directory / f"{name}.png")
        meshcloud.write_ply(imprint.cloud, directory / f"{name}.ply")

    return emit


def write_report(data, path):
    path = Path(path)
    try:
        path.write_bytes(JSONRenderer().render(data, renderer_context={'indent': 2}))
    except OSError as exc:
        raise ExportError(f"could not write report: {exc.strerror or exc}", path=path) from exc
