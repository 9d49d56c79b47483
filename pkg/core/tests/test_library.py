import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from core.exceptions import (
    ConfigurationError,
    DispersionError,
    ExportError,
    HuConsistencyError,
    LibraryFileError,
    ManifestFormatError,
    ManifestVersionError,
)
from core.library import (
    MANIFEST_NAME,
    build_library,
    load_library,
    object_label,
    read_mask_image,
    save_library,
    write_mask_image,
)
from core.meshcloud import CloudConfig
from core.patterngen import AnnealSchedule, GenerationConfig
from core.shapemetrics import Mask, RasterConfig, classify, hu_signature

from .factories import small_library


def triangle_sets(library):
    return [entry.pattern.triangle_ids for entry in library]


class BuildLibraryTest(SimpleTestCase):
    def test_seeded_build_is_deterministic(self):
        library, report = build_library(6, GenerationConfig(), AnnealSchedule(seed=11))
        self.assertEqual(report.admitted, 6)
        self.assertEqual(triangle_sets(library), triangle_sets(small_library()))
        self.assertEqual(library.labels(), [f'p{i:04d}' for i in range(6)])

    def test_dispersion_exceeds_alpha(self):
        library = small_library()
        self.assertGreater(library.dispersion(), library.alpha)

    def test_extending_continues_the_same_sequence(self):
        library, first = build_library(3, GenerationConfig(), AnnealSchedule(seed=11))
        library, second = build_library(2, GenerationConfig(), AnnealSchedule(), library=library)
        self.assertEqual(triangle_sets(library), triangle_sets(small_library())[:5])
        self.assertEqual(library.generation.seed, 11)
        self.assertEqual(library.generation.attempts, first.attempts + second.attempts)

    def test_extending_keeps_the_recorded_seed(self):
        library, _ = build_library(2, GenerationConfig(), AnnealSchedule(seed=11))
        with self.assertRaises(ConfigurationError):
            build_library(1, GenerationConfig(), AnnealSchedule(seed=12), library=library)
        library, _ = build_library(1, GenerationConfig(), AnnealSchedule(seed=11), library=library)
        self.assertEqual(library.generation.seed, 11)
        self.assertEqual(triangle_sets(library), triangle_sets(small_library())[:3])

    def test_object_labels(self):
        library, _ = build_library(
            2, GenerationConfig(), AnnealSchedule(seed=11), labels=[object_label(0, 'parts/bracket.stl')]
        )
        self.assertEqual(library.labels(), ['p0000_bracket', 'p0001'])

    def test_short_library_is_reported(self):
        with self.assertLogs('core.library', level='WARNING'):
            library, report = build_library(5, GenerationConfig(), AnnealSchedule(seed=11), max_attempts=1)
        self.assertLessEqual(report.admitted, 1)
        self.assertEqual(report.attempts, 1)

    def test_invalid_arguments(self):
        with self.assertRaises(ConfigurationError):
            build_library(-1, GenerationConfig(), AnnealSchedule(seed=1))
        with self.assertRaises(ConfigurationError):
            object_label(3, '.stl')


class SavedLibraryTestCase(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name) / 'library'
        self.library = small_library()
        save_library(self.library, self.dir)

    def read_manifest(self):
        return json.loads((self.dir / MANIFEST_NAME).read_text())

    def write_manifest(self, data):
        (self.dir / MANIFEST_NAME).write_text(json.dumps(data))


class SaveLoadTest(SavedLibraryTestCase):
    def test_directory_layout(self):
        names = sorted(path.name for path in self.dir.iterdir())
        expected = [MANIFEST_NAME] + [f'p{i:04d}.{ext}' for i in range(6) for ext in ('ply', 'png', 'stl')]
        self.assertEqual(names, sorted(expected))

    def test_manifest_contents(self):
        data = self.read_manifest()
        self.assertEqual(data['version'], '1.0')
        self.assertEqual(data['grid'], {
            'kind': 'staggered', 'divisions': 4, 'extent': 4.0, 'point_count': 27, 'triangle_count': 36,
        })
        self.assertEqual(len(data['entries']), len(self.library))
        self.assertEqual(data['generation']['seed'], 11)
        first = data['entries'][0]
        self.assertEqual(first['mask'], 'p0000.png')
        self.assertEqual(first['triangle_ids'], list(self.library[0].pattern.triangle_ids))

    def test_round_trip(self):
        loaded = load_library(self.dir)
        self.assertEqual(loaded.labels(), self.library.labels())
        self.assertEqual(triangle_sets(loaded), triangle_sets(self.library))
        self.assertEqual(loaded.alpha, self.library.alpha)
        for ours, theirs in zip(self.library, loaded):
            np.testing.assert_array_equal(ours.mask.bits, theirs.mask.bits)
            self.assertEqual(ours.hu, theirs.hu)
            np.testing.assert_allclose(ours.cloud.points, theirs.cloud.points, atol=1e-6)
        self.assertEqual(loaded.generation.attempts, self.library.generation.attempts)

    def test_round_trip_keeps_classification(self):
        loaded = load_library(self.dir, rotations_deg=(0.0,))
        for entry in loaded:
            self.assertEqual(classify(entry.mask, loaded).label, entry.label)

    def test_saving_twice_overwrites(self):
        save_library(self.library, self.dir)
        self.assertEqual(len(load_library(self.dir)), len(self.library))
        self.assertFalse((self.dir / f'.{MANIFEST_NAME}.tmp').exists())

    def test_unwritable_target(self):
        blocker = Path(self.tmp.name) / 'blocker'
        blocker.write_text('not a directory')
        with self.assertRaises(ExportError) as ctx:
            save_library(self.library, blocker / 'library')
        self.assertIn('blocker', str(ctx.exception))


class CorruptLibraryTest(SavedLibraryTestCase):
    def test_duplicate_label(self):
        data = self.read_manifest()
        data['entries'][1]['label'] = data['entries'][0]['label']
        self.write_manifest(data)
        with self.assertRaises(ManifestFormatError) as ctx:
            load_library(self.dir)
        self.assertIn("duplicate label 'p0000'", str(ctx.exception))

    def test_edited_hu_values(self):
        data = self.read_manifest()
        data['entries'][2]['hu'][0] += 0.01
        self.write_manifest(data)
        with self.assertRaises(HuConsistencyError):
            load_library(self.dir)
        self.assertEqual(len(load_library(self.dir, strict=False)), len(self.library))

    def test_newer_major_version(self):
        data = self.read_manifest()
        data['version'] = '2.0'
        self.write_manifest(data)
        with self.assertRaises(ManifestVersionError):
            load_library(self.dir)

    def test_newer_minor_version(self):
        data = self.read_manifest()
        data['version'] = '1.1'
        self.write_manifest(data)
        with self.assertRaises(ManifestVersionError):
            load_library(self.dir)

    def test_invalid_json(self):
        (self.dir / MANIFEST_NAME).write_text('{"version": "1.0",')
        with self.assertRaises(ManifestFormatError):
            load_library(self.dir)

    def test_schema_errors_name_the_field(self):
        data = self.read_manifest()
        data['entries'][0]['hu'] = [0.0] * 6
        self.write_manifest(data)
        with self.assertRaises(ManifestFormatError) as ctx:
            load_library(self.dir)
        self.assertIn('hu', str(ctx.exception))

    def test_grid_mismatch(self):
        data = self.read_manifest()
        data['grid']['triangle_count'] = 40
        self.write_manifest(data)
        with self.assertRaises(ManifestFormatError):
            load_library(self.dir)

    def test_missing_manifest(self):
        (self.dir / MANIFEST_NAME).unlink()
        with self.assertRaises(LibraryFileError):
            load_library(self.dir)

    def test_missing_entry_files(self):
        (self.dir / 'p0003.png').unlink()
        with self.assertRaises(LibraryFileError) as ctx:
            load_library(self.dir)
        self.assertIn('p0003.png', str(ctx.exception))

        save_library(self.library, self.dir)
        (self.dir / 'p0001.stl').unlink()
        with self.assertRaises(LibraryFileError):
            load_library(self.dir, strict=False)

    def test_alpha_above_dispersion(self):
        data = self.read_manifest()
        data['generation']['alpha'] = 100.0
        self.write_manifest(data)
        with self.assertRaises(DispersionError):
            load_library(self.dir)
        self.assertEqual(len(load_library(self.dir, strict=False)), len(self.library))


class MaskImageTest(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)
        bits = np.zeros((30, 40), dtype=bool)
        bits[5:12, 8:30] = True
        bits[12:25, 8:14] = True
        self.mask = Mask(bits, 0.05)

    def test_png_round_trip_is_centred(self):
        path = self.dir / 'imprint.png'
        write_mask_image(self.mask, path)
        loaded = read_mask_image(path, 0.05)
        np.testing.assert_array_equal(loaded.bits, self.mask.bits)
        np.testing.assert_allclose(loaded.origin, (-1.0, -0.75))
        self.assertEqual(hu_signature(loaded), hu_signature(self.mask))

    def test_pbm_ink_is_set(self):
        path = self.dir / 'imprint.pbm'
        path.write_bytes(b'P1\n4 2\n0 1 1 0\n0 0 1 0\n')
        loaded = read_mask_image(path, 0.1)
        np.testing.assert_array_equal(loaded.bits, [[0, 1, 1, 0], [0, 0, 1, 0]])

    def test_missing_image(self):
        with self.assertRaises(LibraryFileError):
            read_mask_image(self.dir / 'nothing.png', 0.05)


class CustomRasterTest(SimpleTestCase):
    def test_round_trip_with_non_default_settings(self):
        raster = RasterConfig(pitch=0.1, margin_mm=0.3, dilation_radius_px=1)
        cloud = CloudConfig(depth_mm=0.5, voxel_mm=0.25)
        library, _ = build_library(3, GenerationConfig(alpha=0.2), AnnealSchedule(seed=4), raster, cloud)
        with tempfile.TemporaryDirectory() as tmp:
            save_library(library, tmp)
            loaded = load_library(tmp)
        self.assertEqual(loaded.raster.pitch, 0.1)
        self.assertEqual(loaded.raster.dilation_radius_px, 1)
        self.assertEqual(loaded.cloud_config.depth_mm, 0.5)
        self.assertEqual(loaded.alpha, 0.2)
        self.assertEqual(loaded[0].mask.bits.shape, (56, 56))
