import json
import tempfile
from io import StringIO
from pathlib import Path

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, override_settings

from core.library import MANIFEST_NAME, load_library, save_library
from core.meshcloud import load_stl, read_ply

from .factories import small_library


class CommandTestCase(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)
        self.library_dir = self.root / 'library'
        save_library(small_library(), self.library_dir)

    def call(self, name, *args):
        out = StringIO()
        call_command(name, *args, '--library', str(self.library_dir), stdout=out, stderr=StringIO())
        return out.getvalue()

    def assertExitCode(self, code, name, *args):
        with self.assertRaises(CommandError) as ctx:
            self.call(name, *args)
        self.assertEqual(ctx.exception.returncode, code, str(ctx.exception))
        return ctx.exception


class GenerateCommandTest(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.out = Path(self.tmp.name) / 'lib'

    def generate(self, *args):
        out = StringIO()
        call_command('generate', '--out', str(self.out), *args, stdout=out)
        return out.getvalue()

    def test_generate_then_extend(self):
        output = self.generate('--count', '3', '--seed', '7', '--objects', 'bracket.stl')
        self.assertIn('--- Library Summary ---', output)
        self.assertIn('p0000_bracket', output)
        self.assertEqual(len(load_library(self.out)), 3)

        self.generate('--count', '2', '--extend')
        library = load_library(self.out)
        self.assertEqual(len(library), 5)
        self.assertEqual(library.labels()[0], 'p0000_bracket')
        self.assertEqual(library.generation.seed, 7)

    def test_refuses_to_overwrite(self):
        self.generate('--count', '1', '--seed', '7')
        with self.assertRaises(CommandError) as ctx:
            self.generate('--count', '1')
        self.assertEqual(ctx.exception.returncode, 1)
        self.assertIn('--extend', str(ctx.exception))

    def test_extend_keeps_grid_and_alpha(self):
        self.generate('--count', '1', '--seed', '7')
        for args in (('--divisions', '6'), ('--alpha', '0.5')):
            with self.assertRaises(CommandError) as ctx:
                self.generate('--count', '1', '--extend', *args)
            self.assertEqual(ctx.exception.returncode, 1)

    def test_extend_refuses_a_new_seed(self):
        self.generate('--count', '1', '--seed', '7')
        with self.assertRaises(CommandError) as ctx:
            self.generate('--count', '1', '--extend', '--seed', '8')
        self.assertEqual(ctx.exception.returncode, 1)
        self.assertEqual(load_library(self.out).generation.seed, 7)
        self.assertEqual(len(load_library(self.out)), 1)

    def test_extend_without_library(self):
        with self.assertRaises(CommandError) as ctx:
            self.generate('--count', '1', '--extend')
        self.assertEqual(ctx.exception.returncode, 2)

    @override_settings(TACTAG={'N_MIN': 12, 'N_MAX': 14, 'ALPHA': 0.2})
    def test_settings_drive_generation(self):
        self.generate('--count', '2', '--seed', '3', '--quiet')
        data = json.loads((self.out / MANIFEST_NAME).read_text())
        self.assertEqual(data['generation']['n_min'], 12)
        self.assertEqual(data['generation']['alpha'], 0.2)
        for entry in data['entries']:
            self.assertTrue(12 <= len(entry['triangle_ids']) <= 14)

    def test_quiet_prints_nothing(self):
        self.assertEqual(self.generate('--count', '1', '--seed', '7', '--quiet'), '')


class PipelineCommandTest(CommandTestCase):
    def test_simulate_classify_refine(self):
        imprints = self.root / 'imprints'
        output = self.call(
            'simulate', '--label', 'p0002', '--y', '1.5', '--theta', '1.0', '--seed', '5', '--out', str(imprints)
        )
        self.assertIn('p0002_imprint.png', output)
        mask = imprints / 'p0002_imprint.png'
        cloud = imprints / 'p0002_imprint.ply'
        self.assertTrue(mask.exists() and cloud.exists())

        output = self.call('classify', '--imprint', str(mask), '--fast')
        self.assertIn('label: p0002', output)
        self.assertIn('margin:', output)

        output = self.call('refine', '--imprint-cloud', str(cloud), '--imprint-mask', str(mask), '--label', 'p0002')
        y_ref = float(next(line for line in output.splitlines() if line.startswith('y_ref:')).split()[1])
        self.assertAlmostEqual(y_ref, 1.5, delta=0.2)

    def test_refine_with_known_rotation(self):
        imprints = self.root / 'imprints'
        self.call('simulate', '--label', 'p0001', '--y', '-2.0', '--theta', '2.0', '--out', str(imprints), '--fast')
        output = self.call(
            'refine', '--fast', '--label', 'p0001', '--theta', '2.0', '--method', 'icp',
            '--imprint-cloud', str(imprints / 'p0001_imprint.ply'),
            '--imprint-mask', str(imprints / 'p0001_imprint.png'),
        )
        self.assertIn('theta_z: +2.000 deg', output)

    def test_export(self):
        out = self.root / 'export'
        output = self.call('export', '--all', '--out', str(out), '--fast')
        self.assertIn('Exported 6 STL file(s)', output)
        self.assertEqual(len(list(out.glob('*.stl'))), 6)
        self.call('export', '--label', 'p0004', '--format', 'ply', '--out', str(out), '--fast')
        self.assertTrue((out / 'p0004.ply').exists())

    def test_export_one_entry_to_named_files(self):
        stl = self.root / 'parts' / 'tag.stl'
        cloud = self.root / 'parts' / 'tag.ply'
        output = self.call('export', '--label', 'p0002', '--stl', str(stl), '--cloud', str(cloud), '--fast')
        self.assertIn('Exported p0002', output)
        library = load_library(self.library_dir, strict=False)
        mesh = load_stl(stl)
        self.assertTrue(mesh.is_watertight)
        self.assertEqual(len(read_ply(cloud)), len(library.entry('p0002').cloud))

    def test_named_files_need_one_label(self):
        stl = str(self.root / 'tag.stl')
        self.assertExitCode(1, 'export', '--stl', stl, '--fast')
        self.assertExitCode(1, 'export', '--label', 'p0000', '--label', 'p0001', '--stl', stl, '--fast')
        self.assertExitCode(1, 'export', '--all', '--cloud', stl, '--fast')

    def test_unknown_label(self):
        self.assertExitCode(1, 'export', '--label', 'p0099', '--out', str(self.root / 'x'), '--fast')
        self.assertExitCode(1, 'export', '--out', str(self.root / 'x'), '--fast')


class EvaluateCommandTest(CommandTestCase):
    def evaluate(self, *args):
        report = self.root / 'report.json'
        output = self.call('evaluate', *args, '--seed', '4', '--fast', '--report', str(report))
        return output, json.loads(report.read_text())

    def test_classification(self):
        output, report = self.evaluate('classification', '--k', '4', '--noise', '0', '--dropout', '0')
        self.assertIn('Correct: 4/4', output)
        self.assertEqual(report['total'], 4)
        self.assertEqual(report['seed'], 4)
        self.assertEqual(len(report['trials']), 4)

    def test_refinement(self):
        output, report = self.evaluate('refinement', '--label', 'p0000', '--offsets', '-1', '2')
        self.assertEqual([row['offset'] for row in report['rows']], [-1.0, 2.0])
        self.assertLess(report['worst_error_mm'], 0.5)

    def test_insertion_with_emitted_imprints(self):
        emit = self.root / 'emit'
        output, report = self.evaluate('insertion', '--trials', '3', '--hole', '40', '--emit', str(emit))
        self.assertEqual(report['successes'], 3)
        self.assertTrue(report['with_refinement'])
        self.assertEqual(len(list(emit.glob('*_t*.png'))), 3)

    def test_insertion_presets(self):
        _, report = self.evaluate('insertion', '--trials', '2', '--shape', 'cylinder', '--no-refine')
        self.assertEqual(report['spec']['shape'], 'cylinder')
        self.assertFalse(report['with_refinement'])

    def test_usage_errors(self):
        self.assertExitCode(1, 'evaluate', 'refinement', '--offsets', '0', '1')
        self.assertExitCode(1, 'evaluate', 'insertion', '--trials', '0')
        self.assertExitCode(1, 'evaluate', 'insertion', '--shape', 'stairs', '--hole', '50')
        self.assertExitCode(1, 'evaluate', 'classification', '--k', '7', '--fast')
        self.assertExitCode(1, 'evaluate', 'teleport')

    def test_missing_library(self):
        self.library_dir = self.root / 'nowhere'
        error = self.assertExitCode(2, 'evaluate', 'classification', '--k', '1')
        self.assertIn(MANIFEST_NAME, str(error))
