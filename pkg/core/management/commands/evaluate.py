import math
from dataclasses import asdict
from pathlib import Path

from core import conf
from core.imprintsim import InsertionSpec, eval_classification, eval_insertion, eval_refinement
from core.library import fresh_seed, imprint_writer, write_report
from core.management.base import TactagCommand, UsageError

SHAPES = ['square'] + list(InsertionSpec.PRESETS)


def _finite(value):
    return value if not isinstance(value, float) or math.isfinite(value) else None


class Command(TactagCommand):
    help = 'Run the classification, refinement or insertion experiment on simulated imprints'

    def add_command_arguments(self, parser):
        parser.add_argument('experiment', choices=['classification', 'refinement', 'insertion'])
        parser.add_argument('--label', default=None, help='Entry used for refinement/insertion (default: the first)')
        parser.add_argument('--k', type=int, default=30, help='Patterns drawn for classification')
        parser.add_argument('--per-pattern', type=int, default=1, help='Imprints per drawn pattern')
        parser.add_argument(
            '--offsets', type=float, nargs='+', default=[-3.0, -2.0, -1.0, 1.0, 2.0, 3.0], metavar='MM',
            help='Y offsets for the refinement table',
        )
        parser.add_argument('--noise', type=float, default=None, help='Depth noise sigma in mm')
        parser.add_argument('--dropout', type=float, default=None, help='Fraction of cloud points dropped')
        parser.add_argument('--hole', type=float, default=None, help='Square hole side in mm')
        parser.add_argument('--peg', type=float, default=None, help='Square peg side in mm')
        parser.add_argument('--shape', choices=SHAPES, default='square', help='Peg/hole pair for insertion')
        parser.add_argument('--trials', type=int, default=20, help='Insertion trials')
        parser.add_argument('--no-refine', action='store_true', help='Insert without pose refinement')
        parser.add_argument('--emit', default=None, help='Write every rendered imprint and report.json here')
        parser.add_argument('--report', default=None, help='Report path (default: report.json, or inside --emit)')

    def run(self, **options):
        experiment = options['experiment']
        if experiment == 'refinement' and any(offset == 0 for offset in options['offsets']):
            raise UsageError('offset 0 has no defined percent error; leave it out')
        if options['trials'] < 1 or options['per_pattern'] < 1:
            raise UsageError('--trials and --per-pattern must be at least 1')
        if options['shape'] != 'square' and (options['hole'] is not None or options['peg'] is not None):
            raise UsageError(f"--hole/--peg only apply to the square shape, not '{options['shape']}'")

        library = self.load(options)
        if experiment == 'classification' and not 1 <= options['k'] <= len(library):
            raise UsageError(f"--k must lie in [1, {len(library)}] for this library")

        seed = options['seed'] if options['seed'] is not None else fresh_seed()
        sensor = conf.sensor_spec(
            pitch=options['pitch'],
            depth_noise_sigma=options['noise'],
            dropout_fraction=options['dropout'],
        )
        emit = imprint_writer(options['emit']) if options['emit'] else None
        header = {'experiment': experiment, 'seed': seed, 'library_size': len(library), 'sensor': asdict(sensor)}

        if experiment == 'classification':
            report = eval_classification(
                library, options['k'], options['per_pattern'], sensor, seed, conf.perturbation_ranges(), emit
            )
            data = self.show_classification(report)
        elif experiment == 'refinement':
            entry = self.pick_entry(library, options['label'])
            rows = eval_refinement(
                entry, options['offsets'], sensor, seed, conf.registration_params(), emit=emit
            )
            data = self.show_refinement(entry, rows)
        else:
            entry = self.pick_entry(library, options['label'])
            spec = conf.insertion_spec(options['hole'], options['peg'], options['shape'])
            report = eval_insertion(
                entry, spec, options['trials'], not options['no_refine'], sensor, seed,
                conf.perturbation_ranges(), conf.registration_params(), emit=emit,
            )
            data = self.show_insertion(entry, report)

        report_path = options['report'] or (
            str(Path(options['emit']) / 'report.json') if options['emit'] else 'report.json'
        )
        write_report({**header, **data}, report_path)
        self.say(f'Report written to {report_path}')

    def pick_entry(self, library, label):
        return self.find_entry(library, label) if label else library[0]

    def show_classification(self, report):
        self.say(f"{'label':<24} {'predicted':<24} {'loss':>7} {'margin':>7}")
        for trial in report.trials:
            margin = trial['margin']
            self.say(
                f"{trial['label']:<24} {trial['predicted']:<24} {trial['loss']:7.4f} "
                f"{'n/a' if math.isinf(margin) else format(margin, '7.4f'):>7}"
            )
        style = self.style.SUCCESS if report.correct == report.total else self.style.WARNING
        self.say(f'Correct: {report.correct}/{report.total} ({report.mean_ms:.1f} ms per query)', style)
        for truth, predicted in report.confusions:
            self.say(f'  confused {truth} -> {predicted}', self.style.WARNING)
        return {
            'correct': report.correct,
            'total': report.total,
            'accuracy': report.accuracy,
            'mean_ms': report.mean_ms,
            'confusions': [list(pair) for pair in report.confusions],
            'trials': [{**trial, 'margin': _finite(trial['margin'])} for trial in report.trials],
        }

    def show_refinement(self, entry, rows):
        self.say(f'Entry: {entry.label}')
        self.say(f"{'offset':>8} {'y_ref':>8} {'error':>8} {'error %':>8}")
        for row in rows:
            self.say(f'{row.offset:8.2f} {row.y_ref:8.3f} {row.error_mm:8.3f} {row.error_percent:8.1f}')
        worst = max(row.error_mm for row in rows)
        style = self.style.SUCCESS if worst < 0.5 else self.style.WARNING
        self.say(f'Worst error: {worst:.3f} mm', style)
        return {'label': entry.label, 'rows': [asdict(row) for row in rows], 'worst_error_mm': worst}

    def show_insertion(self, entry, report):
        spec = report.spec
        mode = 'with' if report.with_refinement else 'without'
        self.say(f'Entry: {entry.label}; {spec.shape} peg {spec.peg_side} mm into {spec.hole_side} mm, {mode} refinement')
        for index, row in enumerate(report.rows):
            pert = row['perturbation']
            self.say(
                f"{index:3d} y={pert['y']:+.2f} theta={pert['theta_z']:+.2f} y_ref={row['y_ref']:+.2f} "
                f"{'ok' if row['success'] else 'FAIL'}"
            )
        self.say(f'Success: {report.successes}/{report.trials} ({report.rate:.0%})', self.style.SUCCESS)
        return {
            'label': entry.label,
            'spec': asdict(spec),
            'with_refinement': report.with_refinement,
            'successes': report.successes,
            'trials': report.trials,
            'rate': report.rate,
            'rows': report.rows,
        }
