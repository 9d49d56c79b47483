from pathlib import Path

from core import conf
from core.library import MANIFEST_NAME, build_library, object_label, save_library
from core.management.base import TactagCommand, UsageError


class Command(TactagCommand):
    help = 'Generate (or extend) a pattern library and save it with masks, clouds and STL prisms'

    def add_command_arguments(self, parser):
        parser.add_argument('--count', type=int, default=200, help='Number of new patterns to admit')
        parser.add_argument('--divisions', type=int, default=None, help='Grid divisions per side')
        parser.add_argument('--n-min', type=int, default=None, help='Fewest triangles per pattern')
        parser.add_argument('--n-max', type=int, default=None, help='Most triangles per pattern')
        parser.add_argument('--alpha', type=float, default=None, help='Hu dispersion threshold')
        parser.add_argument('--out', default=None, help='Output directory (default: --library)')
        parser.add_argument('--max-attempts', type=int, default=None, help='Annealing runs before giving up')
        parser.add_argument(
            '--extend', action='store_true',
            help='Load the library in the output directory and keep admitting patterns against it',
        )
        parser.add_argument(
            '--objects', nargs='+', default=(), metavar='STL',
            help='Object files whose names label the first new patterns (p0007_bracket)',
        )

    def run(self, **options):
        out = Path(options['out'] or self.library_dir(options))
        count = options['count']
        if count < 1:
            raise UsageError('--count must be at least 1')
        if len(options['objects']) > count:
            raise UsageError(f"{len(options['objects'])} objects named but only {count} patterns requested")

        library = None
        if options['extend']:
            if options['seed'] is not None:
                raise UsageError('--seed cannot be combined with --extend; the library keeps its recorded seed')
            library = self.load({**options, 'library': str(out)})
            if options['divisions'] not in (None, library.grid.divisions):
                raise UsageError(f"cannot change divisions of an existing {library.grid.grid_id} library")
            if options['alpha'] not in (None, library.alpha):
                raise UsageError(f"cannot change alpha of an existing library (alpha={library.alpha})")
            if options['pitch'] not in (None, library.raster.pitch):
                raise UsageError(f"cannot change pitch of an existing library (pitch={library.raster.pitch})")
            config = conf.generation_config(
                divisions=library.grid.divisions,
                extent=library.grid.extent,
                n_min=options['n_min'],
                n_max=options['n_max'],
                alpha=library.alpha,
            )
            self.say(f'Extending {out} ({len(library)} patterns)')
        elif (out / MANIFEST_NAME).exists():
            raise UsageError(f'{out} already holds a library; pass --extend to add to it')
        else:
            config = conf.generation_config(
                divisions=options['divisions'],
                n_min=options['n_min'],
                n_max=options['n_max'],
                alpha=options['alpha'],
            )

        start = len(library) if library is not None else 0
        labels = [object_label(start + i, name) for i, name in enumerate(options['objects'])]

        def progress(admitted, attempts):
            if admitted % 50 == 0 or admitted == count:
                self.say(f'  {admitted}/{count} admitted after {attempts} attempts')

        library, report = build_library(
            count,
            config,
            conf.anneal_schedule(options['seed']),
            raster=conf.raster_config(pitch=options['pitch']),
            cloud=conf.cloud_config(),
            library=library,
            labels=labels,
            max_attempts=options['max_attempts'],
            progress=progress,
        )
        save_library(library, out)

        if report.admitted < count:
            self.say(
                f'Admitted only {report.admitted} of {count} patterns in {report.attempts} attempts',
                self.style.WARNING,
            )
        else:
            self.success(f'Admitted {report.admitted} patterns in {report.attempts} attempts')

        self.say('\n--- Library Summary ---')
        self.say(f'Directory: {out}')
        self.say(f'Grid: {library.grid.grid_id} ({library.grid.triangle_count} triangles)')
        self.say(f'Patterns: {len(library)} (alpha={library.alpha}, seed={library.generation.seed})')
        self.say(
            f'Rejected: {report.too_close} too close, {report.duplicates} duplicates, '
            f'{report.unconverged} off target'
        )
        for label in labels[:report.admitted]:
            self.say(f'  - {label}')
        self.say(f'Elapsed: {report.elapsed_s:.1f} s')
