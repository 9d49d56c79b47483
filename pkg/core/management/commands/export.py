from pathlib import Path

from core import meshcloud
from core.management.base import TactagCommand, UsageError


class Command(TactagCommand):
    help = 'Export the printable prism (STL) and registration cloud (PLY) of library entries'

    def add_command_arguments(self, parser):
        parser.add_argument('--label', action='append', default=[], help='Entry label or its pNNNN prefix; repeatable')
        parser.add_argument('--stl', default=None, help='STL path for the single --label entry')
        parser.add_argument('--cloud', default=None, help='PLY path for the single --label entry')
        parser.add_argument('--all', action='store_true', help='Export every entry into --out')
        parser.add_argument('--out', default=None, help='Output directory for <label>.<format> files')
        parser.add_argument('--format', choices=['stl', 'ply'], default='stl')
        parser.add_argument('--depth', type=float, default=None, help='Prism depth in mm (default: the library\'s)')

    def run(self, **options):
        if options['stl'] or options['cloud']:
            self.export_one(options)
        elif options['out']:
            self.export_many(options)
        else:
            raise UsageError('pass --stl and/or --cloud for one entry, or --out for a directory')

    def depth(self, library, options):
        return options['depth'] if options['depth'] is not None else library.cloud_config.depth_mm

    def export_one(self, options):
        if len(options['label']) != 1 or options['all'] or options['out']:
            raise UsageError('--stl and --cloud take exactly one --label and no --all or --out')
        library = self.load(options)
        entry = self.find_entry(library, options['label'][0])
        if options['stl']:
            self.write_stl(library, entry, self.prepare(options['stl']), options)
        if options['cloud']:
            self.write_cloud(entry, self.prepare(options['cloud']))
        self.success(f'Exported {entry.label}')

    def export_many(self, options):
        if not options['label'] and not options['all']:
            raise UsageError('name entries with --label or pass --all')
        library = self.load(options)
        if options['all']:
            entries = list(library)
        else:
            entries = [self.find_entry(library, label) for label in options['label']]

        out = Path(options['out'])
        self.make_dir(out)
        for entry in entries:
            if options['format'] == 'stl':
                self.write_stl(library, entry, out / f'{entry.label}.stl', options)
            else:
                self.write_cloud(entry, out / f'{entry.label}.ply')

        self.success(f'Exported {len(entries)} {options["format"].upper()} file(s) to {out}')

    def prepare(self, name):
        path = Path(name)
        self.make_dir(path.parent)
        return path

    def make_dir(self, directory):
        try:
            directory.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise UsageError(f'cannot create {directory}: {exc.strerror or exc}')

    def write_stl(self, library, entry, path, options):
        mesh = meshcloud.pattern_to_mesh(entry.pattern, library.grid, library.scale_mm, self.depth(library, options))
        meshcloud.export_stl(mesh, path)
        self.say(f'{entry.label}: {mesh.face_count} faces, {mesh.volume:.3f} mm^3 -> {path}')

    def write_cloud(self, entry, path):
        meshcloud.write_ply(entry.cloud, path)
        self.say(f'{entry.label}: {len(entry.cloud)} points -> {path}')
