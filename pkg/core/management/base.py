import logging

from django.core.management.base import BaseCommand, CommandError

from core.conf import tactag_settings
from core.exceptions import TactagError
from core.library import load_library

USAGE_EXIT_CODE = 1


class UsageError(CommandError):
    def __init__(self, message):
        super().__init__(message, returncode=USAGE_EXIT_CODE)


class TactagCommand(BaseCommand):
    """
    Base for the tactag commands.

    Adds the global ``--seed``, ``--library``, ``--pitch`` and ``--quiet``
    flags and turns domain errors into ``CommandError`` with the error's exit
    code. Argument errors exit with code 1 whether or not the command was run
    from the shell.
    """

    def create_parser(self, prog_name, subcommand, **kwargs):
        parser = super().create_parser(prog_name, subcommand, **kwargs)
        parser.called_from_command_line = False
        return parser

    def add_arguments(self, parser):
        parser.add_argument('--seed', type=int, default=None, help='Seed for every random draw')
        parser.add_argument(
            '--library', default=None,
            help='Library directory (default: the LIBRARY_DIR setting)',
        )
        parser.add_argument('--pitch', type=float, default=None, help='Raster pitch in mm per pixel')
        parser.add_argument('--quiet', action='store_true', help='Only report errors')
        parser.add_argument(
            '--fast', action='store_true',
            help='Skip the Hu, STL and dispersion checks when loading the library',
        )
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def handle(self, *args, **options):
        self.quiet = options['quiet']
        core_logger = logging.getLogger('core')
        previous_level = core_logger.level
        if self.quiet:
            core_logger.setLevel(logging.WARNING)
        try:
            self.run(**options)
        except TactagError as exc:
            raise CommandError(str(exc), returncode=exc.exit_code) from exc
        finally:
            core_logger.setLevel(previous_level)

    def run(self, **options):
        raise NotImplementedError('subclasses of TactagCommand must provide a run() method')

    def library_dir(self, options):
        return options['library'] or tactag_settings.LIBRARY_DIR

    def load(self, options, **kwargs):
        kwargs.setdefault('rotations_deg', tactag_settings.CLASSIFY_ROTATIONS_DEG)
        return load_library(self.library_dir(options), strict=not options['fast'], **kwargs)

    def find_entry(self, library, label):
        """Entry by full label, or by its ``p{index:04}`` prefix when it carries an object name."""
        if label in library.labels():
            return library.entry(label)
        matches = [entry for entry in library if entry.label.split('_', 1)[0] == label]
        if len(matches) == 1:
            return matches[0]
        raise UsageError(f"no library entry labelled '{label}'")

    def say(self, message, style=None):
        if not self.quiet:
            self.stdout.write(style(message) if style else message)

    def success(self, message):
        self.say(message, self.style.SUCCESS)
