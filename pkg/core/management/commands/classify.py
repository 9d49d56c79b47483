import math
import time

from core.library import read_mask_image
from core.management.base import TactagCommand
from core.shapemetrics import classify


class Command(TactagCommand):
    help = 'Identify the library pattern in an imprint mask (8-bit image or 1-bit PBM)'

    def add_command_arguments(self, parser):
        parser.add_argument('--imprint', required=True, help='Imprint mask image; --pitch gives its mm per pixel')
        parser.add_argument(
            '--rotations', type=float, nargs='+', default=None, metavar='DEG',
            help='Imprint rotations to try (default: the CLASSIFY_ROTATIONS_DEG setting)',
        )

    def run(self, **options):
        library = self.load(options)
        pitch = options['pitch'] or library.raster.pitch
        imprint = read_mask_image(options['imprint'], pitch)

        started = time.perf_counter()
        result = classify(imprint, library, rotations_deg=options['rotations'])
        elapsed_ms = (time.perf_counter() - started) * 1000.0

        margin = 'n/a' if math.isinf(result.runner_up_margin) else f'{result.runner_up_margin:.4f}'
        self.success(f'label: {result.label}')
        self.say(f'loss: {result.loss:.4f}')
        self.say(f'margin: {margin}')
        self.say(f'rotation: {result.rotation_deg:+.1f} deg')
        self.say(f'elapsed: {elapsed_ms:.1f} ms')
