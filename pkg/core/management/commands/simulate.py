import numpy as np

from core import conf
from core.imprintsim import Perturbation, render_imprint
from core.library import imprint_writer
from core.management.base import TactagCommand


class Command(TactagCommand):
    help = 'Render one simulated imprint (mask PNG and cloud PLY) of a library entry'

    def add_command_arguments(self, parser):
        parser.add_argument('--label', required=True)
        parser.add_argument('--x', type=float, default=0.0, help='Grasp offset along X in mm')
        parser.add_argument('--y', type=float, default=0.0, help='Grasp offset along Y in mm')
        parser.add_argument('--theta', type=float, default=0.0, help='Grasp rotation in degrees')
        parser.add_argument('--noise', type=float, default=None, help='Depth noise sigma in mm')
        parser.add_argument('--dropout', type=float, default=None, help='Fraction of cloud points dropped')
        parser.add_argument('--out', required=True, help='Output directory')

    def run(self, **options):
        library = self.load(options)
        entry = self.find_entry(library, options['label'])
        sensor = conf.sensor_spec(
            pitch=options['pitch'],
            depth_noise_sigma=options['noise'],
            dropout_fraction=options['dropout'],
        )
        pert = Perturbation(options['x'], options['y'], options['theta'])
        imprint = render_imprint(entry, pert, sensor, np.random.default_rng(options['seed']))

        name = f'{entry.label}_imprint'
        imprint_writer(options['out'])(name, imprint)
        if imprint.partial:
            self.say('Imprint is only partially inside the sensor window', self.style.WARNING)
        self.success(
            f'Wrote {name}.png ({imprint.mask.area_px} px) and {name}.ply ({len(imprint.cloud)} points) '
            f'to {options["out"]}'
        )
