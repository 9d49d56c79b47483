from core import conf
from core.library import read_mask_image
from core.management.base import TactagCommand
from core.meshcloud import read_ply
from core.registration import refine_pose


class Command(TactagCommand):
    help = 'Refine the pose of a library entry against an imprint cloud and report Y_ref'

    def add_command_arguments(self, parser):
        parser.add_argument('--imprint-cloud', required=True, help='Imprint cloud (ASCII PLY, sensor frame, mm)')
        parser.add_argument('--imprint-mask', required=True, help='Imprint mask image for the initial alignment')
        parser.add_argument('--label', required=True, help='Library entry, usually the classify result')
        parser.add_argument('--theta', type=float, default=None, help='Known rotation in degrees; solve translation only')
        parser.add_argument('--method', choices=['em', 'icp'], default='em')
        parser.add_argument('--voxel', type=float, default=None, help='Voxelize the imprint cloud first (mm)')

    def run(self, **options):
        library = self.load(options)
        entry = self.find_entry(library, options['label'])
        cloud = read_ply(options['imprint_cloud'])
        mask = read_mask_image(options['imprint_mask'], options['pitch'] or library.raster.pitch)

        result = refine_pose(
            cloud,
            mask,
            entry,
            conf.registration_params(method=options['method']),
            theta_z=options['theta'],
            voxel_mm=options['voxel'],
        )
        style = self.style.SUCCESS if result.converged else self.style.WARNING
        self.say(f'label: {entry.label}', style)
        self.say(f'y_ref: {result.y_ref:+.3f} mm')
        self.say(f'x_ref: {result.x_ref:+.3f} mm')
        self.say(f'theta_z: {result.theta_z:+.3f} deg')
        self.say(f'rmse: {result.residual_rmse:.4f} mm')
        self.say(f'converged: {"yes" if result.converged else "no"} ({result.iterations} iterations)')
