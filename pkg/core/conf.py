"""
Access to the ``TACTAG`` settings dict, in the manner of DRF's ``api_settings``.

    from core.conf import tactag_settings
    tactag_settings.PITCH_MM

Names missing from ``settings.TACTAG`` fall back to ``DEFAULTS``. The
factories at the bottom turn settings into the parameter objects the domain
modules take, so the modules themselves never read Django settings.
"""
from django.conf import settings

DEFAULTS = {
    # Where commands read and write the pattern library.
    'LIBRARY_DIR': 'library',
    # Staggered grid: divisions per side, side length in grid units.
    'GRID_DIVISIONS': 4,
    'GRID_EXTENT': 4.0,
    # Triangles per pattern and the Hu dispersion threshold.
    'N_MIN': 10,
    'N_MAX': 20,
    'ALPHA': 0.1,
    'ANNEAL_T0': 1.0,
    'ANNEAL_BETA': 0.01,
    'ANNEAL_MAX_ITERS': 5000,
    # Physical pattern size and raster resolution.
    'SCALE_MM': 5.0,
    'DEPTH_MM': 1.0,
    'PITCH_MM': 0.05,
    'MARGIN_MM': 0.25,
    'DILATION_RADIUS_PX': 2,
    'CLASSIFY_ROTATIONS_DEG': (-3.0, -1.5, 0.0, 1.5, 3.0),
    # Maximum edge length for subdivision, in grid units.
    'SUBDIVISION': 0.1,
    'VOXEL_MM': 0.2,
    'CLOUD_FULL_PRISM': False,
    'REG_MAX_ITERATIONS': 50,
    'REG_TOLERANCE_MM': 1e-3,
    'REG_SIGMA0_MM': 1.0,
    'REG_SIGMA_DECAY': 0.7,
    'REG_SIGMA_MIN_MM': 0.1,
    'REG_OUTLIER_WEIGHT': 0.1,
    'SENSOR_WIDTH_MM': 16.0,
    'SENSOR_HEIGHT_MM': 12.0,
    'DEPTH_NOISE_SIGMA_MM': 0.02,
    'DROPOUT_FRACTION': 0.05,
    'PERTURB_XY_MM': 2.5,
    'PERTURB_THETA_DEG': 3.0,
    'PEG_SIDE_MM': 30.2,
    'HOLE_SIDE_MM': 31.6,
}


class TactagSettings:
    def __init__(self, defaults=None):
        self.defaults = defaults or DEFAULTS
        self._cached_attrs = set()

    @property
    def user_settings(self):
        if not hasattr(self, '_user_settings'):
            self._user_settings = getattr(settings, 'TACTAG', {})
        return self._user_settings

    def __getattr__(self, attr):
        if attr not in self.defaults:
            raise AttributeError(f"Invalid tactag setting: '{attr}'")

        try:
            val = self.user_settings[attr]
        except KeyError:
            val = self.defaults[attr]

        self._cached_attrs.add(attr)
        setattr(self, attr, val)
        return val

    def reload(self):
        for attr in self._cached_attrs:
            delattr(self, attr)
        self._cached_attrs.clear()
        if hasattr(self, '_user_settings'):
            delattr(self, '_user_settings')


tactag_settings = TactagSettings(DEFAULTS)


def reload_tactag_settings(*args, **kwargs):
    if kwargs.get('setting') == 'TACTAG':
        tactag_settings.reload()


def anneal_schedule(seed=None):
    from .patterngen import AnnealSchedule

    return AnnealSchedule(
        t0=tactag_settings.ANNEAL_T0,
        beta=tactag_settings.ANNEAL_BETA,
        max_iters=tactag_settings.ANNEAL_MAX_ITERS,
        seed=seed,
    )


def generation_config(**overrides):
    from .patterngen import GenerationConfig

    values = {
        'divisions': tactag_settings.GRID_DIVISIONS,
        'extent': tactag_settings.GRID_EXTENT,
        'n_min': tactag_settings.N_MIN,
        'n_max': tactag_settings.N_MAX,
        'alpha': tactag_settings.ALPHA,
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    return GenerationConfig(**values)


def raster_config(**overrides):
    from .shapemetrics import RasterConfig

    values = {
        'scale_mm': tactag_settings.SCALE_MM,
        'pitch': tactag_settings.PITCH_MM,
        'margin_mm': tactag_settings.MARGIN_MM,
        'dilation_radius_px': tactag_settings.DILATION_RADIUS_PX,
        'rotations_deg': tuple(tactag_settings.CLASSIFY_ROTATIONS_DEG),
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RasterConfig(**values)


def cloud_config(**overrides):
    from .meshcloud import CloudConfig

    values = {
        'depth_mm': tactag_settings.DEPTH_MM,
        'subdivision': tactag_settings.SUBDIVISION,
        'voxel_mm': tactag_settings.VOXEL_MM,
        'full_prism': tactag_settings.CLOUD_FULL_PRISM,
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    return CloudConfig(**values)


def registration_params(**overrides):
    from .registration import RegistrationParams

    values = {
        'max_iterations': tactag_settings.REG_MAX_ITERATIONS,
        'convergence_tol': tactag_settings.REG_TOLERANCE_MM,
        'sigma0': tactag_settings.REG_SIGMA0_MM,
        'sigma_decay': tactag_settings.REG_SIGMA_DECAY,
        'sigma_min': tactag_settings.REG_SIGMA_MIN_MM,
        'outlier_weight': tactag_settings.REG_OUTLIER_WEIGHT,
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RegistrationParams(**values)


def sensor_spec(**overrides):
    from .imprintsim import SensorSpec

    values = {
        'width_mm': tactag_settings.SENSOR_WIDTH_MM,
        'height_mm': tactag_settings.SENSOR_HEIGHT_MM,
        'pitch': tactag_settings.PITCH_MM,
        'depth_mm': tactag_settings.DEPTH_MM,
        'depth_noise_sigma': tactag_settings.DEPTH_NOISE_SIGMA_MM,
        'dropout_fraction': tactag_settings.DROPOUT_FRACTION,
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    return SensorSpec(**values)


def perturbation_ranges():
    from .imprintsim import PerturbationRanges

    xy = tactag_settings.PERTURB_XY_MM
    theta = tactag_settings.PERTURB_THETA_DEG
    return PerturbationRanges(x=(-xy, xy), y=(-xy, xy), theta_z=(-theta, theta))


def insertion_spec(hole=None, peg=None, shape='square'):
    from .imprintsim import InsertionSpec

    if shape == 'square':
        return InsertionSpec.square(
            peg if peg is not None else tactag_settings.PEG_SIDE_MM,
            hole if hole is not None else tactag_settings.HOLE_SIDE_MM,
        )
    return InsertionSpec.preset(shape)
