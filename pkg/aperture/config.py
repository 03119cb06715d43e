import dataclasses
import json
import logging
from dataclasses import dataclass, field
from typing import Tuple

from aperture.array_model import ArrayConfig
from aperture.cube_pipeline import CfarParams, FmcwParams
from aperture.dataset import DEFAULT_SPLIT
from aperture.errors import ConfigError
from aperture.evaluation import StudySettings
from aperture.extrapolator import TrainConfig
from aperture.scene_sim import SimParams

logger = logging.getLogger(__name__)


@dataclass
class RunConfig(object):
    num_elements: int = 32
    small_elements: int = 16
    spacing_wavelengths: float = 0.5
    hidden_size: int = 64
    split: Tuple[float, float, float] = DEFAULT_SPLIT
    master_seed: int = 0
    jobs: int = 1
    sim: SimParams = field(default_factory=SimParams)
    train: TrainConfig = field(default_factory=TrainConfig)
    cfar: CfarParams = field(default_factory=CfarParams)
    fmcw: FmcwParams = field(default_factory=FmcwParams)
    study: StudySettings = field(default_factory=StudySettings)

    @property
    def extra_elements(self):
        return self.num_elements - self.small_elements

    @property
    def rollout_len(self):
        return self.extra_elements // 2

    @property
    def large_array(self):
        return ArrayConfig(self.num_elements, self.spacing_wavelengths)

    @property
    def small_array(self):
        return ArrayConfig(self.small_elements, self.spacing_wavelengths)

    def validate(self):
        if self.small_elements < 2 or self.small_elements >= self.num_elements:
            raise ConfigError('Need 2 <= L < M, got L={0}, M={1}'.format(self.small_elements, self.num_elements))
        if self.extra_elements % 2:
            raise ConfigError('K = M - L must be even, got {0}'.format(self.extra_elements))
        if self.hidden_size < 1 or self.jobs < 1:
            raise ConfigError('hidden_size and jobs must be positive')
        if len(self.split) != 3 or min(self.split) < 0 or abs(sum(self.split) - 1) > 1e-9:
            raise ConfigError('Split fractions must be three non-negative values summing to 1, got {0}'.format(
                self.split))
        ArrayConfig(self.num_elements, self.spacing_wavelengths)  # raises on a bad spacing
        self.sim.validate()
        self.train.validate()
        self.cfar.validate()
        self.study.validate()
        return self

    def to_dict(self):
        return dataclasses.asdict(self)


PRESETS = {
    'paper': dict(num_elements=86, small_elements=44, hidden_size=128),
    'desk': dict(num_elements=32, small_elements=16, hidden_size=64),
}


def _as_field_value(current, value):
    if isinstance(current, tuple) and isinstance(value, list):
        return tuple(value)
    return value


def _overlay(obj, values, where):
    known = {f.name for f in dataclasses.fields(obj)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError('Unknown configuration keys in {0}: {1}'.format(where, sorted(unknown)))

    changes = {}
    for key, value in values.items():
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError('{0}.{1} must be an object'.format(where, key))
            changes[key] = _overlay(current, value, '{0}.{1}'.format(where, key))
        else:
            changes[key] = _as_field_value(current, value)
    try:
        return dataclasses.replace(obj, **changes)
    except (TypeError, ValueError) as e:
        raise ConfigError('Invalid values in {0}: {1}'.format(where, e)) from e


def load_run_config(path=None, preset='desk', seed=None, jobs=None):
    if preset not in PRESETS:
        raise ConfigError('Unknown preset {0}; choose from {1}'.format(preset, sorted(PRESETS)))
    config = RunConfig(**PRESETS[preset])

    if path is not None:
        try:
            with open(path) as f:
                values = json.load(f)
        except OSError as e:
            raise ConfigError('Cannot read config {0}: {1}'.format(path, e)) from e
        except ValueError as e:
            raise ConfigError('Config {0} is not valid JSON: {1}'.format(path, e)) from e
        if not isinstance(values, dict):
            raise ConfigError('Config {0} must hold a JSON object'.format(path))
        config = _overlay(config, values, 'config')

    if seed is not None:
        config = dataclasses.replace(config, master_seed=seed)
    if jobs is not None:
        config = dataclasses.replace(config, jobs=jobs)

    logger.debug('run config: %s', config)
    return config.validate()


def write_config(config, path):
    with open(path, 'w') as f:
        json.dump(config.to_dict(), f, indent=2, sort_keys=True)
