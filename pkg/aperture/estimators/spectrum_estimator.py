from dataclasses import dataclass, field
from typing import List

import numpy as np

from aperture.errors import ConfigError, NumericError


@dataclass
class AngularSpectrum(object):
    angles_deg: np.ndarray
    power: np.ndarray
    source: str
    snapshot_len: int


@dataclass
class DetectionSet(object):
    angles_deg: List[float] = field(default_factory=list)
    powers: List[float] = field(default_factory=list)
    threshold: float = 1.0

    def __len__(self):
        return len(self.angles_deg)


class SpectrumEstimator(object):
    def __init__(self, name, required_count, spacing_wavelengths=None):
        self.name = name
        self.required_count = required_count
        self.spacing_wavelengths = spacing_wavelengths
        self.data = None
        self.is_data_prepared = False

    def get_class_name(self):
        return self.__class__.__name__

    def logic(self):
        raise NotImplementedError('Implement the logic of ' + self.get_class_name())

    def estimate(self, snapshot):
        self.prepare_data(snapshot)

        if self.is_data_prepared:
            angles, power = self.logic()
            return AngularSpectrum(angles, power, self.name, len(self.data))
        else:
            raise NumericError('Data is not prepared to estimate a spectrum')

    def prepare_data(self, snapshot):
        samples = getattr(snapshot, 'samples', snapshot)
        array = getattr(snapshot, 'array', None)
        samples = np.asarray(samples)

        if samples.ndim != 1:
            raise ConfigError('{0} expects a single antenna vector, got shape {1}'.format(self.name, samples.shape))
        if len(samples) == 0:
            raise ConfigError('{0} got an empty snapshot'.format(self.name))
        if len(samples) < self.required_count:
            raise ConfigError('{0} requires at least {1} antenna samples'.format(self.name, self.required_count))
        if not np.all(np.isfinite(samples)):
            raise NumericError('{0} got non-finite antenna samples'.format(self.name))

        if self.spacing_wavelengths is None:
            self.spacing_wavelengths = array.spacing_wavelengths if array is not None else 0.5
        self.data = samples.astype(complex)
        self.is_data_prepared = True
