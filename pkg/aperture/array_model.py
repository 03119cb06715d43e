"""Virtual ULA geometry: steering vectors, their angle derivative and the Rayleigh beamwidth.

Angles are in degrees at every interface. The derivative is taken with respect to
radians, so bounds built from it come out in rad².
"""
from dataclasses import dataclass

import numpy as np

from aperture.errors import ConfigError, DomainError


@dataclass(frozen=True)
class ArrayConfig(object):
    num_elements: int
    spacing_wavelengths: float = 0.5

    def __post_init__(self):
        if int(self.num_elements) != self.num_elements or self.num_elements < 2:
            raise ConfigError('Array needs at least 2 elements, got {0}'.format(self.num_elements))
        if not self.spacing_wavelengths > 0:
            raise ConfigError('Element spacing must be positive, got {0}'.format(self.spacing_wavelengths))

    @property
    def element_index(self):
        return np.arange(self.num_elements)

    def with_elements(self, num_elements):
        return ArrayConfig(num_elements, self.spacing_wavelengths)


def check_angle(theta):
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)) or np.any(np.abs(theta) >= 90.0):
        raise DomainError('Angle must lie in (-90, 90) degrees, got {0}'.format(theta))
    return theta


def steering_vector(cfg, theta):
    theta = check_angle(theta)
    phase = 2 * np.pi * cfg.spacing_wavelengths * cfg.element_index * np.sin(np.deg2rad(theta))
    return np.exp(1j * phase)


def steering_derivative(cfg, theta):
    """d v / d theta with theta in radians."""
    theta = check_angle(theta)
    factor = 2j * np.pi * cfg.spacing_wavelengths * cfg.element_index * np.cos(np.deg2rad(theta))
    return factor * steering_vector(cfg, theta)


def steering_matrix(cfg, thetas, with_derivative=False):
    thetas = np.atleast_1d(check_angle(thetas))
    A = np.stack([steering_vector(cfg, t) for t in thetas], axis=1)
    if not with_derivative:
        return A
    D = np.stack([steering_derivative(cfg, t) for t in thetas], axis=1)
    return A, D


def rayleigh_beamwidth(cfg, theta=0.0):
    theta = check_angle(theta)
    width = 1.0 / (cfg.num_elements * cfg.spacing_wavelengths * np.cos(np.deg2rad(theta)))
    return float(np.rad2deg(width))
