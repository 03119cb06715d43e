import importlib
import re

import numpy as np
from scipy.signal import find_peaks

from aperture.errors import ConfigError
from aperture.estimators.spectrum_estimator import DetectionSet

__builders = dict()

ESTIMATORS = {
    'fourier': 'FourierBeamformer',
    'music': 'SsMusic',
}


def __get_file_name(class_name):
    res = re.findall('[A-Z][^A-Z]*', class_name)
    return '_'.join([cur.lower() for cur in res])


def __get_class_by_name(class_name):
    mod_name = 'aperture.estimators.' + __get_file_name(class_name)

    if mod_name not in __builders:
        __builders[mod_name] = importlib.import_module(mod_name)
    return getattr(__builders[mod_name], class_name)


def __create_object(class_name, **kwargs):
    return __get_class_by_name(class_name)(**kwargs)


def fourier_spectrum(snap, grid_size=4096, spacing_wavelengths=None):
    beamformer = __create_object('FourierBeamformer',
                                 grid_size=grid_size,
                                 spacing_wavelengths=spacing_wavelengths)
    return beamformer.estimate(snap)


def ss_music_spectrum(snap, num_targets, grid_step=0.05, forward_backward=False, spacing_wavelengths=None):
    music = __create_object('SsMusic',
                            num_targets=num_targets,
                            grid_step=grid_step,
                            forward_backward=forward_backward,
                            spacing_wavelengths=spacing_wavelengths)
    return music.estimate(snap)


def spectrum(name, snap, **kwargs):
    if name not in ESTIMATORS:
        raise ConfigError('Unknown estimator {0}; choose from {1}'.format(name, sorted(ESTIMATORS)))
    return __create_object(ESTIMATORS[name], **kwargs).estimate(snap)


def _to_db(power):
    return 10 * np.log10(np.maximum(power, np.finfo(float).tiny))


def _refine(spec, peaks):
    """Three-point parabolic interpolation in dB around each grid peak."""
    power_db = _to_db(spec.power)
    index = np.arange(len(spec.angles_deg))
    angles, powers = [], []
    for k in peaks:
        left, centre, right = power_db[k - 1], power_db[k], power_db[k + 1]
        curvature = left - 2 * centre + right
        delta = 0.5 * (left - right) / curvature if curvature < 0 else 0.0
        delta = float(np.clip(delta, -0.5, 0.5))
        angles.append(float(np.interp(k + delta, index, spec.angles_deg)))
        powers.append(float(10 ** ((centre - 0.25 * (left - right) * delta) / 10)))
    order = np.argsort(angles)
    return [angles[i] for i in order], [powers[i] for i in order]


def _local_maxima(power, height=None):
    """Grid indices strictly above both neighbours; flat tops are not peaks."""
    peaks, _ = find_peaks(power, height=height)
    strict = (power[peaks] > power[peaks - 1]) & (power[peaks] > power[peaks + 1])
    return peaks[strict]


def detect_peaks(spec, threshold):
    if not 0 < threshold <= 1:
        raise ConfigError('Threshold must be in (0, 1], got {0}'.format(threshold))
    peak_power = float(np.max(spec.power)) if len(spec.power) else 0.0
    if peak_power <= 0:
        return DetectionSet([], [], threshold)

    peaks = _local_maxima(spec.power, height=threshold * peak_power)
    angles, powers = _refine(spec, peaks)
    return DetectionSet(angles, powers, threshold)


def strongest_peaks(spec, count):
    peaks = _local_maxima(spec.power)
    if len(peaks) == 0 or count < 1:
        return DetectionSet([], [], 1.0)

    chosen = peaks[np.argsort(spec.power[peaks], kind='stable')[::-1][:count]]
    angles, powers = _refine(spec, chosen)
    threshold = float(np.min(spec.power[chosen]) / np.max(spec.power))
    return DetectionSet(angles, powers, threshold)
