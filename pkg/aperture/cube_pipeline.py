"""Range-Doppler processing, CA-CFAR, antenna-vector extraction and training-pair generation.

Cube axes are [chirp, sample, antenna]. FFTs are unnormalised; every threshold
downstream works on power ratios.
"""
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.constants import c as SPEED_OF_LIGHT
from scipy.signal import windows

from aperture.array_model import ArrayConfig, check_angle, steering_vector
from aperture.errors import ConfigError, DatasetIOError, DegenerateInputError
from aperture.scene_sim import Snapshot

logger = logging.getLogger(__name__)

RIGHT = 'right'
LEFT = 'left-flipped'


@dataclass(frozen=True)
class FmcwParams(object):
    center_frequency_hz: float = 78.58e9
    chirp_slope_hz_per_s: float = 5e12
    num_samples: int = 256
    sample_rate_hz: float = 4e6
    chirp_period_s: float = 80e-6
    num_chirps: int = 128

    @property
    def wavelength(self):
        return SPEED_OF_LIGHT / self.center_frequency_hz

    @property
    def max_range(self):
        return SPEED_OF_LIGHT * self.sample_rate_hz / (2 * self.chirp_slope_hz_per_s)

    @property
    def range_resolution(self):
        return self.max_range / self.num_samples

    def range_bin(self, range_m):
        beat = 2 * self.chirp_slope_hz_per_s * range_m / SPEED_OF_LIGHT
        return int(round(beat / self.sample_rate_hz * self.num_samples)) % self.num_samples

    def doppler_bin(self, velocity_mps):
        doppler = 2 * velocity_mps / self.wavelength
        offset = int(round(doppler * self.chirp_period_s * self.num_chirps))
        return (self.num_chirps // 2 + offset) % self.num_chirps


@dataclass(frozen=True)
class CubeTarget(object):
    range_m: float
    velocity_mps: float
    angle_deg: float
    rcs_db: float = 0.0
    phase_rad: float = 0.0


@dataclass
class RadarCube(object):
    data: np.ndarray
    params: FmcwParams

    def __post_init__(self):
        expected = (self.params.num_chirps, self.params.num_samples)
        if self.data.ndim != 3 or self.data.shape[:2] != expected:
            raise ConfigError('Cube of shape {0} does not match {1} x antennas'.format(self.data.shape, expected))

    @property
    def num_antennas(self):
        return self.data.shape[2]


@dataclass(frozen=True)
class CfarParams(object):
    guard: int = 2
    train: int = 8
    pfa: float = 1e-3

    def validate(self):
        if self.train < 1:
            raise ConfigError('CFAR needs at least one training cell per side, got {0}'.format(self.train))
        if self.guard < 0:
            raise ConfigError('Guard cells must be non-negative, got {0}'.format(self.guard))
        if not 0 < self.pfa < 1:
            raise ConfigError('Pfa must be in (0, 1), got {0}'.format(self.pfa))
        return self

    @property
    def window(self):
        return 2 * (self.guard + self.train) + 1


@dataclass
class DetectionMask(object):
    mask: np.ndarray
    cfar_params: CfarParams

    @property
    def cells(self):
        return [tuple(int(i) for i in cell) for cell in np.argwhere(self.mask)]


@dataclass
class TrainingPair(object):
    input: np.ndarray
    label: np.ndarray
    direction: str
    norm_scale: float


def synth_fmcw_cube(targets, params, cfg, seed=None, noise_std=1.0):
    data = np.zeros((params.num_chirps, params.num_samples, cfg.num_elements), dtype=complex)
    fast_time = np.arange(params.num_samples) / params.sample_rate_hz
    slow_time = np.arange(params.num_chirps) * params.chirp_period_s

    for target in targets:
        if not 0 <= target.range_m < params.max_range:
            raise ConfigError('Target range {0} m is outside the unambiguous range [0, {1:.2f}) m'.format(
                target.range_m, params.max_range))
        check_angle(target.angle_deg)
        beat = 2 * params.chirp_slope_hz_per_s * target.range_m / SPEED_OF_LIGHT
        doppler = 2 * target.velocity_mps / params.wavelength
        amplitude = 10 ** (target.rcs_db / 20.0) * np.exp(1j * target.phase_rad)

        fast = np.exp(2j * np.pi * beat * fast_time)
        slow = np.exp(2j * np.pi * doppler * slow_time)
        spatial = steering_vector(cfg, target.angle_deg)
        data += amplitude * slow[:, None, None] * fast[None, :, None] * spatial[None, None, :]

    if noise_std > 0:
        rng = np.random.default_rng(seed)
        noise = rng.standard_normal(data.shape) + 1j * rng.standard_normal(data.shape)
        data += noise_std * noise / np.sqrt(2)
    return RadarCube(data, params)


def _window(kind, n):
    if kind == 'hamming':
        return windows.hamming(n)
    if kind in ('boxcar', 'rectangular'):
        return np.ones(n)
    raise ConfigError('Unknown window {0}'.format(kind))


def range_doppler_map(cube, window='hamming'):
    w_doppler = _window(window, cube.data.shape[0])
    w_range = _window(window, cube.data.shape[1])
    windowed = cube.data * w_doppler[:, None, None] * w_range[None, :, None]

    rd = np.fft.fft(windowed, axis=1)
    rd = np.fft.fft(rd, axis=0)
    return np.fft.fftshift(rd, axes=0)


def power_map(rd_cube):
    return np.sum(np.abs(rd_cube) ** 2, axis=-1)


def _box_sum(values, size):
    return ndimage.uniform_filter(values, size=size, mode='constant', cval=0.0) * size ** 2


def ca_cfar_2d(power, cfar_params):
    cfar_params.validate()
    power = np.asarray(power, dtype=float)
    outer = cfar_params.window
    inner = 2 * cfar_params.guard + 1
    if outer > power.shape[0] or outer > power.shape[1]:
        raise ConfigError('CFAR window {0} does not fit a {1} map'.format(outer, power.shape))

    # cells outside the map contribute zero to the sums and to the counts
    ones = np.ones_like(power)
    train_sum = _box_sum(power, outer) - _box_sum(power, inner)
    train_count = np.rint(_box_sum(ones, outer) - _box_sum(ones, inner))

    alpha = train_count * (cfar_params.pfa ** (-1.0 / train_count) - 1)
    noise_level = train_sum / train_count
    mask = power > alpha * noise_level
    logger.debug('CA-CFAR: %d of %d cells detected', int(mask.sum()), mask.size)
    return DetectionMask(mask, cfar_params)


def extract_antenna_vectors(rd_cube, mask, cfg=None):
    if mask.mask.shape != rd_cube.shape[:2]:
        raise ConfigError('Mask shape {0} does not match cube {1}'.format(mask.mask.shape, rd_cube.shape[:2]))
    if cfg is None:
        cfg = ArrayConfig(rd_cube.shape[2])
    return [Snapshot(rd_cube[d, r, :].copy(), cfg, cell=(d, r)) for d, r in mask.cells]


def cube_to_snapshots(cube, cfar_params, cfg=None, window='hamming'):
    rd = range_doppler_map(cube, window=window)
    mask = ca_cfar_2d(power_map(rd), cfar_params)
    return extract_antenna_vectors(rd, mask, cfg)


def normalize_magnitude(v):
    v = np.asarray(v, dtype=complex)
    scale = float(np.max(np.abs(v))) if v.size else 0.0
    if scale == 0:
        raise DegenerateInputError('Cannot normalise an all-zero antenna vector')
    return v / scale, scale


def flip_conjugate(v):
    return np.conj(np.asarray(v)[::-1])


def _check_split(num_elements, L, K):
    if K + L != num_elements:
        raise ConfigError('K + L must equal M: {0} + {1} != {2}'.format(K, L, num_elements))
    if K < 2 or K % 2:
        raise ConfigError('K must be even and positive, got {0}'.format(K))
    if L < 2:
        raise ConfigError('L must be at least 2, got {0}'.format(L))


def make_training_pairs(snap, L, K):
    samples = np.asarray(snap.samples, dtype=complex)
    _check_split(len(samples), L, K)
    half = K // 2
    inner = samples[half:half + L]
    if not np.any(inner):
        raise DegenerateInputError('Inner {0} samples of the snapshot are all zero'.format(L))

    inner_n, scale = normalize_magnitude(inner)
    right = TrainingPair(inner_n, samples[half + L:] / scale, RIGHT, scale)
    left = TrainingPair(flip_conjugate(inner_n), flip_conjugate(samples[:half]) / scale, LEFT, scale)
    return right, left


def stitch(left, right, dtype=np.complex128):
    scale = right.norm_scale
    full = np.concatenate([flip_conjugate(left.label) * left.norm_scale,
                           right.input * scale,
                           right.label * scale])
    return full.astype(dtype)


def write_cube(path, cube):
    path = Path(path)
    sidecar = {'fmcw': asdict(cube.params), 'shape': list(cube.data.shape), 'dtype': '<c8'}
    try:
        cube.data.astype('<c8').tofile(path)
        Path(str(path) + '.json').write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    except OSError as e:
        raise DatasetIOError('Failed to write cube {0}: {1}'.format(path, e)) from e


def read_cube(path):
    path = Path(path)
    try:
        sidecar = json.loads(Path(str(path) + '.json').read_text())
        raw = np.fromfile(path, dtype='<c8')
    except (OSError, ValueError) as e:
        raise DatasetIOError('Cannot read cube {0}: {1}'.format(path, e)) from e

    params = FmcwParams(**sidecar['fmcw'])
    shape = tuple(sidecar['shape'])
    if raw.size != int(np.prod(shape)):
        raise DatasetIOError('Cube {0} holds {1} samples, sidecar declares {2}'.format(path, raw.size, shape))
    return RadarCube(raw.reshape(shape).astype(complex), params)
