"""Monte-Carlo scenes and single range-Doppler cell antenna snapshots.

All targets of a scene share one range-Doppler cell. A 0 dB-RCS target at scene
SNR S has per-element amplitude 10**(S/20) against unit-variance noise; the RCS
adds on top in amplitude dB.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from aperture import dataset
from aperture.array_model import ArrayConfig, check_angle, steering_vector
from aperture.errors import ConfigError

logger = logging.getLogger(__name__)

SNR_SET_DB = (-5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0)


@dataclass(frozen=True)
class SimParams(object):
    num_targets: Tuple[int, int] = (1, 10)
    angle_deg: Tuple[float, float] = (-70.0, 70.0)
    rcs_db: Tuple[float, float] = (0.0, 10.0)
    snr_set_db: Tuple[float, ...] = SNR_SET_DB
    noise_std: float = 1.0

    def validate(self):
        for name in ('num_targets', 'angle_deg', 'rcs_db'):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError('{0} range is reversed: [{1}, {2}]'.format(name, lo, hi))
        if self.num_targets[0] < 1:
            raise ConfigError('Scenes need at least one target, got range {0}'.format(self.num_targets))
        if max(abs(self.angle_deg[0]), abs(self.angle_deg[1])) >= 90:
            raise ConfigError('Angle range must stay inside (-90, 90), got {0}'.format(self.angle_deg))
        if len(self.snr_set_db) == 0:
            raise ConfigError('SNR set is empty')
        if self.noise_std < 0:
            raise ConfigError('Noise standard deviation must be non-negative')
        return self


@dataclass(frozen=True)
class Target(object):
    angle_deg: float
    rcs_db: float
    phase_rad: float

    def amplitude(self, snr_db):
        return 10 ** ((self.rcs_db + snr_db) / 20.0) * np.exp(1j * self.phase_rad)


@dataclass(frozen=True)
class Scene(object):
    targets: Tuple[Target, ...]
    snr_db: float
    seed: int = 0

    @property
    def angles_deg(self):
        return np.array([t.angle_deg for t in self.targets])

    @property
    def amplitudes(self):
        return np.array([t.amplitude(self.snr_db) for t in self.targets])

    def to_dict(self):
        return {
            'seed': int(self.seed),
            'snr_db': float(self.snr_db),
            'targets': [{'angle_deg': float(t.angle_deg),
                         'rcs_db': float(t.rcs_db),
                         'phase_rad': float(t.phase_rad)} for t in self.targets],
        }

    @classmethod
    def from_dict(cls, record):
        targets = tuple(Target(t['angle_deg'], t['rcs_db'], t['phase_rad']) for t in record['targets'])
        return cls(targets, record['snr_db'], record.get('seed', 0))


@dataclass
class Snapshot(object):
    samples: np.ndarray
    array: ArrayConfig
    truth: Optional[Scene] = None
    cell: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 1 or len(self.samples) != self.array.num_elements:
            raise ConfigError('Snapshot of length {0} does not match a {1}-element array'.format(
                self.samples.shape, self.array.num_elements))


@dataclass
class DatasetSummary(object):
    path: str
    count: int
    num_elements: int
    master_seed: int
    splits: dict = field(default_factory=dict)


def scene_seeds(master_seed, index):
    state = np.random.SeedSequence([int(master_seed), int(index)]).generate_state(2)
    return int(state[0]), int(state[1])


def sample_scene(params, rng_seed):
    params.validate()
    rng = np.random.default_rng(rng_seed)

    count = int(rng.integers(params.num_targets[0], params.num_targets[1] + 1))
    angles = rng.uniform(params.angle_deg[0], params.angle_deg[1], size=count)
    rcs = rng.uniform(params.rcs_db[0], params.rcs_db[1], size=count)
    phases = rng.uniform(0.0, 2 * np.pi, size=count)
    snr = float(params.snr_set_db[int(rng.integers(len(params.snr_set_db)))])

    targets = tuple(Target(float(a), float(r), float(p)) for a, r, p in zip(angles, rcs, phases))
    return Scene(targets, snr, int(rng_seed))


def synthesize_snapshot(scene, cfg, rng_seed=None, noiseless=False, noise_std=1.0):
    if len(scene.targets) == 0:
        raise ConfigError('Cannot synthesize a snapshot for a scene without targets')
    check_angle(scene.angles_deg)

    samples = np.zeros(cfg.num_elements, dtype=complex)
    for target in scene.targets:
        samples += target.amplitude(scene.snr_db) * steering_vector(cfg, target.angle_deg)

    if not noiseless and noise_std > 0:
        rng = np.random.default_rng(rng_seed)
        noise = rng.standard_normal(cfg.num_elements) + 1j * rng.standard_normal(cfg.num_elements)
        samples += noise_std * noise / np.sqrt(2)

    return Snapshot(samples, cfg, truth=scene)


# per-process generation inputs, set once by the pool initializer
_record_state = {}


def _init_record_worker(state):
    _record_state.clear()
    _record_state.update(state)


def _synth_record(index, state=None):
    state = _record_state if state is None else state
    params, cfg, master_seed, noiseless = state['params'], state['cfg'], state['master_seed'], state['noiseless']
    scene_seed, noise_seed = scene_seeds(master_seed, index)
    scene = sample_scene(params, scene_seed)
    snap = synthesize_snapshot(scene, cfg, noise_seed, noiseless=noiseless, noise_std=params.noise_std)
    return snap.samples, scene


def simulate_records(params, cfg, count, master_seed, jobs=1, noiseless=False, progress=False):
    """Samples and truth scenes for records 0..count-1; identical for any worker count."""
    state = dict(params=params, cfg=cfg, master_seed=master_seed, noiseless=noiseless)
    indices = range(count)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_record_worker, initargs=(state,)) as pool:
            results = list(tqdm(pool.map(_synth_record, indices, chunksize=256), total=count, disable=not progress))
    else:
        results = [_synth_record(i, state) for i in tqdm(indices, disable=not progress)]

    samples = np.zeros((count, cfg.num_elements), dtype=complex)
    scenes: List[Scene] = []
    for i, (row, scene) in enumerate(results):
        samples[i] = row
        scenes.append(scene)
    return samples, scenes


def generate_dataset(params, cfg, count, out_path, master_seed, fractions=dataset.DEFAULT_SPLIT,
                     jobs=1, noiseless=False, progress=False):
    params.validate()
    if count < 1:
        raise ConfigError('Dataset needs at least one record, got {0}'.format(count))

    samples, scenes = simulate_records(params, cfg, count, master_seed, jobs=jobs,
                                       noiseless=noiseless, progress=progress)
    dataset.write_dataset(out_path, samples, [s.to_dict() for s in scenes])

    splits = dataset.split_indices(count, fractions)
    logger.info('wrote %d records (M=%d, seed=%d) to %s', count, cfg.num_elements, master_seed, out_path)
    return DatasetSummary(str(out_path), count, cfg.num_elements, int(master_seed),
                          {name: (r.start, r.stop) for name, r in splits.items()})
