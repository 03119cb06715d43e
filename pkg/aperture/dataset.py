"""ARDS dataset files.

Layout: magic "ARDS", version u16, M u16, record count u64, then per record M complex
samples as little-endian (f32 re, f32 im). Truth lives next to it in
``<path>.truth.jsonl``, one JSON object per record.
"""
import json
import logging
from pathlib import Path

import numpy as np

from aperture.errors import ConfigError, DatasetIOError

logger = logging.getLogger(__name__)

MAGIC = b'ARDS'
VERSION = 1
HEADER = np.dtype([('magic', 'S4'), ('version', '<u2'), ('num_elements', '<u2'), ('count', '<u8')])
SAMPLE = np.dtype('<c8')
DEFAULT_SPLIT = (0.9, 0.05, 0.05)
SPLIT_NAMES = ('train', 'val', 'test')


def truth_path(path):
    return Path(str(path) + '.truth.jsonl')


def write_dataset(path, samples, truths=None):
    samples = np.asarray(samples)
    if samples.ndim != 2:
        raise ConfigError('Dataset samples must be a [records x elements] matrix')
    count, num_elements = samples.shape
    if num_elements > np.iinfo(np.uint16).max:
        raise ConfigError('At most 65535 elements fit in an ARDS header')

    header = np.array([(MAGIC, VERSION, num_elements, count)], dtype=HEADER)
    try:
        with open(path, 'wb') as f:
            f.write(header.tobytes())
            f.write(samples.astype(SAMPLE).tobytes())
        if truths is not None:
            if len(truths) != count:
                raise ConfigError('Got {0} truth records for {1} samples'.format(len(truths), count))
            with open(truth_path(path), 'w') as f:
                for index, truth in enumerate(truths):
                    f.write(json.dumps(dict(truth, index=index), sort_keys=True) + '\n')
    except OSError as e:
        raise DatasetIOError('Failed to write dataset {0}: {1}'.format(path, e)) from e
    logger.debug('wrote %d x %d samples to %s', count, num_elements, path)


def read_header(path):
    try:
        raw = np.fromfile(path, dtype=HEADER, count=1)
    except OSError as e:
        raise DatasetIOError('Cannot read dataset {0}: {1}'.format(path, e)) from e
    if len(raw) != 1 or raw['magic'][0] != MAGIC:
        raise DatasetIOError('{0} is not an ARDS dataset'.format(path))
    if raw['version'][0] != VERSION:
        raise DatasetIOError('Unsupported ARDS version {0} in {1}'.format(raw['version'][0], path))
    return int(raw['num_elements'][0]), int(raw['count'][0])


def read_dataset(path):
    num_elements, count = read_header(path)
    expected = HEADER.itemsize + count * num_elements * SAMPLE.itemsize
    size = Path(path).stat().st_size
    if size != expected:
        raise DatasetIOError('{0} is {1} bytes, header implies {2}'.format(path, size, expected))
    if count == 0:
        return np.zeros((0, num_elements), dtype=SAMPLE)
    return np.memmap(path, dtype=SAMPLE, mode='r', offset=HEADER.itemsize, shape=(count, num_elements))


def read_truth(path):
    try:
        with open(truth_path(path)) as f:
            return [json.loads(line) for line in f if line.strip()]
    except OSError as e:
        raise DatasetIOError('Cannot read truth sidecar for {0}: {1}'.format(path, e)) from e


def split_indices(count, fractions=DEFAULT_SPLIT):
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError('Split fractions must be three non-negative values summing to 1, got {0}'.format(
            fractions))
    n_train = int(round(count * fractions[0]))
    n_val = int(round(count * fractions[1]))
    n_val = min(n_val, count - n_train)
    bounds = [0, n_train, n_train + n_val, count]
    return {name: range(bounds[i], bounds[i + 1]) for i, name in enumerate(SPLIT_NAMES)}
