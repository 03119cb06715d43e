"""Detection scoring, ROC curves, minimum separation, DoA MSE and the Cramér-Rao bound.

Three apertures are scored per scene: ``large`` (all M elements), ``small`` (the
inner L elements) and ``artificial`` (the inner L extended to M by the
extrapolator). Errors are in degrees; the CRB comes out in rad² and is
converted to deg² for the tables.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from aperture import doa_estimation
from aperture.array_model import rayleigh_beamwidth, steering_matrix
from aperture.cube_pipeline import normalize_magnitude
from aperture.errors import ConfigError, DegenerateInputError, SingularityError
from aperture.extrapolator import extrapolate_bidirectional_batch
from aperture.scene_sim import Scene

logger = logging.getLogger(__name__)

LARGE = 'large'
SMALL = 'small'
ARTIFICIAL = 'artificial'
FIELD_OF_VIEW_DEG = 140.0
RAD2_TO_DEG2 = (180.0 / np.pi) ** 2


@dataclass
class MatchResult(object):
    true_positives: int
    false_alarms: int
    misses: int
    pairings: List[Tuple[float, float, float]] = field(default_factory=list)


@dataclass
class CrbMatrix(object):
    values: np.ndarray
    angles_deg: np.ndarray

    @property
    def diagonal_rad2(self):
        return np.diag(self.values).copy()

    @property
    def diagonal_deg2(self):
        return self.diagonal_rad2 * RAD2_TO_DEG2


@dataclass
class StudySettings(object):
    roc_thresholds: Tuple[float, ...] = tuple(np.round(np.linspace(1.0, 0.05, 20), 4))
    detect_threshold: float = 0.25
    grid_size: int = 4096
    music_grid_step: float = 0.05
    hist_bin_width: float = 0.25
    tolerance_deg: Optional[float] = None
    estimators: Tuple[str, ...] = ('fourier',)
    truth_source: str = 'simulated'

    def validate(self):
        check_thresholds(self.roc_thresholds)
        if not 0 < self.detect_threshold <= 1:
            raise ConfigError('detect_threshold must be in (0, 1], got {0}'.format(self.detect_threshold))
        if self.truth_source not in ('simulated', LARGE):
            raise ConfigError('truth_source must be "simulated" or "large", got {0}'.format(self.truth_source))
        unknown = set(self.estimators) - set(doa_estimation.ESTIMATORS)
        if unknown or not self.estimators:
            raise ConfigError('Unknown estimators {0}'.format(sorted(unknown)))
        return self


@dataclass
class StudyTables(object):
    roc: pd.DataFrame
    minsep_hist: pd.DataFrame
    mse_vs_snr: pd.DataFrame
    resolution: pd.DataFrame


def check_thresholds(thresholds):
    thresholds = np.asarray(thresholds, dtype=float)
    if len(thresholds) == 0 or thresholds[0] > 1 or np.any(thresholds <= 0) or np.any(np.diff(thresholds) >= 0):
        raise ConfigError('Thresholds must descend from at most 1 and stay positive, got {0}'.format(thresholds))
    return thresholds


def default_tolerance(large_cfg):
    return 0.5 * rayleigh_beamwidth(large_cfg, 0.0)


def angular_cells(beamwidth_deg):
    return int(np.floor(FIELD_OF_VIEW_DEG / beamwidth_deg))


def match_detections(dets, truths, tol):
    if not tol > 0:
        raise ConfigError('Matching tolerance must be positive, got {0}'.format(tol))
    detected = list(getattr(dets, 'angles_deg', dets))
    truths = list(truths)

    candidates = sorted((abs(d - t), i, j) for i, d in enumerate(detected) for j, t in enumerate(truths))
    used_dets, used_truths, pairings = set(), set(), []
    for distance, i, j in candidates:
        if distance > tol:
            break
        if i in used_dets or j in used_truths:
            continue
        used_dets.add(i)
        used_truths.add(j)
        pairings.append((detected[i], truths[j], detected[i] - truths[j]))

    tp = len(pairings)
    return MatchResult(tp, len(detected) - tp, len(truths) - tp, pairings)


def score_thresholds(spec, truths, thresholds, tol):
    rows = []
    for threshold in thresholds:
        match = match_detections(doa_estimation.detect_peaks(spec, threshold), truths, tol)
        rows.append((float(threshold), match.true_positives, match.false_alarms, len(truths)))
    return rows


def roc_from_scores(scores, cells):
    """Reduce per-scene (threshold, tp, fa, n_truth) rows to one (pfa, pd) point per threshold."""
    scores = pd.DataFrame(scores, columns=['threshold', 'tp', 'fa', 'n_truth'])
    if scores.empty:
        raise ConfigError('Cannot build a ROC curve from an empty scene set')
    grouped = scores.groupby('threshold', sort=False).agg(tp=('tp', 'sum'), fa=('fa', 'sum'),
                                                          n_truth=('n_truth', 'sum'), scenes=('tp', 'size'))
    roc = pd.DataFrame({
        'threshold': grouped.index.to_numpy(dtype=float),
        'pfa': (grouped['fa'] / (grouped['scenes'] * cells)).to_numpy(),
        'pd': (grouped['tp'] / grouped['n_truth'].clip(lower=1)).to_numpy(),
    })
    return roc.sort_values('threshold', ascending=False, ignore_index=True)


def roc_curve(spectra, truths, thresholds, beamwidth_deg, tol):
    thresholds = check_thresholds(thresholds)
    if len(spectra) == 0:
        raise ConfigError('Cannot build a ROC curve from an empty scene set')
    scores = []
    for spec, scene_truths in zip(spectra, truths):
        scores.extend(score_thresholds(spec, scene_truths, thresholds, tol))
    return roc_from_scores(scores, angular_cells(beamwidth_deg))


def min_angular_separation(dets):
    angles = np.sort(np.asarray(getattr(dets, 'angles_deg', dets), dtype=float))
    if len(angles) < 2:
        return None
    return float(np.min(np.diff(angles)))


def histogram(values, bin_width):
    if not bin_width > 0:
        raise ConfigError('Bin width must be positive, got {0}'.format(bin_width))
    values = np.array([v for v in values if v is not None and not pd.isna(v)], dtype=float)
    if len(values) == 0:
        return pd.DataFrame({'bin_start': [], 'bin_end': [], 'count': []})

    num_bins = int(np.floor(values.max() / bin_width)) + 1
    edges = bin_width * np.arange(num_bins + 1)
    counts, _ = np.histogram(values, bins=edges)
    return pd.DataFrame({'bin_start': edges[:-1], 'bin_end': edges[1:], 'count': counts})


def doa_mse(errors, snr_set=None):
    """Mean squared DoA error per SNR bucket over matched targets only.

    ``errors`` holds ``snr_db`` and ``error_deg`` columns. Buckets listed in
    ``snr_set`` without any pairing come back as NaN.
    """
    errors = pd.DataFrame(errors, columns=['snr_db', 'error_deg'])
    table = errors.assign(sq=errors['error_deg'] ** 2).groupby('snr_db').agg(
        mse_deg2=('sq', 'mean'), count=('sq', 'size'))
    if snr_set is not None:
        table = table.reindex(sorted(float(s) for s in snr_set))
        table['count'] = table['count'].fillna(0).astype(int)
    table['mse_rad2'] = table['mse_deg2'] / RAD2_TO_DEG2
    table.index.name = 'snr_db'
    return table.reset_index()[['snr_db', 'mse_deg2', 'mse_rad2', 'count']]


def crb(scene, cfg, noise_var=1.0, offset=0):
    """Bound for ``cfg`` sitting at elements offset..offset+N-1 of the array the scene phases refer to."""
    angles = scene.angles_deg
    if offset < 0:
        raise ConfigError('Sub-array offset must be non-negative, got {0}'.format(offset))
    A, D = steering_matrix(cfg.with_elements(offset + cfg.num_elements), angles, with_derivative=True)
    A, D = A[offset:], D[offset:]
    if len(angles) >= cfg.num_elements or np.linalg.matrix_rank(A) < len(angles):
        raise SingularityError('Steering matrix is rank deficient for angles {0}'.format(angles))

    S = np.diag(scene.amplitudes)
    projector = np.eye(cfg.num_elements) - A @ np.linalg.solve(A.conj().T @ A, A.conj().T)
    DS = D @ S
    fisher = np.real(DS.conj().T @ projector @ DS)
    try:
        values = noise_var / 2 * np.linalg.inv(fisher)
    except np.linalg.LinAlgError as e:
        raise SingularityError('Fisher information is singular for angles {0}'.format(angles)) from e
    return CrbMatrix(0.5 * (values + values.T), angles)


def resolution_rate(detection_counts, expected=2):
    counts = np.asarray(list(detection_counts))
    if len(counts) == 0:
        return float('nan')
    return float(np.mean(counts >= expected))


def phase_profile(samples):
    return np.unwrap(np.angle(np.asarray(samples)))


def arm_vectors(samples, model, num_small):
    """Large, small and (with a model) artificial antenna vectors for every record."""
    samples = np.asarray(samples, dtype=complex)
    num_elements = samples.shape[1]
    half = (num_elements - num_small) // 2
    arms = {LARGE: samples, SMALL: samples[:, half:half + num_small]}
    if model is not None:
        normalized = np.zeros_like(arms[SMALL])
        for i, inner in enumerate(arms[SMALL]):
            try:
                normalized[i] = normalize_magnitude(inner)[0]
            except DegenerateInputError:
                logger.debug('record %d has an all-zero inner aperture', i)
        arms[ARTIFICIAL] = extrapolate_bidirectional_batch(model, normalized, half)
    return arms


def evaluate_scene(vectors, scene, large_cfg, num_small, settings, tol, noise_var=1.0):
    """Score one scene on every arm. ``vectors`` maps arm name to its antenna vector."""
    out = {'scores': [], 'minsep': [], 'detections': [], 'errors': [], 'crb': []}
    spectra = {arm: doa_estimation.fourier_spectrum(v, grid_size=settings.grid_size,
                                                    spacing_wavelengths=large_cfg.spacing_wavelengths)
               for arm, v in vectors.items()}

    if settings.truth_source == LARGE:
        truths = list(doa_estimation.detect_peaks(spectra[LARGE], settings.detect_threshold).angles_deg)
    else:
        truths = list(scene.angles_deg)
    snr = float(scene.snr_db) if scene is not None else float('nan')

    for arm, spec in spectra.items():
        if settings.truth_source == LARGE and arm == LARGE:
            continue
        for row in score_thresholds(spec, truths, settings.roc_thresholds, tol):
            out['scores'].append((arm,) + row)
        dets = doa_estimation.detect_peaks(spec, settings.detect_threshold)
        out['minsep'].append((arm, min_angular_separation(dets)))
        out['detections'].append((arm, len(dets)))

    for estimator in settings.estimators:
        for arm, v in vectors.items():
            if settings.truth_source == LARGE and arm == LARGE:
                continue
            if estimator == 'fourier':
                dets = doa_estimation.detect_peaks(spectra[arm], settings.detect_threshold)
            else:
                try:
                    spec = doa_estimation.ss_music_spectrum(v, len(truths), grid_step=settings.music_grid_step,
                                                            spacing_wavelengths=large_cfg.spacing_wavelengths)
                except (ConfigError, DegenerateInputError):
                    continue
                dets = doa_estimation.strongest_peaks(spec, len(truths))
            for _, _, error in match_detections(dets, truths, tol).pairings:
                out['errors'].append((estimator, arm, snr, error))

    if scene is not None and settings.truth_source == 'simulated':
        half = (large_cfg.num_elements - num_small) // 2
        for arm, size, offset in ((LARGE, large_cfg.num_elements, 0), (SMALL, num_small, half)):
            try:
                bound = crb(scene, large_cfg.with_elements(size), noise_var, offset=offset)
            except SingularityError:
                continue
            out['crb'].extend((arm, snr, v) for v in bound.diagonal_deg2)
    return out


# per-process study inputs, set once by the pool initializer
_study_state = {}


def _init_study_worker(state):
    _study_state.clear()
    _study_state.update(state)


def _evaluate_index(index, state=None):
    state = _study_state if state is None else state
    vectors = {arm: values[index] for arm, values in state['arms'].items()}
    scene = state['scenes'][index] if state['scenes'] is not None else None
    return evaluate_scene(vectors, scene, state['large_cfg'], state['num_small'], state['settings'],
                          state['tol'], state['noise_var'])


def run_study(samples, scenes, model, large_cfg, num_small, settings, snr_set=None, noise_var=1.0,
              jobs=1, progress=False):
    settings.validate()
    if len(samples) == 0:
        raise ConfigError('Evaluation set is empty')
    if scenes is None and settings.truth_source == 'simulated':
        raise ConfigError('Simulated truth requested but the dataset carries no truth records')
    scenes = [s if isinstance(s, Scene) or s is None else Scene.from_dict(s) for s in scenes] if scenes else None

    tol = settings.tolerance_deg or default_tolerance(large_cfg)
    arms = arm_vectors(samples, model, num_small)
    state = dict(arms=arms, scenes=scenes, large_cfg=large_cfg, num_small=num_small, settings=settings, tol=tol,
                 noise_var=noise_var)
    indices = range(len(samples))
    logger.info('evaluating %d scenes on arms %s with %s', len(samples), sorted(arms), list(settings.estimators))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_study_worker, initargs=(state,)) as pool:
            results = list(tqdm(pool.map(_evaluate_index, indices, chunksize=64), total=len(samples),
                                disable=not progress))
    else:
        results = [_evaluate_index(i, state) for i in tqdm(indices, disable=not progress)]

    def collect(key, columns):
        return pd.DataFrame([row for r in results for row in r[key]], columns=columns)

    scores = collect('scores', ['aperture', 'threshold', 'tp', 'fa', 'n_truth'])
    minsep = collect('minsep', ['aperture', 'minsep_deg'])
    detections = collect('detections', ['aperture', 'count'])
    errors = collect('errors', ['estimator', 'aperture', 'snr_db', 'error_deg'])
    bounds = collect('crb', ['aperture', 'snr_db', 'crb_deg2'])

    widths = {LARGE: rayleigh_beamwidth(large_cfg), ARTIFICIAL: rayleigh_beamwidth(large_cfg),
              SMALL: rayleigh_beamwidth(large_cfg.with_elements(num_small))}
    arm_order = [arm for arm in (LARGE, SMALL, ARTIFICIAL) if arm in set(scores['aperture'])]

    roc = pd.concat([roc_from_scores(scores[scores['aperture'] == arm].drop(columns='aperture'),
                                     angular_cells(widths[arm])).assign(aperture=arm) for arm in arm_order],
                    ignore_index=True)
    hist = pd.concat([histogram(minsep.loc[minsep['aperture'] == arm, 'minsep_deg'], settings.hist_bin_width)
                      .assign(aperture=arm) for arm in arm_order], ignore_index=True)
    resolution = pd.DataFrame([{
        'aperture': arm,
        'scenes': int((detections['aperture'] == arm).sum()),
        'resolution_rate': resolution_rate(detections.loc[detections['aperture'] == arm, 'count']),
        'rayleigh_deg': widths[arm],
    } for arm in arm_order])

    mse_tables = []
    crb_by_arm = {arm: bounds[bounds['aperture'] == arm].groupby('snr_db')['crb_deg2'].mean()
                  for arm in (LARGE, SMALL)}
    # the artificial aperture spans all M elements
    crb_by_arm[ARTIFICIAL] = crb_by_arm[LARGE]
    buckets = snr_set if snr_set is not None else sorted(errors['snr_db'].dropna().unique())
    for estimator in settings.estimators:
        for arm in arm_order:
            subset = errors[(errors['estimator'] == estimator) & (errors['aperture'] == arm)]
            table = doa_mse(subset[['snr_db', 'error_deg']], buckets)
            table['crb_deg2'] = table['snr_db'].map(crb_by_arm[arm]).astype(float)
            table['crb_rad2'] = table['crb_deg2'] / RAD2_TO_DEG2
            mse_tables.append(table.assign(aperture=arm, estimator=estimator))
    mse = pd.concat(mse_tables, ignore_index=True)[
        ['snr_db', 'aperture', 'estimator', 'mse_deg2', 'mse_rad2', 'crb_deg2', 'crb_rad2', 'count']]

    return StudyTables(roc[['aperture', 'threshold', 'pfa', 'pd']],
                       hist[['aperture', 'bin_start', 'bin_end', 'count']], mse, resolution)
