"""CSV tables and SVG figures for the evaluation study.

CSVs are the contract; every one starts with a ``format_version`` column. SVGs
are rendered from the CSVs alone so ``report`` can rebuild them later.
"""
import logging
from pathlib import Path

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from aperture.errors import DatasetIOError  # noqa: E402

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
FLOAT_FORMAT = '%.10g'
TABLES = ('roc', 'minsep_hist', 'mse_vs_snr', 'resolution')
COLORS = {'large': 'tab:blue', 'small': 'tab:red', 'artificial': 'goldenrod'}

plt.rcParams['svg.hashsalt'] = 'aperture-forge'


def write_table(frame, path):
    frame = frame.copy()
    frame.insert(0, 'format_version', FORMAT_VERSION)
    try:
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
    except OSError as e:
        raise DatasetIOError('Failed to write {0}: {1}'.format(path, e)) from e
    return Path(path)


def read_table(path):
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.EmptyDataError) as e:
        raise DatasetIOError('Cannot read {0}: {1}'.format(path, e)) from e
    if 'format_version' not in frame.columns or (frame['format_version'] != FORMAT_VERSION).any():
        raise DatasetIOError('{0} is not a version {1} report table'.format(path, FORMAT_VERSION))
    return frame.drop(columns='format_version')


def write_reports(tables, report_dir):
    report_dir = Path(report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    written = [write_table(getattr(tables, name), report_dir / (name + '.csv')) for name in TABLES]
    logger.info('wrote %d report tables to %s', len(written), report_dir)
    return written


def _save(fig, path):
    fig.savefig(path, format='svg', metadata={'Date': None})
    plt.close(fig)
    return Path(path)


def plot_roc(roc, path):
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for aperture, group in roc.groupby('aperture', sort=False):
        ax.plot(group['pfa'], group['pd'], marker='o', ms=3, label=aperture, color=COLORS.get(aperture))
    ax.set_xscale('symlog', linthresh=1e-4)
    ax.set_xlabel('Pfa (per angular resolution cell)')
    ax.set_ylabel('Pd')
    ax.grid(True, alpha=0.3)
    ax.legend()
    return _save(fig, path)


def plot_minsep(hist, path):
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for aperture, group in hist.groupby('aperture', sort=False):
        total = max(int(group['count'].sum()), 1)
        ax.stairs(group['count'] / total, list(group['bin_start']) + [group['bin_end'].iloc[-1]],
                  label=aperture, color=COLORS.get(aperture))
    ax.set_xlabel('Minimum detected separation (deg)')
    ax.set_ylabel('Share of scenes')
    ax.legend()
    return _save(fig, path)


def plot_mse(mse, estimator, path):
    fig, ax = plt.subplots(figsize=(6, 4.5))
    subset = mse[mse['estimator'] == estimator]
    for aperture, group in subset.groupby('aperture', sort=False):
        color = COLORS.get(aperture)
        ax.semilogy(group['snr_db'], group['mse_deg2'], marker='o', color=color, label='{0} MSE'.format(aperture))
        if aperture != 'artificial':
            ax.semilogy(group['snr_db'], group['crb_deg2'], ls='--', color=color, label='{0} CRB'.format(aperture))
    ax.set_xlabel('SNR (dB)')
    ax.set_ylabel('MSE (deg^2)')
    ax.set_title(estimator)
    ax.grid(True, which='both', alpha=0.3)
    ax.legend()
    return _save(fig, path)


def plot_example_scene(spectra, truths, path):
    """Normalised angular spectra of one scene per aperture, truth angles marked."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for aperture, spec in spectra.items():
        power = spec.power / max(float(spec.power.max()), 1e-300)
        ax.plot(spec.angles_deg, 10 * np.log10(np.maximum(power, 1e-6)), label=aperture, color=COLORS.get(aperture))
    for angle in truths:
        ax.axvline(angle, color='k', ls=':', lw=0.8)
    ax.set_xlabel('Angle (deg)')
    ax.set_ylabel('Normalised power (dB)')
    ax.set_ylim(-40, 1)
    ax.legend()
    return _save(fig, path)


def plot_phase(profiles, path):
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for aperture, phase in profiles.items():
        ax.plot(range(len(phase)), phase, marker='.', label=aperture, color=COLORS.get(aperture))
    ax.set_xlabel('Antenna element')
    ax.set_ylabel('Unwrapped phase (rad)')
    ax.legend()
    return _save(fig, path)


def render_figures(report_dir):
    report_dir = Path(report_dir)
    figures = [
        plot_roc(read_table(report_dir / 'roc.csv'), report_dir / 'roc.svg'),
        plot_minsep(read_table(report_dir / 'minsep_hist.csv'), report_dir / 'minsep_hist.svg'),
    ]
    mse = read_table(report_dir / 'mse_vs_snr.csv')
    for estimator in mse['estimator'].unique():
        figures.append(plot_mse(mse, estimator, report_dir / 'mse_vs_snr_{0}.svg'.format(estimator)))
    logger.info('rendered %d figures in %s', len(figures), report_dir)
    return figures
