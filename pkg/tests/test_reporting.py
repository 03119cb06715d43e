import pandas as pd
import pytest

from aperture import reporting
from aperture.array_model import ArrayConfig
from aperture.errors import DatasetIOError
from aperture.evaluation import StudySettings, run_study
from aperture.scene_sim import SNR_SET_DB, SimParams, simulate_records


@pytest.fixture(scope='module')
def tables():
    cfg = ArrayConfig(32)
    samples, scenes = simulate_records(SimParams(num_targets=(1, 2)), cfg, 6, master_seed=5)
    return run_study(samples, scenes, None, cfg, 16, StudySettings(estimators=('fourier', 'music')),
                     snr_set=SNR_SET_DB)


def test_csv_tables_carry_the_format_version(tmp_path, tables):
    written = reporting.write_reports(tables, tmp_path / 'report')
    assert sorted(p.name for p in written) == ['minsep_hist.csv', 'mse_vs_snr.csv', 'resolution.csv', 'roc.csv']
    for path in written:
        frame = pd.read_csv(path)
        assert frame.columns[0] == 'format_version'
        assert (frame['format_version'] == 1).all()
    roc = reporting.read_table(tmp_path / 'report' / 'roc.csv')
    assert list(roc.columns) == ['aperture', 'threshold', 'pfa', 'pd']


def test_csv_output_is_stable(tmp_path, tables):
    first = reporting.write_reports(tables, tmp_path / 'a')
    second = reporting.write_reports(tables, tmp_path / 'b')
    for a, b in zip(first, second):
        assert a.read_bytes() == b.read_bytes()


def test_figures_from_csvs(tmp_path, tables):
    reporting.write_reports(tables, tmp_path)
    figures = reporting.render_figures(tmp_path)
    names = sorted(p.name for p in figures)
    assert names == ['minsep_hist.svg', 'mse_vs_snr_fourier.svg', 'mse_vs_snr_music.svg', 'roc.svg']
    assert all(p.read_text().lstrip().startswith('<?xml') for p in figures)


def test_figures_are_reproducible(tmp_path, tables):
    reporting.write_reports(tables, tmp_path)
    first = [p.read_bytes() for p in reporting.render_figures(tmp_path)]
    second = [p.read_bytes() for p in reporting.render_figures(tmp_path)]
    assert first == second


def test_unversioned_table_is_rejected(tmp_path):
    path = tmp_path / 'roc.csv'
    pd.DataFrame({'aperture': ['large'], 'pd': [1.0]}).to_csv(path, index=False)
    with pytest.raises(DatasetIOError):
        reporting.read_table(path)
    with pytest.raises(DatasetIOError):
        reporting.render_figures(tmp_path / 'empty')
