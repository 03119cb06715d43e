import pickle

import numpy as np
import pytest
from scipy import stats

from aperture import scene_sim
from aperture.array_model import ArrayConfig, steering_vector
from aperture.errors import ConfigError, DomainError
from aperture.scene_sim import SNR_SET_DB, Scene, SimParams, Snapshot, Target, generate_dataset, sample_scene, \
    scene_seeds, simulate_records, synthesize_snapshot


def test_scene_seeds_are_deterministic_and_distinct():
    assert scene_seeds(7, 3) == scene_seeds(7, 3)
    seeds = {scene_seeds(7, i) for i in range(100)}
    assert len(seeds) == 100
    assert scene_seeds(7, 0) != scene_seeds(8, 0)


def test_sampled_scene_respects_parameter_ranges():
    params = SimParams(num_targets=(2, 4), angle_deg=(-30.0, 30.0), rcs_db=(1.0, 2.0))
    for seed in range(50):
        scene = sample_scene(params, seed)
        assert 2 <= len(scene.targets) <= 4
        assert np.all(np.abs(scene.angles_deg) <= 30.0)
        assert all(1.0 <= t.rcs_db <= 2.0 for t in scene.targets)
        assert all(0.0 <= t.phase_rad < 2 * np.pi for t in scene.targets)
        assert scene.snr_db in SNR_SET_DB


def test_same_seed_same_scene():
    assert sample_scene(SimParams(), 42) == sample_scene(SimParams(), 42)


def test_target_amplitude_in_amplitude_db():
    target = Target(0.0, 6.0, np.pi / 2)
    assert target.amplitude(14.0) == pytest.approx(10.0j)


def test_noiseless_snapshot_is_the_sum_of_steering_vectors(two_target_scene, large_array):
    snap = synthesize_snapshot(two_target_scene, large_array, noiseless=True)
    expected = sum(t.amplitude(20.0) * steering_vector(large_array, t.angle_deg) for t in two_target_scene.targets)
    assert np.allclose(snap.samples, expected)
    assert snap.truth == two_target_scene


def test_noise_has_unit_variance():
    cfg = ArrayConfig(8192)
    scene = Scene((Target(10.0, 0.0, 0.0),), 0.0)
    noisy = synthesize_snapshot(scene, cfg, rng_seed=5)
    clean = synthesize_snapshot(scene, cfg, noiseless=True)
    noise = noisy.samples - clean.samples
    assert np.mean(np.abs(noise) ** 2) == pytest.approx(1.0, abs=0.05)
    assert np.var(noise.real) == pytest.approx(0.5, abs=0.05)


def test_scene_without_targets_is_rejected(large_array):
    with pytest.raises(ConfigError):
        synthesize_snapshot(Scene((), 10.0), large_array)


def test_target_at_endfire_is_rejected(large_array):
    with pytest.raises(DomainError):
        synthesize_snapshot(Scene((Target(90.0, 0.0, 0.0),), 10.0), large_array)


def test_scene_dict_round_trip(two_target_scene):
    assert Scene.from_dict(two_target_scene.to_dict()) == two_target_scene


def test_snapshot_length_must_match_array():
    with pytest.raises(ConfigError):
        Snapshot(np.ones(5), ArrayConfig(6))


@pytest.mark.parametrize('params', [SimParams(snr_set_db=()), SimParams(num_targets=(3, 1)),
                                    SimParams(num_targets=(0, 2)), SimParams(angle_deg=(-95.0, 10.0))])
def test_invalid_sim_params(params):
    with pytest.raises(ConfigError):
        params.validate()


def test_records_do_not_depend_on_worker_count(large_array):
    serial, scenes_a = simulate_records(SimParams(), large_array, 20, master_seed=3, jobs=1)
    parallel, scenes_b = simulate_records(SimParams(), large_array, 20, master_seed=3, jobs=2)
    assert np.array_equal(serial, parallel)
    assert scenes_a == scenes_b


def test_generate_dataset_summary(tmp_path, large_array):
    summary = generate_dataset(SimParams(), large_array, 100, tmp_path / 'd.ards', master_seed=9)
    assert summary.count == 100
    assert summary.num_elements == 32
    assert summary.splits == {'train': (0, 90), 'val': (90, 95), 'test': (95, 100)}


def test_generate_dataset_needs_records(tmp_path, large_array):
    with pytest.raises(ConfigError):
        generate_dataset(SimParams(), large_array, 0, tmp_path / 'd.ards', master_seed=9)


def test_sampler_statistics_over_many_scenes():
    params = SimParams()
    draws = 100000
    angles, counts = [], np.zeros(params.num_targets[1] + 1, dtype=int)
    for seed in range(draws):
        scene = sample_scene(params, seed)
        angles.extend(scene.angles_deg)
        counts[len(scene.targets)] += 1

    assert abs(np.mean(angles)) < 0.5
    assert counts[0] == 0
    assert stats.chisquare(counts[1:]).pvalue > 1e-3


def test_snapshots_superpose(large_array):
    first = Scene((Target(-25.0, 3.0, 0.4),), 10.0)
    second = Scene((Target(12.0, 7.0, 2.9), Target(40.0, 1.0, 5.0)), 10.0)
    both = Scene(first.targets + second.targets, 10.0)

    noisy_both = synthesize_snapshot(both, large_array, rng_seed=6).samples
    noisy_first = synthesize_snapshot(first, large_array, rng_seed=6).samples
    clean_second = synthesize_snapshot(second, large_array, noiseless=True).samples
    assert np.allclose(noisy_both, noisy_first + clean_second)


class _InlineExecutor(object):
    shipped = []

    def __init__(self, max_workers, initializer, initargs):
        initializer(*initargs)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False

    def map(self, fn, iterable, chunksize=1):
        self.shipped.append(len(pickle.dumps(fn)))
        return map(fn, iterable)


def test_pool_tasks_carry_only_the_index(monkeypatch, large_array):
    monkeypatch.setattr(scene_sim, 'ProcessPoolExecutor', _InlineExecutor)
    monkeypatch.setattr(_InlineExecutor, 'shipped', [])
    serial, scenes_a = simulate_records(SimParams(), large_array, 10, master_seed=6)
    pooled, scenes_b = simulate_records(SimParams(), large_array, 10, master_seed=6, jobs=3)
    assert _InlineExecutor.shipped and max(_InlineExecutor.shipped) < 200
    assert np.array_equal(serial, pooled)
    assert scenes_a == scenes_b
