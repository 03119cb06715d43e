import numpy as np
import pytest
import torch
import torch.nn.functional as F
from torch.func import functional_call

from aperture.array_model import ArrayConfig
from aperture.cube_pipeline import flip_conjugate
from aperture.errors import ConfigError, DatasetIOError, NumericError
from aperture.extrapolator import BLOCK, TrainConfig, TrainingData, build_training_data, evaluate_loss, extrapolate, \
    extrapolate_batch, extrapolate_bidirectional, forward_step, init_model, load_model, model_bytes, \
    pairs_to_tensors, rollout_loss, save_model, train
from aperture.scene_sim import SimParams, Snapshot, simulate_records


def _snapshots(count, num_elements=16, seed=2):
    cfg = ArrayConfig(num_elements)
    samples, _ = simulate_records(SimParams(), cfg, count, master_seed=seed)
    return [Snapshot(row, cfg) for row in samples]


@pytest.fixture
def small_data():
    snaps = _snapshots(60)
    return build_training_data(snaps[:50], snaps[50:], L=8, K=8)


def _same_parameters(a, b):
    return all(torch.equal(x, y) for x, y in zip(a.parameters(), b.parameters()))


def test_init_is_seeded():
    assert _same_parameters(init_model(8, seed=1), init_model(8, seed=1))
    assert not torch.equal(init_model(8, seed=1).lstm1.weight_ih, init_model(8, seed=2).lstm1.weight_ih)


def test_init_ranges_and_forget_bias():
    model = init_model(8, seed=0)
    for layer in (model.lstm1, model.lstm2):
        assert torch.all(layer.bias[8:16] == 1.0)
        assert torch.all(layer.weight_hh.abs() <= 1 / np.sqrt(8))
    assert torch.all(model.dense.weight.abs() <= 1 / np.sqrt(8))


def test_rollout_shapes(tiny_model):
    inputs = torch.zeros(3, 5, 2)
    assert tiny_model(inputs, 4).shape == (3, 4, 2)
    assert tiny_model(inputs, 0).shape == (3, 0, 2)


def test_zero_model_predicts_zeros():
    model = init_model(8, zero=True)
    assert np.array_equal(extrapolate(model, np.ones(6, dtype=complex), 3), np.zeros(3, dtype=complex))


def test_step_count(tiny_model):
    inner = np.exp(1j * np.linspace(0, 2, 8))
    assert extrapolate(tiny_model, inner, 0).shape == (0,)
    assert extrapolate(tiny_model, inner, 5).shape == (5,)
    with pytest.raises(ConfigError):
        extrapolate(tiny_model, inner, -1)


def test_non_finite_input_is_rejected(tiny_model):
    with pytest.raises(NumericError):
        extrapolate(tiny_model, np.array([1.0, np.nan, 1.0], dtype=complex), 2)
    with pytest.raises(NumericError):
        forward_step(tiny_model, (np.inf, 0.0))


def test_rollout_feeds_predictions_back(tiny_model):
    inner = np.exp(1j * np.linspace(0, 3, 6)) * np.linspace(0.5, 1.0, 6)
    state = None
    for sample in inner:
        y, state = forward_step(tiny_model, (sample.real, sample.imag), state)
    predictions = [complex(*y)]
    for _ in range(3):
        y, state = forward_step(tiny_model, y, state)
        predictions.append(complex(*y))
    assert np.allclose(extrapolate(tiny_model, inner, 4), predictions, atol=1e-6)


def test_batching_does_not_change_predictions(tiny_model, rng):
    inner = rng.standard_normal((7, 8)) + 1j * rng.standard_normal((7, 8))
    whole = extrapolate_batch(tiny_model, inner, 3)
    chunked = extrapolate_batch(tiny_model, inner, 3, batch_size=2)
    assert np.allclose(whole, chunked, atol=1e-6)


def test_bidirectional_extension(tiny_model):
    inner = np.exp(1j * np.pi / 3 * np.arange(8))
    full = extrapolate_bidirectional(tiny_model, inner, num_elements=14)
    assert full.shape == (14,)
    assert np.array_equal(full[3:11], inner)
    assert np.allclose(full[11:], extrapolate(tiny_model, inner, 3), atol=1e-6)
    assert np.allclose(full[:3], flip_conjugate(extrapolate(tiny_model, flip_conjugate(inner), 3)), atol=1e-6)
    with pytest.raises(ConfigError):
        extrapolate_bidirectional(tiny_model, inner, num_elements=13)


def test_block_head_predicts_a_fixed_count():
    model = init_model(8, seed=4, head=BLOCK, output_steps=4)
    assert model(torch.zeros(2, 6, 2), 4).shape == (2, 4, 2)
    with pytest.raises(ConfigError):
        model(torch.zeros(2, 6, 2), 3)


def test_rollout_gradient_matches_finite_differences():
    model = init_model(hidden_size=4, seed=5, dtype=torch.float64)
    generator = torch.Generator().manual_seed(0)
    inputs = torch.randn(2, 5, 2, generator=generator, dtype=torch.float64)
    labels = torch.randn(2, 3, 2, generator=generator, dtype=torch.float64)
    names = [name for name, _ in model.named_parameters()]
    params = tuple(p.detach().clone().requires_grad_(True) for p in model.parameters())

    def loss(*values):
        predictions = functional_call(model, dict(zip(names, values)), (inputs, labels.shape[1]))
        return F.mse_loss(predictions, labels)

    assert torch.autograd.gradcheck(loss, params, eps=1e-6, atol=1e-8, rtol=1e-4)
    assert loss(*params).item() == pytest.approx(rollout_loss(model, inputs, labels).item())


def test_model_file_layout(tmp_path, tiny_model):
    path = tmp_path / 'm.afrx'
    save_model(tiny_model, path)
    raw = path.read_bytes()
    assert raw[:4] == b'AFRX'
    assert int.from_bytes(raw[4:6], 'little') == 1
    assert int.from_bytes(raw[6:8], 'little') == 8
    # 12 H^2 + 18 H + 2 parameters for H = 8
    assert len(raw) == 8 + 914 * 4 + 4
    assert raw == model_bytes(tiny_model)


def test_model_file_round_trip(tmp_path, tiny_model):
    path = tmp_path / 'm.afrx'
    save_model(tiny_model, path)
    loaded = load_model(path)
    assert loaded.head == tiny_model.head
    assert _same_parameters(loaded, tiny_model)
    inner = np.exp(1j * np.arange(8))
    assert np.array_equal(extrapolate(loaded, inner, 4), extrapolate(tiny_model, inner, 4))


def test_block_model_file(tmp_path):
    model = init_model(8, seed=4, head=BLOCK, output_steps=4)
    path = tmp_path / 'b.afrx'
    save_model(model, path)
    raw = path.read_bytes()
    assert int.from_bytes(raw[4:6], 'little') == 2
    assert int.from_bytes(raw[8:10], 'little') == 4
    assert len(raw) == 10 + sum(p.numel() for p in model.parameters()) * 4 + 4

    loaded = load_model(path)
    assert loaded.head == BLOCK and loaded.output_steps == 4
    assert _same_parameters(loaded, model)


@pytest.mark.parametrize('damage', [
    lambda raw: raw[:40] + bytes([raw[40] ^ 0xFF]) + raw[41:],
    lambda raw: b'XXXX' + raw[4:],
    lambda raw: raw[:-20],
    lambda raw: raw[:6],
])
def test_damaged_model_files(tmp_path, tiny_model, damage):
    path = tmp_path / 'm.afrx'
    path.write_bytes(damage(model_bytes(tiny_model)))
    with pytest.raises(DatasetIOError):
        load_model(path)


def test_missing_model_file(tmp_path):
    with pytest.raises(DatasetIOError):
        load_model(tmp_path / 'nothing.afrx')


def test_training_pairs_are_pooled(small_data):
    assert small_data.train_inputs.shape == (100, 8, 2)
    assert small_data.train_labels.shape == (100, 4, 2)
    assert small_data.val_inputs.shape == (20, 8, 2)
    with pytest.raises(ConfigError):
        pairs_to_tensors([])


def test_training_reduces_loss(small_data):
    model = init_model(8, seed=0)
    cfg = TrainConfig(learning_rate=0.01, batch_size=1000, max_epochs=5, patience=5)
    model, log = train(model, small_data, cfg)
    frame = log.to_frame()
    assert list(frame.columns) == ['epoch', 'train_loss', 'val_loss']
    assert len(frame) == 5
    assert frame['train_loss'].iloc[-1] < frame['train_loss'].iloc[0]
    assert 1 <= log.best_epoch <= 5
    assert evaluate_loss(model, small_data.val_inputs, small_data.val_labels) == pytest.approx(
        frame['val_loss'].min(), rel=1e-5)


def test_zero_epochs_keeps_the_initialization(small_data):
    model = init_model(8, seed=0)
    trained, log = train(init_model(8, seed=0), small_data, TrainConfig(max_epochs=0))
    assert log.records == [] and log.best_epoch is None
    assert log.to_frame().empty
    assert _same_parameters(trained, model)


def test_early_stopping_without_progress(small_data):
    _, log = train(init_model(8, seed=0), small_data, TrainConfig(learning_rate=0.0, max_epochs=50, patience=3))
    assert log.stopped_early
    assert len(log.records) == 4
    assert log.best_epoch == 1


def test_training_is_deterministic(small_data):
    cfg = TrainConfig(batch_size=16, max_epochs=2, master_seed=5)
    first, _ = train(init_model(8, seed=1), small_data, cfg)
    second, _ = train(init_model(8, seed=1), small_data, cfg)
    assert model_bytes(first) == model_bytes(second)


def test_nan_loss_aborts(small_data):
    bad = TrainingData(torch.full_like(small_data.train_inputs, float('nan')), small_data.train_labels,
                       small_data.val_inputs, small_data.val_labels)
    with pytest.raises(NumericError):
        train(init_model(8, seed=0), bad, TrainConfig(max_epochs=1))


def test_empty_training_set(small_data):
    empty = TrainingData(small_data.train_inputs[:0], small_data.train_labels[:0],
                         small_data.val_inputs, small_data.val_labels)
    with pytest.raises(ConfigError):
        train(init_model(8, seed=0), empty, TrainConfig(max_epochs=1))


@pytest.mark.parametrize('cfg', [TrainConfig(learning_rate=-1.0), TrainConfig(beta1=1.0), TrainConfig(batch_size=0),
                                 TrainConfig(patience=0), TrainConfig(head='attention')])
def test_invalid_train_config(cfg):
    with pytest.raises(ConfigError):
        cfg.validate()


def _zero_prediction_loss(data):
    return float(torch.mean(data.val_labels ** 2))


@pytest.mark.slow
def test_trained_model_beats_predicting_zeros():
    snaps = _snapshots(2000, num_elements=32, seed=8)
    data = build_training_data(snaps[:1800], snaps[1800:], L=16, K=16)
    model, log = train(init_model(32, seed=0), data, TrainConfig(batch_size=64, max_epochs=20, patience=5))
    assert min(r['val_loss'] for r in log.records) < 0.5 * _zero_prediction_loss(data)


@pytest.mark.slow
def test_shuffled_labels_do_not_generalize():
    snaps = _snapshots(2000, num_elements=32, seed=8)
    data = build_training_data(snaps[:1800], snaps[1800:], L=16, K=16)
    order = torch.randperm(len(data.train_labels), generator=torch.Generator().manual_seed(0))
    shuffled = TrainingData(data.train_inputs, data.train_labels[order], data.val_inputs, data.val_labels)
    cfg = TrainConfig(batch_size=64, max_epochs=20, patience=5)

    initial = evaluate_loss(init_model(32, seed=0), data.val_inputs, data.val_labels)
    control, _ = train(init_model(32, seed=0), shuffled, cfg)
    assert evaluate_loss(control, data.val_inputs, data.val_labels) >= 0.9 * initial


def test_zero_gradients_leave_the_weights_alone():
    inputs, labels = torch.zeros(6, 8, 2), torch.zeros(6, 4, 2)
    data = TrainingData(inputs, labels, inputs[:2], labels[:2])
    trained, log = train(init_model(8, zero=True), data, TrainConfig(batch_size=2, max_epochs=3))
    assert all(torch.count_nonzero(p) == 0 for p in trained.parameters())
    assert [r['train_loss'] for r in log.records] == [0.0, 0.0, 0.0]


def test_full_batch_loss_does_not_increase_early():
    snaps = _snapshots(300, num_elements=32, seed=13)
    data = build_training_data(snaps[:250], snaps[250:], L=16, K=16)
    cfg = TrainConfig(learning_rate=3e-4, batch_size=len(data.train_inputs), max_epochs=5, patience=5, master_seed=3)
    _, log = train(init_model(64, seed=0), data, cfg)
    losses = [r['train_loss'] for r in log.records]
    assert len(losses) == 5
    assert all(later <= earlier for earlier, later in zip(losses, losses[1:]))


def test_symmetric_input_gives_mirrored_extensions(tiny_model):
    inner = np.exp(0.9j * (np.arange(8) - 3.5))
    assert np.allclose(inner, flip_conjugate(inner))
    full = extrapolate_bidirectional(tiny_model, inner, num_elements=14)
    assert np.allclose(full[:3], flip_conjugate(full[11:]), atol=1e-6)

    boresight = extrapolate_bidirectional(tiny_model, np.ones(8, dtype=complex), num_elements=14)
    assert np.allclose(boresight[:3], flip_conjugate(boresight[11:]), atol=1e-6)


def _single_target_snapshots(count, seed):
    cfg = ArrayConfig(32)
    samples, _ = simulate_records(SimParams(num_targets=(1, 1)), cfg, count, master_seed=seed, noiseless=True)
    return [Snapshot(row, cfg) for row in samples]


@pytest.mark.slow
def test_training_on_single_target_pairs_cuts_validation_loss():
    snaps = _single_target_snapshots(150, seed=31)
    data = build_training_data(snaps[:100], snaps[100:], L=16, K=16)
    assert len(data.train_inputs) == 200
    model = init_model(64, seed=0)
    initial = evaluate_loss(model, data.val_inputs, data.val_labels)
    model, _ = train(model, data, TrainConfig(learning_rate=3e-3, batch_size=20, max_epochs=300, patience=30))
    assert evaluate_loss(model, data.val_inputs, data.val_labels) < 0.3 * initial


@pytest.mark.slow
def test_trained_model_follows_the_phase_of_a_single_target():
    snaps = _single_target_snapshots(4200, seed=32)
    data = build_training_data(snaps[:3800], snaps[3800:4000], L=16, K=16)
    model, _ = train(init_model(64, seed=0), data,
                     TrainConfig(learning_rate=2e-3, batch_size=64, max_epochs=150, patience=15))

    held_out = np.array([s.samples for s in snaps[4000:]])
    inner = held_out[:, 8:24]
    predictions = extrapolate_batch(model, inner / np.abs(inner).max(axis=1, keepdims=True), 8)
    errors = np.abs(np.angle(predictions * np.conj(held_out[:, 24:])))
    assert np.mean(errors.mean(axis=1) < 0.2) >= 0.9
