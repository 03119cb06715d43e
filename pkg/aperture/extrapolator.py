"""LSTM antenna-vector extrapolator.

Two stacked LSTM layers and a dense head predict the next complex antenna sample
as (re, im). The default head is autoregressive: after warming up on the L
input samples each prediction is fed back as the next input. Training runs the
same rollout, so gradients flow through the fed-back predictions.
"""
import copy
import logging
import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F
from torch import nn
from torch.utils.data import DataLoader, TensorDataset
from tqdm import tqdm

from aperture.cube_pipeline import make_training_pairs
from aperture.errors import ConfigError, DatasetIOError, NumericError

logger = logging.getLogger(__name__)

AUTOREGRESSIVE = 'autoregressive'
BLOCK = 'block'

MAGIC = b'AFRX'
HEADER = np.dtype([('magic', 'S4'), ('version', '<u2'), ('hidden_size', '<u2')])
HEAD_VERSIONS = {AUTOREGRESSIVE: 1, BLOCK: 2}
BLOB = np.dtype('<f4')
BLOB_ORDER = (
    'lstm1.weight_ih', 'lstm1.weight_hh', 'lstm1.bias',
    'lstm2.weight_ih', 'lstm2.weight_hh', 'lstm2.bias',
    'dense.weight', 'dense.bias',
)


class LSTMLayer(nn.Module):
    """One LSTM cell with a single bias vector; gate order is input, forget, candidate, output."""

    def __init__(self, input_size, hidden_size):
        super().__init__()
        self.hidden_size = hidden_size
        self.weight_ih = nn.Parameter(torch.zeros(4 * hidden_size, input_size))
        self.weight_hh = nn.Parameter(torch.zeros(4 * hidden_size, hidden_size))
        self.bias = nn.Parameter(torch.zeros(4 * hidden_size))

    def forward(self, x, state):
        h, c = state
        gates = F.linear(x, self.weight_ih, self.bias) + F.linear(h, self.weight_hh)
        i, f, g, o = gates.chunk(4, dim=-1)
        c = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h = torch.sigmoid(o) * torch.tanh(c)
        return h, c


class ExtrapolatorModel(nn.Module):
    def __init__(self, hidden_size=128, head=AUTOREGRESSIVE, output_steps=1):
        super().__init__()
        if head not in HEAD_VERSIONS:
            raise ConfigError('Unknown head {0}; choose from {1}'.format(head, sorted(HEAD_VERSIONS)))
        self.hidden_size = hidden_size
        self.input_size = 2
        self.head = head
        self.output_steps = output_steps if head == BLOCK else 1
        self.lstm1 = LSTMLayer(self.input_size, hidden_size)
        self.lstm2 = LSTMLayer(hidden_size, hidden_size)
        self.dense = nn.Linear(hidden_size, 2 * self.output_steps)
        # all-zero until init_model draws the weights
        nn.init.zeros_(self.dense.weight)
        nn.init.zeros_(self.dense.bias)

    @property
    def dtype(self):
        return self.dense.weight.dtype

    def zero_state(self, batch_size):
        zeros = torch.zeros(batch_size, self.hidden_size, dtype=self.dtype)
        return (zeros, zeros, zeros, zeros)

    def forward_step(self, x, state):
        h1, c1, h2, c2 = state
        h1, c1 = self.lstm1(x, (h1, c1))
        h2, c2 = self.lstm2(h1, (h2, c2))
        return self.dense(h2), (h1, c1, h2, c2)

    def forward(self, inputs, steps):
        batch_size = inputs.shape[0]
        if steps == 0:
            return inputs.new_zeros(batch_size, 0, 2)

        state = self.zero_state(batch_size)
        for t in range(inputs.shape[1]):
            y, state = self.forward_step(inputs[:, t], state)

        if self.head == BLOCK:
            if steps != self.output_steps:
                raise ConfigError('Block head predicts {0} steps, {1} requested'.format(self.output_steps, steps))
            return y.view(batch_size, steps, 2)

        predictions = [y]
        for _ in range(steps - 1):
            y, state = self.forward_step(y, state)
            predictions.append(y)
        return torch.stack(predictions, dim=1)


@dataclass
class TrainConfig(object):
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    batch_size: int = 256
    max_epochs: int = 100
    patience: int = 10
    rollout_len: Optional[int] = None
    master_seed: int = 0
    head: str = AUTOREGRESSIVE

    def validate(self):
        if not self.learning_rate >= 0:
            raise ConfigError('Learning rate must be non-negative, got {0}'.format(self.learning_rate))
        for name in ('beta1', 'beta2'):
            if not 0 < getattr(self, name) < 1:
                raise ConfigError('{0} must be in (0, 1), got {1}'.format(name, getattr(self, name)))
        if self.batch_size < 1 or self.max_epochs < 0 or self.patience < 1:
            raise ConfigError('batch_size and patience must be positive and max_epochs non-negative')
        if self.head not in HEAD_VERSIONS:
            raise ConfigError('Unknown head {0}'.format(self.head))
        return self


@dataclass
class TrainingData(object):
    train_inputs: torch.Tensor
    train_labels: torch.Tensor
    val_inputs: torch.Tensor
    val_labels: torch.Tensor


@dataclass
class TrainingLog(object):
    records: list = field(default_factory=list)
    best_epoch: Optional[int] = None
    stopped_early: bool = False

    def to_frame(self):
        return pd.DataFrame(self.records, columns=['epoch', 'train_loss', 'val_loss'])


def init_model(hidden_size=128, seed=0, head=AUTOREGRESSIVE, output_steps=1, zero=False, dtype=torch.float32):
    if hidden_size < 1:
        raise ConfigError('hidden_size must be at least 1, got {0}'.format(hidden_size))
    model = ExtrapolatorModel(hidden_size, head=head, output_steps=output_steps).to(dtype)
    if zero:
        return model

    generator = torch.Generator().manual_seed(int(seed))
    bound = 1.0 / np.sqrt(hidden_size)
    with torch.no_grad():
        for name in BLOB_ORDER:
            model.get_parameter(name).uniform_(-bound, bound, generator=generator)
        for layer in (model.lstm1, model.lstm2):
            layer.bias[hidden_size:2 * hidden_size] = 1.0
    return model


def to_channels(samples, dtype=torch.float32):
    samples = np.asarray(samples)
    return torch.from_numpy(np.stack([samples.real, samples.imag], axis=-1).astype(np.float64)).to(dtype)


def from_channels(tensor):
    values = tensor.detach().cpu().double().numpy()
    return values[..., 0] + 1j * values[..., 1]


def forward_step(model, x, state=None):
    x = torch.as_tensor(np.asarray(x, dtype=float), dtype=model.dtype).reshape(1, 2)
    if not torch.all(torch.isfinite(x)):
        raise NumericError('Non-finite input to the extrapolator: {0}'.format(x.tolist()))
    if state is None:
        state = model.zero_state(1)
    with torch.no_grad():
        y, state = model.forward_step(x, state)
    return (float(y[0, 0]), float(y[0, 1])), state


def extrapolate_batch(model, inner, steps, batch_size=4096):
    inner = np.atleast_2d(np.asarray(inner))
    if steps < 0:
        raise ConfigError('Number of extrapolated samples must be non-negative, got {0}'.format(steps))
    if steps == 0:
        return np.zeros((inner.shape[0], 0), dtype=complex)
    if not np.all(np.isfinite(inner)):
        raise NumericError('Non-finite antenna samples passed to the extrapolator')

    outputs = []
    with torch.no_grad():
        for start in range(0, inner.shape[0], batch_size):
            chunk = to_channels(inner[start:start + batch_size], model.dtype)
            outputs.append(from_channels(model(chunk, steps)))
    return np.concatenate(outputs, axis=0)


def extrapolate(model, inner, steps):
    return extrapolate_batch(model, np.asarray(inner)[None, :], steps)[0]


def extrapolate_bidirectional_batch(model, inner, steps):
    inner = np.atleast_2d(np.asarray(inner, dtype=complex))
    count = inner.shape[0]
    flipped = np.conj(inner[:, ::-1])
    predicted = extrapolate_batch(model, np.concatenate([inner, flipped]), steps)
    right = predicted[:count]
    left = np.conj(predicted[count:, ::-1])
    return np.concatenate([left, inner, right], axis=1)


def extrapolate_bidirectional(model, snap_inner, steps=None, num_elements=None):
    snap_inner = np.asarray(snap_inner)
    if steps is None:
        if num_elements is None or (num_elements - len(snap_inner)) % 2:
            raise ConfigError('Need an even number of extra elements to extrapolate both ends')
        steps = (num_elements - len(snap_inner)) // 2
    return extrapolate_bidirectional_batch(model, snap_inner, steps)[0]


def pairs_to_tensors(pairs, dtype=torch.float32):
    if not pairs:
        raise ConfigError('No training pairs')
    inputs = to_channels(np.stack([p.input for p in pairs]), dtype)
    labels = to_channels(np.stack([p.label for p in pairs]), dtype)
    return inputs, labels


def pooled_pairs(snapshots, L, K):
    pairs = []
    for snap in snapshots:
        right, left = make_training_pairs(snap, L, K)
        pairs.extend((right, left))
    return pairs


def build_training_data(train_snapshots, val_snapshots, L, K, dtype=torch.float32):
    train_inputs, train_labels = pairs_to_tensors(pooled_pairs(train_snapshots, L, K), dtype)
    if val_snapshots:
        val_inputs, val_labels = pairs_to_tensors(pooled_pairs(val_snapshots, L, K), dtype)
    else:
        val_inputs, val_labels = train_inputs[:0], train_labels[:0]
    return TrainingData(train_inputs, train_labels, val_inputs, val_labels)


def rollout_loss(model, inputs, labels):
    return F.mse_loss(model(inputs, labels.shape[1]), labels)


def evaluate_loss(model, inputs, labels, batch_size=4096):
    if len(inputs) == 0:
        return float('nan')
    total = 0.0
    with torch.no_grad():
        for start in range(0, len(inputs), batch_size):
            x, y = inputs[start:start + batch_size], labels[start:start + batch_size]
            total += rollout_loss(model, x, y).item() * len(x)
    return total / len(inputs)


def train(model, data, cfg, progress=False):
    cfg.validate()
    if len(data.train_inputs) == 0:
        raise ConfigError('Training set is empty')
    has_val = len(data.val_inputs) > 0
    if not has_val:
        logger.warning('no validation pairs; early stopping follows the training loss')

    generator = torch.Generator().manual_seed(int(cfg.master_seed))
    loader = DataLoader(TensorDataset(data.train_inputs, data.train_labels),
                        batch_size=cfg.batch_size, shuffle=True, generator=generator)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate,
                                 betas=(cfg.beta1, cfg.beta2), eps=cfg.epsilon)

    log = TrainingLog()
    best_loss, best_state, waited = float('inf'), copy.deepcopy(model.state_dict()), 0

    for epoch in tqdm(range(1, cfg.max_epochs + 1), disable=not progress, desc='epochs'):
        model.train()
        running, seen = 0.0, 0
        for inputs, labels in loader:
            optimizer.zero_grad()
            loss = rollout_loss(model, inputs, labels)
            if not torch.isfinite(loss):
                raise NumericError('Training loss became {0} at epoch {1}'.format(loss.item(), epoch))
            loss.backward()
            optimizer.step()
            running += loss.item() * len(inputs)
            seen += len(inputs)

        model.eval()
        train_loss = running / seen
        val_loss = evaluate_loss(model, data.val_inputs, data.val_labels) if has_val else train_loss
        if not np.isfinite(val_loss):
            raise NumericError('Validation loss became {0} at epoch {1}'.format(val_loss, epoch))
        log.records.append({'epoch': epoch, 'train_loss': train_loss, 'val_loss': val_loss})
        logger.info('epoch %d: train %.6f val %.6f', epoch, train_loss, val_loss)

        if val_loss < best_loss:
            best_loss, best_state, waited = val_loss, copy.deepcopy(model.state_dict()), 0
            log.best_epoch = epoch
        else:
            waited += 1
            if waited >= cfg.patience:
                log.stopped_early = True
                logger.info('early stop after %d epochs without improvement', waited)
                break

    model.load_state_dict(best_state)
    return model, log


def model_bytes(model):
    version = HEAD_VERSIONS[model.head]
    chunks = [np.array([(MAGIC, version, model.hidden_size)], dtype=HEADER).tobytes()]
    if model.head == BLOCK:
        chunks.append(np.array([model.output_steps], dtype='<u2').tobytes())
    for name in BLOB_ORDER:
        chunks.append(model.get_parameter(name).detach().cpu().numpy().astype(BLOB).tobytes())
    body = b''.join(chunks)
    return body + np.array([zlib.crc32(body)], dtype='<u4').tobytes()


def save_model(model, path):
    try:
        with open(path, 'wb') as f:
            f.write(model_bytes(model))
    except OSError as e:
        raise DatasetIOError('Failed to write model {0}: {1}'.format(path, e)) from e


def load_model(path):
    try:
        with open(path, 'rb') as f:
            raw = f.read()
    except OSError as e:
        raise DatasetIOError('Cannot read model {0}: {1}'.format(path, e)) from e

    if len(raw) < HEADER.itemsize + 4:
        raise DatasetIOError('{0} is truncated'.format(path))
    header = np.frombuffer(raw[:HEADER.itemsize], dtype=HEADER)[0]
    if header['magic'] != MAGIC:
        raise DatasetIOError('{0} is not an extrapolator model file'.format(path))
    heads = {v: k for k, v in HEAD_VERSIONS.items()}
    if int(header['version']) not in heads:
        raise DatasetIOError('Unsupported model format version {0}'.format(int(header['version'])))

    head = heads[int(header['version'])]
    offset = HEADER.itemsize
    output_steps = 1
    if head == BLOCK:
        output_steps = int(np.frombuffer(raw[offset:offset + 2], dtype='<u2')[0])
        offset += 2

    body, crc = raw[:-4], int(np.frombuffer(raw[-4:], dtype='<u4')[0])
    if zlib.crc32(body) != crc:
        raise DatasetIOError('{0} failed its CRC check'.format(path))

    model = ExtrapolatorModel(int(header['hidden_size']), head=head, output_steps=output_steps)
    expected = offset + sum(p.numel() for p in model.parameters()) * BLOB.itemsize
    if len(body) != expected:
        raise DatasetIOError('{0} holds {1} bytes, a hidden size of {2} needs {3}'.format(
            path, len(body), model.hidden_size, expected))

    with torch.no_grad():
        for name in BLOB_ORDER:
            param = model.get_parameter(name)
            count = param.numel()
            values = np.frombuffer(body[offset:offset + count * BLOB.itemsize], dtype=BLOB)
            param.copy_(torch.from_numpy(values.reshape(param.shape).astype(np.float32)))
            offset += count * BLOB.itemsize
    return model
