import numpy as np
from scipy.linalg import hankel

from aperture.errors import ConfigError, DegenerateInputError
from aperture.estimators.spectrum_estimator import SpectrumEstimator


class SsMusic(SpectrumEstimator):
    """Single-snapshot MUSIC on the forward Hankel matrix of one antenna vector.

    The Hankel matrix is (M - Q + 1) x Q with Q = M // 2 + 1; its left singular
    vectors beyond the first ``num_targets`` span the noise subspace.
    """

    def __init__(self, num_targets, grid_step=0.05, forward_backward=False, spacing_wavelengths=None):
        super().__init__('music', 3, spacing_wavelengths=spacing_wavelengths)
        self.num_targets = num_targets
        self.grid_step = grid_step
        self.forward_backward = forward_backward

    def hankel_matrix(self):
        num_cols = len(self.data) // 2 + 1
        num_rows = len(self.data) - num_cols + 1
        H = hankel(self.data[:num_rows], self.data[num_rows - 1:])
        if self.forward_backward:
            H = np.hstack([H, np.conj(H[::-1, ::-1])])
        return H

    def angle_grid(self):
        count = int(round(180.0 / self.grid_step)) - 1
        return -90.0 + self.grid_step * np.arange(1, count + 1)

    def logic(self):
        if not np.any(self.data):
            raise DegenerateInputError('MUSIC cannot run on an all-zero snapshot')

        H = self.hankel_matrix()
        num_rows = H.shape[0]
        if not 1 <= self.num_targets < num_rows:
            raise ConfigError('Number of targets must be in [1, {0}) for a {1}-element snapshot, got {2}'.format(
                num_rows, len(self.data), self.num_targets))

        U, _, _ = np.linalg.svd(H)
        noise_space = U[:, self.num_targets:]

        angles = self.angle_grid()
        phase = 2 * np.pi * self.spacing_wavelengths * np.outer(np.arange(num_rows), np.sin(np.deg2rad(angles)))
        projection = np.sum(np.abs(noise_space.conj().T @ np.exp(1j * phase)) ** 2, axis=0)

        floor = np.finfo(float).eps * num_rows
        return angles, 1.0 / np.maximum(projection, floor)
