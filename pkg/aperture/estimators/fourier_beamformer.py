import numpy as np

from aperture.errors import ConfigError
from aperture.estimators.spectrum_estimator import SpectrumEstimator


class FourierBeamformer(SpectrumEstimator):
    def __init__(self, grid_size=4096, spacing_wavelengths=None):
        super().__init__('fourier', 1, spacing_wavelengths=spacing_wavelengths)
        self.grid_size = grid_size

    def logic(self):
        if self.grid_size < 4 * len(self.data):
            raise ConfigError('FFT grid of {0} points is below 4x the snapshot length {1}'.format(
                self.grid_size, len(self.data)))

        spectrum = np.fft.fftshift(np.fft.fft(self.data, n=self.grid_size))
        freqs = np.fft.fftshift(np.fft.fftfreq(self.grid_size))

        # spatial frequency beyond d/lambda has no real angle
        visible = np.abs(freqs) <= self.spacing_wavelengths
        angles = np.rad2deg(np.arcsin(freqs[visible] / self.spacing_wavelengths))
        return angles, np.abs(spectrum[visible]) ** 2
