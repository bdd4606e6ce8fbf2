# apps/spectro/transforms.py
"""
Short-time spectra and mel filterbanks (numpy reference path).

Conventions shared with the differentiable path in ``apps.spectro.loss``:
frames are taken without padding, ``floor((L - W) / hop) + 1`` of them; the
DFT is scaled by ``1 / sqrt(W)``; magnitude (not power) spectra feed the mel
bank; the mel scale is ``2595 * log10(1 + f / 700)``.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.signal import get_window

from apps.spectro.exceptions import SpectroError

WINDOW_CHOICES = ('hann', 'rectangular')


def hz_to_mel(freq):
    return 2595.0 * np.log10(1.0 + np.asarray(freq, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True)
class STFTResolution:
    window_length: int
    hop_length: int = None
    window: str = 'hann'

    def __post_init__(self):
        hop = self.window_length // 4 if self.hop_length is None else self.hop_length
        object.__setattr__(self, 'hop_length', int(hop))
        if self.window_length < 2 or self.window_length & (self.window_length - 1):
            raise SpectroError(f'window length must be a power of two, got {self.window_length}')
        if not 0 < self.hop_length <= self.window_length:
            raise SpectroError(f'hop must be within 1..{self.window_length}, got {self.hop_length}')
        if self.window not in WINDOW_CHOICES:
            raise SpectroError(f"window must be one of {WINDOW_CHOICES}, got '{self.window}'")

    @property
    def n_bins(self):
        return self.window_length // 2 + 1

    def n_frames(self, length):
        if length < self.window_length:
            raise SpectroError(
                f'signal of length {length} is shorter than window {self.window_length}',
            )
        return (length - self.window_length) // self.hop_length + 1

    def taper(self):
        return window_samples(self.window, self.window_length)


@lru_cache(maxsize=None)
def window_samples(kind, length):
    if kind == 'rectangular':
        values = np.ones(length)
    else:
        # Periodic Hann, the DFT-even variant.
        values = get_window('hann', length, fftbins=True)
    values.setflags(write=False)
    return values


@dataclass(frozen=True, eq=False)
class MelBank:
    n_mels: int
    f_min_hz: float
    f_max_hz: float
    sample_rate_hz: float
    window_length: int
    matrix: np.ndarray
    centers_hz: np.ndarray


def mel_filterbank(sample_rate, window_length, n_mels, f_min=0.0, f_max=None):
    """
    Triangular filters equally spaced on the mel scale, each peak-normalized.

    A filter narrower than the bin spacing would miss every bin; it is then
    reduced to a single 1 at the bin nearest its center.
    """
    nyquist = sample_rate / 2.0
    f_max = nyquist if f_max is None else float(f_max)
    if n_mels < 1:
        raise SpectroError(f'n_mels must be at least 1, got {n_mels}')
    if f_max > nyquist:
        raise SpectroError(f'f_max {f_max} Hz exceeds Nyquist {nyquist} Hz')
    if not 0.0 <= f_min < f_max:
        raise SpectroError(f'need 0 <= f_min < f_max, got {f_min}, {f_max}')

    bin_hz = np.arange(window_length // 2 + 1) * sample_rate / window_length
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    matrix = np.zeros((n_mels, bin_hz.size))
    for m in range(n_mels):
        left, center, right = edges[m], edges[m + 1], edges[m + 2]
        rising = (bin_hz - left) / (center - left)
        falling = (right - bin_hz) / (right - center)
        row = np.maximum(0.0, np.minimum(rising, falling))
        if row.max() > 0.0:
            row = row / row.max()
        else:
            row[np.argmin(np.abs(bin_hz - center))] = 1.0
        matrix[m] = row
    return MelBank(
        n_mels=n_mels,
        f_min_hz=float(f_min),
        f_max_hz=f_max,
        sample_rate_hz=float(sample_rate),
        window_length=window_length,
        matrix=matrix,
        centers_hz=edges[1:-1],
    )


def frame_signal(lead, res):
    lead = np.asarray(lead, dtype=np.float64)
    n_frames = res.n_frames(lead.shape[-1])
    index = res.hop_length * np.arange(n_frames)[:, None] + np.arange(res.window_length)[None, :]
    return lead[..., index]


def stft(lead, res):
    """Complex (frames, bins) spectrum of one lead with orthonormal scaling"""
    frames = frame_signal(lead, res) * res.taper()
    return np.fft.rfft(frames, axis=-1) / np.sqrt(res.window_length)


def log_mel_spectrogram(lead, res, bank, floor=1e-5):
    """(frames, n_mels) matrix log(max(bank @ |STFT|, floor))"""
    if bank.window_length != res.window_length:
        raise SpectroError(
            f'mel bank built for window {bank.window_length}, resolution uses {res.window_length}',
        )
    magnitude = np.abs(stft(lead, res))
    return np.log(np.maximum(magnitude @ bank.matrix.T, floor))
