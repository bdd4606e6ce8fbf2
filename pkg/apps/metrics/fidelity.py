# apps/metrics/fidelity.py
"""
Record-pair fidelity metrics.

Every function takes a reference ``x`` and a candidate ``y`` of equal shape:
LeadSets, (L, C) arrays, or 1-D arrays for a single lead.
"""

import numpy as np
from scipy.spatial.distance import directed_hausdorff

from apps.metrics.exceptions import MetricError
from apps.signals.records import LeadSet


def as_leads(value):
    """(L, C) float64 view of a LeadSet or array"""
    if isinstance(value, LeadSet):
        value = value.samples
    array = np.asarray(value, dtype=np.float64)
    if array.ndim == 1:
        array = array[:, None]
    if array.ndim != 2:
        raise MetricError(f'expected (L, C) samples, got shape {array.shape}')
    return array


def _pair(x, y):
    x, y = as_leads(x), as_leads(y)
    if x.shape != y.shape:
        raise MetricError(f'shape mismatch: {x.shape} vs {y.shape}')
    return x, y


def pointwise_fidelity(x, y):
    """
    Returns (rmse, mse, snr_db).

    snr_db uses ``x`` as the signal; it is None when the residual is zero.
    """
    x, y = _pair(x, y)
    residual = x - y
    mse = float(np.mean(residual ** 2))
    noise_energy = float(np.sum(residual ** 2))
    if noise_energy == 0.0:
        snr_db = None
    else:
        with np.errstate(divide='ignore'):
            snr_db = float(10.0 * np.log10(np.sum(x ** 2) / noise_energy))
    return float(np.sqrt(mse)), mse, snr_db


def fourier_distance(x, y):
    """
    RMS difference of orthonormal DFT magnitudes over leads and bins.

    Phase is ignored, and by Parseval the value never exceeds the rmse.
    """
    x, y = _pair(x, y)
    spectrum_x = np.abs(np.fft.fft(x, axis=0, norm='ortho'))
    spectrum_y = np.abs(np.fft.fft(y, axis=0, norm='ortho'))
    return float(np.sqrt(np.mean((spectrum_x - spectrum_y) ** 2)))


def waveform_points(lead):
    """Planar point set {(i / (L - 1), value_i)} of one lead"""
    length = len(lead)
    time = np.arange(length) / (length - 1) if length > 1 else np.zeros(1)
    return np.column_stack([time, lead])


def hausdorff_distance(x, y, per_lead=False):
    """Symmetric Hausdorff distance between waveform point sets, mean over leads"""
    x, y = _pair(x, y)
    distances = []
    for lead in range(x.shape[1]):
        a, b = waveform_points(x[:, lead]), waveform_points(y[:, lead])
        distances.append(max(directed_hausdorff(a, b)[0], directed_hausdorff(b, a)[0]))
    distances = np.array(distances)
    return distances if per_lead else float(distances.mean())


def ssim_1d(x, y, window=64, stride=32, l_range=None, k1=0.01, k2=0.03):
    """
    Mean SSIM over sliding windows and leads.

    ``l_range`` is the dynamic range of the data; it defaults to the
    peak-to-peak range of ``x``.
    """
    x, y = _pair(x, y)
    length = x.shape[0]
    if window < 1 or stride < 1:
        raise MetricError('window and stride must be positive')
    if length < window:
        raise MetricError(f'signal length {length} is shorter than the SSIM window {window}')
    if l_range is None:
        l_range = float(np.ptp(x))
    if l_range <= 0:
        raise MetricError(f'dynamic range must be positive, got {l_range}')
    c1 = (k1 * l_range) ** 2
    c2 = (k2 * l_range) ** 2

    starts = np.arange(0, length - window + 1, stride)
    index = starts[:, None] + np.arange(window)[None, :]
    wx, wy = x[index], y[index]          # (windows, window, C)
    mu_x, mu_y = wx.mean(axis=1), wy.mean(axis=1)
    var_x = ((wx - mu_x[:, None]) ** 2).mean(axis=1)
    var_y = ((wy - mu_y[:, None]) ** 2).mean(axis=1)
    cov = ((wx - mu_x[:, None]) * (wy - mu_y[:, None])).mean(axis=1)
    ssim = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / ((mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2))
    return float(ssim.mean())


def dynamic_range(signals):
    """Peak-to-peak amplitude of a reference set of (N, L, C) signals"""
    signals = np.asarray(signals, dtype=np.float64)
    return float(np.ptp(signals)) if signals.size else 0.0


def lead_fidelity(x, y):
    """Per-lead mse, rmse, fourier and hausdorff values as a dict of (C,) arrays"""
    x, y = _pair(x, y)
    mse = np.mean((x - y) ** 2, axis=0)
    spectrum_x = np.abs(np.fft.fft(x, axis=0, norm='ortho'))
    spectrum_y = np.abs(np.fft.fft(y, axis=0, norm='ortho'))
    return {
        'mse': mse,
        'rmse': np.sqrt(mse),
        'fourier': np.sqrt(np.mean((spectrum_x - spectrum_y) ** 2, axis=0)),
        'hausdorff': hausdorff_distance(x, y, per_lead=True),
    }
