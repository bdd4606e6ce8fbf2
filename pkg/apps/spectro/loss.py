# apps/spectro/loss.py
"""
The differentiable multi-resolution log-mel L1 loss (L_MIDT).

For every resolution the signals go through frame -> window -> real DFT
(as two matrix products) -> magnitude -> mel bank -> log with floor, and the
term is the mean |difference| over records, leads, frames and mel bins. The
loss is the uniform mean of the per-resolution terms.

Both arguments run through the same graph ops, so ``midt_loss(x, x)`` is
exactly 0 and the loss is exactly symmetric.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from apps.autodiff import graph as ad
from apps.autodiff.graph import ComputeGraph
from apps.signals.records import DEFAULT_SAMPLE_RATE_HZ, LeadSet
from apps.spectro.exceptions import SpectroError
from apps.spectro.transforms import STFTResolution, mel_filterbank, window_samples

DEFAULT_WINDOWS = (32, 64, 128)


@dataclass(frozen=True, eq=False)
class SpectralPlan:
    """Constant matrices of one resolution"""
    resolution: STFTResolution
    bank: object
    taper: np.ndarray
    cos: np.ndarray
    sin: np.ndarray
    mel: np.ndarray

    @property
    def window_length(self):
        return self.resolution.window_length


@lru_cache(maxsize=64)
def build_plan(window_length, hop_length, window, n_mels, f_min, f_max, sample_rate):
    resolution = STFTResolution(window_length, hop_length, window)
    bank = mel_filterbank(sample_rate, window_length, n_mels, f_min, f_max)
    n = np.arange(window_length)[:, None]
    k = np.arange(resolution.n_bins)[None, :]
    angle = 2.0 * np.pi * n * k / window_length
    scale = 1.0 / np.sqrt(window_length)
    return SpectralPlan(
        resolution=resolution,
        bank=bank,
        taper=window_samples(window, window_length),
        cos=np.cos(angle) * scale,
        sin=-np.sin(angle) * scale,
        mel=bank.matrix.T.copy(),
    )


@dataclass
class MidtConfig:
    resolutions: list = field(default_factory=lambda: [STFTResolution(w) for w in DEFAULT_WINDOWS])
    n_mels: list = None
    f_min_hz: float = 0.0
    f_max_hz: float = None
    log_floor: float = 1e-5

    @classmethod
    def from_windows(cls, windows, hops=None, **kwargs):
        hops = hops or [None] * len(windows)
        return cls(resolutions=[STFTResolution(w, h) for w, h in zip(windows, hops)], **kwargs)

    def validate(self, length=None):
        if len(self.resolutions) < 2:
            raise SpectroError(f'need at least 2 resolutions, got {len(self.resolutions)}')
        if self.n_mels is not None and len(self.n_mels) != len(self.resolutions):
            raise SpectroError('n_mels must list one value per resolution')
        if self.log_floor <= 0:
            raise SpectroError('log floor must be positive')
        if length is not None:
            for res in self.resolutions:
                res.n_frames(length)

    def mel_counts(self):
        if self.n_mels is not None:
            return [int(m) for m in self.n_mels]
        return [max(1, res.window_length // 4) for res in self.resolutions]

    def plans(self, sample_rate_hz=DEFAULT_SAMPLE_RATE_HZ):
        self.validate()
        f_max = self.f_max_hz if self.f_max_hz is not None else sample_rate_hz / 2.0
        return [
            build_plan(
                res.window_length, res.hop_length, res.window, n_mels,
                float(self.f_min_hz), float(f_max), float(sample_rate_hz),
            )
            for res, n_mels in zip(self.resolutions, self.mel_counts())
        ]


def log_mel_node(signal, plan, floor):
    """(B, L, C) signal node -> (B, C, frames, n_mels) log-mel node"""
    graph = signal.graph
    res = plan.resolution
    leads_first = ad.transpose(signal, (0, 2, 1))
    frames = ad.frame(leads_first, res.window_length, res.hop_length)
    windowed = frames * graph.constant(plan.taper, label=f'taper_w{res.window_length}')
    real = windowed @ graph.constant(plan.cos, label=f'dft_cos_w{res.window_length}')
    imag = windowed @ graph.constant(plan.sin, label=f'dft_sin_w{res.window_length}')
    magnitude = ad.sqrt(ad.square(real) + ad.square(imag))
    mel = magnitude @ graph.constant(plan.mel, label=f'mel_w{res.window_length}')
    return ad.log(mel, floor)


def multi_resolution_l1(x_hat, x, plans, floor=1e-5):
    """
    Mean-of-means log-mel L1 distance between two (B, L, C) nodes.

    Returns (total node, {window_length: per-resolution node}).
    """
    if not plans:
        raise SpectroError('no resolutions given')
    terms = {}
    for plan in plans:
        diff = log_mel_node(x_hat, plan, floor) - log_mel_node(x, plan, floor)
        terms[plan.window_length] = ad.mean(ad.abs_(diff))
    nodes = list(terms.values())
    total = nodes[0]
    for node in nodes[1:]:
        total = total + node
    return ad.scale(total, 1.0 / len(nodes)), terms


def midt_loss_node(x_hat, x, cfg, sample_rate_hz=DEFAULT_SAMPLE_RATE_HZ):
    return multi_resolution_l1(x_hat, x, cfg.plans(sample_rate_hz), cfg.log_floor)


def _as_batch(value):
    if isinstance(value, LeadSet):
        value = value.samples
    array = np.asarray(value, dtype=np.float64)
    if array.ndim == 2:
        array = array[None]
    if array.ndim != 3:
        raise SpectroError(f'expected (L, C) or (B, L, C) samples, got shape {array.shape}')
    return array


def midt_loss_terms(x_hat, x, cfg=None, sample_rate_hz=None):
    """Evaluate the loss on arrays or LeadSets; returns (total, {window: term})"""
    cfg = cfg or MidtConfig()
    if sample_rate_hz is None:
        sample_rate_hz = x.sample_rate_hz if isinstance(x, LeadSet) else DEFAULT_SAMPLE_RATE_HZ
    a, b = _as_batch(x_hat), _as_batch(x)
    if a.shape != b.shape:
        raise SpectroError(f'shape mismatch: {a.shape} vs {b.shape}')
    cfg.validate(a.shape[1])
    graph = ComputeGraph()
    total, terms = midt_loss_node(graph.input('x_hat'), graph.input('x'), cfg, sample_rate_hz)
    value = graph.evaluate({'x_hat': a, 'x': b}, root=total)
    return float(value), {w: float(graph.value(node)) for w, node in terms.items()}


def midt_loss(x_hat, x, cfg=None, sample_rate_hz=None):
    return midt_loss_terms(x_hat, x, cfg, sample_rate_hz)[0]
