# apps/diffusion/schedule.py
"""
Linear noise schedule and the closed-form forward process

    x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps

Steps are 1-based: t = 1 is the least noisy, t = T the most.
"""

from dataclasses import dataclass

import numpy as np

from apps.diffusion.exceptions import ScheduleError
from apps.signals.records import LeadSet


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    betas: np.ndarray

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        betas.setflags(write=False)
        object.__setattr__(self, 'betas', betas)

    @property
    def T(self):
        return len(self.betas)

    @property
    def alphas(self):
        return 1.0 - self.betas

    @property
    def alpha_bars(self):
        return np.cumprod(self.alphas)

    def check_step(self, t):
        t = np.asarray(t)
        if t.size and (t.min() < 1 or t.max() > self.T):
            raise ScheduleError(f'diffusion step must be within 1..{self.T}, got {t.tolist()}')
        return t.astype(np.int64)

    def beta(self, t):
        return self.betas[self.check_step(t) - 1]

    def alpha(self, t):
        return self.alphas[self.check_step(t) - 1]

    def alpha_bar(self, t):
        return self.alpha_bars[self.check_step(t) - 1]

    def coefficients(self, t, ndim=3):
        """
        (sqrt(alpha_bar_t), sqrt(1 - alpha_bar_t)) shaped to broadcast over a
        batch: scalars for a scalar t, (B, 1, ..., 1) for one step per record.
        """
        alpha_bar = self.alpha_bar(t)
        if np.ndim(alpha_bar):
            alpha_bar = alpha_bar.reshape((-1,) + (1,) * (ndim - 1))
        return np.sqrt(alpha_bar), np.sqrt(1.0 - alpha_bar)


def make_schedule(T=200, beta_1=1e-4, beta_T=0.02):
    if int(T) != T or T < 1:
        raise ScheduleError(f'T must be a positive integer, got {T}')
    if not 0 < beta_1 <= beta_T < 1:
        raise ScheduleError(f'need 0 < beta_1 <= beta_T < 1, got {beta_1}, {beta_T}')
    return NoiseSchedule(np.linspace(beta_1, beta_T, int(T)))


def _unwrap(value):
    if isinstance(value, LeadSet):
        return value.samples, value.sample_rate_hz
    return np.asarray(value, dtype=np.float64), None


def _wrap(array, sample_rate_hz):
    return array if sample_rate_hz is None else LeadSet(array, sample_rate_hz)


def forward_noise(x0, t, eps, sched):
    """Noised signal at step t; arrays or LeadSets, t scalar or one per record"""
    x0, rate = _unwrap(x0)
    eps, _ = _unwrap(eps)
    if eps.shape != x0.shape:
        raise ScheduleError(f'noise shape {eps.shape} != signal shape {x0.shape}')
    signal, noise = sched.coefficients(t, x0.ndim)
    return _wrap(signal * x0 + noise * eps, rate)


def reconstruct_x0(x_t, eps_hat, t, sched):
    """Invert forward_noise with a noise estimate"""
    x_t, rate = _unwrap(x_t)
    eps_hat, _ = _unwrap(eps_hat)
    if eps_hat.shape != x_t.shape:
        raise ScheduleError(f'noise shape {eps_hat.shape} != signal shape {x_t.shape}')
    signal, noise = sched.coefficients(t, x_t.ndim)
    return _wrap((x_t - noise * eps_hat) / signal, rate)
