# apps/diffusion/sampling.py
import logging

import numpy as np

from apps.core.rng import make_rng

logger = logging.getLogger(__name__)


def sample(model, conditions, sched, n=None, seed=0):
    """
    Ancestral sampling from pure noise.

        x_{t-1} = (x_t - beta_t / sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_t) + sigma_t * z

    with sigma_t^2 = beta_t and z = 0 on the last step. ``conditions`` is a
    list of RecordMeta, an (n, cond_dim) array, or one vector repeated ``n``
    times; a list or array whose length disagrees with ``n`` raises
    TrainingError. Returns (n, L, C) float64 samples.
    """
    c = model.conditioning(conditions, n)
    count = len(c)
    shape = (count, model.length, model.net.channels)
    if count == 0:
        return np.zeros(shape)
    x = make_rng(seed, 400).standard_normal(shape)
    for t in range(sched.T, 0, -1):
        eps_hat = model.predict(x, np.full(count, t), c, sched.T)
        beta, alpha, alpha_bar = sched.beta(t), sched.alpha(t), sched.alpha_bar(t)
        x = (x - beta / np.sqrt(1.0 - alpha_bar) * eps_hat) / np.sqrt(alpha)
        if t > 1:
            x = x + np.sqrt(beta) * make_rng(seed, 400, t).standard_normal(shape)
    logger.debug(f'Sampled {count} records over {sched.T} steps (seed={seed})')
    return x
