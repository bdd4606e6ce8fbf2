# apps/diffusion/training.py
"""
Training objective and loop.

    L_Total = L_MSE(eps_hat, eps) + beta * L_MIDT(x0_hat, x0)

L_MSE is the usual noise-prediction error. L_MIDT compares the clean signal
reconstructed from the noise estimate with the real one, so the spectral
term reaches the network through the same eps_hat.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from apps.autodiff import graph as ad
from apps.autodiff.graph import ComputeGraph
from apps.autodiff.optim import optimizer_step
from apps.conditioning.embeddings import conditioning_bindings, conditioning_node
from apps.conditioning.schema import resolve_mask
from apps.core.rng import make_rng
from apps.denoiser.network import denoise_node
from apps.diffusion.exceptions import NonFiniteLossError, TrainingError
from apps.diffusion.schedule import forward_noise, make_schedule
from apps.signals.records import DEFAULT_SAMPLE_RATE_HZ
from apps.spectro.loss import MidtConfig, midt_loss_node

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    midt_weight: float = 0.1
    batch_size: int = 16
    steps: int = 300
    learning_rate: float = 2e-3
    seed: int = 0
    midt: MidtConfig = field(default_factory=MidtConfig)
    mask: object = None
    diffusion_steps: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.02
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    log_every: int = 50

    def validate(self, length=None):
        if self.midt_weight < 0:
            raise TrainingError(f'midt_weight must be >= 0, got {self.midt_weight}')
        if self.batch_size < 1 or self.steps < 1:
            raise TrainingError('batch_size and steps must be at least 1')
        if self.learning_rate <= 0:
            raise TrainingError(f'learning_rate must be positive, got {self.learning_rate}')
        if self.log_every < 1:
            raise TrainingError('log_every must be at least 1')
        self.midt.validate(length)
        return self

    def schedule(self):
        return make_schedule(self.diffusion_steps, self.beta_start, self.beta_end)


@dataclass
class LossParts:
    total: float
    mse: float
    midt: float
    per_resolution: dict


@dataclass
class TrainResult:
    model: object
    trace: pd.DataFrame


def total_loss_node(x0, x_t, eps, eps_hat, t, sched, cfg, sample_rate_hz=DEFAULT_SAMPLE_RATE_HZ):
    """
    Build the objective on (B, L, C) nodes.

    Returns (total, mse, midt, {window: midt term}) nodes.
    """
    graph = x0.graph
    signal, noise = sched.coefficients(t, 3)
    noise_scale = graph.constant(noise, label='sqrt_one_minus_alpha_bar')
    x0_hat = (x_t - eps_hat * noise_scale) * graph.constant(1.0 / signal, label='inv_sqrt_alpha_bar')
    mse = ad.mean(ad.square(eps_hat - eps))
    midt, terms = midt_loss_node(x0_hat, x0, cfg.midt, sample_rate_hz)
    total = mse + ad.scale(midt, cfg.midt_weight)
    return total, mse, midt, terms


def total_loss(x0, t, eps, eps_hat, cfg, sched=None, sample_rate_hz=DEFAULT_SAMPLE_RATE_HZ):
    """Evaluate the objective on (B, L, C) arrays; t is scalar or one step per record"""
    sched = sched or cfg.schedule()
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    x_t = forward_noise(x0, t, eps, sched)
    graph = ComputeGraph()
    total, mse, midt, terms = total_loss_node(
        graph.input('x0'), graph.input('x_t'), graph.input('eps'), graph.input('eps_hat'),
        t, sched, cfg, sample_rate_hz,
    )
    value = graph.evaluate({'x0': x0, 'x_t': x_t, 'eps': eps, 'eps_hat': eps_hat}, root=total)
    return LossParts(
        total=float(value),
        mse=float(graph.value(mse)),
        midt=float(graph.value(midt)),
        per_resolution={w: float(graph.value(node)) for w, node in terms.items()},
    )


def _draw_batch(rng, n_records, batch_size):
    return rng.choice(n_records, size=batch_size, replace=n_records < batch_size)


def train(dataset, model, cfg):
    """
    Optimize ``model`` in place on ``dataset``.

    Every step draws its batch, diffusion steps and noise from its own child
    stream of ``cfg.seed``, so (seed, config, dataset, initial model) fix the
    whole loss trace.
    """
    if dataset.is_empty:
        raise TrainingError('training split is empty')
    length, channels = dataset.shape
    if (length, channels) != (model.length, model.net.channels):
        raise TrainingError(
            f'dataset records are {length} x {channels}, '
            f'model expects {model.length} x {model.net.channels}',
        )
    cfg.validate(length)
    sched = cfg.schedule()
    model.mask = resolve_mask(cfg.mask)
    signals = dataset.signals().astype(np.float64)
    metas = dataset.metas()
    sample_rate = dataset.sample_rate_hz
    store = model.store
    logger.info(
        f'Training on {len(dataset)} records for {cfg.steps} steps '
        f'(beta={cfg.midt_weight}, batch={cfg.batch_size}, mask={list(model.mask)})'
    )

    rows = []
    for step in range(1, cfg.steps + 1):
        rng = make_rng(cfg.seed, 300, step)
        index = _draw_batch(rng, len(signals), cfg.batch_size)
        x0 = signals[index]
        t = rng.integers(1, sched.T + 1, size=len(index))
        eps = rng.standard_normal(x0.shape)
        x_t = forward_noise(x0, t, eps, sched)

        graph = ComputeGraph(store)
        x_t_node = graph.input('x_t')
        c = conditioning_node(graph, len(index), model.schema, model.mask)
        eps_hat = denoise_node(x_t_node, t, c, model.net, sched.T)
        total, mse, midt, terms = total_loss_node(
            graph.input('x0'), x_t_node, graph.input('eps'), eps_hat, t, sched, cfg, sample_rate,
        )
        bindings = {'x0': x0, 'x_t': x_t, 'eps': eps}
        bindings.update(conditioning_bindings([metas[i] for i in index], model.schema))
        value = float(graph.evaluate(bindings, root=total))
        if not np.isfinite(value):
            logger.error(f'Non-finite loss at step {step}')
            raise NonFiniteLossError(step, value)

        grads = store.complete(graph.backpropagate())
        optimizer_step(store, grads, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)

        row = {
            'step': step,
            'L_MSE': float(graph.value(mse)),
            'L_MIDT': float(graph.value(midt)),
            'L_Total': value,
        }
        row.update({f'midt_w{w}': float(graph.value(node)) for w, node in terms.items()})
        rows.append(row)
        if step % cfg.log_every == 0 or step == cfg.steps:
            logger.info(
                f"step {step}/{cfg.steps} L_MSE={row['L_MSE']:.6f} "
                f"L_MIDT={row['L_MIDT']:.6f} L_Total={value:.6f}"
            )

    return TrainResult(model=model, trace=pd.DataFrame(rows))
