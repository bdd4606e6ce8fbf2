# apps/denoiser/network.py
"""
The noise-prediction network eps_theta(x_t, t, c).

A residual stack of dilated convolutions. Every block reads the
conditioning vector c through its own affine map:

    h <- tanh(conv_k(h) * (1 + gamma_k(c)) + delta_k(c))

The block output feeds both the residual path and a skip sum; the skip sum
goes through relu and a zero-initialized projection back to the lead
channels, so an untrained network predicts zero noise.

A block only needs ``(h, c) -> h'`` of shape (B, L, H), so another sequence
layer can replace the convolution without touching the conditioning path.
"""

import logging
from dataclasses import dataclass

import numpy as np

from apps.autodiff import graph as ad
from apps.autodiff.exceptions import GraphError, ShapeMismatchError
from apps.autodiff.graph import ComputeGraph
from apps.autodiff.optim import ParameterStore
from apps.conditioning.schema import GroupSchema
from apps.core.rng import make_rng

logger = logging.getLogger(__name__)

PREFIX = 'net.'
INIT_STD = 0.02


@dataclass(frozen=True)
class NetConfig:
    channels: int = 12
    hidden: int = 32
    n_blocks: int = 4
    dilations: tuple = (1, 2, 4, 8)
    kernel_size: int = 3
    step_embedding_dim: int = 32
    cond_dim: int = GroupSchema().total_dim

    def validate(self):
        if self.n_blocks < 1:
            raise GraphError(f'n_blocks must be >= 1, got {self.n_blocks}')
        if self.kernel_size < 1 or self.kernel_size % 2 != 1:
            raise GraphError(f'kernel_size must be odd, got {self.kernel_size}')
        if not self.dilations or any(d < 1 for d in self.dilations):
            raise GraphError(f'dilations must be positive, got {self.dilations}')
        if self.step_embedding_dim % 2:
            raise GraphError('step_embedding_dim must be even')
        for name in ('channels', 'hidden', 'cond_dim'):
            if getattr(self, name) < 1:
                raise GraphError(f'{name} must be positive')
        return self

    def dilation(self, block):
        return self.dilations[block % len(self.dilations)]

    def parameter_shapes(self):
        """Name -> shape of every network tensor, in initialization order"""
        C, H, E, D, K = (
            self.channels, self.hidden, self.step_embedding_dim, self.cond_dim, self.kernel_size,
        )
        shapes = {
            'net.in_proj.weight': (C, H),
            'net.in_proj.bias': (H,),
            'net.step_mlp.fc1.weight': (E, H),
            'net.step_mlp.fc1.bias': (H,),
            'net.step_mlp.fc2.weight': (H, H),
            'net.step_mlp.fc2.bias': (H,),
        }
        for k in range(self.n_blocks):
            shapes.update({
                f'net.block{k}.conv.weight': (H, H, K),
                f'net.block{k}.conv.bias': (H,),
                f'net.block{k}.gamma.weight': (D, H),
                f'net.block{k}.gamma.bias': (H,),
                f'net.block{k}.delta.weight': (D, H),
                f'net.block{k}.delta.bias': (H,),
                f'net.block{k}.res.weight': (H, H),
                f'net.block{k}.res.bias': (H,),
            })
        shapes['net.out_proj.weight'] = (H, C)
        shapes['net.out_proj.bias'] = (C,)
        return shapes


def parameter_count(cfg):
    """Closed-form size of the network"""
    C, H, E, D, K = cfg.channels, cfg.hidden, cfg.step_embedding_dim, cfg.cond_dim, cfg.kernel_size
    per_block = (H * H * K + H) + 2 * (D * H + H) + (H * H + H)
    return (C * H + H) + (E * H + H + H * H + H) + cfg.n_blocks * per_block + (H * C + C)


def receptive_field(cfg):
    return sum(cfg.dilation(k) * (cfg.kernel_size - 1) for k in range(cfg.n_blocks)) + 1


def init_params(cfg, seed, store=None):
    """
    Add the network tensors to ``store`` (a new one when None).

    Weights and biases draw from N(0, 0.02^2), one child stream per tensor;
    the output projection starts at zero.
    """
    cfg.validate()
    store = store if store is not None else ParameterStore()
    for index, (name, shape) in enumerate(cfg.parameter_shapes().items()):
        if name.startswith('net.out_proj'):
            store.add(name, np.zeros(shape))
        else:
            store.add(name, make_rng(seed, 200, index).normal(0.0, INIT_STD, size=shape))
    logger.debug(f'Initialized denoiser with {store.parameter_count(PREFIX)} parameters')
    return store


def step_embedding(t, dim):
    """Sinusoidal embedding of integer diffusion steps: (B,) -> (B, dim)"""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def _affine(x, graph, name):
    return x @ graph.parameter(f'{name}.weight') + graph.parameter(f'{name}.bias')


def residual_block(h, c, cfg, k):
    """One conditioned block: (B, L, H) hidden and (B, D) c -> (output, skip)"""
    graph = h.graph
    batch_first = ad.transpose(h, (0, 2, 1))
    conv = ad.conv1d(batch_first, graph.parameter(f'net.block{k}.conv.weight'), cfg.dilation(k))
    conv = ad.transpose(conv, (0, 2, 1)) + graph.parameter(f'net.block{k}.conv.bias')
    gamma = ad.reshape(_affine(c, graph, f'net.block{k}.gamma'), (-1, 1, cfg.hidden))
    delta = ad.reshape(_affine(c, graph, f'net.block{k}.delta'), (-1, 1, cfg.hidden))
    modulated = ad.tanh(conv * (gamma + 1.0) + delta)
    out = _affine(modulated, graph, f'net.block{k}.res')
    return ad.scale(h + out, np.sqrt(0.5)), out


def denoise_node(x_t, t, c, cfg, max_step=None):
    """
    Graph builder for eps_hat.

    Args:
        x_t: (B, L, C) node
        t: (B,) integer steps, each >= 1
        c: (B, cond_dim) conditioning node
        max_step: schedule length T; steps above it are rejected when given

    Returns:
        (B, L, C) node
    """
    graph = x_t.graph
    t = np.asarray(t).reshape(-1)
    if t.size and t.min() < 1:
        raise GraphError(f'diffusion steps must be >= 1, got {int(t.min())}')
    if t.size and max_step is not None and t.max() > max_step:
        raise GraphError(f'diffusion steps must be <= {max_step}, got {int(t.max())}')
    embedding = graph.constant(step_embedding(t, cfg.step_embedding_dim), label='step_embedding')
    hidden = _affine(embedding, graph, 'net.step_mlp.fc1')
    hidden = _affine(ad.relu(hidden), graph, 'net.step_mlp.fc2')

    h = _affine(x_t, graph, 'net.in_proj') + ad.reshape(hidden, (-1, 1, cfg.hidden))
    skip = None
    for k in range(cfg.n_blocks):
        h, out = residual_block(h, c, cfg, k)
        skip = out if skip is None else skip + out
    skip = ad.scale(skip, 1.0 / np.sqrt(cfg.n_blocks))
    return _affine(ad.relu(skip), graph, 'net.out_proj')


def _as_batch(value, last, what):
    array = np.asarray(value, dtype=np.float64)
    if array.ndim == 1 and what == 'c':
        array = array[None]
    if array.ndim == 2 and what == 'x_t':
        array = array[None]
    if array.shape[-1] != last:
        raise ShapeMismatchError(f'{what} has shape {array.shape}, last axis must be {last}', node=what)
    return array


def denoise_forward(store, x_t, t, c, cfg, max_step=None):
    """
    Evaluate eps_hat on arrays.

    ``x_t`` is (L, C) or (B, L, C); ``c`` is (cond_dim,) or (B, cond_dim);
    ``t`` is an int or one step per record. Returns the shape of ``x_t``.
    """
    squeeze = np.ndim(x_t) == 2
    x = _as_batch(x_t, cfg.channels, 'x_t')
    cond = _as_batch(c, cfg.cond_dim, 'c')
    batch = x.shape[0]
    if cond.shape[0] == 1 and batch > 1:
        cond = np.repeat(cond, batch, axis=0)
    if cond.shape[0] != batch:
        raise ShapeMismatchError(f'c batch {cond.shape[0]} != x_t batch {batch}', node='c')
    steps = np.broadcast_to(np.asarray(t).reshape(-1), (batch,))
    graph = ComputeGraph(store)
    root = denoise_node(graph.input('x_t'), steps, graph.input('c'), cfg, max_step)
    eps_hat = graph.evaluate({'x_t': x, 'c': cond}, root=root)
    return eps_hat[0] if squeeze else eps_hat
