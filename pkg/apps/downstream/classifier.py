# apps/downstream/classifier.py
"""
Small 1-D convolutional classifier used to measure downstream utility.

Two dilated conv blocks with relu, global average pooling over time and a
linear head giving one logit per class. Classes are scored one-vs-rest with
binary cross-entropy on logits, softplus(z) - y * z.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from apps.autodiff import graph as ad
from apps.autodiff.graph import ComputeGraph
from apps.autodiff.optim import ParameterStore, optimizer_step
from apps.core.rng import make_rng
from apps.downstream.exceptions import DownstreamError

logger = logging.getLogger(__name__)

N_BLOCKS = 2


@dataclass
class ClassifierConfig:
    hidden: int = 16
    kernel_size: int = 5
    steps: int = 300
    batch_size: int = 32
    learning_rate: float = 5e-3
    seed: int = 0

    def validate(self):
        if self.hidden < 1 or self.steps < 1 or self.batch_size < 1:
            raise DownstreamError('hidden, steps and batch_size must be at least 1')
        if self.kernel_size % 2 != 1:
            raise DownstreamError(f'kernel_size must be odd, got {self.kernel_size}')
        if self.learning_rate <= 0:
            raise DownstreamError('learning_rate must be positive')
        return self


@dataclass
class ClassifierParams:
    store: ParameterStore
    cfg: ClassifierConfig
    classes: list
    input_scale: np.ndarray = None
    final_loss: float = None
    losses: list = field(default_factory=list)

    @property
    def trained(self):
        return self.final_loss is not None

    def logits(self, signals, batch_size=256):
        signals = _signals(signals)
        if self.input_scale is not None:
            signals = signals / self.input_scale
        if len(signals) == 0:
            return np.zeros((0, len(self.classes)))
        chunks = []
        for start in range(0, len(signals), batch_size):
            graph = ComputeGraph(self.store)
            root = classifier_node(graph.input('x'), self.cfg)
            chunks.append(graph.evaluate({'x': signals[start:start + batch_size]}, root=root))
        return np.concatenate(chunks)

    def predict_proba(self, signals):
        """(N, n_classes) sigmoid scores"""
        return expit(self.logits(signals))


def _signals(data):
    if hasattr(data, 'signals'):
        data = data.signals()
    return np.asarray(data, dtype=np.float64)


def lead_scale(signals):
    """Per-lead standard deviation of an (N, L, C) array, 1 where a lead is flat"""
    scale = signals.std(axis=(0, 1))
    return np.where(scale > 0, scale, 1.0)


def label_matrix(ds, classes):
    """(N, n_classes) one-hot targets from each record's class_name"""
    labels = np.zeros((len(ds), len(classes)))
    for i, record in enumerate(ds):
        if record.meta.class_name in classes:
            labels[i, classes.index(record.meta.class_name)] = 1.0
    return labels


def init_classifier(cfg, n_leads, n_classes):
    store = ParameterStore()
    H, K = cfg.hidden, cfg.kernel_size
    shapes = {}
    for k in range(N_BLOCKS):
        shapes[f'clf.block{k}.weight'] = (H, n_leads if k == 0 else H, K)
        shapes[f'clf.block{k}.bias'] = (H, 1)
    shapes['clf.head.weight'] = (H, n_classes)
    shapes['clf.head.bias'] = (n_classes,)
    for index, (name, shape) in enumerate(shapes.items()):
        if name.endswith('bias'):
            store.add(name, np.zeros(shape))
            continue
        fan_in = int(np.prod(shape[1:])) if len(shape) == 3 else shape[0]
        store.add(name, make_rng(cfg.seed, 600, index).normal(0.0, 1.0 / np.sqrt(fan_in), size=shape))
    return store


def classifier_node(x, cfg):
    """(B, L, C) node -> (B, n_classes) logits"""
    graph = x.graph
    h = ad.transpose(x, (0, 2, 1))
    for k in range(N_BLOCKS):
        h = ad.conv1d(h, graph.parameter(f'clf.block{k}.weight'), dilation=2 ** k)
        h = ad.relu(h + graph.parameter(f'clf.block{k}.bias'))
    pooled = ad.mean(h, axis=2)
    return pooled @ graph.parameter('clf.head.weight') + graph.parameter('clf.head.bias')


def bce_node(logits, targets):
    return ad.mean(ad.softplus(logits) - logits * targets)


def train_classifier(train, cfg=None, classes=None):
    """
    Fit a classifier to the class names of ``train``.

    Returns ClassifierParams with the per-step loss history; deterministic
    given ``cfg.seed``.
    """
    cfg = (cfg or ClassifierConfig()).validate()
    classes = list(classes) if classes is not None else train.class_names()
    present = set(train.class_names()) & set(classes)
    if len(present) < 2:
        raise DownstreamError(f'need at least 2 classes to train a classifier, got {sorted(present)}')
    signals = _signals(train)
    # per-lead standardization, reapplied by ClassifierParams.logits
    input_scale = lead_scale(signals)
    signals = signals / input_scale
    targets = label_matrix(train, classes)
    store = init_classifier(cfg, signals.shape[2], len(classes))

    losses = []
    for step in range(1, cfg.steps + 1):
        rng = make_rng(cfg.seed, 601, step)
        index = rng.choice(len(signals), size=cfg.batch_size, replace=len(signals) < cfg.batch_size)
        graph = ComputeGraph(store)
        logits = classifier_node(graph.input('x'), cfg)
        loss = bce_node(logits, graph.constant(targets[index], label='targets'))
        value = float(graph.evaluate({'x': signals[index]}, root=loss))
        if not np.isfinite(value):
            raise DownstreamError(f'non-finite classifier loss at step {step}', step=step)
        optimizer_step(store, store.complete(graph.backpropagate()), cfg.learning_rate)
        losses.append(value)

    logger.debug(f'Classifier trained on {len(train)} records, final loss {losses[-1]:.4f}')
    return ClassifierParams(
        store=store, cfg=cfg, classes=classes, input_scale=input_scale,
        final_loss=losses[-1], losses=losses,
    )
