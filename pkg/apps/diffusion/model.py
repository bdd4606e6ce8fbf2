# apps/diffusion/model.py
from dataclasses import dataclass

import numpy as np

from apps.conditioning.embeddings import EmbeddingTables, build_conditioning_vector
from apps.conditioning.schema import GROUP_ORDER, GroupSchema, resolve_mask
from apps.denoiser.network import NetConfig, denoise_forward, init_params
from apps.diffusion.exceptions import TrainingError
from apps.signals.records import DEFAULT_SAMPLE_RATE_HZ, RecordMeta


@dataclass
class DiffusionModel:
    """
    Denoiser and conditioning tables sharing one ParameterStore.

    ``mask`` holds the live conditioning groups the model is trained and
    sampled with.
    """
    store: object
    net: NetConfig
    length: int
    schema: GroupSchema = GroupSchema()
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ
    mask: tuple = GROUP_ORDER

    def __post_init__(self):
        if self.net.cond_dim != self.schema.total_dim:
            raise TrainingError(
                f'denoiser expects a {self.net.cond_dim}-dim conditioning vector, '
                f'schema produces {self.schema.total_dim}',
            )
        self.mask = resolve_mask(self.mask)

    @classmethod
    def initialize(cls, net, length, seed, schema=None, sample_rate_hz=DEFAULT_SAMPLE_RATE_HZ,
                   mask=None):
        schema = schema or GroupSchema()
        store = init_params(net, seed)
        EmbeddingTables.initialize(schema, seed, store)
        return cls(store, net, int(length), schema, float(sample_rate_hz), mask)

    @property
    def tables(self):
        return EmbeddingTables(self.store, self.schema)

    def conditioning(self, conditions, n=None):
        """
        (n, cond_dim) conditioning array from record metadata or raw vectors.

        A single vector is repeated ``n`` times. Metadata lists and 2-D arrays
        fix the count themselves; ``n`` must then be None or match it.
        """
        if len(conditions) == 0:
            vectors = np.zeros((0, self.schema.total_dim))
        elif isinstance(conditions, (list, tuple)) and isinstance(conditions[0], RecordMeta):
            tables = self.tables
            vectors = np.stack([build_conditioning_vector(m, tables, self.mask) for m in conditions])
        else:
            vectors = np.asarray(conditions, dtype=np.float64)
            if vectors.ndim == 1:
                return np.repeat(vectors[None], 1 if n is None else n, axis=0)
        if n is not None and len(vectors) != n:
            raise TrainingError(f'asked for {n} samples but got {len(vectors)} conditions')
        return vectors

    def predict(self, x_t, t, c, max_step=None):
        return denoise_forward(self.store, x_t, t, c, self.net, max_step)
