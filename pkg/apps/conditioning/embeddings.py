# apps/conditioning/embeddings.py
"""
Per-group embedding tables and the concatenated conditioning vector

    c = concat_k(W_k^T y_k),  k in diagnostic, form, rhythm, age, gender

Tables live in a ParameterStore as ``cond.<group>`` (group_size x dim) so
they train together with the denoiser. Masked groups contribute zeros.
"""

import numpy as np

from apps.autodiff import graph as ad
from apps.autodiff.optim import ParameterStore
from apps.conditioning.exceptions import ConditioningError
from apps.conditioning.schema import (
    GROUP_ORDER, GroupSchema, batch_indicators, encode_indicators, resolve_mask,
)
from apps.core.rng import make_rng

PREFIX = 'cond.'
INIT_STD = 0.02


def table_name(group):
    return f'{PREFIX}{group}'


class EmbeddingTables:
    """View over the ``cond.*`` entries of a ParameterStore"""

    def __init__(self, store, schema=None):
        self.store = store
        self.schema = schema or GroupSchema()
        self.check()

    @classmethod
    def initialize(cls, schema=None, seed=0, store=None):
        schema = schema or GroupSchema()
        store = store if store is not None else ParameterStore()
        for index, group in enumerate(GROUP_ORDER):
            rng = make_rng(seed, 100, index)
            shape = (schema.sizes[group], schema.embedding_dim)
            store.add(table_name(group), rng.normal(0.0, INIT_STD, size=shape))
        return cls(store, schema)

    def check(self):
        for group in GROUP_ORDER:
            name = table_name(group)
            expected = (self.schema.sizes[group], self.schema.embedding_dim)
            if name not in self.store:
                raise ConditioningError(f"missing embedding table '{name}'", group=group)
            if self.store[name].shape != expected:
                raise ConditioningError(
                    f"table '{name}' has shape {self.store[name].shape}, schema expects {expected}",
                    group=group,
                )

    def table(self, group):
        return self.store[table_name(group)]


def build_conditioning_vector(meta, tables, mask=None):
    """Length ``5 * dim`` conditioning vector of one record"""
    live = resolve_mask(mask)
    indicators = encode_indicators(meta, tables.schema)
    segments = []
    for group in GROUP_ORDER:
        if group in live:
            segments.append(indicators[group] @ tables.table(group))
        else:
            segments.append(np.zeros(tables.schema.embedding_dim))
    return np.concatenate(segments)


def conditioning_bindings(metas, schema=None):
    """Graph input bindings ``cond_in.<group>`` for a batch of records"""
    indicators = batch_indicators(metas, schema)
    return {f'cond_in.{group}': values for group, values in indicators.items()}


def conditioning_node(graph, batch_size, schema=None, mask=None):
    """
    (B, 5 * dim) conditioning node of a graph.

    Indicators enter as inputs ``cond_in.<group>``; tables as parameters.
    """
    schema = schema or GroupSchema()
    live = resolve_mask(mask)
    segments = []
    for group in GROUP_ORDER:
        if group in live:
            segments.append(graph.input(f'cond_in.{group}') @ graph.parameter(table_name(group)))
        else:
            zeros = np.zeros((batch_size, schema.embedding_dim))
            segments.append(graph.constant(zeros, label=f'masked_{group}'))
    return ad.concat(segments, axis=-1)
