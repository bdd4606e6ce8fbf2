# apps/conditioning/tests.py
import numpy as np
import pytest

from apps.autodiff.graph import ComputeGraph
from apps.autodiff.optim import ParameterStore
from apps.conditioning.embeddings import (
    EmbeddingTables, build_conditioning_vector, conditioning_bindings, conditioning_node,
    table_name,
)
from apps.conditioning.exceptions import ConditioningError
from apps.conditioning.schema import (
    GROUP_ORDER, GroupSchema, encode_age, encode_label_groups, resolve_mask,
)
from apps.conditioning.services import ConditioningService
from apps.core.reporting import read_csv_report
from apps.signals.factories import RecordFactory, RecordMetaFactory
from apps.signals.records import Dataset


@pytest.fixture
def tables():
    return EmbeddingTables.initialize(seed=3)


class TestEncodeAge:
    @pytest.mark.parametrize('age,expected', [
        (0, 0), (12, 0), (13, 1), (17, 1), (30, 2), (34, 2), (35, 3), (54, 3), (74, 4),
        (75, 5), (90, 5),
    ])
    def test_bins(self, age, expected):
        vector = encode_age(age)
        assert vector.shape == (6,)
        assert vector.sum() == 1.0
        assert vector[expected] == 1.0

    def test_negative_age(self):
        with pytest.raises(ConditioningError):
            encode_age(-1)


class TestEncodeLabelGroups:
    def test_single_diagnostic_label(self):
        diagnostic, _, _ = encode_label_groups(RecordMetaFactory(diagnostic_labels={3}))
        assert diagnostic.shape == (40,)
        assert np.flatnonzero(diagnostic).tolist() == [3]

    def test_absent_rhythm(self):
        _, _, rhythm = encode_label_groups(RecordMetaFactory(rhythm_labels=set()))
        assert rhythm.shape == (12,)
        assert not rhythm.any()

    def test_multi_hot_form(self):
        _, form, _ = encode_label_groups(RecordMetaFactory(form_labels={0, 18}))
        assert form.shape == (19,)
        assert np.flatnonzero(form).tolist() == [0, 18]

    def test_out_of_range_label(self):
        with pytest.raises(ConditioningError):
            encode_label_groups(RecordMetaFactory(form_labels={18}), GroupSchema(form=10))


class TestConditioningVector:
    def test_length(self, tables):
        assert build_conditioning_vector(RecordMetaFactory(), tables).shape == (160,)

    def test_zero_indicators_give_zero_vector(self, tables):
        graph = ComputeGraph(tables.store)
        bindings = {f'cond_in.{g}': np.zeros((1, tables.schema.sizes[g])) for g in GROUP_ORDER}
        c = graph.evaluate(bindings, root=conditioning_node(graph, 1))
        assert c.shape == (1, 160)
        assert not c.any()

    def test_identity_table_selects_row(self):
        schema = GroupSchema()
        store = ParameterStore()
        for group in GROUP_ORDER:
            store.add(table_name(group), np.eye(schema.sizes[group], schema.embedding_dim))
        tables = EmbeddingTables(store, schema)
        meta = RecordMetaFactory(diagnostic_labels={7})
        c = build_conditioning_vector(meta, tables)
        np.testing.assert_array_equal(c[schema.segment('diagnostic')], np.eye(40, 32)[7])

    def test_gender_changes_only_final_segment(self, tables):
        male = build_conditioning_vector(RecordMetaFactory(gender='male'), tables)
        female = build_conditioning_vector(RecordMetaFactory(gender='female'), tables)
        changed = np.flatnonzero(male != female)
        assert changed.size > 0
        assert changed.min() >= 128

    def test_linear_in_each_group(self, tables):
        graph = ComputeGraph(tables.store)
        node = conditioning_node(graph, 1)
        rng = np.random.default_rng(0)
        base = {f'cond_in.{g}': rng.integers(0, 2, (1, tables.schema.sizes[g])).astype(float)
                for g in GROUP_ORDER}
        other = {k: rng.integers(0, 2, v.shape).astype(float) for k, v in base.items()}
        summed = {k: base[k] + other[k] for k in base}
        c_sum = graph.evaluate(summed, root=node)
        c_parts = graph.evaluate(base, root=node) + graph.evaluate(other, root=node)
        np.testing.assert_allclose(c_sum, c_parts, atol=1e-15)

    def test_segments_are_disjoint(self, tables):
        meta = RecordMetaFactory(age_years=40)
        before = build_conditioning_vector(meta, tables)
        tables.store[table_name('age')] = tables.table('age') + 1.0
        after = build_conditioning_vector(meta, tables)
        age = tables.schema.segment('age')
        changed = np.flatnonzero(before != after)
        assert changed.min() >= age.start and changed.max() < age.stop

    def test_masking_zeroes_exactly_the_segment(self, tables):
        meta = RecordMetaFactory()
        full = build_conditioning_vector(meta, tables, mask='all')
        baseline = build_conditioning_vector(meta, tables, mask='baseline')
        for group in GROUP_ORDER:
            segment = tables.schema.segment(group)
            if group in ('age', 'gender'):
                assert not baseline[segment].any()
            else:
                np.testing.assert_array_equal(baseline[segment], full[segment])

    def test_graph_matches_numpy(self, tables):
        metas = [RecordMetaFactory(age_years=a) for a in (5, 40, 80)]
        graph = ComputeGraph(tables.store)
        c = graph.evaluate(conditioning_bindings(metas), root=conditioning_node(graph, 3, mask='age'))
        for row, meta in zip(c, metas):
            np.testing.assert_allclose(row, build_conditioning_vector(meta, tables, mask='age'))

    def test_schema_mismatch(self):
        store = ParameterStore({table_name(g): np.zeros((2, 32)) for g in GROUP_ORDER})
        with pytest.raises(ConditioningError):
            EmbeddingTables(store)

    def test_same_seed_same_tables(self):
        first = EmbeddingTables.initialize(seed=9)
        second = EmbeddingTables.initialize(seed=9)
        for group in GROUP_ORDER:
            assert first.table(group).tobytes() == second.table(group).tobytes()


class TestMasks:
    def test_presets(self):
        assert resolve_mask('baseline') == ('diagnostic', 'form', 'rhythm')
        assert resolve_mask('gender') == ('diagnostic', 'form', 'rhythm', 'gender')
        assert resolve_mask(None) == GROUP_ORDER

    def test_mapping_form(self):
        assert resolve_mask({'age': True, 'diagnostic': True, 'form': False}) == ('diagnostic', 'age')

    def test_unknown_preset(self):
        with pytest.raises(ConditioningError):
            resolve_mask('height')


def test_export_vectors(tmp_path, tables):
    ds = Dataset([RecordFactory(fold=2), RecordFactory(fold=3)])
    path = ConditioningService.export_vectors(ds, tables, tmp_path / 'c.csv', prov={'seed': 3})
    frame = read_csv_report(path)
    assert frame.shape == (2, 3 + 160)
    assert frame['fold'].tolist() == [2, 3]
