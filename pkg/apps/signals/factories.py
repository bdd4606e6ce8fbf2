# apps/signals/factories.py
import factory
import numpy as np

from apps.signals.records import LeadSet, Record, RecordMeta


class RecordMetaFactory(factory.Factory):
    class Meta:
        model = RecordMeta

    patient_id = factory.Sequence(lambda n: n)
    age_years = 45.0
    gender = factory.Iterator(['male', 'female'])
    diagnostic_labels = frozenset({0})
    form_labels = frozenset()
    rhythm_labels = frozenset({0})
    class_name = 'normal'


class LeadSetFactory(factory.Factory):
    class Meta:
        model = LeadSet

    samples = factory.LazyFunction(lambda: np.zeros((32, 2)))
    sample_rate_hz = 100.0


class RecordFactory(factory.Factory):
    class Meta:
        model = Record

    leads = factory.SubFactory(LeadSetFactory)
    meta = factory.SubFactory(RecordMetaFactory)
    fold = 1
