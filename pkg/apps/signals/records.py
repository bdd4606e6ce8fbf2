# apps/signals/records.py
"""
In-memory data model: lead sets, record metadata and fold-assigned datasets.

Samples are held as float64 (L, C) arrays. Values produced by the oracle,
the PTB-XL adapter and the sampler are quantized to float32 first so that
the on-disk float32 payload roundtrips bit-exactly.
"""

from dataclasses import dataclass, field

import numpy as np

from apps.signals.exceptions import InvalidRecordError, SplitError

DIAGNOSTIC_VOCAB = 40
FORM_VOCAB = 19
RHYTHM_VOCAB = 12

GENDERS = ('male', 'female')

MIN_LENGTH = 16
DEFAULT_SAMPLE_RATE_HZ = 100.0

STANDARD_LEADS = ('I', 'II', 'III', 'aVR', 'aVL', 'aVF', 'V1', 'V2', 'V3', 'V4', 'V5', 'V6')


def quantize_float32(values):
    """Round values to the nearest float32, returned as float64"""
    return np.asarray(values, dtype=np.float64).astype(np.float32).astype(np.float64)


def lead_names(n_leads):
    if n_leads == len(STANDARD_LEADS):
        return list(STANDARD_LEADS)
    return [f'lead_{i + 1}' for i in range(n_leads)]


@dataclass(frozen=True, eq=False)
class LeadSet:
    """An L x C matrix of samples in mV at a fixed sample rate"""
    samples: np.ndarray
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64)
        if samples.ndim != 2:
            raise InvalidRecordError(f'samples must be L x C, got shape {samples.shape}')
        if samples.shape[0] < MIN_LENGTH:
            raise InvalidRecordError(f'length {samples.shape[0]} is below {MIN_LENGTH}')
        if samples.shape[1] < 1:
            raise InvalidRecordError('a lead set needs at least one lead')
        if not np.all(np.isfinite(samples)):
            raise InvalidRecordError('samples contain non-finite values')
        if self.sample_rate_hz <= 0:
            raise InvalidRecordError(f'sample rate must be positive, got {self.sample_rate_hz}')
        samples.setflags(write=False)
        object.__setattr__(self, 'samples', samples)
        object.__setattr__(self, 'sample_rate_hz', float(self.sample_rate_hz))

    @property
    def length(self):
        return self.samples.shape[0]

    @property
    def n_leads(self):
        return self.samples.shape[1]

    def __eq__(self, other):
        if not isinstance(other, LeadSet):
            return NotImplemented
        return (
            self.sample_rate_hz == other.sample_rate_hz
            and self.samples.shape == other.samples.shape
            and self.samples.tobytes() == other.samples.tobytes()
        )

    __hash__ = None


def _label_set(values, vocab, group):
    labels = frozenset(int(v) for v in values)
    for label in labels:
        if not 0 <= label < vocab:
            raise InvalidRecordError(f'{group} label {label} outside vocabulary of {vocab}')
    return labels


@dataclass(frozen=True)
class RecordMeta:
    patient_id: int
    age_years: float
    gender: str
    diagnostic_labels: frozenset = field(default_factory=frozenset)
    form_labels: frozenset = field(default_factory=frozenset)
    rhythm_labels: frozenset = field(default_factory=frozenset)
    class_name: str = ''

    def __post_init__(self):
        if self.age_years < 0:
            raise InvalidRecordError(f'age must be non-negative, got {self.age_years}')
        if self.gender not in GENDERS:
            raise InvalidRecordError(f"gender must be one of {GENDERS}, got '{self.gender}'")
        object.__setattr__(self, 'patient_id', int(self.patient_id))
        object.__setattr__(self, 'age_years', float(self.age_years))
        object.__setattr__(
            self, 'diagnostic_labels',
            _label_set(self.diagnostic_labels, DIAGNOSTIC_VOCAB, 'diagnostic'),
        )
        object.__setattr__(self, 'form_labels', _label_set(self.form_labels, FORM_VOCAB, 'form'))
        object.__setattr__(
            self, 'rhythm_labels', _label_set(self.rhythm_labels, RHYTHM_VOCAB, 'rhythm'),
        )

    def to_dict(self):
        return {
            'patient_id': self.patient_id,
            'age_years': self.age_years,
            'gender': self.gender,
            'diagnostic_labels': sorted(self.diagnostic_labels),
            'form_labels': sorted(self.form_labels),
            'rhythm_labels': sorted(self.rhythm_labels),
            'class_name': self.class_name,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


@dataclass(frozen=True)
class Record:
    leads: LeadSet
    meta: RecordMeta
    fold: int

    def __post_init__(self):
        if not 1 <= int(self.fold) <= 10:
            raise InvalidRecordError(f'fold must be within 1..10, got {self.fold}')
        object.__setattr__(self, 'fold', int(self.fold))


class Dataset:
    """
    Immutable list of fold-assigned records sharing one shape.

    A patient may own several records but all of them sit in the same fold.
    """

    def __init__(self, records=()):
        self._records = tuple(records)
        shapes = {(r.leads.samples.shape, r.leads.sample_rate_hz) for r in self._records}
        if len(shapes) > 1:
            raise InvalidRecordError(f'records disagree on shape or sample rate: {sorted(shapes)}')
        folds_by_patient = {}
        for record in self._records:
            pid = record.meta.patient_id
            if folds_by_patient.setdefault(pid, record.fold) != record.fold:
                raise SplitError(
                    f'patient {pid} appears in folds {folds_by_patient[pid]} and {record.fold}',
                    patient_id=pid,
                )

    def __len__(self):
        return len(self._records)

    def __iter__(self):
        return iter(self._records)

    def __getitem__(self, index):
        return self._records[index]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self._records == other._records

    __hash__ = None

    @property
    def records(self):
        return self._records

    @property
    def is_empty(self):
        return not self._records

    @property
    def shape(self):
        """(length, n_leads) of every record, or None when empty"""
        if not self._records:
            return None
        return self._records[0].leads.samples.shape

    @property
    def sample_rate_hz(self):
        if not self._records:
            return DEFAULT_SAMPLE_RATE_HZ
        return self._records[0].leads.sample_rate_hz

    def signals(self):
        """Stack the samples into an (N, L, C) array"""
        if not self._records:
            return np.zeros((0, 0, 0))
        return np.stack([r.leads.samples for r in self._records])

    def metas(self):
        return [r.meta for r in self._records]

    def folds(self):
        return np.array([r.fold for r in self._records], dtype=np.int64)

    def patient_ids(self):
        return {r.meta.patient_id for r in self._records}

    def class_names(self):
        return sorted({r.meta.class_name for r in self._records})

    def in_folds(self, folds):
        wanted = set(folds)
        return Dataset(r for r in self._records if r.fold in wanted)

    def concat(self, other):
        return Dataset(self._records + tuple(other))

    def subset(self, indices):
        return Dataset(self._records[i] for i in indices)
