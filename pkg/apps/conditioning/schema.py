# apps/conditioning/schema.py
"""
Attribute groups of the patient representation and their encoders.

Each group is encoded on its own: the three statement groups as multi-hot
indicators (a record may carry several statements or none), age as a
one-hot bin and gender as a one-hot class.
"""

from dataclasses import dataclass

import numpy as np

from apps.conditioning.exceptions import ConditioningError
from apps.signals.records import DIAGNOSTIC_VOCAB, FORM_VOCAB, GENDERS, RHYTHM_VOCAB

AGE_CUTOFFS = (12, 17, 34, 54, 74)

GROUP_ORDER = ('diagnostic', 'form', 'rhythm', 'age', 'gender')

DEFAULT_SIZES = {
    'diagnostic': DIAGNOSTIC_VOCAB,
    'form': FORM_VOCAB,
    'rhythm': RHYTHM_VOCAB,
    'age': len(AGE_CUTOFFS) + 1,
    'gender': len(GENDERS),
}

MASK_PRESETS = {
    'baseline': ('diagnostic', 'form', 'rhythm'),
    'age': ('diagnostic', 'form', 'rhythm', 'age'),
    'gender': ('diagnostic', 'form', 'rhythm', 'gender'),
    'all': GROUP_ORDER,
}


@dataclass(frozen=True)
class GroupSchema:
    diagnostic: int = DIAGNOSTIC_VOCAB
    form: int = FORM_VOCAB
    rhythm: int = RHYTHM_VOCAB
    embedding_dim: int = 32

    @property
    def sizes(self):
        return {
            'diagnostic': self.diagnostic,
            'form': self.form,
            'rhythm': self.rhythm,
            'age': DEFAULT_SIZES['age'],
            'gender': DEFAULT_SIZES['gender'],
        }

    @property
    def total_dim(self):
        return self.embedding_dim * len(GROUP_ORDER)

    def segment(self, group):
        """Slice of the conditioning vector owned by ``group``"""
        start = GROUP_ORDER.index(group) * self.embedding_dim
        return slice(start, start + self.embedding_dim)


def resolve_mask(mask):
    """
    Live groups for a preset name, an explicit list of groups, or a
    ``{group: bool}`` mapping. None means every group.
    """
    if mask is None:
        return GROUP_ORDER
    if isinstance(mask, str):
        if mask not in MASK_PRESETS:
            raise ConditioningError(f"unknown mask preset '{mask}', expected one of {list(MASK_PRESETS)}")
        return MASK_PRESETS[mask]
    if isinstance(mask, dict):
        mask = [group for group, live in mask.items() if live]
    unknown = set(mask) - set(GROUP_ORDER)
    if unknown:
        raise ConditioningError(f'unknown groups in mask: {sorted(unknown)}')
    return tuple(group for group in GROUP_ORDER if group in set(mask))


def encode_age(age_years):
    """One-hot age bin; the bin index is the number of cutoffs strictly below the age"""
    if age_years is None or age_years < 0:
        raise ConditioningError(f'age must be non-negative, got {age_years}')
    vector = np.zeros(len(AGE_CUTOFFS) + 1)
    vector[sum(1 for cutoff in AGE_CUTOFFS if cutoff < age_years)] = 1.0
    return vector


def encode_gender(gender):
    if gender not in GENDERS:
        raise ConditioningError(f"gender must be one of {GENDERS}, got '{gender}'")
    vector = np.zeros(len(GENDERS))
    vector[GENDERS.index(gender)] = 1.0
    return vector


def _multi_hot(labels, size, group):
    vector = np.zeros(size)
    for label in labels:
        if not 0 <= label < size:
            raise ConditioningError(f'{group} label {label} outside 0..{size - 1}', group=group)
        vector[label] = 1.0
    return vector


def encode_label_groups(meta, schema=None):
    """(diagnostic, form, rhythm) multi-hot indicator vectors"""
    schema = schema or GroupSchema()
    return (
        _multi_hot(meta.diagnostic_labels, schema.diagnostic, 'diagnostic'),
        _multi_hot(meta.form_labels, schema.form, 'form'),
        _multi_hot(meta.rhythm_labels, schema.rhythm, 'rhythm'),
    )


def encode_indicators(meta, schema=None):
    """{group: indicator vector} for one record, in group order"""
    diagnostic, form, rhythm = encode_label_groups(meta, schema)
    return {
        'diagnostic': diagnostic,
        'form': form,
        'rhythm': rhythm,
        'age': encode_age(meta.age_years),
        'gender': encode_gender(meta.gender),
    }


def batch_indicators(metas, schema=None):
    """{group: (B, group_size) array} for a list of records"""
    schema = schema or GroupSchema()
    encoded = [encode_indicators(meta, schema) for meta in metas]
    sizes = schema.sizes
    return {
        group: (np.stack([e[group] for e in encoded]) if encoded else np.zeros((0, sizes[group])))
        for group in GROUP_ORDER
    }
