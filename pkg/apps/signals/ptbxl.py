# apps/signals/ptbxl.py
"""
Adapter for PTB-XL style data that has already been loaded into memory.

Nothing is downloaded or parsed here. The caller supplies:

signals
    float array of shape (N, L, C) in mV, leads ordered
    I, II, III, aVR, aVL, aVF, V1-V6 (PTB-XL's WFDB order). At 100 Hz a
    PTB-XL record is L=1000.
metadata
    pandas DataFrame with N rows aligned with ``signals`` and columns

    ==============  ======================================================
    patient_id      integer patient identifier
    age             age in years
    sex             0 = male, 1 = female (PTB-XL coding)
    strat_fold      recommended fold 1..10
    diagnostic      list of diagnostic label indices (0..39), optional
    form            list of form label indices (0..18), optional
    rhythm          list of rhythm label indices (0..11), optional
    class_name      free-text class used by downstream tables, optional
    ==============  ======================================================

Mapping SCP statement codes to label indices is left to the caller.
"""

import numpy as np

from apps.signals.exceptions import SplitError
from apps.signals.records import (
    GENDERS, Dataset, LeadSet, Record, RecordMeta, quantize_float32,
)

REQUIRED_COLUMNS = ('patient_id', 'age', 'sex', 'strat_fold')


def _labels(row, column):
    value = row.get(column)
    if value is None or (np.isscalar(value) and value != value):
        return ()
    return tuple(value)


def dataset_from_arrays(signals, metadata, sample_rate_hz=100.0):
    signals = np.asarray(signals)
    if signals.ndim != 3:
        raise SplitError(f'signals must be (N, L, C), got shape {signals.shape}')
    if len(metadata) != signals.shape[0]:
        raise SplitError(f'{len(metadata)} metadata rows for {signals.shape[0]} signals')
    missing = [c for c in REQUIRED_COLUMNS if c not in metadata.columns]
    if missing:
        raise SplitError(f'metadata is missing columns {missing}')

    signals = quantize_float32(signals)
    records = []
    for i, row in enumerate(metadata.to_dict('records')):
        meta = RecordMeta(
            patient_id=int(row['patient_id']),
            age_years=float(row['age']),
            gender=GENDERS[int(row['sex'])],
            diagnostic_labels=_labels(row, 'diagnostic'),
            form_labels=_labels(row, 'form'),
            rhythm_labels=_labels(row, 'rhythm'),
            class_name=str(row.get('class_name') or ''),
        )
        records.append(Record(LeadSet(signals[i], sample_rate_hz), meta, int(row['strat_fold'])))
    return Dataset(records)
