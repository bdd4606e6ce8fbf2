# apps/metrics/coherence.py
import numpy as np

from apps.metrics.exceptions import MetricError
from apps.metrics.fidelity import as_leads
from apps.signals.records import Dataset, lead_names

SYMMETRY_TOLERANCE = 1e-12
CONSTANT_RTOL = 1e-9


def corr_matrix(records):
    """
    C x C Pearson correlation of the lead channels over all records
    concatenated in time.
    """
    if isinstance(records, Dataset):
        records = [r.leads for r in records]
    if isinstance(records, np.ndarray) and records.ndim == 3:
        records = list(records)
    if len(records) == 0:
        raise MetricError('need at least one record')
    stacked = np.concatenate([as_leads(r) for r in records], axis=0)
    # constant up to rounding, relative to the lead's magnitude
    flat = np.ptp(stacked, axis=0) <= CONSTANT_RTOL * np.abs(stacked).max(axis=0)
    names = lead_names(stacked.shape[1])
    for lead, value in enumerate(flat):
        if value:
            raise MetricError(f'lead {names[lead]} is constant', lead=names[lead])
    matrix = np.corrcoef(stacked, rowvar=False)
    matrix = np.atleast_2d(matrix)
    matrix = (matrix + matrix.T) / 2.0
    np.fill_diagonal(matrix, 1.0)
    return matrix


def corr_error(real_m, synth_m):
    """(average, maximum) |real - synth| over unordered off-diagonal lead pairs"""
    real_m = np.asarray(real_m, dtype=np.float64)
    synth_m = np.asarray(synth_m, dtype=np.float64)
    if real_m.shape != synth_m.shape or real_m.ndim != 2 or real_m.shape[0] != real_m.shape[1]:
        raise MetricError(f'need two square matrices of one size, got {real_m.shape} and {synth_m.shape}')
    for name, matrix in (('real', real_m), ('synthetic', synth_m)):
        if np.abs(matrix - matrix.T).max() > SYMMETRY_TOLERANCE:
            raise MetricError(f'{name} correlation matrix is not symmetric')
    rows, cols = np.triu_indices(real_m.shape[0], k=1)
    if rows.size == 0:
        return 0.0, 0.0
    diffs = np.abs(real_m[rows, cols] - synth_m[rows, cols])
    return float(diffs.mean()), float(diffs.max())
