# apps/metrics/outliers.py
import numpy as np

from apps.metrics.exceptions import MetricError

IQR_FACTOR = 3.0


def outlier_threshold(values, factor=IQR_FACTOR):
    """Q3 + factor * IQR, quartiles by linear interpolation between order statistics"""
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size < 4:
        raise MetricError(f'need at least 4 values for quartiles, got {values.size}')
    q1, q3 = np.percentile(values, [25, 75], method='linear')
    return float(q3 + factor * (q3 - q1))


def outlier_flags(values, factor=IQR_FACTOR):
    """Boolean mask of values strictly above the upper fence"""
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    return values > outlier_threshold(values, factor)
