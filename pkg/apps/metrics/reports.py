# apps/metrics/reports.py
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from apps.core.rng import make_rng
from apps.metrics.coherence import corr_error, corr_matrix
from apps.metrics.exceptions import MetricError
from apps.metrics.fidelity import (
    dynamic_range, fourier_distance, hausdorff_distance, lead_fidelity, pointwise_fidelity, ssim_1d,
)
from apps.metrics.outliers import outlier_flags
from apps.signals.records import lead_names

logger = logging.getLogger(__name__)

OUTLIER_METRICS = ('mse', 'rmse', 'hausdorff', 'fourier')


@dataclass
class FidelityReport:
    """Per record-pair metrics plus their lead-wise breakdown"""
    records: pd.DataFrame
    leads: pd.DataFrame

    @classmethod
    def build(cls, real, synth, ssim_window=64, ssim_stride=32, l_range=None, pairs=None):
        """
        Score ``synth[j]`` against ``real[i]`` for each (i, j) in ``pairs``
        (index-aligned when None).
        """
        if pairs is None:
            if len(real) != len(synth):
                raise MetricError(f'{len(real)} real records but {len(synth)} synthetic ones')
            pairs = list(zip(range(len(real)), range(len(synth))))
        if l_range is None:
            l_range = dynamic_range(real.signals())
        rows, lead_rows = [], []
        names = lead_names(real.shape[1]) if len(real) else []
        for pair, (i, j) in enumerate(pairs):
            x, y = real[i], synth[j]
            rmse, mse, snr_db = pointwise_fidelity(x.leads, y.leads)
            rows.append({
                'pair': pair,
                'patient_id': x.meta.patient_id,
                'class_name': x.meta.class_name,
                'mse': mse,
                'rmse': rmse,
                'snr_db': snr_db,
                'fourier': fourier_distance(x.leads, y.leads),
                'hausdorff': hausdorff_distance(x.leads, y.leads),
                'ssim': ssim_1d(x.leads, y.leads, ssim_window, ssim_stride, l_range),
            })
            per_lead = lead_fidelity(x.leads, y.leads)
            for lead, name in enumerate(names):
                lead_rows.append({'pair': pair, 'lead': name, **{k: float(v[lead]) for k, v in per_lead.items()}})
        columns = ['pair', 'patient_id', 'class_name', 'mse', 'rmse', 'snr_db', 'fourier', 'hausdorff', 'ssim']
        lead_columns = ['pair', 'lead', 'mse', 'rmse', 'fourier', 'hausdorff']
        return cls(pd.DataFrame(rows, columns=columns), pd.DataFrame(lead_rows, columns=lead_columns))

    def aggregate(self):
        """Means over record pairs; snr_db averages the pairs where it is defined"""
        summary = {}
        for column in ('mse', 'rmse', 'snr_db', 'fourier', 'hausdorff', 'ssim'):
            values = self.records[column].dropna()
            summary[column] = float(values.mean()) if len(values) else None
        summary['pairs'] = int(len(self.records))
        return summary

    def outliers(self):
        """
        Outlier counts per metric over record pairs, and the per-lead
        distribution of flagged lead-wise values.
        """
        counts = []
        lead_counts = []
        for metric in OUTLIER_METRICS:
            if len(self.records) >= 4:
                flags = outlier_flags(self.records[metric])
                counts.append({'metric': metric, 'outliers': int(flags.sum()), 'records': len(flags)})
            if len(self.leads) >= 4:
                flags = outlier_flags(self.leads[metric])
                flagged = self.leads.loc[flags, 'lead'].value_counts()
                for lead in self.leads['lead'].unique():
                    lead_counts.append({'metric': metric, 'lead': lead, 'outliers': int(flagged.get(lead, 0))})
        return (
            pd.DataFrame(counts, columns=['metric', 'outliers', 'records']),
            pd.DataFrame(lead_counts, columns=['metric', 'lead', 'outliers']),
        )


@dataclass
class CorrelationReport:
    real: np.ndarray
    synth: np.ndarray
    avg_abs_error: float
    max_abs_error: float

    @property
    def difference(self):
        return self.synth - self.real

    @classmethod
    def build(cls, real, synth):
        real_m, synth_m = corr_matrix(real), corr_matrix(synth)
        avg_abs, max_abs = corr_error(real_m, synth_m)
        return cls(real_m, synth_m, avg_abs, max_abs)

    def frames(self, names):
        """Real, synthetic and difference matrices as lead-labelled DataFrames"""
        return {
            kind: pd.DataFrame(matrix, index=pd.Index(names, name='lead'), columns=names)
            for kind, matrix in (('real', self.real), ('synth', self.synth), ('diff', self.difference))
        }


def reference_pairs(ds, seed):
    """
    Pair each real record with another real record of the same class.

    Within each class the records are shuffled and each is matched with its
    successor in the shuffled order, so no record is paired with itself.
    Classes with a single record are skipped.
    """
    rng = make_rng(seed, 500)
    pairs = []
    by_class = {}
    for index, record in enumerate(ds):
        by_class.setdefault(record.meta.class_name, []).append(index)
    for class_name in sorted(by_class):
        members = by_class[class_name]
        if len(members) < 2:
            logger.warning(f"Class '{class_name}' has one test record; skipped in the real-vs-real reference")
            continue
        order = rng.permutation(members)
        pairs.extend((int(order[i]), int(order[(i + 1) % len(order)])) for i in range(len(order)))
    return sorted(pairs)
