# apps/metrics/privacy.py
"""
Nearest-neighbour privacy metrics between real and synthetic record sets.

The distance between two records is their rmse, i.e. the Euclidean distance
of the flattened signals divided by sqrt(L * C).

MIR is the advantage of the best distance-threshold membership attack:
a real record is called a training member when its nearest synthetic record
is closer than a threshold, and the score is max over thresholds of
TPR(train) - FPR(holdout), clamped to [0, 1].

NNAA is the gap AA(holdout, synth) - AA(train, synth) of the nearest
neighbour adversarial accuracy

    AA(A, S) = 1/2 * [mean 1{d_AS > d_AA} + mean 1{d_SA > d_SS}]

with leave-one-out distances inside a set.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.metrics import roc_curve
from sklearn.neighbors import NearestNeighbors

from apps.metrics.exceptions import MetricError
from apps.signals.records import Dataset


def flatten_records(records):
    """(N, L * C) matrix from a Dataset, a list of LeadSets or an (N, L, C) array"""
    if isinstance(records, Dataset):
        records = records.signals()
    elif not isinstance(records, np.ndarray):
        records = np.stack([getattr(r, 'samples', r) for r in records]) if len(records) else np.zeros((0, 0))
    records = np.asarray(records, dtype=np.float64)
    return records.reshape(len(records), -1)


def nearest_distances(queries, references, leave_one_out=False):
    """rmse from each query record to its nearest reference record"""
    queries, references = flatten_records(queries), flatten_records(references)
    if queries.shape[1] != references.shape[1]:
        raise MetricError(f'record sizes differ: {queries.shape[1]} vs {references.shape[1]}')
    k = 2 if leave_one_out else 1
    if len(references) < k:
        raise MetricError(f'need at least {k} reference records, got {len(references)}')
    index = NearestNeighbors(n_neighbors=k, algorithm='kd_tree').fit(references)
    distances, _ = index.kneighbors(queries)
    return distances[:, k - 1] / np.sqrt(queries.shape[1])


def _summary(distances):
    return {
        'mean': float(np.mean(distances)),
        'median': float(np.median(distances)),
        'min': float(np.min(distances)),
    }


def mir(train, holdout, synth):
    for name, records in (('train', train), ('holdout', holdout), ('synthetic', synth)):
        if len(records) == 0:
            raise MetricError(f'{name} set is empty')
    d_train = nearest_distances(train, synth)
    d_holdout = nearest_distances(holdout, synth)
    labels = np.concatenate([np.ones(len(d_train)), np.zeros(len(d_holdout))])
    scores = -np.concatenate([d_train, d_holdout])
    fpr, tpr, _ = roc_curve(labels, scores, drop_intermediate=False)
    return float(np.clip(np.max(tpr - fpr), 0.0, 1.0))


def adversarial_accuracy(real, synth):
    d_rs = nearest_distances(real, synth)
    d_rr = nearest_distances(real, real, leave_one_out=True)
    d_sr = nearest_distances(synth, real)
    d_ss = nearest_distances(synth, synth, leave_one_out=True)
    return 0.5 * (float(np.mean(d_rs > d_rr)) + float(np.mean(d_sr > d_ss)))


def nnaa(train, holdout, synth):
    for name, records in (('train', train), ('holdout', holdout), ('synthetic', synth)):
        if len(records) < 2:
            raise MetricError(f'{name} set needs at least 2 records, got {len(records)}')
    return adversarial_accuracy(holdout, synth) - adversarial_accuracy(train, synth)


@dataclass
class PrivacyReport:
    mir: float
    nnaa: float
    train_to_synth: dict
    holdout_to_synth: dict

    @classmethod
    def build(cls, train, holdout, synth):
        return cls(
            mir=mir(train, holdout, synth),
            nnaa=nnaa(train, holdout, synth),
            train_to_synth=_summary(nearest_distances(train, synth)),
            holdout_to_synth=_summary(nearest_distances(holdout, synth)),
        )

    def to_dict(self):
        return {
            'mir': self.mir,
            'nnaa': self.nnaa,
            'train_to_synth_distance': self.train_to_synth,
            'holdout_to_synth_distance': self.holdout_to_synth,
        }
