# apps/signals/services.py
import numpy as np
import pandas as pd

from apps.core.reporting import write_csv_report
from apps.signals.exceptions import SplitError
from apps.signals.records import lead_names


class DatasetService:
    """Service for fold-level dataset handling"""

    @staticmethod
    def patient_split(ds, train_folds, val_fold=None, test_fold=None):
        """
        Split a dataset by fold into train / validation / test parts

        Args:
            ds: Dataset whose records carry folds 1..10
            train_folds: iterable of fold numbers used for training
            val_fold: fold number for validation, or None
            test_fold: fold number for testing, or None

        Returns:
            (train, val, test) Datasets; folds absent from the data give
            empty parts
        """
        train_set = set(int(f) for f in train_folds)
        val_set = {int(val_fold)} if val_fold is not None else set()
        test_set = {int(test_fold)} if test_fold is not None else set()
        if train_set & val_set or train_set & test_set or val_set & test_set:
            raise SplitError(
                f'fold sets overlap: train={sorted(train_set)} val={sorted(val_set)} '
                f'test={sorted(test_set)}',
            )
        parts = tuple(ds.in_folds(folds) for folds in (train_set, val_set, test_set))

        # Dataset already pins each patient to one fold; this guards subclasses.
        seen = [p.patient_ids() for p in parts]
        if seen[0] & seen[1] or seen[0] & seen[2] or seen[1] & seen[2]:
            raise SplitError('patient ids leak across splits')
        return parts

    @staticmethod
    def fold_summary(ds):
        """Record and patient counts per fold and class, as a DataFrame"""
        rows = [
            {'fold': r.fold, 'class_name': r.meta.class_name, 'patient_id': r.meta.patient_id}
            for r in ds
        ]
        frame = pd.DataFrame(rows, columns=['fold', 'class_name', 'patient_id'])
        return (
            frame.groupby(['fold', 'class_name'])
            .agg(records=('patient_id', 'size'), patients=('patient_id', 'nunique'))
            .reset_index()
        )

    @staticmethod
    def record_frame(record):
        """One record as a DataFrame: time_s followed by one column per lead"""
        leads = record.leads
        frame = pd.DataFrame(leads.samples, columns=lead_names(leads.n_leads))
        frame.insert(0, 'time_s', np.arange(leads.length) / leads.sample_rate_hz)
        return frame

    @staticmethod
    def export_record(ds, index, path, prov=None):
        if not 0 <= index < len(ds):
            raise SplitError(f'record index {index} outside 0..{len(ds) - 1}')
        record = ds[index]
        prov = dict(prov or {})
        prov.update(
            patient_id=record.meta.patient_id, fold=record.fold, class_name=record.meta.class_name,
        )
        return write_csv_report(DatasetService.record_frame(record), path, prov)


def patient_split(ds, train_folds, val_fold=None, test_fold=None):
    return DatasetService.patient_split(ds, train_folds, val_fold, test_fold)
