# apps/signals/tests.py
import numpy as np
import pandas as pd
import pytest

from apps.core.reporting import read_csv_report
from apps.signals.exceptions import (
    BadMagicError, InvalidRecordError, MalformedHeaderError, OracleConfigError, SplitError,
    TruncatedPayloadError,
)
from apps.signals.factories import LeadSetFactory, RecordFactory, RecordMetaFactory
from apps.signals.oracle import (
    FORM_LVOLT, RHYTHM_SBRAD, OracleConfig, OracleGenerator, analytic_correlation,
    make_oracle_dataset,
)
from apps.signals.ptbxl import dataset_from_arrays
from apps.signals.records import Dataset, LeadSet, RecordMeta
from apps.signals.services import DatasetService, patient_split
from apps.signals.storage import dataset_paths, read_dataset, write_dataset


def _fold_dataset(patients_per_fold=10, folds=range(1, 11)):
    records = []
    patient = 0
    for fold in folds:
        for _ in range(patients_per_fold):
            records.append(RecordFactory(meta=RecordMetaFactory(patient_id=patient), fold=fold))
            patient += 1
    return Dataset(records)


class TestRecords:
    def test_lead_set_rejects_non_finite(self):
        samples = np.zeros((32, 2))
        samples[3, 1] = np.nan
        with pytest.raises(InvalidRecordError):
            LeadSet(samples)

    def test_lead_set_rejects_short_signal(self):
        with pytest.raises(InvalidRecordError):
            LeadSet(np.zeros((8, 2)))

    def test_label_outside_vocabulary(self):
        with pytest.raises(InvalidRecordError):
            RecordMetaFactory(rhythm_labels={12})

    def test_patient_in_two_folds(self):
        meta = RecordMetaFactory(patient_id=7)
        with pytest.raises(SplitError):
            Dataset([RecordFactory(meta=meta, fold=1), RecordFactory(meta=meta, fold=2)])

    def test_mixed_shapes_rejected(self):
        with pytest.raises(InvalidRecordError):
            Dataset([
                RecordFactory(leads=LeadSetFactory(samples=np.zeros((32, 2)))),
                RecordFactory(leads=LeadSetFactory(samples=np.zeros((32, 3)))),
            ])


class TestOracle:
    def test_same_seed_is_bit_identical(self):
        cfg = OracleConfig(n_records=20, n_leads=4, length=64, latent_sources=2)
        assert make_oracle_dataset(cfg, 11) == make_oracle_dataset(cfg, 11)

    def test_different_seed_differs(self):
        cfg = OracleConfig(n_records=5, n_leads=2, length=64, latent_sources=1)
        first = make_oracle_dataset(cfg, 1).signals()
        second = make_oracle_dataset(cfg, 2).signals()
        assert not np.array_equal(first, second)

    def test_rank_one_mixing_gives_identical_leads(self):
        cfg = OracleConfig(
            n_records=10, n_leads=3, length=64, latent_sources=1,
            mixing_matrix=[[1.0], [1.0], [1.0]], noise_std=0.0,
        )
        signals = make_oracle_dataset(cfg, 3).signals()
        assert np.array_equal(signals[..., 0], signals[..., 1])
        assert np.array_equal(signals[..., 0], signals[..., 2])
        corr = np.corrcoef(signals.reshape(-1, 3), rowvar=False)
        np.testing.assert_allclose(corr, np.ones((3, 3)), atol=1e-12)

    def test_empirical_correlation_matches_analytic(self):
        cfg = OracleConfig(n_records=500, noise_std=0.05)
        generator = OracleGenerator(cfg, 2024)
        _, _, latents, leads = generator.render()
        source_cov = np.cov(latents.reshape(-1, cfg.latent_sources), rowvar=False)
        expected = analytic_correlation(generator.mixing, source_cov, cfg.noise_std)
        empirical = np.corrcoef(leads.reshape(-1, cfg.n_leads), rowvar=False)
        assert np.max(np.abs(empirical - expected)) < 0.05

    def test_noise_free_signals_lie_in_mixing_column_space(self):
        cfg = OracleConfig(n_records=12, noise_std=0.0)
        generator = OracleGenerator(cfg, 5)
        _, _, _, leads = generator.render()
        flat = leads.reshape(-1, cfg.n_leads).T
        coef, *_ = np.linalg.lstsq(generator.mixing, flat, rcond=None)
        residual = flat - generator.mixing @ coef
        assert np.max(np.abs(residual)) < 1e-9

    def test_rank_deficient_mixing(self):
        cfg = OracleConfig(
            n_records=2, n_leads=3, latent_sources=2,
            mixing_matrix=[[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]],
        )
        with pytest.raises(OracleConfigError):
            make_oracle_dataset(cfg, 0)

    def test_negative_noise(self):
        with pytest.raises(OracleConfigError):
            make_oracle_dataset(OracleConfig(noise_std=-1.0), 0)

    def test_class_statements(self):
        ds = make_oracle_dataset(OracleConfig(n_records=40, n_leads=2, length=64, latent_sources=1), 9)
        for record in ds:
            meta = record.meta
            assert meta.diagnostic_labels == {OracleConfig().class_set.index(meta.class_name)}
            assert (FORM_LVOLT in meta.form_labels) == (meta.class_name == 'low_voltage')
            assert (RHYTHM_SBRAD in meta.rhythm_labels) == (meta.class_name == 'brady')

    def test_classes_and_folds_are_balanced(self):
        ds = make_oracle_dataset(OracleConfig(n_records=200, n_leads=2, length=64, latent_sources=1), 4)
        summary = DatasetService.fold_summary(ds)
        assert summary.groupby('fold')['records'].sum().tolist() == [20] * 10
        assert summary.groupby('class_name')['records'].sum().tolist() == [50] * 4

    def test_low_voltage_is_smaller(self):
        cfg = OracleConfig(n_records=80, n_leads=2, length=128, latent_sources=1, noise_std=0.0)
        ds = make_oracle_dataset(cfg, 6)
        peak = {}
        for record in ds:
            peak.setdefault(record.meta.class_name, []).append(np.abs(record.leads.samples).max())
        assert np.mean(peak['low_voltage']) < 0.6 * np.mean(peak['normal'])


class TestPatientSplit:
    def test_standard_split_sizes(self):
        train, val, test = patient_split(_fold_dataset(), range(1, 9), 9, 10)
        assert (len(train), len(val), len(test)) == (80, 10, 10)

    def test_no_patient_leakage(self):
        train, val, test = patient_split(_fold_dataset(), range(1, 9), 9, 10)
        assert not train.patient_ids() & val.patient_ids()
        assert not train.patient_ids() & test.patient_ids()
        assert not val.patient_ids() & test.patient_ids()

    def test_record_counts_are_preserved(self):
        ds = _fold_dataset(patients_per_fold=3)
        parts = patient_split(ds, range(1, 9), 9, 10)
        assert sum(len(p) for p in parts) == len(ds)

    def test_single_fold_train_only(self):
        train, val, test = patient_split(_fold_dataset(folds=[1]), [1], 9, 10)
        assert len(train) == 10
        assert val.is_empty and test.is_empty

    def test_overlapping_folds(self):
        with pytest.raises(SplitError):
            patient_split(_fold_dataset(), range(1, 10), 9, 10)


class TestStorage:
    def test_roundtrip_is_bit_exact(self, tmp_path):
        ds = make_oracle_dataset(OracleConfig(n_records=15, n_leads=3, length=64, latent_sources=2), 8)
        write_dataset(ds, tmp_path / 'oracle')
        restored = read_dataset(tmp_path / 'oracle')
        assert restored == ds
        assert restored.signals().tobytes() == ds.signals().tobytes()
        assert restored.folds().tolist() == ds.folds().tolist()

    def test_empty_dataset(self, tmp_path):
        write_dataset(Dataset(), tmp_path / 'empty')
        assert read_dataset(tmp_path / 'empty.json').is_empty

    def test_bad_magic(self, tmp_path):
        ds = Dataset([RecordFactory()])
        _, blob_path = write_dataset(ds, tmp_path / 'ds')
        blob = bytearray(blob_path.read_bytes())
        blob[:4] = b'XXXX'
        blob_path.write_bytes(bytes(blob))
        with pytest.raises(BadMagicError, match='bad magic'):
            read_dataset(tmp_path / 'ds')

    def test_truncated_payload(self, tmp_path):
        _, blob_path = write_dataset(Dataset([RecordFactory()]), tmp_path / 'ds')
        blob_path.write_bytes(blob_path.read_bytes()[:-4])
        with pytest.raises(TruncatedPayloadError):
            read_dataset(tmp_path / 'ds')

    def test_malformed_header(self, tmp_path):
        header_path, _ = write_dataset(Dataset([RecordFactory()]), tmp_path / 'ds')
        header_path.write_text('{"magic": "MIDT"')
        with pytest.raises(MalformedHeaderError):
            read_dataset(tmp_path / 'ds')

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_dataset(tmp_path / 'nothing')

    def test_paths_share_a_stem(self, tmp_path):
        assert dataset_paths(tmp_path / 'a.bin') == (tmp_path / 'a.json', tmp_path / 'a.bin')


class TestExports:
    def test_record_csv(self, tmp_path):
        ds = make_oracle_dataset(OracleConfig(n_records=3, length=64), 1)
        path = DatasetService.export_record(ds, 2, tmp_path / 'record.csv', {'seed': 1})
        frame = read_csv_report(path)
        assert list(frame.columns[:3]) == ['time_s', 'I', 'II']
        assert len(frame) == 64
        assert path.read_text().startswith('# class_name=')

    def test_export_out_of_range(self, tmp_path):
        with pytest.raises(SplitError):
            DatasetService.export_record(Dataset(), 0, tmp_path / 'x.csv')


class TestPtbxlAdapter:
    def test_arrays_become_dataset(self):
        signals = np.random.default_rng(0).normal(size=(3, 32, 12))
        metadata = pd.DataFrame({
            'patient_id': [10, 10, 11],
            'age': [63.0, 63.0, 25.0],
            'sex': [0, 0, 1],
            'strat_fold': [4, 4, 10],
            'diagnostic': [[0], [0, 5], []],
        })
        ds = dataset_from_arrays(signals, metadata)
        assert len(ds) == 3
        assert ds[2].meta == RecordMeta(11, 25.0, 'female', diagnostic_labels=set())
        assert ds[1].meta.diagnostic_labels == {0, 5}
        assert ds.folds().tolist() == [4, 4, 10]

    def test_missing_columns(self):
        with pytest.raises(SplitError):
            dataset_from_arrays(np.zeros((1, 32, 1)), pd.DataFrame({'patient_id': [1]}))
