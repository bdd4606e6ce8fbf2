# apps/metrics/tests.py
import json

import numpy as np
import pytest

from apps.core.reporting import read_csv_report
from apps.metrics.coherence import corr_error, corr_matrix
from apps.metrics.exceptions import MetricError
from apps.metrics.fidelity import fourier_distance, hausdorff_distance, pointwise_fidelity, ssim_1d
from apps.metrics.outliers import outlier_flags, outlier_threshold
from apps.metrics.privacy import PrivacyReport, mir, nnaa
from apps.metrics.reports import FidelityReport, reference_pairs
from apps.metrics.services import EvaluationService
from apps.signals.oracle import OracleConfig, make_oracle_dataset
from apps.signals.records import LeadSet


@pytest.fixture(scope='module')
def oracle_pair():
    cfg = OracleConfig(n_records=24, n_leads=3, length=64, latent_sources=2)
    return make_oracle_dataset(cfg, 0), make_oracle_dataset(cfg, 1)


class TestPointwiseFidelity:
    def test_hand_example(self):
        rmse, mse, _ = pointwise_fidelity([0.0, 1.0], [1.0, 1.0])
        assert mse == 0.5
        assert rmse == pytest.approx(0.70710678, abs=1e-8)

    def test_identical(self):
        x = np.random.default_rng(0).normal(size=(32, 3))
        assert pointwise_fidelity(x, x.copy()) == (0.0, 0.0, None)

    def test_snr(self):
        x = np.array([1.0, 0.0, -1.0, 0.0])
        _, _, snr = pointwise_fidelity(x, x + 0.1)
        assert snr == pytest.approx(10 * np.log10(2 / 0.04), abs=1e-9)
        assert snr == pytest.approx(16.9897, abs=1e-4)

    def test_rmse_squared_is_mse(self):
        rng = np.random.default_rng(1)
        rmse, mse, _ = pointwise_fidelity(rng.normal(size=(40, 2)), rng.normal(size=(40, 2)))
        assert rmse ** 2 == pytest.approx(mse, abs=1e-9)

    def test_leadsets(self):
        x = LeadSet(np.ones((16, 2)))
        assert pointwise_fidelity(x, LeadSet(np.zeros((16, 2))))[1] == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(MetricError):
            pointwise_fidelity(np.zeros((16, 2)), np.zeros((16, 3)))


class TestFourierDistance:
    def test_identical(self):
        x = np.random.default_rng(0).normal(size=(32, 2))
        assert fourier_distance(x, x) == 0.0

    def test_shifted_impulse(self):
        x, y = [1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]
        assert fourier_distance(x, y) == pytest.approx(0.0, abs=1e-12)
        assert pointwise_fidelity(x, y)[0] == pytest.approx(0.70710678, abs=1e-8)

    def test_bounded_by_rmse(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            x, y = rng.normal(size=(2, 48, 3))
            assert fourier_distance(x, y) <= pointwise_fidelity(x, y)[0] + 1e-9

    def test_shape_mismatch(self):
        with pytest.raises(MetricError):
            fourier_distance(np.zeros(8), np.zeros(9))


def _brute_force_hausdorff(x, y):
    length = len(x)
    t = np.arange(length) / (length - 1)

    def directed(a, b):
        worst = 0.0
        for i in range(length):
            best = np.inf
            for j in range(length):
                best = min(best, np.hypot(t[i] - t[j], a[i] - b[j]))
            worst = max(worst, best)
        return worst

    return max(directed(x, y), directed(y, x))


class TestHausdorff:
    def test_identical(self):
        x = np.random.default_rng(0).normal(size=(32, 2))
        assert hausdorff_distance(x, x) == 0.0

    def test_two_point_sets(self):
        assert hausdorff_distance([0.0, 0.0], [1.0, 0.0]) == pytest.approx(1.0)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            x, y = rng.normal(size=(2, 32))
            assert hausdorff_distance(x, y) == pytest.approx(_brute_force_hausdorff(x, y), abs=1e-12)

    def test_mean_over_leads(self):
        rng = np.random.default_rng(4)
        x, y = rng.normal(size=(2, 32, 3))
        per_lead = [_brute_force_hausdorff(x[:, c], y[:, c]) for c in range(3)]
        assert hausdorff_distance(x, y) == pytest.approx(np.mean(per_lead), abs=1e-12)


class TestSsim:
    def test_identical(self):
        x = np.random.default_rng(0).normal(size=(128, 2))
        assert ssim_1d(x, x, l_range=2.0) == pytest.approx(1.0, abs=1e-15)

    def test_constant_leads(self):
        a, b = np.ones(64), np.zeros(64)
        c1 = 0.01 ** 2
        assert ssim_1d(a, b, l_range=1.0) == pytest.approx(c1 / (1 + c1), rel=1e-12)
        assert ssim_1d(a, b, l_range=1.0) == pytest.approx(9.999e-5, rel=1e-4)

    def test_symmetric(self):
        rng = np.random.default_rng(5)
        x, y = rng.normal(size=(2, 256, 3))
        assert ssim_1d(x, y, l_range=4.0) == ssim_1d(y, x, l_range=4.0)

    def test_range(self):
        rng = np.random.default_rng(6)
        x, y = rng.normal(size=(2, 256, 3))
        assert -1.0 <= ssim_1d(x, -y, l_range=1.0) <= 1.0

    def test_short_signal(self):
        with pytest.raises(MetricError):
            ssim_1d(np.zeros(32), np.zeros(32), window=64, l_range=1.0)

    def test_non_positive_range(self):
        with pytest.raises(MetricError):
            ssim_1d(np.zeros(64), np.zeros(64))


class TestCorrelation:
    def test_scaled_and_negated_leads(self):
        rng = np.random.default_rng(0)
        base = rng.normal(size=200)
        records = [np.column_stack([base, 2 * base, -base])]
        matrix = corr_matrix(records)
        assert matrix[0, 1] == pytest.approx(1.0, abs=1e-12)
        assert matrix[0, 2] == pytest.approx(-1.0, abs=1e-12)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        records = list(rng.normal(size=(4, 50, 3)))
        stacked = np.concatenate(records)
        centered = stacked - stacked.mean(axis=0)
        cov = centered.T @ centered / len(stacked)
        sigma = np.sqrt(np.diag(cov))
        np.testing.assert_allclose(corr_matrix(records), cov / np.outer(sigma, sigma), atol=1e-12)

    def test_symmetric_unit_diagonal(self, oracle_pair):
        matrix = corr_matrix(oracle_pair[0])
        np.testing.assert_array_equal(matrix, matrix.T)
        np.testing.assert_array_equal(np.diag(matrix), np.ones(3))

    def test_affine_invariance(self):
        rng = np.random.default_rng(2)
        records = rng.normal(size=(3, 40, 4))
        rescaled = records * np.array([2.0, 0.5, 3.0, 1.5]) + np.array([1.0, -2.0, 0.0, 5.0])
        np.testing.assert_allclose(corr_matrix(records), corr_matrix(rescaled), atol=1e-12)

    def test_constant_lead_named(self):
        samples = np.random.default_rng(3).normal(size=(40, 3))
        samples[:, 1] = 0.5
        with pytest.raises(MetricError, match='lead_2'):
            corr_matrix([samples])

    def test_lead_constant_up_to_rounding(self):
        rng = np.random.default_rng(3)
        samples = rng.normal(size=(40, 3))
        samples[:, 2] = 0.1 + 1e-15 * rng.normal(size=40)
        with pytest.raises(MetricError, match='lead_3'):
            corr_matrix([samples])

    def test_small_amplitude_lead_is_not_constant(self):
        samples = np.random.default_rng(3).normal(size=(40, 2))
        samples[:, 1] *= 1e-6
        assert corr_matrix([samples]).shape == (2, 2)

    def test_empty(self):
        with pytest.raises(MetricError):
            corr_matrix([])

    def test_error_identity(self):
        m = corr_matrix(list(np.random.default_rng(4).normal(size=(2, 40, 3))))
        assert corr_error(m, m) == (0.0, 0.0)

    def test_error_hand_example(self):
        real = np.eye(3)
        synth = np.array([[1.0, 0.1, 0.2], [0.1, 1.0, 0.3], [0.2, 0.3, 1.0]])
        avg, worst = corr_error(real, synth)
        assert avg == pytest.approx(0.2)
        assert worst == pytest.approx(0.3)
        assert avg <= worst

    def test_error_asymmetric(self):
        bad = np.array([[1.0, 0.5], [0.2, 1.0]])
        with pytest.raises(MetricError):
            corr_error(np.eye(2), bad)


class TestOutliers:
    def test_hand_quartiles(self):
        values = [1, 2, 3, 4, 100]
        assert outlier_threshold(values) == 10.0
        assert outlier_flags(values).tolist() == [False, False, False, False, True]

    def test_constant_values(self):
        assert not outlier_flags([5.0] * 10).any()

    def test_monotone(self):
        assert not outlier_flags(np.arange(1, 101)).any()

    def test_too_few_values(self):
        with pytest.raises(MetricError):
            outlier_flags([1, 2, 3])


def _blobs(seed, n=200, dim=20):
    return np.random.default_rng(seed).normal(size=(n, dim, 1))


class TestPrivacy:
    def test_mir_copied_training_set(self):
        train, holdout = _blobs(0), _blobs(1)
        assert mir(train, holdout, train.copy()) == 1.0

    def test_mir_independent_sets(self):
        values = [mir(_blobs(3 * s), _blobs(3 * s + 1), _blobs(3 * s + 2)) for s in range(3)]
        assert np.mean(values) < 0.15

    def test_mir_non_negative(self):
        assert mir(_blobs(0, n=20), _blobs(1, n=20), _blobs(2, n=20)) >= 0.0

    def test_mir_empty(self):
        with pytest.raises(MetricError):
            mir(np.zeros((0, 20, 1)), _blobs(1), _blobs(2))

    def test_nnaa_copied_training_set(self):
        train, holdout = _blobs(0), _blobs(1)
        assert nnaa(train, holdout, train.copy()) == pytest.approx(0.5, abs=0.1)

    def test_nnaa_independent_sets(self):
        for s in range(3):
            assert abs(nnaa(_blobs(3 * s), _blobs(3 * s + 1), _blobs(3 * s + 2))) < 0.1

    def test_nnaa_too_small(self):
        with pytest.raises(MetricError):
            nnaa(_blobs(0, n=1), _blobs(1), _blobs(2))

    def test_memorization_never_lowers_scores(self):
        train, holdout, synth = _blobs(0, n=50), _blobs(1, n=50), _blobs(2, n=50)
        assert mir(train, holdout, train.copy()) >= mir(train, holdout, synth)
        assert nnaa(train, holdout, train.copy()) >= nnaa(train, holdout, synth)

    def test_report(self):
        report = PrivacyReport.build(_blobs(0, n=20), _blobs(1, n=20), _blobs(0, n=20))
        assert report.mir == 1.0
        assert report.train_to_synth['min'] == 0.0
        assert set(report.to_dict()) == {'mir', 'nnaa', 'train_to_synth_distance', 'holdout_to_synth_distance'}


class TestReports:
    def test_reference_pairs_stay_within_class(self, oracle_pair):
        real = oracle_pair[0]
        pairs = reference_pairs(real, seed=0)
        assert pairs
        for i, j in pairs:
            assert i != j
            assert real[i].meta.class_name == real[j].meta.class_name
        assert reference_pairs(real, seed=0) == pairs

    def test_fidelity_report(self, oracle_pair):
        real, synth = oracle_pair
        report = FidelityReport.build(real, synth)
        assert len(report.records) == len(real)
        assert len(report.leads) == 3 * len(real)
        np.testing.assert_allclose(report.records['rmse'] ** 2, report.records['mse'], atol=1e-9)
        assert report.records['ssim'].between(-1, 1).all()

    def test_identical_sets_score_identity(self, oracle_pair):
        real = oracle_pair[0]
        summary = FidelityReport.build(real, real).aggregate()
        assert summary['mse'] == 0.0
        assert summary['snr_db'] is None
        assert summary['ssim'] == pytest.approx(1.0)

    def test_count_mismatch(self, oracle_pair):
        with pytest.raises(MetricError):
            FidelityReport.build(oracle_pair[0], oracle_pair[1].subset(range(3)))

    def test_evaluate_writes_reports(self, oracle_pair, tmp_path):
        real, synth = oracle_pair
        prov = {'config_hash': 'abc', 'seed': 0}
        summary = EvaluationService.evaluate(
            real, synth, tmp_path, prov, train=real.subset(range(12)), holdout=real.subset(range(12, 24)),
        )
        for name in ('per_record', 'per_lead', 'reference_per_record', 'corr_real', 'corr_synth',
                     'corr_diff', 'outliers', 'lead_outliers'):
            assert (tmp_path / f'{name}.csv').exists()
        corr = read_csv_report(tmp_path / 'corr_real.csv', index_col=0)
        assert corr.shape == (3, 3)
        stored = json.loads((tmp_path / 'summary.json').read_text())
        assert stored['provenance'] == prov
        assert stored['metric_definitions'] == 'midt-metrics/1'
        assert summary['correlation']['avg_abs_error'] <= summary['correlation']['max_abs_error']
        assert 0.0 <= summary['privacy']['mir'] <= 1.0
        assert set(summary['outliers']) == {'mse', 'rmse', 'hausdorff', 'fourier'}

    def test_evaluate_is_byte_identical(self, oracle_pair, tmp_path):
        real, synth = oracle_pair
        EvaluationService.evaluate(real, synth, tmp_path / 'a', {'seed': 0})
        EvaluationService.evaluate(real, synth, tmp_path / 'b', {'seed': 0})
        for path in (tmp_path / 'a').iterdir():
            assert path.read_bytes() == (tmp_path / 'b' / path.name).read_bytes()
