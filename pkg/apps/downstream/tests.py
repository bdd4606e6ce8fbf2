# apps/downstream/tests.py
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest
from scipy.stats import norm

from apps.core.reporting import read_csv_report
from apps.downstream.classifier import ClassifierConfig, label_matrix, train_classifier
from apps.downstream.exceptions import DownstreamError
from apps.downstream.foldmix import (
    REAL_ONLY, FoldMixPlan, confidence_interval, fold_mix_experiment, summarize_cells, training_folds,
)
from apps.downstream.scoring import auroc, classifier_auroc, faithfulness
from apps.downstream.services import DownstreamService
from apps.signals.oracle import OracleConfig, make_oracle_dataset, records_from_signals
from apps.signals.records import Dataset, Record

FAST = ClassifierConfig(hidden=4, kernel_size=3, steps=30, batch_size=16)


def oracle(n_records=200, classes=('normal', 'low_voltage'), seed=0, noise_std=0.05):
    cfg = OracleConfig(
        n_records=n_records, n_leads=2, length=64, latent_sources=1,
        mixing_matrix=[[1.0], [0.6]], class_set=classes, noise_std=noise_std,
    )
    return make_oracle_dataset(cfg, seed)


def relabel(ds, names):
    return Dataset(
        Record(r.leads, replace(r.meta, class_name=str(name)), r.fold) for r, name in zip(ds, names)
    )


def noise_generator(template, seed):
    rng = np.random.default_rng(seed)
    signals = rng.normal(0.0, 0.3, size=(len(template),) + template.shape)
    return records_from_signals(signals, template.metas(), template.folds(), template.sample_rate_hz)


def mann_whitney(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return total / (len(pos) * len(neg))


@pytest.fixture(scope='module')
def two_class():
    return oracle()


class FixedClassifier:
    def __init__(self, classes, probs, trained=True):
        self.classes = classes
        self.probs = np.asarray(probs)
        self.trained = trained

    def predict_proba(self, data):
        return self.probs[:len(data)]


class TestAuroc:
    def test_perfect_separation(self):
        assert auroc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0

    def test_three_of_four_pairs(self):
        assert auroc([0.9, 0.2, 0.1, 0.8], [1, 1, 0, 0]) == 0.75

    def test_all_ties(self):
        assert auroc([0.3, 0.3, 0.3, 0.3], [1, 0, 1, 0]) == 0.5

    def test_matches_pairwise_count(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(4, 30))
            labels = rng.permutation(np.arange(n) % 2)
            # rounding forces ties
            scores = np.round(rng.normal(size=n), 1)
            assert auroc(scores, labels) == pytest.approx(mann_whitney(scores, labels), abs=1e-9)

    def test_monotone_transform(self):
        rng = np.random.default_rng(1)
        scores = rng.normal(size=50)
        labels = rng.permutation(np.arange(50) % 2)
        assert auroc(np.exp(3 * scores), labels) == auroc(scores, labels)

    def test_complement(self):
        rng = np.random.default_rng(2)
        scores = rng.normal(size=40)
        labels = rng.permutation(np.arange(40) % 2)
        assert auroc(scores, labels) + auroc(scores, 1 - labels) == pytest.approx(1.0, abs=1e-12)

    def test_single_class(self):
        with pytest.raises(DownstreamError):
            auroc([0.1, 0.2], [1, 1])

    def test_shape_mismatch(self):
        with pytest.raises(DownstreamError):
            auroc([0.1, 0.2, 0.3], [1, 0])

    def test_macro_average_skips_one_sided_columns(self):
        scores = np.array([[0.9, 0.1, 0.5], [0.2, 0.8, 0.5], [0.7, 0.6, 0.5], [0.1, 0.3, 0.5]])
        labels = np.array([[1, 0, 1], [0, 1, 1], [1, 0, 1], [0, 1, 1]])
        assert auroc(scores, labels) == pytest.approx(0.5 * (1.0 + 0.75))

    def test_no_usable_column(self):
        with pytest.raises(DownstreamError):
            auroc(np.zeros((3, 2)), np.ones((3, 2)))


class TestClassifier:
    def test_single_class(self, two_class):
        normal = Dataset(r for r in two_class if r.meta.class_name == 'normal')
        with pytest.raises(DownstreamError):
            train_classifier(normal, FAST)

    def test_invalid_config(self, two_class):
        with pytest.raises(DownstreamError):
            train_classifier(two_class, ClassifierConfig(kernel_size=4))

    def test_same_seed_same_params(self, two_class):
        first = train_classifier(two_class, FAST)
        second = train_classifier(two_class, FAST)
        for name, value in first.store.items():
            np.testing.assert_array_equal(value, second.store[name])
        assert first.losses == second.losses

    def test_different_seed(self, two_class):
        first = train_classifier(two_class, FAST)
        second = train_classifier(two_class, replace(FAST, seed=1))
        assert first.losses != second.losses

    def test_output_shape(self, two_class):
        clf = train_classifier(two_class, FAST)
        probs = clf.predict_proba(two_class.subset(range(7)))
        assert probs.shape == (7, 2)
        assert np.all((probs > 0) & (probs < 1))
        assert clf.predict_proba(np.zeros((0, 64, 2))).shape == (0, 2)

    def test_label_matrix(self, two_class):
        labels = label_matrix(two_class, ['low_voltage', 'normal'])
        np.testing.assert_array_equal(labels.sum(axis=1), np.ones(len(two_class)))

    def test_separable_classes(self, two_class):
        cfg = ClassifierConfig(steps=500, learning_rate=1e-2)
        clf = train_classifier(two_class.in_folds(range(1, 9)), cfg)
        assert np.mean(clf.losses[-20:]) < 0.1
        assert classifier_auroc(clf, two_class.in_folds([9, 10])) > 0.9

    def test_shuffled_labels(self):
        values = []
        for seed in range(3):
            ds = oracle(n_records=400, classes=('normal', 'wide_qrs'), seed=seed)
            names = np.random.default_rng(seed).permutation(['normal', 'wide_qrs'] * 200)
            ds = relabel(ds, names)
            clf = train_classifier(ds.in_folds(range(1, 9)), replace(FAST, steps=200, seed=seed))
            values.append(classifier_auroc(clf, ds.in_folds([9, 10])))
        assert 0.35 <= np.mean(values) <= 0.65


class TestFaithfulness:
    def test_consistent_labels(self, two_class):
        classes = ['low_voltage', 'normal']
        clf = FixedClassifier(classes, label_matrix(two_class, classes))
        assert faithfulness(two_class, clf) == 1.0

    def test_random_scores(self):
        synth = oracle(n_records=200)
        probs = np.random.default_rng(0).uniform(size=(200, 2))
        value = faithfulness(synth, FixedClassifier(['low_voltage', 'normal'], probs))
        assert 0.4 <= value <= 0.6

    def test_threshold(self, two_class):
        classes = ['low_voltage', 'normal']
        clf = FixedClassifier(classes, np.full((len(two_class), 2), 0.6))
        assert faithfulness(two_class, clf, threshold=0.5) == 1.0
        assert faithfulness(two_class, clf, threshold=0.7) == 0.0

    def test_untrained(self, two_class):
        with pytest.raises(DownstreamError):
            faithfulness(two_class, None)
        with pytest.raises(DownstreamError):
            faithfulness(two_class, FixedClassifier(['normal'], [], trained=False))

    def test_empty_synth(self):
        with pytest.raises(DownstreamError):
            faithfulness(Dataset(), FixedClassifier(['normal'], []))


class TestFoldMixHelpers:
    def test_training_folds(self):
        assert training_folds('substitute', 3) == ((1, 2, 3), (4, 5, 6, 7, 8))
        assert training_folds('substitute', 8) == (tuple(range(1, 9)), ())
        assert training_folds('augment', 2) == (tuple(range(1, 9)), (1, 2))

    def test_confidence_interval(self):
        assert confidence_interval([1.0, 2.0, 3.0]) == pytest.approx(norm.ppf(0.975) / np.sqrt(3))
        assert confidence_interval([0.7]) == 0.0

    def test_average_rank(self):
        cells = pd.DataFrame({
            'generator': ['a', 'a', 'b', 'b', 'c', 'c'],
            'folds_added': [1, 2, 1, 2, 1, 2],
            'repetition': [0] * 6,
            'auroc': [0.7, 0.8, 0.6, 0.9, 0.5, 0.5],
        })
        table = summarize_cells(cells, (1, 2), ['a', 'b', 'c']).set_index('generator')
        assert table.loc['a', 'average_rank'] == 1.5
        assert table.loc['b', 'average_rank'] == 1.5
        assert table.loc['c', 'average_rank'] == 3.0
        assert table.loc['c', 'ci_1'] == 0.0

    def test_plan_defaults(self):
        assert FoldMixPlan(mode='substitute').folds_added == tuple(range(0, 9))
        assert FoldMixPlan(mode='augment').folds_added == tuple(range(1, 9))

    @pytest.mark.parametrize('kwargs', [
        {'mode': 'mix'},
        {'mode': 'augment', 'folds_added': (0,)},
        {'mode': 'substitute', 'folds_added': (9,)},
        {'test_fold': 3},
        {'repetitions': 0},
    ])
    def test_invalid_plan(self, kwargs):
        with pytest.raises(DownstreamError):
            FoldMixPlan(**kwargs).validate()


class TestFoldMixExperiment:
    def plan(self, **kwargs):
        defaults = {'mode': 'substitute', 'folds_added': (0, 8), 'repetitions': 2, 'classifier': FAST}
        defaults.update(kwargs)
        return FoldMixPlan(**defaults)

    def test_substitution_table(self, two_class):
        result = fold_mix_experiment(two_class, {'noise': noise_generator}, self.plan())
        table = result.table.set_index('generator')
        assert list(table.index) == ['noise', REAL_ONLY]
        assert list(table.columns) == ['mean_0', 'ci_0', 'mean_8', 'ci_8', 'average_rank']
        assert np.isnan(table.loc[REAL_ONLY, 'mean_0'])
        assert len(result.cells) == 8

    def test_all_real_folds_equal_real_only(self, two_class):
        result = fold_mix_experiment(two_class, {'noise': noise_generator}, self.plan())
        table = result.table.set_index('generator')
        assert table.loc['noise', 'mean_8'] == table.loc[REAL_ONLY, 'mean_8']
        assert table.loc['noise', 'ci_8'] == table.loc[REAL_ONLY, 'ci_8']

    def test_noise_generator_alone_is_uninformative(self, two_class):
        plan = self.plan(folds_added=(0,), repetitions=5)
        table = fold_mix_experiment(two_class, {'noise': noise_generator}, plan).table
        assert abs(table.set_index('generator').loc['noise', 'mean_0'] - 0.5) < 0.2

    def test_augmentation(self, two_class):
        plan = self.plan(mode='augment', folds_added=(1, 2), repetitions=1)
        result = fold_mix_experiment(two_class, {'noise': noise_generator, 'copy': lambda t, s: t}, plan)
        assert list(result.table['generator']) == ['noise', 'copy']
        assert result.table[['mean_1', 'mean_2']].notna().all().all()

    def test_reproducible_across_thread_counts(self, two_class, settings):
        settings.MIDT = {**settings.MIDT, 'THREADS': 1}
        first = fold_mix_experiment(two_class, {'noise': noise_generator}, self.plan())
        settings.MIDT = {**settings.MIDT, 'THREADS': 4}
        second = fold_mix_experiment(two_class, {'noise': noise_generator}, self.plan())
        pd.testing.assert_frame_equal(first.table, second.table)
        pd.testing.assert_frame_equal(first.cells, second.cells)

    def test_missing_folds(self, two_class):
        with pytest.raises(DownstreamError):
            fold_mix_experiment(two_class.in_folds(range(1, 9)), {'noise': noise_generator}, self.plan())
        with pytest.raises(DownstreamError):
            fold_mix_experiment(two_class.in_folds([1, 2, 10]), {'noise': noise_generator}, self.plan())

    def test_no_generators(self, two_class):
        with pytest.raises(DownstreamError):
            fold_mix_experiment(two_class, {}, self.plan())

    def test_service_writes_tables(self, two_class, tmp_path):
        prov = {'config_hash': 'abc', 'seed': 0}
        plan = self.plan(folds_added=(8,), repetitions=1)
        DownstreamService.run_fold_mix(two_class, {'noise': noise_generator}, plan, tmp_path, prov)
        table = read_csv_report(tmp_path / 'foldmix_substitute.csv')
        runs = read_csv_report(tmp_path / 'foldmix_substitute_runs.csv')
        assert list(table['generator']) == ['noise', REAL_ONLY]
        assert len(runs) == 2
        assert (tmp_path / 'foldmix_substitute.csv').read_text().startswith('# config_hash=abc')

    def test_faithfulness_report(self, two_class, tmp_path):
        train, test = two_class.in_folds(range(1, 9)), two_class.in_folds([10])
        report = DownstreamService.faithfulness_report(
            train, test, test, FAST, tmp_path / 'faithfulness.json',
        )
        assert 0.0 <= report['faithfulness'] <= 1.0
        assert (tmp_path / 'faithfulness.json').exists()

    @pytest.mark.slow
    def test_adding_real_folds_helps(self):
        real = oracle(n_records=400, classes=('normal', 'wide_qrs'))
        plan = self.plan(
            folds_added=(0, 2, 4, 8), repetitions=5, classifier=replace(FAST, hidden=8, steps=150),
        )
        table = fold_mix_experiment(real, {'noise': noise_generator}, plan).table
        row = table.set_index('generator').loc['noise']
        for low, high in ((0, 2), (2, 4), (4, 8)):
            slack = row[f'ci_{low}'] + row[f'ci_{high}']
            assert row[f'mean_{high}'] >= row[f'mean_{low}'] - slack
        assert row['mean_8'] > row['mean_0']
