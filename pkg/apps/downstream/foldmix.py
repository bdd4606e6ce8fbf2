# apps/downstream/foldmix.py
"""
Augmentation and substitution experiments over patient folds.

Folds 1..8 form the training pool and fold 10 is the held-out real test
fold. A generator is any callable ``generator(template, seed) -> Dataset``
that returns one synthetic record per template record, carrying the
template's metadata and fold.

    augment     real folds 1..8 plus synthetic copies of folds 1..n
    substitute  real folds 1..k plus synthetic copies of folds k+1..8

Each cell is the mean test AUROC over ``repetitions`` classifier seeds with a
normal-approximation 95% confidence interval.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from django.conf import settings
from scipy.stats import norm

from apps.core.rng import derive_seed
from apps.downstream.classifier import ClassifierConfig, train_classifier
from apps.downstream.exceptions import DownstreamError
from apps.downstream.scoring import classifier_auroc

logger = logging.getLogger(__name__)

MODES = ('augment', 'substitute')
POOL_FOLDS = tuple(range(1, 9))
REAL_ONLY = 'real_only'


@dataclass
class FoldMixPlan:
    mode: str = 'substitute'
    folds_added: tuple = None
    test_fold: int = 10
    repetitions: int = 5
    seed: int = 0
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)

    def __post_init__(self):
        if self.folds_added is None:
            self.folds_added = tuple(range(0, 9)) if self.mode == 'substitute' else tuple(range(1, 9))
        self.folds_added = tuple(int(k) for k in self.folds_added)

    def validate(self):
        if self.mode not in MODES:
            raise DownstreamError(f"mode must be one of {MODES}, got '{self.mode}'")
        if self.repetitions < 1:
            raise DownstreamError('repetitions must be at least 1')
        if self.test_fold in POOL_FOLDS:
            raise DownstreamError(f'test fold {self.test_fold} overlaps the training folds 1..8')
        low = 0 if self.mode == 'substitute' else 1
        for k in self.folds_added:
            if not low <= k <= len(POOL_FOLDS):
                raise DownstreamError(f'{self.mode} cannot add {k} folds (allowed {low}..8)')
        self.classifier.validate()
        return self


@dataclass
class FoldMixResult:
    plan: FoldMixPlan
    table: pd.DataFrame
    cells: pd.DataFrame


def training_folds(mode, k):
    """(real folds, folds whose metadata is synthesized) for one cell"""
    if mode == 'augment':
        return POOL_FOLDS, POOL_FOLDS[:k]
    return POOL_FOLDS[:k], POOL_FOLDS[k:]


def confidence_interval(values, level=0.95):
    """Half-width of the normal-approximation interval of the mean"""
    values = np.asarray(values, dtype=np.float64)
    if len(values) < 2:
        return 0.0
    z = norm.ppf(0.5 + level / 2.0)
    return float(z * np.std(values, ddof=1) / np.sqrt(len(values)))


def _check_folds(real, plan):
    present = set(real.folds().tolist())
    missing = sorted(set(POOL_FOLDS) - present)
    if missing:
        raise DownstreamError(f'real data has no records in training folds {missing}')
    if plan.test_fold not in present:
        raise DownstreamError(f'real data has no records in test fold {plan.test_fold}')


def _run_cell(real, test, classes, generator, plan, k, repetition):
    real_folds, synth_folds = training_folds(plan.mode, k)
    train = real.in_folds(real_folds)
    if generator is not None and synth_folds:
        template = real.in_folds(synth_folds)
        train = train.concat(generator(template, derive_seed(plan.seed, repetition, k)))
    if train.is_empty:
        return float('nan')
    cfg = replace(plan.classifier, seed=derive_seed(plan.seed, repetition))
    clf = train_classifier(train, cfg, classes=classes)
    return classifier_auroc(clf, test)


def _jobs(generators, plan):
    for name, generator in generators.items():
        for k in plan.folds_added:
            for repetition in range(plan.repetitions):
                yield name, generator, k, repetition
    if plan.mode == 'substitute':
        for k in plan.folds_added:
            for repetition in range(plan.repetitions):
                yield REAL_ONLY, None, k, repetition


def summarize_cells(cells, folds_added, generator_names):
    """Wide table: one row per generator, mean_<k> / ci_<k> columns and average_rank"""
    rows = []
    index = list(generator_names) + sorted(set(cells['generator']) - set(generator_names))
    for name in index:
        row = {'generator': name}
        for k in folds_added:
            values = cells.loc[(cells['generator'] == name) & (cells['folds_added'] == k), 'auroc']
            values = values.to_numpy()
            if len(values) == 0 or np.all(np.isnan(values)):
                row[f'mean_{k}'], row[f'ci_{k}'] = np.nan, np.nan
            else:
                row[f'mean_{k}'] = float(np.mean(values))
                row[f'ci_{k}'] = confidence_interval(values)
        rows.append(row)
    table = pd.DataFrame(rows)
    means = table.loc[table['generator'].isin(generator_names), [f'mean_{k}' for k in folds_added]]
    ranks = means.rank(axis=0, ascending=False, method='average')
    table['average_rank'] = ranks.mean(axis=1)
    return table


def fold_mix_experiment(real, generators, plan=None):
    """
    Run every (generator, folds added, repetition) cell of ``plan``.

    Returns a FoldMixResult holding the per-run AUROC values and the wide
    table; results are independent of the worker count.
    """
    plan = (plan or FoldMixPlan()).validate()
    if not generators:
        raise DownstreamError('at least one generator is required')
    _check_folds(real, plan)
    test = real.in_folds([plan.test_fold])
    classes = real.in_folds(POOL_FOLDS).class_names()
    if len(classes) < 2:
        raise DownstreamError(f'training folds hold fewer than 2 classes: {classes}')

    jobs = list(_jobs(generators, plan))
    workers = max(1, min(int(settings.MIDT['THREADS']), len(jobs)))
    logger.info(f'Fold-mix {plan.mode}: {len(jobs)} runs on {workers} threads')
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(_run_cell, real, test, classes, generator, plan, k, repetition)
            for _, generator, k, repetition in jobs
        ]
        scores = [future.result() for future in futures]

    cells = pd.DataFrame(
        [
            {'generator': name, 'folds_added': k, 'repetition': repetition, 'auroc': score}
            for (name, _, k, repetition), score in zip(jobs, scores)
        ],
        columns=['generator', 'folds_added', 'repetition', 'auroc'],
    )
    table = summarize_cells(cells, plan.folds_added, list(generators))
    return FoldMixResult(plan=plan, table=table, cells=cells)
