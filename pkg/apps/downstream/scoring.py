# apps/downstream/scoring.py
import numpy as np
from sklearn.metrics import roc_auc_score

from apps.downstream.classifier import label_matrix
from apps.downstream.exceptions import DownstreamError


def auroc(scores, labels):
    """
    Area under the ROC curve: the probability that a positive outranks a
    negative, ties counting one half.

    2-D inputs are multi-label; the result is the macro average over the
    columns where both polarities occur.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise DownstreamError(f'scores {scores.shape} and labels {labels.shape} differ in shape')
    if scores.ndim == 1:
        if len(np.unique(labels)) != 2:
            raise DownstreamError('AUROC needs both positive and negative labels')
        return float(roc_auc_score(labels, scores))
    values = [
        roc_auc_score(labels[:, k], scores[:, k])
        for k in range(labels.shape[1])
        if len(np.unique(labels[:, k])) == 2
    ]
    if not values:
        raise DownstreamError('no class has both positive and negative labels')
    return float(np.mean(values))


def classifier_auroc(clf, test):
    """Macro AUROC of a trained classifier on a labelled test set"""
    return auroc(clf.predict_proba(test), label_matrix(test, clf.classes))


def faithfulness(synth, clf, threshold=0.5):
    """
    Fraction of synthetic records whose thresholded prediction set contains
    the class they were generated for.
    """
    if clf is None or not getattr(clf, 'trained', False):
        raise DownstreamError('faithfulness needs a trained classifier')
    if len(synth) == 0:
        raise DownstreamError('synthetic set is empty')
    probs = clf.predict_proba(synth)
    hits = 0
    for record, row in zip(synth, probs):
        name = record.meta.class_name
        if name in clf.classes and row[clf.classes.index(name)] >= threshold:
            hits += 1
    return hits / len(synth)
