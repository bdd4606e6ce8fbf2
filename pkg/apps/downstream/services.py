# apps/downstream/services.py
import logging
from pathlib import Path

from apps.core.reporting import write_csv_report, write_json_report
from apps.downstream.classifier import train_classifier
from apps.downstream.foldmix import fold_mix_experiment
from apps.downstream.scoring import classifier_auroc, faithfulness

logger = logging.getLogger(__name__)


class DownstreamService:
    """Service for the downstream-utility experiments"""

    @staticmethod
    def run_fold_mix(real, generators, plan, out_dir, prov=None):
        """
        Run a fold-mix experiment and write its tables

        Args:
            real: Dataset with real records in folds 1..8 and the test fold
            generators: mapping name -> callable(template, seed) -> Dataset
            plan: FoldMixPlan
            out_dir: directory receiving ``foldmix_<mode>.csv`` and
                ``foldmix_<mode>_runs.csv``
            prov: provenance fields embedded in both files

        Returns:
            FoldMixResult
        """
        result = fold_mix_experiment(real, generators, plan)
        out_dir = Path(out_dir)
        write_csv_report(result.table, out_dir / f'foldmix_{plan.mode}.csv', prov)
        write_csv_report(result.cells, out_dir / f'foldmix_{plan.mode}_runs.csv', prov)
        logger.info(f'Wrote fold-mix {plan.mode} table for {len(generators)} generators to {out_dir}')
        return result

    @staticmethod
    def faithfulness_report(train, test, synth, cfg, out_path, prov=None, threshold=0.5):
        """
        Train a classifier on real data and score the label consistency of
        synthetic records

        Returns:
            dict with the classifier's real test AUROC and the faithfulness
        """
        clf = train_classifier(train, cfg)
        report = {
            'classes': clf.classes,
            'classifier_final_loss': clf.final_loss,
            'real_test_auroc': classifier_auroc(clf, test),
            'faithfulness': faithfulness(synth, clf, threshold),
            'threshold': threshold,
        }
        write_json_report(report, out_path, prov)
        logger.info(f"Faithfulness {report['faithfulness']:.3f} over {len(synth)} synthetic records")
        return report
