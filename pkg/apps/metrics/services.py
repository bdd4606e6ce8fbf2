# apps/metrics/services.py
import logging
from pathlib import Path

from django.conf import settings

from apps.core.reporting import write_csv_report, write_json_report
from apps.metrics.exceptions import MetricError
from apps.metrics.privacy import PrivacyReport
from apps.metrics.reports import CorrelationReport, FidelityReport, reference_pairs
from apps.signals.records import lead_names

logger = logging.getLogger(__name__)


class EvaluationService:
    """Service for scoring a synthetic set against real records"""

    @staticmethod
    def evaluate(real, synth, out_dir, prov=None, train=None, holdout=None, seed=0,
                 ssim_window=64, ssim_stride=32):
        """
        Run the full benchmark and write its reports

        Args:
            real: Dataset of real test records
            synth: Dataset generated from the metadata of ``real``, index-aligned
            out_dir: directory receiving the CSV and JSON reports
            prov: provenance fields embedded in every report
            train: real training records for the privacy metrics (optional)
            holdout: real records unseen in training (optional)
            seed: seed of the real-vs-real pairing
            ssim_window: SSIM window length
            ssim_stride: SSIM window stride

        Returns:
            dict: aggregate summary, also written to ``summary.json``
        """
        if real.is_empty or synth.is_empty:
            raise MetricError('real and synthetic sets must be non-empty')
        if real.shape != synth.shape:
            raise MetricError(f'real records are {real.shape}, synthetic records are {synth.shape}')
        out_dir = Path(out_dir)
        prov = prov or {}
        names = lead_names(real.shape[1])

        fidelity = FidelityReport.build(real, synth, ssim_window, ssim_stride)
        write_csv_report(fidelity.records, out_dir / 'per_record.csv', prov)
        write_csv_report(fidelity.leads, out_dir / 'per_lead.csv', prov)

        reference = FidelityReport.build(
            real, real, ssim_window, ssim_stride, pairs=reference_pairs(real, seed),
        )
        write_csv_report(reference.records, out_dir / 'reference_per_record.csv', prov)

        correlation = CorrelationReport.build(real, synth)
        for kind, frame in correlation.frames(names).items():
            write_csv_report(frame, out_dir / f'corr_{kind}.csv', prov, index=True)

        outliers, lead_outliers = fidelity.outliers()
        write_csv_report(outliers, out_dir / 'outliers.csv', prov)
        write_csv_report(lead_outliers, out_dir / 'lead_outliers.csv', prov)

        summary = {
            'metric_definitions': settings.MIDT['METRIC_DEFINITIONS_VERSION'],
            'fidelity': fidelity.aggregate(),
            'reference': reference.aggregate(),
            'correlation': {
                'avg_abs_error': correlation.avg_abs_error,
                'max_abs_error': correlation.max_abs_error,
            },
            'outliers': {row.metric: int(row.outliers) for row in outliers.itertuples()},
        }
        if train is not None and holdout is not None:
            summary['privacy'] = PrivacyReport.build(train, holdout, synth).to_dict()
        else:
            logger.info('No train/holdout sets given; privacy metrics skipped')

        write_json_report(summary, out_dir / 'summary.json', prov)
        logger.info(
            f"Evaluated {len(synth)} synthetic records: rmse={summary['fidelity']['rmse']:.4f} "
            f"corr max error={correlation.max_abs_error:.4f}"
        )
        return summary
