# apps/diffusion/services.py
import logging

import numpy as np

from apps.core.reporting import write_csv_report
from apps.core.rng import derive_seed
from apps.diffusion.sampling import sample
from apps.signals.oracle import records_from_signals

logger = logging.getLogger(__name__)


class DiffusionService:
    """Service for generating datasets and writing training traces"""

    @staticmethod
    def synthesize(model, template, sched, seed, batch_size=64):
        """
        Generate one synthetic record per template record

        Args:
            model: trained DiffusionModel
            template: Dataset whose metadata and folds condition the samples
            sched: NoiseSchedule used for training
            seed: sampling seed; chunk i draws from its own child seed
            batch_size: records denoised together

        Returns:
            Dataset of float32-quantized samples carrying the template's
            metadata and folds
        """
        metas = template.metas()
        chunks = []
        for i, start in enumerate(range(0, len(metas), batch_size)):
            chunk = metas[start:start + batch_size]
            chunks.append(sample(model, chunk, sched, seed=derive_seed(seed, i)))
        if chunks:
            signals = np.concatenate(chunks)
        else:
            signals = np.zeros((0, model.length, model.net.channels))
        logger.info(f'Synthesized {len(metas)} records (seed={seed})')
        return records_from_signals(signals, metas, template.folds(), model.sample_rate_hz)

    @staticmethod
    def write_loss_trace(trace, path, prov=None):
        return write_csv_report(trace, path, prov)
