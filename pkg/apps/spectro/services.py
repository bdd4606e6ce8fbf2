# apps/spectro/services.py
import pandas as pd

from apps.core.reporting import write_csv_report
from apps.spectro.exceptions import SpectroError
from apps.spectro.transforms import log_mel_spectrogram, mel_filterbank


class SpectroService:
    """Service for dumping log-mel spectrograms"""

    @staticmethod
    def log_mel_frames(lead, cfg, sample_rate_hz):
        """
        Log-mel matrices of one lead at every resolution of a MidtConfig

        Returns:
            dict window_length -> DataFrame (frames x mel bins) indexed by
            frame start time in seconds, one ``mel_<hz>`` column per filter
            named after its center frequency
        """
        f_max = cfg.f_max_hz if cfg.f_max_hz is not None else sample_rate_hz / 2.0
        frames = {}
        for res, n_mels in zip(cfg.resolutions, cfg.mel_counts()):
            bank = mel_filterbank(sample_rate_hz, res.window_length, n_mels, cfg.f_min_hz, f_max)
            matrix = log_mel_spectrogram(lead, res, bank, cfg.log_floor)
            starts = [i * res.hop_length / sample_rate_hz for i in range(matrix.shape[0])]
            frame = pd.DataFrame(
                matrix, columns=[f'mel_{hz:.2f}' for hz in bank.centers_hz],
                index=pd.Index(starts, name='time_s'),
            )
            frames[res.window_length] = frame
        return frames

    @staticmethod
    def dump(record, lead_index, cfg, out_dir, stem, prov=None):
        leads = record.leads
        if not 0 <= lead_index < leads.n_leads:
            raise SpectroError(f'lead index {lead_index} outside 0..{leads.n_leads - 1}')
        frames = SpectroService.log_mel_frames(
            leads.samples[:, lead_index], cfg, leads.sample_rate_hz,
        )
        return [
            write_csv_report(frame, out_dir / f'{stem}_w{window}.csv', prov, index=True)
            for window, frame in frames.items()
        ]
