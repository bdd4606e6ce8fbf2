# apps/signals/oracle.py
"""
Seeded parametric quasi-ECG generator standing in for a clinical database.

Every record is ``M @ s(t) + noise`` where ``s`` holds ``k`` latent sources,
each a train of Gaussian P, Q, R, S and T bumps at the record's heart rate,
and ``M`` is a C x k mixing matrix. Because the leads are a known linear
mix of the sources, the inter-lead correlation structure is available in
closed form (``analytic_correlation``).

Classes select the bump parameters:

    normal       sinus rhythm, 60-100 bpm
    wide_qrs     Q, R and S widths doubled
    low_voltage  every amplitude x0.4 (LVOLT form statement)
    brady        40-55 bpm (SBRAD rhythm statement)

The diagnostic label of a record is the position of its class in
``class_set``.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from apps.core.rng import make_rng
from apps.signals.exceptions import OracleConfigError
from apps.signals.records import (
    DIAGNOSTIC_VOCAB, GENDERS, Dataset, LeadSet, Record, RecordMeta, quantize_float32,
)

logger = logging.getLogger(__name__)

CLASS_CHOICES = ('normal', 'wide_qrs', 'low_voltage', 'brady')

FORM_LVOLT = 4
RHYTHM_SR = 0
RHYTHM_SBRAD = 1

# (offset from R in seconds, width in seconds, amplitude in mV)
WAVES = {
    'P': (-0.20, 0.025, 0.15),
    'Q': (-0.035, 0.010, -0.12),
    'R': (0.0, 0.012, 1.00),
    'S': (0.035, 0.010, -0.25),
    'T': (0.30, 0.050, 0.30),
}
WAVE_ORDER = ('P', 'Q', 'R', 'S', 'T')

# Relative weight of each wave in the first three latent sources
SOURCE_PROFILES = np.array([
    [0.3, 1.0, 1.0, 1.0, 0.2],
    [1.0, 0.2, 0.4, 0.6, 1.0],
    [0.5, 0.8, -0.3, 1.2, -0.6],
])

# Frontal-plane angles of the limb leads, horizontal-plane angles of V1-V6
LIMB_ANGLES_DEG = (0.0, 60.0, 120.0, -150.0, -30.0, 90.0)
CHEST_ANGLES_DEG = (120.0, 100.0, 80.0, 60.0, 30.0, 0.0)


def dipole_mixing_matrix():
    """12 x 3 lead-field matrix of an idealised heart dipole"""
    rows = []
    for angle in np.deg2rad(LIMB_ANGLES_DEG):
        rows.append([np.cos(angle), np.sin(angle), 0.1])
    for angle in np.deg2rad(CHEST_ANGLES_DEG):
        rows.append([0.6 * np.cos(angle), 0.2, np.sin(angle)])
    return np.array(rows)


@dataclass
class OracleConfig:
    n_records: int = 200
    n_leads: int = 12
    length: int = 256
    sample_rate_hz: float = 100.0
    latent_sources: int = 3
    mixing_matrix: list = None
    noise_std: float = 0.05
    class_set: tuple = CLASS_CHOICES
    records_per_patient: int = 1
    n_folds: int = 10
    heart_rate_bpm: tuple = (60.0, 100.0)
    brady_rate_bpm: tuple = (40.0, 55.0)
    amplitude_jitter: float = 0.1
    waves: dict = field(default_factory=lambda: dict(WAVES))

    def validate(self):
        if self.n_records < 0:
            raise OracleConfigError('n_records must be non-negative')
        if self.n_leads < 1 or self.latent_sources < 1:
            raise OracleConfigError('n_leads and latent_sources must be at least 1')
        if self.length < 16:
            raise OracleConfigError(f'length must be at least 16, got {self.length}')
        if self.noise_std < 0:
            raise OracleConfigError(f'noise_std must be non-negative, got {self.noise_std}')
        if not 1 <= self.n_folds <= 10:
            raise OracleConfigError('n_folds must be within 1..10')
        if self.records_per_patient < 1:
            raise OracleConfigError('records_per_patient must be at least 1')
        unknown = set(self.class_set) - set(CLASS_CHOICES)
        if unknown or not self.class_set:
            raise OracleConfigError(f'class_set must be a non-empty subset of {CLASS_CHOICES}')
        if len(self.class_set) > DIAGNOSTIC_VOCAB:
            raise OracleConfigError('too many classes for the diagnostic vocabulary')
        low, high = self.heart_rate_bpm
        if not 0 < low <= high:
            raise OracleConfigError(f'invalid heart rate range {self.heart_rate_bpm}')


def analytic_correlation(mixing, source_cov, noise_std=0.0):
    """
    Lead correlation implied by ``x = M s + noise``.

    ``source_cov`` is the k x k covariance of the latent sources; white noise
    of standard deviation ``noise_std`` adds to the diagonal.
    """
    mixing = np.asarray(mixing, dtype=np.float64)
    cov = mixing @ np.asarray(source_cov, dtype=np.float64) @ mixing.T
    cov = cov + noise_std ** 2 * np.eye(cov.shape[0])
    scale = np.sqrt(np.diag(cov))
    return cov / np.outer(scale, scale)


class OracleGenerator:
    """
    Renders oracle records for one (config, seed) pair.

    ``render`` returns unquantized float64 latents and leads so callers can
    check the mixing structure exactly; ``make_oracle_dataset`` quantizes.
    """

    def __init__(self, cfg, seed):
        cfg.validate()
        self.cfg = cfg
        self.seed = int(seed)
        self.mixing = self._mixing_matrix()
        self.profiles = self._source_profiles()

    def _mixing_matrix(self):
        cfg = self.cfg
        if cfg.mixing_matrix is not None:
            mixing = np.asarray(cfg.mixing_matrix, dtype=np.float64)
        elif cfg.n_leads == 12 and cfg.latent_sources == 3:
            mixing = dipole_mixing_matrix()
        else:
            mixing = make_rng(self.seed, 0).normal(size=(cfg.n_leads, cfg.latent_sources))
        if mixing.shape != (cfg.n_leads, cfg.latent_sources):
            raise OracleConfigError(
                f'mixing matrix must be {cfg.n_leads} x {cfg.latent_sources}, got {mixing.shape}',
            )
        if np.linalg.matrix_rank(mixing) < cfg.latent_sources:
            raise OracleConfigError('mixing matrix is rank deficient')
        return mixing

    def _source_profiles(self):
        k = self.cfg.latent_sources
        if k <= len(SOURCE_PROFILES):
            return SOURCE_PROFILES[:k].copy()
        extra = make_rng(self.seed, 1).uniform(-1.0, 1.0, size=(k - len(SOURCE_PROFILES), 5))
        return np.vstack([SOURCE_PROFILES, extra])

    def _wave_params(self, class_name, rng):
        params = {}
        jitter = self.cfg.amplitude_jitter
        for name in WAVE_ORDER:
            offset, width, amplitude = self.cfg.waves[name]
            amplitude *= rng.uniform(1.0 - jitter, 1.0 + jitter)
            if class_name == 'wide_qrs' and name in ('Q', 'R', 'S'):
                width *= 2.0
            if class_name == 'low_voltage':
                amplitude *= 0.4
            params[name] = (offset, width, amplitude)
        return params

    def _metadata(self, patient_id, class_name, rng):
        age = float(np.round(rng.uniform(5.0, 90.0), 1))
        gender = GENDERS[int(rng.integers(0, 2))]
        form = {FORM_LVOLT} if class_name == 'low_voltage' else set()
        rhythm = {RHYTHM_SBRAD} if class_name == 'brady' else {RHYTHM_SR}
        return RecordMeta(
            patient_id=patient_id,
            age_years=age,
            gender=gender,
            diagnostic_labels={self.cfg.class_set.index(class_name)},
            form_labels=form,
            rhythm_labels=rhythm,
            class_name=class_name,
        )

    def latents(self, meta, rng):
        """Latent source matrix (L, k) for one record"""
        cfg = self.cfg
        low, high = cfg.brady_rate_bpm if meta.class_name == 'brady' else cfg.heart_rate_bpm
        rate = rng.uniform(low, high)
        # Older patients beat a little slower; female amplitudes are slightly lower.
        rate *= 1.0 - 0.002 * (meta.age_years - 50.0)
        gain = 0.9 if meta.gender == 'female' else 1.0
        rr = 60.0 / rate
        params = self._wave_params(meta.class_name, rng)

        t = np.arange(cfg.length) / cfg.sample_rate_hz
        duration = cfg.length / cfg.sample_rate_hz
        phase = rng.uniform(0.0, rr)
        beats = phase + rr * np.arange(-2, int(np.ceil(duration / rr)) + 2)

        waves = np.zeros((cfg.length, len(WAVE_ORDER)))
        for w, name in enumerate(WAVE_ORDER):
            offset, width, amplitude = params[name]
            if name == 'T':
                offset *= np.sqrt(rr)
            centers = beats + offset
            bumps = np.exp(-0.5 * ((t[:, None] - centers[None, :]) / width) ** 2)
            waves[:, w] = gain * amplitude * bumps.sum(axis=1)
        return waves @ self.profiles.T

    def render(self):
        """
        Generate every record.

        Returns (metas, folds, latents (N, L, k), leads (N, L, C)) as float64.
        """
        cfg = self.cfg
        meta_rng = make_rng(self.seed, 2)
        n = cfg.n_records
        n_patients = -(-n // cfg.records_per_patient)
        patient_folds = meta_rng.permutation(n_patients) % cfg.n_folds + 1
        classes = meta_rng.permutation(np.arange(n) % len(cfg.class_set))

        metas, folds = [], []
        latents = np.zeros((n, cfg.length, cfg.latent_sources))
        for i in range(n):
            record_rng = make_rng(self.seed, 3, i)
            patient_id = i // cfg.records_per_patient
            metas.append(self._metadata(patient_id, cfg.class_set[classes[i]], record_rng))
            folds.append(int(patient_folds[patient_id]))
            latents[i] = self.latents(metas[-1], record_rng)

        leads = latents @ self.mixing.T
        if cfg.noise_std > 0:
            leads = leads + cfg.noise_std * make_rng(self.seed, 4).normal(size=leads.shape)
        return metas, folds, latents, leads


def make_oracle_dataset(cfg, seed):
    """Generate a fold-assigned Dataset; a pure function of (cfg, seed)"""
    metas, folds, _, leads = OracleGenerator(cfg, seed).render()
    leads = quantize_float32(leads)
    records = [
        Record(LeadSet(leads[i], cfg.sample_rate_hz), meta, fold)
        for i, (meta, fold) in enumerate(zip(metas, folds))
    ]
    logger.info(f"Generated {len(records)} oracle records (seed={seed}, classes={list(cfg.class_set)})")
    return Dataset(records)


def records_from_signals(signals, metas, folds, sample_rate_hz):
    """Wrap generated (N, L, C) signals with the metadata they were conditioned on"""
    signals = quantize_float32(signals)
    return Dataset(
        Record(LeadSet(signals[i], sample_rate_hz), meta, fold)
        for i, (meta, fold) in enumerate(zip(metas, folds))
    )
