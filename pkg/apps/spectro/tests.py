# apps/spectro/tests.py
import math

import numpy as np
import pytest

from apps.autodiff.gradcheck import finite_difference_check
from apps.autodiff.graph import ComputeGraph
from apps.core.rng import make_rng
from apps.spectro.exceptions import SpectroError
from apps.spectro.loss import MidtConfig, build_plan, midt_loss, midt_loss_node, multi_resolution_l1
from apps.spectro.transforms import (
    STFTResolution, log_mel_spectrogram, mel_filterbank, stft,
)


class TestMelFilterbank:
    @pytest.mark.parametrize('window,n_mels', [(32, 8), (64, 16), (128, 32)])
    def test_rows_are_peak_normalized(self, window, n_mels):
        bank = mel_filterbank(100.0, window, n_mels)
        assert np.all(bank.matrix.max(axis=1) == 1.0)
        assert bank.matrix.min() >= 0.0

    def test_rows_have_contiguous_support(self):
        bank = mel_filterbank(100.0, 128, 32)
        for row in bank.matrix:
            support = np.flatnonzero(row > 0)
            assert np.array_equal(support, np.arange(support[0], support[-1] + 1))

    def test_centers_are_denser_at_low_frequency(self):
        centers = mel_filterbank(100.0, 128, 32).centers_hz
        gaps = np.diff(centers)
        assert np.all(gaps > 0)
        assert gaps[0] < gaps[-1]

    def test_single_triangle_spans_range(self):
        bank = mel_filterbank(100.0, 64, 1, f_min=0.0, f_max=50.0)
        row = bank.matrix[0]
        assert row.max() == 1.0
        assert row[0] == 0.0 and row[-1] == 0.0
        assert np.all(row[1:-1] > 0.0)

    def test_f_max_above_nyquist(self):
        with pytest.raises(SpectroError):
            mel_filterbank(100.0, 64, 8, f_max=60.0)


class TestStft:
    def test_zero_signal(self):
        spectrum = stft(np.zeros(128), STFTResolution(32))
        assert spectrum.shape == (13, 17)
        assert not np.any(spectrum)

    def test_pure_tone_energy_in_its_bin(self):
        res = STFTResolution(32, 8, window='rectangular')
        n = np.arange(128)
        spectrum = stft(np.sin(2 * np.pi * 5 * n / 32), res)
        energy = np.abs(spectrum) ** 2
        assert np.all(energy[:, 5] / energy.sum(axis=1) > 0.95)

    def test_constant_signal_is_dc_only(self):
        res = STFTResolution(16, 4, window='rectangular')
        energy = np.abs(stft(np.full(64, 3.0), res)) ** 2
        assert np.all(energy[:, 1:] < 1e-20)
        assert np.all(energy[:, 0] > 0)

    def test_parseval_per_frame(self):
        rng = make_rng(7)
        res = STFTResolution(32, 8, window='rectangular')
        weights = np.full(res.n_bins, 2.0)
        weights[[0, -1]] = 1.0
        for _ in range(100):
            lead = rng.normal(size=96)
            frames = lead[8 * np.arange(res.n_frames(96))[:, None] + np.arange(32)[None, :]]
            spectral = (weights * np.abs(stft(lead, res)) ** 2).sum(axis=1)
            np.testing.assert_allclose(spectral, (frames ** 2).sum(axis=1), rtol=0, atol=1e-9)

    def test_signal_shorter_than_window(self):
        with pytest.raises(SpectroError):
            stft(np.zeros(16), STFTResolution(32))

    def test_window_must_be_power_of_two(self):
        with pytest.raises(SpectroError):
            STFTResolution(48)


class TestLogMel:
    def setup_method(self):
        self.res = STFTResolution(32)
        self.bank = mel_filterbank(100.0, 32, 8)

    def test_zero_signal_hits_floor(self):
        values = log_mel_spectrogram(np.zeros(64), self.res, self.bank, floor=1e-5)
        assert np.all(values == np.log(1e-5))

    def test_doubling_shifts_by_log_two(self):
        lead = make_rng(1).normal(size=64)
        base = log_mel_spectrogram(lead, self.res, self.bank)
        doubled = log_mel_spectrogram(2.0 * lead, self.res, self.bank)
        live = base > np.log(1e-5)
        np.testing.assert_allclose(doubled[live] - base[live], math.log(2.0), atol=1e-12)

    def test_identical_leads(self):
        lead = make_rng(2).normal(size=64)
        first = log_mel_spectrogram(lead, self.res, self.bank)
        assert first.tobytes() == log_mel_spectrogram(lead.copy(), self.res, self.bank).tobytes()


def _straight_line_loss(a, b, window, hop, bank_matrix, floor):
    """Loop-by-loop single-lead log-mel L1"""
    def log_mel(signal):
        rows = []
        n_frames = (len(signal) - window) // hop + 1
        for f in range(n_frames):
            mags = []
            for k in range(window // 2 + 1):
                re = im = 0.0
                for n in range(window):
                    taper = 0.5 - 0.5 * math.cos(2 * math.pi * n / window)
                    sample = signal[f * hop + n] * taper
                    re += sample * math.cos(2 * math.pi * n * k / window)
                    im -= sample * math.sin(2 * math.pi * n * k / window)
                mags.append(math.sqrt(re * re + im * im) / math.sqrt(window))
            row = []
            for weights in bank_matrix:
                energy = sum(w * m for w, m in zip(weights, mags))
                row.append(math.log(max(energy, floor)))
            rows.append(row)
        return rows

    first, second = log_mel(a), log_mel(b)
    diffs = [abs(p - q) for r1, r2 in zip(first, second) for p, q in zip(r1, r2)]
    return sum(diffs) / len(diffs)


class TestMidtLoss:
    def setup_method(self):
        self.cfg = MidtConfig.from_windows((16, 32, 64))

    def test_identity_is_zero(self):
        x = make_rng(3).normal(size=(2, 64, 3))
        assert midt_loss(x, x, self.cfg) == 0.0

    def test_symmetric_and_non_negative(self):
        rng = make_rng(4)
        for _ in range(20):
            x, y = rng.normal(size=(64, 2)), rng.normal(size=(64, 2))
            forward, backward = midt_loss(x, y, self.cfg), midt_loss(y, x, self.cfg)
            assert forward == backward
            assert forward > 0.0

    def test_matches_straight_line_reimplementation(self):
        rng = make_rng(5)
        a, b = rng.normal(size=64), rng.normal(size=64)
        plan = build_plan(32, 8, 'hann', 8, 0.0, 50.0, 100.0)
        graph = ComputeGraph()
        total, _ = multi_resolution_l1(graph.input('a'), graph.input('b'), [plan], floor=1e-5)
        value = graph.evaluate({'a': a.reshape(1, 64, 1), 'b': b.reshape(1, 64, 1)}, root=total)
        expected = _straight_line_loss(a, b, 32, 8, plan.bank.matrix, 1e-5)
        assert abs(float(value) - expected) < 1e-9

    def test_default_config_uses_three_resolutions(self):
        plans = MidtConfig().plans(100.0)
        assert [p.window_length for p in plans] == [32, 64, 128]
        assert [p.bank.n_mels for p in plans] == [8, 16, 32]
        assert [p.resolution.hop_length for p in plans] == [8, 16, 32]

    def test_needs_two_resolutions(self):
        with pytest.raises(SpectroError):
            MidtConfig.from_windows((32,)).validate()

    def test_shape_mismatch(self):
        with pytest.raises(SpectroError):
            midt_loss(np.zeros((64, 2)), np.zeros((64, 3)), self.cfg)

    def test_signal_shorter_than_largest_window(self):
        with pytest.raises(SpectroError):
            midt_loss(np.zeros((48, 1)), np.zeros((48, 1)), self.cfg)

    def test_gradient_matches_finite_differences(self):
        # Pick an instance whose log-mel differences stay clear of the |.| kink.
        for attempt in range(40):
            rng = make_rng(6, attempt)
            x_hat, x = rng.normal(size=(1, 64, 2)), rng.normal(size=(1, 64, 2))
            graph = ComputeGraph()
            total, _ = midt_loss_node(graph.input('x_hat'), graph.input('x'), self.cfg)
            graph.evaluate({'x_hat': x_hat, 'x': x}, root=total)
            gaps = [
                np.min(np.abs(graph.value(node.inputs[0].inputs[0])))
                for node in graph.nodes if node.op == 'mean'
            ]
            if min(gaps) > 5e-3:
                break
        assert finite_difference_check(graph, 'x_hat', epsilon=1e-4) < 1e-3
