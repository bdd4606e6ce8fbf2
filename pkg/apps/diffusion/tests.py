# apps/diffusion/tests.py
import numpy as np
import pytest

from apps.autodiff.gradcheck import finite_difference_check
from apps.autodiff.graph import ComputeGraph
from apps.conditioning.embeddings import conditioning_bindings, conditioning_node, table_name
from apps.core.reporting import read_csv_report
from apps.denoiser.network import NetConfig, denoise_node
from apps.diffusion.exceptions import NonFiniteLossError, ScheduleError, TrainingError
from apps.diffusion.model import DiffusionModel
from apps.diffusion.sampling import sample
from apps.diffusion.schedule import NoiseSchedule, forward_noise, make_schedule, reconstruct_x0
from apps.diffusion.services import DiffusionService
from apps.diffusion.training import TrainConfig, total_loss, total_loss_node, train
from apps.metrics.reports import CorrelationReport
from apps.signals.oracle import OracleConfig, make_oracle_dataset
from apps.signals.records import Dataset, LeadSet
from apps.spectro.loss import MidtConfig, midt_loss

NET = NetConfig(channels=2)
MIDT = MidtConfig.from_windows((16, 32))


def oracle(n_records=200, seed=0):
    cfg = OracleConfig(
        n_records=n_records, n_leads=2, length=64, latent_sources=1, mixing_matrix=[[1.0], [0.6]],
    )
    return make_oracle_dataset(cfg, seed)


def live_model(seed=0, length=64):
    model = DiffusionModel.initialize(NET, length, seed)
    rng = np.random.default_rng(seed + 11)
    model.store['net.out_proj.weight'] = rng.normal(0.0, 0.5, size=(NET.hidden, NET.channels))
    return model


def train_config(**kwargs):
    defaults = {'midt': MIDT, 'steps': 5, 'batch_size': 8, 'log_every': 5}
    defaults.update(kwargs)
    return TrainConfig(**defaults)


@pytest.fixture(scope='module')
def small_oracle():
    return oracle(n_records=40)


class TestSchedule:
    def test_single_step(self):
        np.testing.assert_array_equal(make_schedule(1, 0.5, 0.5).alpha_bars, [0.5])

    def test_default_range(self):
        alpha_bars = make_schedule(200, 1e-4, 0.02).alpha_bars
        assert np.all(np.diff(alpha_bars) < 0)
        # the linear 1e-4..0.02 schedule ends near 0.132
        assert 0 < alpha_bars[-1] < 0.15

    def test_constant_betas(self):
        sched = make_schedule(10, 0.1, 0.1)
        np.testing.assert_allclose(sched.alpha_bars, 0.9 ** np.arange(1, 11), rtol=1e-12)

    @pytest.mark.parametrize('args', [(0, 1e-4, 0.02), (10, 0.0, 0.02), (10, 0.03, 0.02), (10, 1e-4, 1.0)])
    def test_invalid(self, args):
        with pytest.raises(ScheduleError):
            make_schedule(*args)

    def test_step_out_of_range(self):
        sched = make_schedule(10)
        with pytest.raises(ScheduleError):
            sched.alpha_bar(0)
        with pytest.raises(ScheduleError):
            sched.alpha_bar(11)


class TestForwardNoise:
    # one step with beta 0.75 gives alpha_bar 0.25
    quarter = make_schedule(1, 0.75, 0.75)

    def test_scalar_example(self):
        x_t = forward_noise(np.ones((1, 1)), 1, np.ones((1, 1)), self.quarter)
        assert x_t[0, 0] == pytest.approx(0.5 + np.sqrt(0.75), abs=1e-12)
        assert x_t[0, 0] == pytest.approx(1.3660, abs=1e-4)

    def test_no_noise_limit(self):
        x0 = np.random.default_rng(0).normal(size=(8, 2))
        x_t = forward_noise(x0, 1, np.zeros_like(x0), NoiseSchedule(np.array([0.0])))
        np.testing.assert_array_equal(x_t, x0)

    def test_zero_signal(self):
        eps = np.random.default_rng(0).normal(size=(8, 2))
        sched = make_schedule(200)
        x_t = forward_noise(np.zeros_like(eps), 50, eps, sched)
        np.testing.assert_allclose(x_t, np.sqrt(1.0 - sched.alpha_bar(50)) * eps)

    def test_per_record_steps(self):
        rng = np.random.default_rng(1)
        x0, eps = rng.normal(size=(2, 3, 16, 2))
        sched = make_schedule(200)
        t = np.array([1, 100, 200])
        x_t = forward_noise(x0, t, eps, sched)
        for i, step in enumerate(t):
            np.testing.assert_allclose(x_t[i], forward_noise(x0[i], int(step), eps[i], sched))

    def test_leadset_in_leadset_out(self):
        x0 = LeadSet(np.ones((16, 2)), 250.0)
        x_t = forward_noise(x0, 3, np.zeros((16, 2)), make_schedule(10))
        assert isinstance(x_t, LeadSet)
        assert x_t.sample_rate_hz == 250.0

    def test_shape_mismatch(self):
        with pytest.raises(ScheduleError):
            forward_noise(np.ones((16, 2)), 1, np.ones((16, 3)), make_schedule(10))

    def test_step_out_of_range(self):
        with pytest.raises(ScheduleError):
            forward_noise(np.ones((4, 1)), 11, np.ones((4, 1)), make_schedule(10))


class TestReconstructX0:
    def test_inverts_forward_noise(self):
        rng = np.random.default_rng(2)
        x0, eps = rng.normal(size=(2, 4, 32, 3))
        sched = make_schedule(200)
        t = np.array([1, 20, 150, 200])
        x_t = forward_noise(x0, t, eps, sched)
        np.testing.assert_allclose(reconstruct_x0(x_t, eps, t, sched), x0, atol=1e-9)

    def test_zero_estimate(self):
        sched = make_schedule(200)
        x_t = np.random.default_rng(3).normal(size=(8, 2))
        np.testing.assert_allclose(
            reconstruct_x0(x_t, np.zeros_like(x_t), 40, sched), x_t / np.sqrt(sched.alpha_bar(40)),
        )

    def test_scalar_example(self):
        x0_hat = reconstruct_x0(np.array([[1.3660254037844386]]), np.ones((1, 1)), 1,
                                TestForwardNoise.quarter)
        assert x0_hat[0, 0] == pytest.approx(1.0, abs=1e-9)

    def test_step_out_of_range(self):
        with pytest.raises(ScheduleError):
            reconstruct_x0(np.ones((4, 1)), np.ones((4, 1)), 0, make_schedule(10))


class TestTotalLoss:
    @pytest.fixture
    def batch(self):
        rng = np.random.default_rng(5)
        x0 = oracle(n_records=4).signals().astype(np.float64)
        eps = rng.standard_normal(x0.shape)
        eps_hat = eps + 0.3 * rng.standard_normal(x0.shape)
        return x0, np.array([3, 60, 120, 199]), eps, eps_hat

    def test_zero_weight_is_mse(self, batch):
        x0, t, eps, eps_hat = batch
        parts = total_loss(x0, t, eps, eps_hat, TrainConfig(midt=MIDT, midt_weight=0.0))
        assert parts.total == np.mean((eps_hat - eps) ** 2)
        assert parts.midt > 0

    def test_perfect_denoiser(self, batch):
        x0, t, eps, _ = batch
        parts = total_loss(x0, t, eps, eps.copy(), TrainConfig(midt=MIDT))
        assert parts.mse == 0.0
        assert parts.midt == pytest.approx(0.0, abs=1e-9)
        assert parts.total == pytest.approx(0.0, abs=1e-9)

    def test_matches_sub_formulas(self, batch):
        x0, t, eps, eps_hat = batch
        cfg = TrainConfig(midt=MIDT, midt_weight=0.1)
        sched = cfg.schedule()
        x0_hat = reconstruct_x0(forward_noise(x0, t, eps, sched), eps_hat, t, sched)
        expected = np.mean((eps_hat - eps) ** 2) + 0.1 * midt_loss(x0_hat, x0, MIDT)
        parts = total_loss(x0, t, eps, eps_hat, cfg, sched)
        assert parts.total == pytest.approx(expected, abs=1e-9)
        assert parts.total >= 0
        assert set(parts.per_resolution) == {16, 32}

    def test_end_to_end_gradients(self, small_oracle):
        model = live_model()
        cfg = TrainConfig(midt=MIDT)
        sched = cfg.schedule()
        rng = np.random.default_rng(9)
        x0 = small_oracle.signals()[:4].astype(np.float64)
        t = np.array([5, 50, 100, 190])
        eps = rng.standard_normal(x0.shape)
        graph = ComputeGraph(model.store)
        x_t = graph.input('x_t')
        c = conditioning_node(graph, 4)
        eps_hat = denoise_node(x_t, t, c, NET)
        total, _, _, _ = total_loss_node(graph.input('x0'), x_t, graph.input('eps'), eps_hat, t, sched, cfg)
        bindings = {'x0': x0, 'x_t': forward_noise(x0, t, eps, sched), 'eps': eps}
        bindings.update(conditioning_bindings(small_oracle.metas()[:4]))
        graph.evaluate(bindings, root=total)
        for name in ('net.block0.conv.weight', 'net.block3.gamma.weight', table_name('age')):
            assert finite_difference_check(graph, name, epsilon=1e-6, coordinates=10, seed=2) < 1e-3


class TestTrain:
    def test_empty_dataset(self):
        with pytest.raises(TrainingError):
            train(Dataset(), live_model(), train_config())

    def test_shape_mismatch(self, small_oracle):
        with pytest.raises(TrainingError):
            train(small_oracle, live_model(length=32), train_config())

    def test_negative_weight(self, small_oracle):
        with pytest.raises(TrainingError):
            train(small_oracle, live_model(), train_config(midt_weight=-0.1))

    def test_same_seed_same_trace(self, small_oracle):
        first = train(small_oracle, DiffusionModel.initialize(NET, 64, 1), train_config(seed=4))
        second = train(small_oracle, DiffusionModel.initialize(NET, 64, 1), train_config(seed=4))
        assert first.trace.equals(second.trace)
        for name in first.model.store.names():
            assert first.model.store[name].tobytes() == second.model.store[name].tobytes()

    def test_different_seed_different_trace(self, small_oracle):
        first = train(small_oracle, DiffusionModel.initialize(NET, 64, 1), train_config(seed=4))
        second = train(small_oracle, DiffusionModel.initialize(NET, 64, 1), train_config(seed=5))
        assert not first.trace.equals(second.trace)

    def test_trace_columns(self, small_oracle):
        trace = train(small_oracle, live_model(), train_config()).trace
        assert list(trace.columns) == ['step', 'L_MSE', 'L_MIDT', 'L_Total', 'midt_w16', 'midt_w32']
        assert trace['step'].tolist() == [1, 2, 3, 4, 5]
        np.testing.assert_allclose(trace['L_MIDT'], (trace['midt_w16'] + trace['midt_w32']) / 2)

    def test_zero_weight_still_logs_midt(self, small_oracle):
        trace = train(small_oracle, live_model(), train_config(midt_weight=0.0)).trace
        assert (trace['L_MIDT'] > 0).all()
        assert (trace['L_Total'] == trace['L_MSE']).all()

    def test_non_finite_loss(self, small_oracle):
        model = live_model()
        model.store['net.in_proj.weight'] = np.full((2, NET.hidden), np.nan)
        with pytest.raises(NonFiniteLossError) as excinfo:
            train(small_oracle, model, train_config())
        assert excinfo.value.step == 1

    def test_masked_tables_stay_fixed(self, small_oracle):
        model = live_model()
        before = {g: model.tables.table(g).copy() for g in ('age', 'gender')}
        train(small_oracle, model, train_config(mask='baseline'))
        np.testing.assert_array_equal(model.tables.table('age'), before['age'])
        np.testing.assert_array_equal(model.tables.table('gender'), before['gender'])
        assert model.mask == ('diagnostic', 'form', 'rhythm')

    def test_loss_halves_in_300_steps(self):
        result = train(
            oracle(), DiffusionModel.initialize(NET, 64, 0),
            TrainConfig(midt=MIDT, steps=300, batch_size=16, learning_rate=3e-3, seed=0),
        )
        totals = result.trace['L_Total']
        assert totals.iloc[-50:].mean() < 0.5 * totals.iloc[:50].mean()

    def test_loss_trace_csv(self, small_oracle, tmp_path):
        trace = train(small_oracle, live_model(), train_config()).trace
        path = DiffusionService.write_loss_trace(trace, tmp_path / 'loss.csv', {'seed': 0})
        assert read_csv_report(path).shape == trace.shape


def _inter_lead_error(signals):
    errors = [abs(np.corrcoef(s[:, 0], s[:, 1])[0, 1] - 1.0) for s in signals]
    return float(np.mean(errors))


class TestSample:
    def test_same_seed_same_samples(self, small_oracle):
        model, sched = live_model(), make_schedule(10)
        metas = small_oracle.metas()[:3]
        np.testing.assert_array_equal(sample(model, metas, sched, seed=3), sample(model, metas, sched, seed=3))

    def test_different_seed(self, small_oracle):
        model, sched = live_model(), make_schedule(10)
        metas = small_oracle.metas()[:3]
        assert not np.array_equal(sample(model, metas, sched, seed=3), sample(model, metas, sched, seed=4))

    @pytest.mark.parametrize('n', [0, 1, 5])
    def test_shape(self, n):
        out = sample(live_model(), np.zeros(160), make_schedule(5), n=n, seed=0)
        assert out.shape == (n, 64, 2)

    def test_vector_batch(self):
        out = sample(live_model(), np.zeros((4, 160)), make_schedule(5), seed=0)
        assert out.shape == (4, 64, 2)
        assert sample(live_model(), np.zeros((4, 160)), make_schedule(5), n=4, seed=0).shape == (4, 64, 2)

    def test_count_disagreeing_with_n(self, small_oracle):
        model, sched = live_model(), make_schedule(5)
        with pytest.raises(TrainingError, match='asked for 5 samples but got 3'):
            sample(model, small_oracle.metas()[:3], sched, n=5)
        with pytest.raises(TrainingError):
            sample(model, np.zeros((4, 160)), sched, n=2)

    def test_synthesize_keeps_metadata(self, small_oracle):
        template = small_oracle.subset(range(5))
        synthetic = DiffusionService.synthesize(live_model(), template, make_schedule(5), seed=1, batch_size=2)
        assert len(synthetic) == 5
        assert synthetic.metas() == template.metas()
        np.testing.assert_array_equal(synthetic.folds(), template.folds())
        assert synthetic.shape == (64, 2)

    @pytest.mark.slow
    def test_training_improves_lead_coherence(self):
        dataset = oracle()
        sched = make_schedule(200)
        metas = dataset.metas()[:16]
        wins = 0
        for seed in range(5):
            untrained = DiffusionModel.initialize(NET, 64, seed)
            baseline = _inter_lead_error(sample(untrained, metas, sched, seed=seed))
            trained = train(
                dataset, DiffusionModel.initialize(NET, 64, seed),
                TrainConfig(midt=MIDT, steps=300, batch_size=16, learning_rate=3e-3, seed=seed),
            ).model
            wins += _inter_lead_error(sample(trained, metas, sched, seed=seed)) < baseline
        assert wins >= 4

    @pytest.mark.slow
    def test_spectral_term_lowers_correlation_error(self):
        dataset = oracle()
        template = dataset.subset(range(32))
        sched = make_schedule(200)
        wins = 0
        for seed in range(5):
            errors = {}
            for weight in (0.0, 0.1):
                cfg = TrainConfig(
                    midt=MIDT, midt_weight=weight, steps=300, batch_size=16, learning_rate=3e-3, seed=seed,
                )
                model = train(dataset, DiffusionModel.initialize(NET, 64, seed), cfg).model
                synth = DiffusionService.synthesize(model, template, sched, seed=seed, batch_size=32)
                errors[weight] = CorrelationReport.build(template, synth).avg_abs_error
            wins += errors[0.1] < errors[0.0]
        assert wins >= 4
