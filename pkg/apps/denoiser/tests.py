# apps/denoiser/tests.py
import numpy as np
import pytest

from apps.autodiff import graph as ad
from apps.autodiff.exceptions import GraphError, ShapeMismatchError
from apps.autodiff.gradcheck import finite_difference_check
from apps.autodiff.graph import ComputeGraph
from apps.conditioning.schema import GroupSchema
from apps.denoiser.network import (
    NetConfig, denoise_forward, denoise_node, init_params, parameter_count, receptive_field,
    step_embedding,
)

SMALL = NetConfig(channels=2, hidden=8, n_blocks=3, dilations=(1, 2, 4), step_embedding_dim=8)


def live_store(cfg=SMALL, seed=0):
    """Initialized parameters with a non-zero output projection"""
    store = init_params(cfg, seed)
    rng = np.random.default_rng(seed + 1)
    store['net.out_proj.weight'] = rng.normal(0.0, 0.5, size=(cfg.hidden, cfg.channels))
    return store


@pytest.fixture
def inputs():
    rng = np.random.default_rng(7)
    return rng.normal(size=(3, 32, SMALL.channels)), np.array([1, 50, 200]), rng.normal(size=(3, 160))


class TestInitParams:
    def test_same_seed_same_params(self):
        first, second = init_params(SMALL, 4), init_params(SMALL, 4)
        assert first.names() == second.names()
        for name in first.names():
            assert first[name].tobytes() == second[name].tobytes()

    def test_different_seed_differs(self):
        first, second = init_params(SMALL, 4), init_params(SMALL, 5)
        assert not np.array_equal(first['net.in_proj.weight'], second['net.in_proj.weight'])

    def test_output_projection_zero(self):
        store = init_params(SMALL, 0)
        assert not store['net.out_proj.weight'].any()
        assert not store['net.out_proj.bias'].any()

    def test_init_scale(self):
        weight = init_params(NetConfig(), 0)['net.block0.gamma.weight']
        assert abs(weight.std() - 0.02) < 0.002

    @pytest.mark.parametrize('cfg', [SMALL, NetConfig(), NetConfig(channels=1, n_blocks=1, hidden=4)])
    def test_parameter_count_closed_form(self, cfg):
        assert init_params(cfg, 0).parameter_count('net.') == parameter_count(cfg)

    def test_default_parameter_count(self):
        # 12 leads, 32 hidden, 4 blocks, 160-dim conditioning
        per_block = (32 * 32 * 3 + 32) + 2 * (160 * 32 + 32) + (32 * 32 + 32)
        expected = (12 * 32 + 32) + (32 * 32 + 32 + 32 * 32 + 32) + 4 * per_block + (32 * 12 + 12)
        assert parameter_count(NetConfig()) == expected

    def test_invalid_config(self):
        with pytest.raises(GraphError):
            init_params(NetConfig(n_blocks=0), 0)
        with pytest.raises(GraphError):
            init_params(NetConfig(kernel_size=4), 0)


def test_receptive_field():
    assert receptive_field(NetConfig()) == (1 + 2 + 4 + 8) * 2 + 1
    assert receptive_field(NetConfig(n_blocks=6)) == (1 + 2 + 4 + 8 + 1 + 2) * 2 + 1


def test_step_embedding():
    embedding = step_embedding([1, 2, 3], 8)
    assert embedding.shape == (3, 8)
    np.testing.assert_allclose(embedding[:, 0], np.sin([1.0, 2.0, 3.0]))
    np.testing.assert_allclose(embedding[:, 4], np.cos([1.0, 2.0, 3.0]))


class TestDenoiseForward:
    def test_untrained_output_is_zero(self, inputs):
        x, t, c = inputs
        eps_hat = denoise_forward(init_params(SMALL, 0), x, t, c, SMALL)
        assert eps_hat.shape == x.shape
        assert not eps_hat.any()

    @pytest.mark.parametrize('length', [1, 7, 32, 100])
    def test_shape_follows_input(self, length):
        x = np.ones((2, length, SMALL.channels))
        assert denoise_forward(live_store(), x, 5, np.zeros(160), SMALL).shape == x.shape

    def test_single_record(self):
        x = np.ones((16, SMALL.channels))
        assert denoise_forward(live_store(), x, 5, np.zeros(160), SMALL).shape == (16, 2)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            denoise_forward(live_store(), np.ones((2, 16, 3)), 5, np.zeros(160), SMALL)

    def test_conditioning_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            denoise_forward(live_store(), np.ones((2, 16, 2)), 5, np.zeros(100), SMALL)

    def test_step_below_one(self):
        with pytest.raises(GraphError):
            denoise_forward(live_store(), np.ones((1, 16, 2)), 0, np.zeros(160), SMALL)

    def test_step_above_schedule(self):
        store = live_store()
        with pytest.raises(GraphError, match='<= 10'):
            denoise_forward(store, np.ones((2, 16, 2)), np.array([3, 11]), np.zeros((2, 160)), SMALL, max_step=10)
        out = denoise_forward(store, np.ones((2, 16, 2)), np.array([3, 10]), np.zeros((2, 160)), SMALL, max_step=10)
        assert out.shape == (2, 16, 2)

    def test_depends_on_step(self, inputs):
        x, _, c = inputs
        store = live_store()
        early = denoise_forward(store, x, 1, c, SMALL)
        late = denoise_forward(store, x, 150, c, SMALL)
        assert np.abs(early - late).max() > 0

    def test_age_segment_changes_output(self, inputs):
        x, t, c = inputs
        store = live_store()
        other = c.copy()
        other[:, GroupSchema().segment('age')] += 1.0
        diff = denoise_forward(store, x, t, c, SMALL) - denoise_forward(store, x, t, other, SMALL)
        assert np.abs(diff).max() > 0


class TestBlockConditioning:
    @staticmethod
    def _silence(store, blocks):
        for k in blocks:
            for part in ('gamma', 'delta'):
                store[f'net.block{k}.{part}.weight'] = np.zeros_like(store[f'net.block{k}.{part}.weight'])

    def test_no_block_reads_c_when_maps_zeroed(self, inputs):
        x, t, c = inputs
        store = live_store()
        self._silence(store, range(SMALL.n_blocks))
        first = denoise_forward(store, x, t, c, SMALL)
        second = denoise_forward(store, x, t, -c, SMALL)
        np.testing.assert_array_equal(first, second)

    @pytest.mark.parametrize('block', range(SMALL.n_blocks))
    def test_each_block_reads_c(self, inputs, block):
        x, t, c = inputs
        store = live_store()
        self._silence(store, [k for k in range(SMALL.n_blocks) if k != block])
        diff = denoise_forward(store, x, t, c, SMALL) - denoise_forward(store, x, t, -c, SMALL)
        assert np.abs(diff).max() > 0


@pytest.mark.parametrize('name', [
    'net.in_proj.weight', 'net.step_mlp.fc1.weight', 'net.block0.conv.weight',
    'net.block2.gamma.weight', 'net.block1.delta.bias', 'net.out_proj.weight',
])
def test_gradients_match_finite_differences(inputs, name):
    x, t, c = inputs
    store = live_store()
    target = np.random.default_rng(3).normal(size=x.shape)
    graph = ComputeGraph(store)
    eps_hat = denoise_node(graph.input('x_t'), t, graph.input('c'), SMALL)
    loss = ad.mean(ad.square(eps_hat - graph.constant(target)))
    graph.evaluate({'x_t': x, 'c': c}, root=loss)
    assert finite_difference_check(graph, name, epsilon=1e-6, coordinates=10, seed=1) < 1e-3
