# apps/autodiff/tests.py
import numpy as np
import pytest

from apps.autodiff import graph as ad
from apps.autodiff.exceptions import (
    MissingGradientError, NonScalarRootError, NotEvaluatedError, ShapeMismatchError,
    UnboundLeafError,
)
from apps.autodiff.gradcheck import finite_difference_check
from apps.autodiff.graph import ComputeGraph
from apps.autodiff.optim import ParameterStore, optimizer_step
from apps.core.rng import make_rng


def _away_from_kinks(rng, shape, margin=0.1):
    values = rng.uniform(margin, 1.0, size=shape)
    return values * rng.choice([-1.0, 1.0], size=shape)


class TestEvaluate:
    def test_square_identity(self):
        graph = ComputeGraph()
        x = graph.input('x')
        out = graph.evaluate({'x': [3.0]}, root=x * x)
        assert out.tolist() == [9.0]

    def test_identity_matmul(self):
        graph = ComputeGraph()
        a, b = graph.input('A'), graph.input('B')
        out = graph.evaluate({'A': [[1, 2], [3, 4]], 'B': [[1, 0], [0, 1]]}, root=a @ b)
        assert out.tolist() == [[1.0, 2.0], [3.0, 4.0]]

    def test_mean_abs_difference(self):
        graph = ComputeGraph()
        x, y = graph.input('x'), graph.input('y')
        out = ad.evaluate(graph, {'x': [1.0, 0.0], 'y': [0.0, 0.0]}, root=ad.mean(ad.abs_(x - y)))
        assert float(out) == 0.5

    def test_shape_mismatch_names_node(self):
        graph = ComputeGraph()
        a, b = graph.input('a'), graph.input('b')
        product = graph.apply('matmul', a, b, label='bad_product')
        with pytest.raises(ShapeMismatchError) as excinfo:
            graph.evaluate({'a': np.ones((2, 3)), 'b': np.ones((2, 3))}, root=product)
        assert excinfo.value.node == 'bad_product'

    def test_unbound_leaf(self):
        graph = ComputeGraph()
        x = graph.input('x')
        with pytest.raises(UnboundLeafError):
            graph.evaluate({}, root=ad.square(x))

    def test_evaluate_is_deterministic(self):
        rng = make_rng(0)
        bindings = {'x': rng.normal(size=(4, 8)), 'w': rng.normal(size=(8, 3))}

        def run():
            graph = ComputeGraph()
            out = ad.tanh(graph.input('x') @ graph.input('w'))
            return graph.evaluate(bindings, root=ad.sum_(out))

        assert run().tobytes() == run().tobytes()

    def test_mean_times_count_equals_sum_for_integers(self):
        rng = make_rng(1)
        values = rng.integers(-50, 50, size=(8, 4)).astype(float)
        graph = ComputeGraph()
        x = graph.input('x')
        mean_value = graph.evaluate({'x': values}, root=ad.mean(x))
        sum_value = graph.evaluate({'x': values}, root=ad.sum_(x))
        assert float(mean_value) * values.size == float(sum_value)


class TestBackpropagate:
    def test_square_gradient(self):
        graph = ComputeGraph()
        x = graph.input('x')
        graph.evaluate({'x': 3.0}, root=ad.square(x))
        assert float(graph.backpropagate()['x']) == 6.0

    def test_abs_gradient_at_zero_is_zero(self):
        graph = ComputeGraph()
        x, y = graph.input('x'), graph.input('y')
        graph.evaluate({'x': [1.0, 0.0], 'y': [0.0, 0.0]}, root=ad.mean(ad.abs_(x - y)))
        assert graph.backpropagate()['x'].tolist() == [0.5, 0.0]

    def test_log_floor_region_has_zero_gradient(self):
        graph = ComputeGraph()
        x = graph.input('x')
        graph.evaluate({'x': [1e-9, 2.0]}, root=ad.sum_(ad.log(x, floor=1e-5)))
        assert graph.backpropagate()['x'].tolist() == [0.0, 0.5]

    def test_called_before_evaluate(self):
        graph = ComputeGraph()
        graph.set_root(ad.square(graph.input('x')))
        with pytest.raises(NotEvaluatedError):
            graph.backpropagate()

    def test_seed_shape_must_match_root(self):
        graph = ComputeGraph()
        graph.evaluate({'x': [1.0, 2.0]}, root=ad.square(graph.input('x')))
        with pytest.raises(ShapeMismatchError):
            graph.backpropagate(seed=[1.0])

    def test_unused_parameter_gets_zero_gradient(self):
        store = ParameterStore({'used': [2.0], 'unused': [[1.0, 1.0]]})
        graph = ComputeGraph(store)
        graph.parameter('unused')
        graph.evaluate({}, root=ad.sum_(ad.square(graph.parameter('used'))))
        grads = graph.backpropagate()
        assert grads['used'].tolist() == [4.0]
        assert grads['unused'].tolist() == [[0.0, 0.0]]


# One builder per op kind: (build(graph) -> scalar root, make_bindings(rng)).
def _elementwise(op_builder, sampler):
    def build(graph):
        x = graph.input('x')
        weights = graph.input('w')
        return ad.sum_(op_builder(x) * weights)

    def bindings(rng):
        return {'x': sampler(rng, (3, 4)), 'w': rng.normal(size=(3, 4))}

    return build, bindings


def _binary(op):
    def build(graph):
        return ad.sum_(graph.apply(op, graph.input('x'), graph.input('y')) * graph.input('w'))

    def bindings(rng):
        return {'x': rng.normal(size=(2, 3, 4)), 'y': rng.normal(size=(3, 1)),
                'w': rng.normal(size=(2, 3, 4))}

    return build, bindings


OP_CASES = {
    'add': _binary('add'),
    'subtract': _binary('subtract'),
    'multiply': _binary('multiply'),
    'scale': _elementwise(lambda x: ad.scale(x, -2.5), lambda rng, s: rng.normal(size=s)),
    'matmul': (
        lambda g: ad.sum_(ad.tanh(g.input('x') @ g.input('y'))),
        lambda rng: {'x': rng.normal(size=(2, 3, 4)), 'y': rng.normal(size=(4, 5))},
    ),
    'conv1d': (
        lambda g: ad.sum_(ad.conv1d(g.input('x'), g.input('y'), dilation=2) * g.input('w')),
        lambda rng: {'x': rng.normal(size=(2, 3, 9)), 'y': rng.normal(size=(4, 3, 3)),
                     'w': rng.normal(size=(2, 4, 9))},
    ),
    'frame': (
        lambda g: ad.sum_(ad.frame(g.input('x'), window=4, hop=2) * g.input('w')),
        lambda rng: {'x': rng.normal(size=(2, 10)), 'w': rng.normal(size=(2, 4, 4))},
    ),
    'slice': _elementwise(lambda x: x[1:, ::2], lambda rng, s: rng.normal(size=s)),
    'concat': (
        lambda g: ad.sum_(ad.concat([g.input('x'), ad.square(g.input('x'))], axis=1) * g.input('w')),
        lambda rng: {'x': rng.normal(size=(3, 2)), 'w': rng.normal(size=(3, 4))},
    ),
    'relu': _elementwise(ad.relu, _away_from_kinks),
    'tanh': _elementwise(ad.tanh, lambda rng, s: rng.normal(size=s)),
    'softplus': _elementwise(ad.softplus, lambda rng, s: rng.normal(size=s)),
    'log': _elementwise(lambda x: ad.log(x, 1e-5), lambda rng, s: rng.uniform(0.1, 2.0, size=s)),
    'sqrt': _elementwise(ad.sqrt, lambda rng, s: rng.uniform(0.1, 2.0, size=s)),
    'abs': _elementwise(ad.abs_, _away_from_kinks),
    'square': _elementwise(ad.square, lambda rng, s: rng.normal(size=s)),
    'sum': (
        lambda g: ad.sum_(ad.square(ad.sum_(g.input('x'), axis=1))),
        lambda rng: {'x': rng.normal(size=(3, 4))},
    ),
    'mean': (
        lambda g: ad.sum_(ad.square(ad.mean(g.input('x'), axis=(0, 2), keepdims=True))),
        lambda rng: {'x': rng.normal(size=(2, 3, 4))},
    ),
    'transpose': (
        lambda g: ad.sum_(ad.transpose(g.input('x'), (2, 0, 1)) * g.input('w')),
        lambda rng: {'x': rng.normal(size=(2, 3, 4)), 'w': rng.normal(size=(4, 2, 3))},
    ),
    'reshape': (
        lambda g: ad.sum_(ad.reshape(g.input('x'), (6, 2)) * g.input('w')),
        lambda rng: {'x': rng.normal(size=(3, 4)), 'w': rng.normal(size=(6, 2))},
    ),
}


@pytest.mark.parametrize('kind', sorted(OP_CASES))
def test_op_gradients_match_finite_differences(kind):
    build, make_bindings = OP_CASES[kind]
    rng = make_rng(2024, sorted(OP_CASES).index(kind))
    for _ in range(100):
        graph = ComputeGraph()
        graph.evaluate(make_bindings(rng), root=build(graph))
        assert finite_difference_check(graph, 'x', epsilon=1e-6) < 1e-4


class TestFiniteDifferenceCheck:
    def test_smooth_square(self):
        graph = ComputeGraph()
        graph.evaluate({'x': [3.0]}, root=ad.sum_(ad.square(graph.input('x'))))
        assert finite_difference_check(graph, 'x', epsilon=1e-5) < 1e-6

    def test_linear_graph_is_exact(self):
        graph = ComputeGraph()
        x = graph.input('x')
        graph.evaluate({'x': [0.3, -1.2, 2.0]}, root=ad.sum_(ad.scale(x, 4.0)))
        assert finite_difference_check(graph, 'x', epsilon=1e-3) < 1e-9

    def test_parameter_leaf(self):
        store = ParameterStore({'w': [[0.5, -0.25], [1.5, 2.0]]})
        graph = ComputeGraph(store)
        out = ad.sum_(ad.tanh(graph.input('x') @ graph.parameter('w')))
        graph.evaluate({'x': [[1.0, 2.0]]}, root=out)
        assert finite_difference_check(graph, 'w', epsilon=1e-6) < 1e-6
        assert store['w'].tolist() == [[0.5, -0.25], [1.5, 2.0]]

    def test_non_scalar_root(self):
        graph = ComputeGraph()
        graph.evaluate({'x': [1.0, 2.0]}, root=ad.square(graph.input('x')))
        with pytest.raises(NonScalarRootError):
            finite_difference_check(graph, 'x', epsilon=1e-5)


class TestOptimizerStep:
    def test_zero_gradient_leaves_parameters(self):
        store = ParameterStore({'p': [1.0, -2.0]})
        optimizer_step(store, {'p': np.zeros(2)}, lr=0.1)
        assert store['p'].tolist() == [1.0, -2.0]

    def test_first_step_moves_by_learning_rate(self):
        store = ParameterStore({'p': 1.0})
        optimizer_step(store, {'p': 1.0}, lr=0.1, beta1=0.9, beta2=0.999, eps_opt=1e-8)
        assert float(store['p']) == pytest.approx(0.9, abs=1e-7)
        assert store.state('p').step == 1

    def test_missing_gradient(self):
        store = ParameterStore({'p': 1.0, 'q': 2.0})
        with pytest.raises(MissingGradientError):
            optimizer_step(store, {'p': 1.0}, lr=0.1)

    def test_identical_runs_are_bit_identical(self):
        def run():
            rng = make_rng(5)
            store = ParameterStore({'w': rng.normal(size=(3, 2))})
            for _ in range(10):
                graph = ComputeGraph(store)
                root = ad.mean(ad.square(graph.input('x') @ graph.parameter('w')))
                graph.evaluate({'x': rng.normal(size=(4, 3))}, root=root)
                optimizer_step(store, graph.backpropagate(), lr=0.01)
            return store['w']

        assert run().tobytes() == run().tobytes()
