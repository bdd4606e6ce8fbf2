# apps/autodiff/gradcheck.py
import numpy as np

from apps.autodiff.exceptions import GraphError, NonScalarRootError, NotEvaluatedError
from apps.core.rng import make_rng


def _relative_error(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def finite_difference_check(graph, param_name, epsilon=1e-5, coordinates=None, seed=0):
    """
    Compare backpropagated gradients with central differences.

    ``param_name`` may name a parameter leaf or an input leaf. All coordinates
    are checked unless ``coordinates`` asks for a seeded random subset.
    Returns the maximum relative error, with max(|a|, |b|, 1e-8) as the
    denominator.
    """
    if epsilon <= 0:
        raise GraphError('epsilon must be positive')
    if graph._values is None:
        raise NotEvaluatedError()
    bindings = dict(graph._bindings)
    root_value = graph.value(graph.root)
    if root_value.size != 1:
        raise NonScalarRootError(root_value.shape)

    if param_name in bindings:
        base = np.array(bindings[param_name], dtype=np.float64)
    elif param_name in graph.parameters and graph.store is not None:
        base = np.array(graph.store[param_name], dtype=np.float64)
    else:
        raise GraphError(f"'{param_name}' is not a leaf of this graph")

    analytic = graph.backpropagate()[param_name]

    if coordinates is None or coordinates >= base.size:
        flat_indices = np.arange(base.size)
    else:
        flat_indices = make_rng(seed).choice(base.size, size=coordinates, replace=False)

    worst = 0.0
    for flat in flat_indices:
        shifted = base.copy()
        shifted.flat[flat] = base.flat[flat] + epsilon
        upper = float(graph.evaluate({**bindings, param_name: shifted}).reshape(-1)[0])
        shifted.flat[flat] = base.flat[flat] - epsilon
        lower = float(graph.evaluate({**bindings, param_name: shifted}).reshape(-1)[0])
        numeric = (upper - lower) / (2.0 * epsilon)
        worst = max(worst, _relative_error(float(analytic.flat[flat]), numeric))

    graph.evaluate(bindings)
    return worst
