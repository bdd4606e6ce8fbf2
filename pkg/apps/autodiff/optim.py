# apps/autodiff/optim.py
from dataclasses import dataclass

import numpy as np

from apps.autodiff.exceptions import GraphError, MissingGradientError, ShapeMismatchError


@dataclass
class MomentState:
    """Adaptive-moment state of one parameter"""
    first: np.ndarray
    second: np.ndarray
    step: int = 0


class ParameterStore:
    """Named trainable tensors plus their optimizer state"""

    def __init__(self, params=None):
        self._params = {}
        self._state = {}
        for name, value in (params or {}).items():
            self.add(name, value)

    def add(self, name, value):
        if name in self._params:
            raise GraphError(f"Parameter '{name}' already exists")
        value = np.array(value, dtype=np.float64)
        self._params[name] = value
        self._state[name] = MomentState(np.zeros_like(value), np.zeros_like(value))
        return value

    def __getitem__(self, name):
        return self._params[name]

    def __setitem__(self, name, value):
        value = np.array(value, dtype=np.float64)
        if name not in self._params:
            self.add(name, value)
            return
        if value.shape != self._params[name].shape:
            raise ShapeMismatchError(
                f'{name}: new shape {value.shape} != {self._params[name].shape}', node=name,
            )
        self._params[name] = value

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def state(self, name):
        return self._state[name]

    def snapshot(self):
        """Read-only copy of the current values, safe to share across threads"""
        return {name: value.copy() for name, value in self._params.items()}

    def parameter_count(self, prefix=''):
        return int(sum(v.size for k, v in self._params.items() if k.startswith(prefix)))

    def complete(self, grads):
        """Return ``grads`` with zero entries for parameters it does not mention"""
        full = {name: np.zeros_like(value) for name, value in self._params.items()}
        full.update({name: grads[name] for name in grads if name in self._params})
        return full


def optimizer_step(store, grads, lr, beta1=0.9, beta2=0.999, eps_opt=1e-8):
    """
    Bias-corrected adaptive-moment (Adam) update, applied in place.

    ``grads`` must be keyed identically to ``store``.
    """
    for name in store.names():
        if name not in grads:
            raise MissingGradientError(name)
    extra = set(grads) - set(store.names())
    if extra:
        raise GraphError(f'Gradients for unknown parameters: {sorted(extra)}')

    for name in store.names():
        param = store[name]
        grad = np.asarray(grads[name], dtype=np.float64)
        if grad.shape != param.shape:
            raise ShapeMismatchError(f'{name}: gradient {grad.shape} != {param.shape}', node=name)
        state = store.state(name)
        state.step += 1
        state.first = beta1 * state.first + (1.0 - beta1) * grad
        state.second = beta2 * state.second + (1.0 - beta2) * grad * grad
        first_hat = state.first / (1.0 - beta1 ** state.step)
        second_hat = state.second / (1.0 - beta2 ** state.step)
        param -= lr * first_hat / (np.sqrt(second_hat) + eps_opt)
    return store
