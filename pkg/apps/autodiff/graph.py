# apps/autodiff/graph.py
"""
Define-by-run compute graphs over float64 numpy arrays.

A graph is built fresh for every evaluation site (one per training step):
leaves are declared with ``graph.input(name)``, ``graph.parameter(name)`` or
``graph.constant(array)``, and every op call appends a node. Because a node
can only reference nodes that already exist, the node list is a topological
order and the graph is acyclic by construction.

    graph = ComputeGraph()
    x = graph.input('x')
    y = graph.input('y')
    loss = mean(abs_(x - y))
    evaluate(graph, {'x': [1.0, 0.0], 'y': [0.0, 0.0]}, root=loss)   # 0.5
    backpropagate(graph)['x']                                           # [0.5, 0.]
"""

import numpy as np

from apps.autodiff.exceptions import (
    GraphError, NotEvaluatedError, ShapeMismatchError, UnboundLeafError,
)
from apps.autodiff.ops import OPS

Tensor = np.ndarray


def as_tensor(value):
    """Coerce a value to a float64 array"""
    return np.asarray(value, dtype=np.float64)


class Node:
    """One value in a ComputeGraph: a leaf or an op applied to earlier nodes"""
    __slots__ = ('graph', 'op', 'inputs', 'attrs', 'label', 'index')
    __array_ufunc__ = None

    def __init__(self, graph, op, inputs, attrs, label, index):
        self.graph = graph
        self.op = op
        self.inputs = inputs
        self.attrs = attrs
        self.label = label
        self.index = index

    def __repr__(self):
        return f'Node({self.label})'

    @property
    def is_leaf(self):
        return self.op in ('input', 'parameter', 'constant')

    def _lift(self, other):
        return other if isinstance(other, Node) else self.graph.constant(other)

    def __add__(self, other):
        return self.graph.apply('add', self, self._lift(other))

    def __radd__(self, other):
        return self.graph.apply('add', self._lift(other), self)

    def __sub__(self, other):
        return self.graph.apply('subtract', self, self._lift(other))

    def __rsub__(self, other):
        return self.graph.apply('subtract', self._lift(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.graph.apply('scale', self, factor=float(other))
        return self.graph.apply('multiply', self, self._lift(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return self.graph.apply('scale', self, factor=-1.0)

    def __matmul__(self, other):
        return self.graph.apply('matmul', self, self._lift(other))

    def __getitem__(self, key):
        return self.graph.apply('slice', self, key=key if isinstance(key, tuple) else (key,))


class ComputeGraph:
    """
    Nodes, input leaves and parameter leaves of one differentiable expression.

    Parameter leaves read their values from ``store`` (a ParameterStore or any
    mapping) unless the bindings passed to ``evaluate`` override them.
    """

    def __init__(self, store=None):
        self.store = store
        self.nodes = []
        self.inputs = {}
        self.parameters = {}
        self.root = None
        self._values = None
        self._bindings = None
        self._needed = None

    # Construction

    def _add(self, op, inputs=(), attrs=None, label=None):
        index = len(self.nodes)
        node = Node(self, op, tuple(inputs), attrs or {}, label or f'{op}#{index}', index)
        self.nodes.append(node)
        return node

    def input(self, name):
        if name in self.inputs:
            return self.inputs[name]
        node = self._add('input', label=name)
        self.inputs[name] = node
        return node

    def parameter(self, name):
        if name in self.parameters:
            return self.parameters[name]
        node = self._add('parameter', label=name)
        self.parameters[name] = node
        return node

    def constant(self, value, label=None):
        return self._add('constant', attrs={'value': as_tensor(value)}, label=label)

    def apply(self, op, *inputs, label=None, **attrs):
        if op not in OPS:
            raise GraphError(f'Unsupported op kind: {op}')
        kind = OPS[op]
        if kind.arity is not None and len(inputs) != kind.arity:
            raise GraphError(f'{op} takes {kind.arity} inputs, got {len(inputs)}')
        for node in inputs:
            if not isinstance(node, Node) or node.graph is not self:
                raise GraphError(f'{op} input does not belong to this graph')
        return self._add(op, inputs, attrs, label)

    def set_root(self, node):
        self.root = node
        return node

    # Execution

    def _ancestors(self, root):
        needed = set()
        stack = [root]
        while stack:
            node = stack.pop()
            if node.index in needed:
                continue
            needed.add(node.index)
            stack.extend(node.inputs)
        return sorted(needed)

    def _leaf_value(self, node, bindings):
        if node.op == 'constant':
            return node.attrs['value']
        if node.label in bindings:
            return as_tensor(bindings[node.label])
        if node.op == 'parameter' and self.store is not None and node.label in self.store:
            return as_tensor(self.store[node.label])
        raise UnboundLeafError(node.label)

    def evaluate(self, bindings=None, root=None):
        """Run the forward pass up to ``root`` and cache every intermediate value"""
        if root is not None:
            self.root = root
        if self.root is None:
            raise GraphError('Graph has no root')
        bindings = dict(bindings or {})
        needed = self._ancestors(self.root)
        values = {}
        for index in needed:
            node = self.nodes[index]
            if node.is_leaf:
                values[index] = self._leaf_value(node, bindings)
                continue
            args = [values[n.index] for n in node.inputs]
            try:
                values[index] = OPS[node.op].forward(args, node.attrs)
            except ShapeMismatchError as exc:
                raise ShapeMismatchError(exc.detail, node=node.label) from None
        self._values = values
        self._bindings = bindings
        self._needed = needed
        return values[self.root.index]

    def value(self, node):
        if self._values is None or node.index not in self._values:
            raise NotEvaluatedError()
        return self._values[node.index]

    def backpropagate(self, seed=None):
        """
        Reverse pass from the root.

        Returns a name -> gradient map holding every parameter leaf of the
        graph (zeros when the root does not depend on it) and every input
        leaf the root depends on.
        """
        if self._values is None:
            raise NotEvaluatedError()
        values = self._values
        root_value = values[self.root.index]
        seed = np.ones_like(root_value) if seed is None else as_tensor(seed)
        if seed.shape != root_value.shape:
            raise ShapeMismatchError(
                f'seed shape {seed.shape} != root shape {root_value.shape}', node=self.root.label,
            )
        grads = {self.root.index: seed}
        for index in reversed(self._needed):
            node = self.nodes[index]
            grad = grads.get(index)
            if grad is None or node.is_leaf:
                continue
            args = [values[n.index] for n in node.inputs]
            partials = OPS[node.op].backward(grad, args, values[index], node.attrs)
            for parent, partial in zip(node.inputs, partials):
                if partial is None or parent.op == 'constant':
                    continue
                if parent.index in grads:
                    grads[parent.index] = grads[parent.index] + partial
                else:
                    grads[parent.index] = partial
        result = {}
        for name, node in self.parameters.items():
            if node.index in grads:
                result[name] = grads[node.index]
            else:
                result[name] = np.zeros_like(self._leaf_value(node, self._bindings))
        for name, node in self.inputs.items():
            if node.index in grads:
                result[name] = grads[node.index]
        return result


def evaluate(graph, bindings=None, root=None):
    return graph.evaluate(bindings, root=root)


def backpropagate(graph, seed=None):
    return graph.backpropagate(seed)


# Functional builders. Each returns a new node in the graph of its first argument.

def matmul(a, b):
    return a.graph.apply('matmul', a, a._lift(b))


def conv1d(x, w, dilation=1):
    return x.graph.apply('conv1d', x, w, dilation=int(dilation))


def frame(x, window, hop):
    return x.graph.apply('frame', x, window=int(window), hop=int(hop))


def concat(nodes, axis=-1):
    nodes = list(nodes)
    return nodes[0].graph.apply('concat', *nodes, axis=axis)


def transpose(x, axes):
    return x.graph.apply('transpose', x, axes=tuple(axes))


def reshape(x, shape):
    return x.graph.apply('reshape', x, shape=tuple(shape))


def relu(x):
    return x.graph.apply('relu', x)


def tanh(x):
    return x.graph.apply('tanh', x)


def softplus(x):
    return x.graph.apply('softplus', x)


def log(x, floor=1e-5):
    return x.graph.apply('log', x, floor=float(floor))


def sqrt(x):
    return x.graph.apply('sqrt', x)


def abs_(x):
    return x.graph.apply('abs', x)


def square(x):
    return x.graph.apply('square', x)


def scale(x, factor):
    return x.graph.apply('scale', x, factor=float(factor))


def sum_(x, axis=None, keepdims=False):
    return x.graph.apply('sum', x, axis=axis, keepdims=keepdims)


def mean(x, axis=None, keepdims=False):
    return x.graph.apply('mean', x, axis=axis, keepdims=keepdims)
