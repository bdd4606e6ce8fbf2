# apps/autodiff/exceptions.py
from apps.core.exceptions import MidtError


class GraphError(MidtError):
    """Misuse of a ComputeGraph or ParameterStore"""


class ShapeMismatchError(GraphError):
    """Input shapes are incompatible with the node's op kind"""

    def __init__(self, detail, node=None):
        self.detail = detail
        self.node = node
        where = f' at node {node}' if node else ''
        super().__init__(f'Shape mismatch{where}: {detail}', node=node, detail=detail)


class UnboundLeafError(GraphError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"Leaf '{name}' is not bound", name=name)


class NotEvaluatedError(GraphError):
    def __init__(self):
        super().__init__('backpropagate called before evaluate')


class NonScalarRootError(GraphError):
    def __init__(self, shape):
        super().__init__(f'Root must be scalar, got shape {tuple(shape)}', shape=tuple(shape))


class MissingGradientError(GraphError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"No gradient supplied for parameter '{name}'", name=name)
