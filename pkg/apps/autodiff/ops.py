# apps/autodiff/ops.py
"""
Op kinds understood by ComputeGraph.

Each op is a stateless object with ``forward(values, attrs)`` and
``backward(grad, values, out, attrs)``; backward returns one gradient per
input (None for inputs that are not differentiable). Elementwise binary ops
follow numpy broadcasting and sum-reduce gradients over broadcast axes.

Subgradients at kinks are fixed to 0: ``abs`` and ``relu`` at 0, ``sqrt`` at
0, and ``log`` inside its floor region.
"""

import numpy as np

from apps.autodiff.exceptions import ShapeMismatchError

OPS = {}


def register(kind):
    """Class decorator adding an op instance to the registry"""
    def decorator(cls):
        cls.kind = kind
        OPS[kind] = cls()
        return cls
    return decorator


def unbroadcast(grad, shape):
    """Sum-reduce ``grad`` over the axes that were broadcast to reach it"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatchError(f'cannot broadcast {a.shape} with {b.shape}')


class Op:
    arity = 1

    def forward(self, values, attrs):
        raise NotImplementedError

    def backward(self, grad, values, out, attrs):
        raise NotImplementedError


# Elementwise binary

@register('add')
class Add(Op):
    arity = 2

    def forward(self, values, attrs):
        a, b = values
        _broadcast_shape(a, b)
        return a + b

    def backward(self, grad, values, out, attrs):
        a, b = values
        return unbroadcast(grad, a.shape), unbroadcast(grad, b.shape)


@register('subtract')
class Subtract(Op):
    arity = 2

    def forward(self, values, attrs):
        a, b = values
        _broadcast_shape(a, b)
        return a - b

    def backward(self, grad, values, out, attrs):
        a, b = values
        return unbroadcast(grad, a.shape), unbroadcast(-grad, b.shape)


@register('multiply')
class Multiply(Op):
    arity = 2

    def forward(self, values, attrs):
        a, b = values
        _broadcast_shape(a, b)
        return a * b

    def backward(self, grad, values, out, attrs):
        a, b = values
        return unbroadcast(grad * b, a.shape), unbroadcast(grad * a, b.shape)


@register('scale')
class Scale(Op):
    def forward(self, values, attrs):
        return values[0] * attrs['factor']

    def backward(self, grad, values, out, attrs):
        return (grad * attrs['factor'],)


# Linear algebra

@register('matmul')
class MatMul(Op):
    arity = 2

    def forward(self, values, attrs):
        a, b = values
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeMismatchError(f'matmul {a.shape} @ {b.shape}')
        try:
            np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        except ValueError:
            raise ShapeMismatchError(f'matmul batch dims {a.shape} @ {b.shape}')
        return np.matmul(a, b)

    def backward(self, grad, values, out, attrs):
        a, b = values
        grad_a = np.matmul(grad, np.swapaxes(b, -1, -2))
        grad_b = np.matmul(np.swapaxes(a, -1, -2), grad)
        return unbroadcast(grad_a, a.shape), unbroadcast(grad_b, b.shape)


@register('conv1d')
class Conv1d(Op):
    """
    Dilated 1-D convolution with 'same' zero padding.

    x: (batch, in_channels, length), w: (out_channels, in_channels, kernel),
    kernel odd; output (batch, out_channels, length).
    """
    arity = 2

    @staticmethod
    def _columns(x, kernel, dilation):
        pad = dilation * (kernel - 1) // 2
        padded = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
        length = x.shape[-1]
        taps = [padded[:, :, j * dilation:j * dilation + length] for j in range(kernel)]
        return np.stack(taps, axis=2)

    def forward(self, values, attrs):
        x, w = values
        if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1]:
            raise ShapeMismatchError(f'conv1d input {x.shape} with kernel {w.shape}')
        if w.shape[2] % 2 != 1:
            raise ShapeMismatchError(f'conv1d kernel size must be odd, got {w.shape[2]}')
        cols = self._columns(x, w.shape[2], attrs['dilation'])
        return np.einsum('oik,bikl->bol', w, cols)

    def backward(self, grad, values, out, attrs):
        x, w = values
        dilation = attrs['dilation']
        kernel = w.shape[2]
        cols = self._columns(x, kernel, dilation)
        grad_w = np.einsum('bol,bikl->oik', grad, cols)
        grad_cols = np.einsum('bol,oik->bikl', grad, w)
        pad = dilation * (kernel - 1) // 2
        length = x.shape[-1]
        grad_padded = np.zeros(x.shape[:2] + (length + 2 * pad,))
        for j in range(kernel):
            grad_padded[:, :, j * dilation:j * dilation + length] += grad_cols[:, :, j, :]
        return grad_padded[:, :, pad:pad + length], grad_w


# Layout

@register('frame')
class Frame(Op):
    """Split the last axis into overlapping frames: (..., L) -> (..., frames, window)"""

    def forward(self, values, attrs):
        x = values[0]
        window, hop = attrs['window'], attrs['hop']
        length = x.shape[-1]
        if length < window:
            raise ShapeMismatchError(f'frame window {window} longer than signal {length}')
        n_frames = (length - window) // hop + 1
        index = hop * np.arange(n_frames)[:, None] + np.arange(window)[None, :]
        return x[..., index]

    def backward(self, grad, values, out, attrs):
        x = values[0]
        window, hop = attrs['window'], attrs['hop']
        grad_x = np.zeros_like(x)
        for f in range(grad.shape[-2]):
            grad_x[..., f * hop:f * hop + window] += grad[..., f, :]
        return (grad_x,)


@register('slice')
class Slice(Op):
    def forward(self, values, attrs):
        try:
            return values[0][attrs['key']]
        except IndexError as exc:
            raise ShapeMismatchError(f'slice {attrs["key"]!r} of {values[0].shape}: {exc}')

    def backward(self, grad, values, out, attrs):
        grad_x = np.zeros_like(values[0])
        grad_x[attrs['key']] += grad
        return (grad_x,)


@register('concat')
class Concat(Op):
    arity = None

    def forward(self, values, attrs):
        try:
            return np.concatenate(values, axis=attrs['axis'])
        except ValueError as exc:
            shapes = [v.shape for v in values]
            raise ShapeMismatchError(f'concat of {shapes} on axis {attrs["axis"]}: {exc}')

    def backward(self, grad, values, out, attrs):
        axis = attrs['axis']
        bounds = np.cumsum([v.shape[axis] for v in values])[:-1]
        return tuple(np.split(grad, bounds, axis=axis))


@register('transpose')
class Transpose(Op):
    def forward(self, values, attrs):
        axes = attrs['axes']
        if sorted(axes) != list(range(values[0].ndim)):
            raise ShapeMismatchError(f'transpose axes {axes} for shape {values[0].shape}')
        return np.transpose(values[0], axes)

    def backward(self, grad, values, out, attrs):
        return (np.transpose(grad, np.argsort(attrs['axes'])),)


@register('reshape')
class Reshape(Op):
    def forward(self, values, attrs):
        try:
            return np.reshape(values[0], attrs['shape'])
        except ValueError:
            raise ShapeMismatchError(f'reshape {values[0].shape} -> {attrs["shape"]}')

    def backward(self, grad, values, out, attrs):
        return (np.reshape(grad, values[0].shape),)


# Elementwise unary

@register('relu')
class Relu(Op):
    def forward(self, values, attrs):
        return np.maximum(values[0], 0.0)

    def backward(self, grad, values, out, attrs):
        return (grad * (values[0] > 0.0),)


@register('tanh')
class Tanh(Op):
    def forward(self, values, attrs):
        return np.tanh(values[0])

    def backward(self, grad, values, out, attrs):
        return (grad * (1.0 - out * out),)


@register('softplus')
class Softplus(Op):
    def forward(self, values, attrs):
        return np.logaddexp(0.0, values[0])

    def backward(self, grad, values, out, attrs):
        return (grad / (1.0 + np.exp(-values[0])),)


@register('log')
class LogFloor(Op):
    """log(max(u, floor))"""

    def forward(self, values, attrs):
        return np.log(np.maximum(values[0], attrs['floor']))

    def backward(self, grad, values, out, attrs):
        u = values[0]
        live = u > attrs['floor']
        return (np.where(live, grad / np.where(live, u, 1.0), 0.0),)


@register('sqrt')
class Sqrt(Op):
    def forward(self, values, attrs):
        return np.sqrt(np.maximum(values[0], 0.0))

    def backward(self, grad, values, out, attrs):
        live = out > 0.0
        return (np.where(live, grad / (2.0 * np.where(live, out, 1.0)), 0.0),)


@register('abs')
class Abs(Op):
    def forward(self, values, attrs):
        return np.abs(values[0])

    def backward(self, grad, values, out, attrs):
        return (grad * np.sign(values[0]),)


@register('square')
class Square(Op):
    def forward(self, values, attrs):
        return values[0] * values[0]

    def backward(self, grad, values, out, attrs):
        return (2.0 * grad * values[0],)


# Reductions

@register('sum')
class Sum(Op):
    def forward(self, values, attrs):
        return np.sum(values[0], axis=attrs.get('axis'), keepdims=attrs.get('keepdims', False))

    def backward(self, grad, values, out, attrs):
        x = values[0]
        axis = attrs.get('axis')
        if axis is not None and not attrs.get('keepdims', False):
            grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad, x.shape).copy(),)


@register('mean')
class Mean(Op):
    def forward(self, values, attrs):
        return np.mean(values[0], axis=attrs.get('axis'), keepdims=attrs.get('keepdims', False))

    def backward(self, grad, values, out, attrs):
        x = values[0]
        axis = attrs.get('axis')
        if axis is None:
            count = x.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([x.shape[a] for a in axes]))
            if not attrs.get('keepdims', False):
                grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad / count, x.shape).copy(),)
