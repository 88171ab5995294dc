"""Define-by-run reverse-mode autodiff over float64 numpy arrays.

Every op builds a fresh output node holding its parents and a vector-Jacobian
closure. :func:`backward` linearizes the graph reachable from a scalar loss
into a :class:`GradTape` (topological order) and sweeps it in reverse.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fourier as _fft


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "op")

    def __init__(self, data, requires_grad=False, _parents=(), _vjp=None, op="leaf"):
        arr = np.array(data, dtype=np.float64, copy=True) if op == "leaf" else data
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite values produced by '{op}'")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = _parents
        self._vjp = _vjp
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data.copy()

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __truediv__ = lambda self, other: div(self, other)
    __neg__ = lambda self: neg(self)
    __matmul__ = lambda self, other: matmul(self, other)
    __getitem__ = lambda self, idx: getitem(self, idx)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def tensor(data, requires_grad=False):
    return data if isinstance(data, Tensor) else Tensor(data, requires_grad)


def _make(data, parents, vjp, op):
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, vjp, op)
    return Tensor(data, op=op)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise ---------------------------------------------------------------

def add(a, b):
    a, b = tensor(a), tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b):
    a, b = tensor(a), tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)), "sub")


def mul(a, b):
    a, b = tensor(a), tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b):
    a, b = tensor(a), tensor(b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)), "div")


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def square(a):
    return _make(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,), "square")


def tabs(a):
    return _make(np.abs(a.data), (a,), lambda g: (np.sign(a.data) * g,), "abs")


def exp(a):
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (out * g,), "exp")


def tanh(a):
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: ((1.0 - out * out) * g,), "tanh")


def relu(a):
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a):
    """Tanh-approximated GELU."""
    x = a.data
    x2 = x * x
    th = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))
    out = 0.5 * x * (1.0 + th)

    def vjp(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dinner),)

    return _make(out, (a,), vjp, "gelu")


def identity(a):
    return a


ACTIVATIONS = {"relu": relu, "gelu": gelu, "tanh": tanh, "identity": identity}


# -- linear algebra and shape ---------------------------------------------------

def matmul(a, b):
    """Matrix product with numpy broadcasting over leading axes."""
    a, b = tensor(a), tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul needs operands with at least two axes")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def vjp(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), vjp, "matmul")


def transpose(a, axes=None):
    a = tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def reshape(a, shape):
    a = tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def _is_basic(idx):
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (slice, int, type(None), type(Ellipsis))) for p in parts)


def getitem(a, idx):
    a = tensor(a)
    basic = _is_basic(idx)

    def vjp(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(a.data[idx], (a,), vjp, "getitem")


def tsum(a, axis=None, keepdims=False):
    a = tensor(a)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), vjp, "sum")


def mean(a, axis=None, keepdims=False):
    a = tensor(a)
    count = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / count)


def stack(items, axis=0):
    items = [tensor(t) for t in items]

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(items)))

    return _make(np.stack([t.data for t in items], axis=axis), items, vjp, "stack")


def concat(items, axis=0):
    items = [tensor(t) for t in items]
    bounds = np.cumsum([t.shape[axis] for t in items])[:-1]
    return _make(np.concatenate([t.data for t in items], axis=axis), items,
                 lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


def pad_edge(a, pad, axis):
    """Edge-replicate along ``axis``.

    ``pad`` is either the count appended after the last slice or a
    ``(before, after)`` pair.
    """
    a = tensor(a)
    before, after = (0, pad) if np.isscalar(pad) else (int(pad[0]), int(pad[1]))
    n = a.shape[axis]
    widths = [(0, 0)] * a.ndim
    widths[axis] = (before, after)

    def vjp(g):
        g = np.moveaxis(g, axis, 0)
        head = g[before:before + n].copy()
        head[0] += g[:before].sum(axis=0)
        head[-1] += g[before + n:].sum(axis=0)
        return (np.moveaxis(head, 0, axis),)

    return _make(np.pad(a.data, widths, mode="edge"), (a,), vjp, "pad_edge")


def crop(a, length, axis, start=0):
    """Keep ``length`` entries along ``axis`` beginning at ``start``."""
    sl = [slice(None)] * tensor(a).ndim
    sl[axis] = slice(start, start + length)
    return getitem(a, tuple(sl))


# -- spectral -------------------------------------------------------------------

def spectral_conv1d(q, w_re, w_im):
    """Mode-truncated spectral convolution along axis 1 of ``q`` (B, N, Cin).

    The lowest ``modes`` rFFT coefficients of each input channel are mixed by
    complex weights ``w_re + i w_im`` of shape (Cin, Cout, modes); all higher
    modes are zeroed before the inverse transform. N must be a power of two.
    """
    q, w_re, w_im = tensor(q), tensor(w_re), tensor(w_im)
    b, n, cin = q.shape
    cin_w, cout, modes = w_re.shape
    if cin != cin_w or w_im.shape != w_re.shape:
        raise ValueError("spectral weight shape does not match input channels")
    weights = w_re.data + 1j * w_im.data
    scale = np.full(modes, 2.0 / n)
    scale[0] = 1.0 / n

    x_hat = _fft.rfft_modes(np.transpose(q.data, (0, 2, 1)), modes)   # (B, Cin, m)
    # mode-batched channel mixing: (m, B, Cin) @ (m, Cin, Cout)
    y_hat = np.transpose(np.transpose(x_hat, (2, 0, 1)) @ np.transpose(weights, (2, 0, 1)),
                         (1, 2, 0))
    out = _fft.real_synthesis(y_hat * scale, n)                        # (B, Cout, N)

    def vjp(g):
        g_hat = _fft.rfft_modes(np.transpose(g, (0, 2, 1)), modes) * scale   # (B, Cout, m)
        gy = np.transpose(g_hat, (2, 0, 1))
        gw = np.transpose(np.conj(np.transpose(x_hat, (2, 1, 0))) @ gy, (1, 2, 0))
        gx = gy @ np.conj(np.transpose(weights, (2, 1, 0)))                  # (m, B, Cin)
        gq = _fft.real_synthesis(np.transpose(gx, (1, 2, 0)), n)
        return np.transpose(gq, (0, 2, 1)), gw.real.copy(), gw.imag.copy()

    return _make(np.ascontiguousarray(np.transpose(out, (0, 2, 1))), (q, w_re, w_im),
                 vjp, "spectral_conv1d")


# -- reverse sweep --------------------------------------------------------------

@dataclass
class GradTape:
    """Topologically ordered nodes of one forward pass (inputs before outputs)."""

    nodes: list = field(default_factory=list)

    @classmethod
    def from_output(cls, root):
        order, seen = [], set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(order)


def backward(loss, leaves=None):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf.

    When ``leaves`` is given, their gradients are also returned in order;
    leaves the loss does not depend on get zeros.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {}
    if loss.requires_grad:
        tape = GradTape.from_output(loss)
        grads[id(loss)] = np.ones_like(loss.data)
        for node in reversed(tape.nodes):
            g = grads.pop(id(node), None) if node._vjp is not None else grads.get(id(node))
            if g is None or node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg
        for node in tape.nodes:
            if node._vjp is None and id(node) in grads:
                node.grad = grads[id(node)] if node.grad is None else node.grad + grads[id(node)]
    if leaves is None:
        return None
    return [grads.get(id(t), np.zeros_like(t.data)) for t in leaves]
