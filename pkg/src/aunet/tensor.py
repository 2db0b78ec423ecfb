"""Reverse-mode automatic differentiation over numpy float64 arrays.

A Tensor wraps an ndarray plus an optional gradient. Operations build a
graph by recording, on each result, the parent tensors that require
gradients and a closure that pushes the result's gradient into them.
``backward()`` runs the closures in reverse topological order. Traversal
order depends only on the order in which operations were applied, so
repeated runs over the same program accumulate gradients in the same
order and produce bit-identical results.
"""

import numpy as np

from .errors import ShapeError, StateError

_grad_enabled = True


def is_grad_enabled():
    return _grad_enabled


class no_grad:
    """Context manager that disables graph construction inside its block."""

    def __enter__(self):
        global _grad_enabled
        self._saved = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, exc_type, exc, tb):
        global _grad_enabled
        _grad_enabled = self._saved
        return False


def _unbroadcast(grad, shape):
    """Reduce ``grad`` back to ``shape`` by summing broadcast axes."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    # make ndarray <op> Tensor defer to the reflected operators here
    # instead of treating the Tensor as an object scalar
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self._parents = ()
        self._backward = None
        self.name = name

    # ---- bookkeeping -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"

    def backward(self):
        if not self.requires_grad:
            raise StateError("backward() called on a tensor that requires no grad")
        if self.data.size != 1:
            raise ShapeError("backward() requires a scalar tensor")

        # Iterative post-order walk. Parents are stored as ordered tuples
        # and visitation is keyed by object identity kept in insertion
        # order, so the schedule is deterministic for a fixed program.
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, emitted = stack.pop()
            if emitted:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # ---- graph construction helper -----------------------------------

    @staticmethod
    def _result(data, parents):
        out = Tensor(data)
        if _grad_enabled:
            live = tuple(p for p in parents if p.requires_grad)
            if live:
                out.requires_grad = True
                out._parents = live
        return out

    # ---- arithmetic --------------------------------------------------

    def __add__(self, other):
        other = _coerce(other)
        out = Tensor._result(self.data + other.data, (self, other))
        if out.requires_grad:
            def _bw():
                if self.requires_grad:
                    self._accum(_unbroadcast(out.grad, self.data.shape))
                if other.requires_grad:
                    other._accum(_unbroadcast(out.grad, other.data.shape))
            out._backward = _bw
        return out

    def __mul__(self, other):
        other = _coerce(other)
        out = Tensor._result(self.data * other.data, (self, other))
        if out.requires_grad:
            def _bw():
                if self.requires_grad:
                    self._accum(_unbroadcast(out.grad * other.data, self.data.shape))
                if other.requires_grad:
                    other._accum(_unbroadcast(out.grad * self.data, other.data.shape))
            out._backward = _bw
        return out

    def __sub__(self, other):
        other = _coerce(other)
        out = Tensor._result(self.data - other.data, (self, other))
        if out.requires_grad:
            def _bw():
                if self.requires_grad:
                    self._accum(_unbroadcast(out.grad, self.data.shape))
                if other.requires_grad:
                    other._accum(_unbroadcast(-out.grad, other.data.shape))
            out._backward = _bw
        return out

    def __truediv__(self, other):
        other = _coerce(other)
        out = Tensor._result(self.data / other.data, (self, other))
        if out.requires_grad:
            def _bw():
                if self.requires_grad:
                    self._accum(_unbroadcast(out.grad / other.data, self.data.shape))
                if other.requires_grad:
                    g = -out.grad * self.data / (other.data * other.data)
                    other._accum(_unbroadcast(g, other.data.shape))
            out._backward = _bw
        return out

    def __neg__(self):
        out = Tensor._result(-self.data, (self,))
        if out.requires_grad:
            def _bw():
                self._accum(-out.grad)
            out._backward = _bw
        return out

    def __radd__(self, other):
        return _coerce(other).__add__(self)

    def __rmul__(self, other):
        return _coerce(other).__mul__(self)

    def __rsub__(self, other):
        return _coerce(other).__sub__(self)

    def __rtruediv__(self, other):
        return _coerce(other).__truediv__(self)

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise ShapeError("only scalar exponents are supported")
        out = Tensor._result(self.data ** p, (self,))
        if out.requires_grad:
            def _bw():
                self._accum(out.grad * p * self.data ** (p - 1))
            out._backward = _bw
        return out

    def __matmul__(self, other):
        other = _coerce(other)
        out = Tensor._result(np.matmul(self.data, other.data), (self, other))
        if out.requires_grad:
            def _bw():
                if self.requires_grad:
                    g = np.matmul(out.grad, np.swapaxes(other.data, -1, -2))
                    self._accum(_unbroadcast(g, self.data.shape))
                if other.requires_grad:
                    g = np.matmul(np.swapaxes(self.data, -1, -2), out.grad)
                    other._accum(_unbroadcast(g, other.data.shape))
            out._backward = _bw
        return out

    # ---- elementwise functions ---------------------------------------

    def exp(self):
        out = Tensor._result(np.exp(self.data), (self,))
        if out.requires_grad:
            def _bw():
                self._accum(out.grad * out.data)
            out._backward = _bw
        return out

    def log(self):
        out = Tensor._result(np.log(self.data), (self,))
        if out.requires_grad:
            def _bw():
                self._accum(out.grad / self.data)
            out._backward = _bw
        return out

    def sigmoid(self):
        x = self.data
        s = np.empty_like(x)
        pos = x >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        s[~pos] = ex / (1.0 + ex)
        out = Tensor._result(s, (self,))
        if out.requires_grad:
            def _bw():
                self._accum(out.grad * out.data * (1.0 - out.data))
            out._backward = _bw
        return out

    def relu(self):
        out = Tensor._result(np.maximum(self.data, 0.0), (self,))
        if out.requires_grad:
            mask = self.data > 0.0
            def _bw():
                self._accum(out.grad * mask)
            out._backward = _bw
        return out

    def clip(self, lo, hi):
        out = Tensor._result(np.clip(self.data, lo, hi), (self,))
        if out.requires_grad:
            mask = (self.data > lo) & (self.data < hi)
            def _bw():
                self._accum(out.grad * mask)
            out._backward = _bw
        return out

    # ---- reductions --------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = Tensor._result(self.data.sum(axis=axis, keepdims=keepdims), (self,))
        if out.requires_grad:
            shape = self.data.shape
            def _bw():
                g = out.grad
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                self._accum(np.broadcast_to(g, shape).copy())
            out._backward = _bw
        return out

    def mean(self, axis=None, keepdims=False):
        out = Tensor._result(self.data.mean(axis=axis, keepdims=keepdims), (self,))
        if out.requires_grad:
            shape = self.data.shape
            count = self.data.size / out.data.size
            def _bw():
                g = out.grad
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                self._accum(np.broadcast_to(g, shape) / count)
            out._backward = _bw
        return out

    # ---- shape manipulation ------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = Tensor._result(self.data.reshape(shape), (self,))
        if out.requires_grad:
            old = self.data.shape
            def _bw():
                self._accum(out.grad.reshape(old))
            out._backward = _bw
        return out

    def swapaxes(self, a, b):
        out = Tensor._result(np.swapaxes(self.data, a, b), (self,))
        if out.requires_grad:
            def _bw():
                self._accum(np.swapaxes(out.grad, a, b))
            out._backward = _bw
        return out

    def __getitem__(self, key):
        _check_basic_index(key)
        out = Tensor._result(self.data[key], (self,))
        if out.requires_grad:
            shape = self.data.shape
            def _bw():
                g = np.zeros(shape)
                g[key] += out.grad
                self._accum(g)
            out._backward = _bw
        return out


def _check_basic_index(key):
    parts = key if isinstance(key, tuple) else (key,)
    for p in parts:
        if not (isinstance(p, (int, slice)) or p is Ellipsis or p is None):
            raise ShapeError("only basic indexing (ints, slices) is differentiable")


def _coerce(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def tensor(data):
    """Wrap ``data`` as a constant tensor."""
    return Tensor(data)


def parameter(data, name=None):
    """Wrap ``data`` as a trainable tensor."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def concat(tensors, axis=0):
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    out = Tensor._result(data, tuple(tensors))
    if out.requires_grad:
        sizes = [t.data.shape[axis] for t in tensors]
        def _bw():
            start = 0
            for t, n in zip(tensors, sizes):
                if t.requires_grad:
                    idx = [slice(None)] * out.grad.ndim
                    idx[axis] = slice(start, start + n)
                    t._accum(out.grad[tuple(idx)])
                start += n
        out._backward = _bw
    return out


def stack(tensors, axis=0):
    expanded = []
    for t in tensors:
        shape = list(t.shape)
        shape.insert(axis if axis >= 0 else t.ndim + 1 + axis, 1)
        expanded.append(t.reshape(shape))
    return concat(expanded, axis=axis)
