"""Neural-network building blocks on top of the autodiff tensor.

Modules hold parameters (trainable tensors), buffers (plain arrays such
as batch-norm running statistics), and child modules, all registered in
attribute assignment order so that parameter traversal is deterministic.
Activations are channels-last: [B, H, W, C].
"""

import numpy as np

from . import kernels
from .errors import ShapeError, StateError
from .tensor import Tensor, is_grad_enabled, parameter


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name, array):
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    def named_params(self, prefix=""):
        for name, t in self._params.items():
            yield prefix + name, t
        for name, m in self._modules.items():
            yield from m.named_params(prefix + name + ".")

    def named_buffers(self, prefix=""):
        for name, a in self._buffers.items():
            yield prefix + name, a
        for name, m in self._modules.items():
            yield from m.named_buffers(prefix + name + ".")

    def params(self):
        return [t for _, t in self.named_params()]

    def zero_grad(self):
        for t in self.params():
            t.zero_grad()

    def train(self, flag=True):
        object.__setattr__(self, "training", flag)
        for m in self._modules.values():
            m.train(flag)
        return self

    def eval(self):
        return self.train(False)


class ModuleList(Module):
    def __init__(self, items=()):
        super().__init__()
        self._items = []
        for m in items:
            self.append(m)

    def append(self, m):
        setattr(self, str(len(self._items)), m)
        self._items.append(m)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


def glorot_uniform(rng, shape, fan_in, fan_out):
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape)


# ---- functional ops ---------------------------------------------------

def conv2d(x, w, b=None):
    """Same-padding stride-1 convolution, x [B,H,W,Ci], w [kh,kw,Ci,Co]."""
    if x.ndim != 4 or x.shape[3] != w.shape[2]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with filter {w.shape}")
    y = kernels.conv2d_forward(x.data, w.data)
    if b is not None:
        y += b.data
    parents = (x, w) if b is None else (x, w, b)
    out = Tensor._result(y, parents)
    if out.requires_grad:
        def _bw():
            gx, gw = kernels.conv2d_backward(x.data, w.data, out.grad, x.requires_grad)
            if x.requires_grad:
                x._accum(gx)
            if w.requires_grad:
                w._accum(gw)
            if b is not None and b.requires_grad:
                b._accum(out.grad.sum(axis=(0, 1, 2)))
        out._backward = _bw
    return out


def patch_conv(x, w, b=None):
    """Partitioned convolution: w [g,g,kh,kw,Ci,Co] holds one filter set
    per cell of a g-by-g tiling of the map; each patch is convolved
    independently with zero padding confined to the patch."""
    g = w.shape[0]
    if x.ndim != 4 or x.shape[3] != w.shape[4]:
        raise ShapeError(f"patch_conv: input {x.shape} incompatible with bank {w.shape}")
    if x.shape[1] % g or x.shape[2] % g:
        raise ShapeError(f"patch_conv: spatial {x.shape[1:3]} not divisible by {g}")
    y = kernels.patch_conv_forward(x.data, w.data)
    ph, pw = x.shape[1] // g, x.shape[2] // g
    if b is not None:
        y += np.repeat(np.repeat(b.data, ph, axis=0), pw, axis=1)
    parents = (x, w) if b is None else (x, w, b)
    out = Tensor._result(y, parents)
    if out.requires_grad:
        B = x.shape[0]
        def _bw():
            gx, gw = kernels.patch_conv_backward(x.data, w.data, out.grad, x.requires_grad)
            if x.requires_grad:
                x._accum(gx)
            if w.requires_grad:
                w._accum(gw)
            if b is not None and b.requires_grad:
                gb = out.grad.reshape(B, g, ph, g, pw, -1).sum(axis=(0, 2, 4))
                b._accum(gb)
        out._backward = _bw
    return out


def maxpool2(x):
    if x.ndim != 4 or x.shape[1] % 2 or x.shape[2] % 2:
        raise ShapeError(f"maxpool2 requires even spatial dims, got {x.shape}")
    y, arg = kernels.maxpool2_forward(x.data)
    out = Tensor._result(y, (x,))
    if out.requires_grad:
        def _bw():
            x._accum(kernels.maxpool2_backward(arg, out.grad))
        out._backward = _bw
    return out


def global_avg_pool(x):
    """[B,H,W,C] -> [B,C], spatial mean per channel."""
    return x.mean(axis=(1, 2))


_resize_cache = {}


def _resize_matrix(n_in, n_out):
    """Row-interpolation matrix for bilinear resampling with half-pixel
    centers: source coordinate = (dst + 0.5) * n_in / n_out - 0.5."""
    key = (n_in, n_out)
    m = _resize_cache.get(key)
    if m is None:
        m = np.zeros((n_out, n_in))
        for i in range(n_out):
            src = (i + 0.5) * n_in / n_out - 0.5
            src = min(max(src, 0.0), n_in - 1.0)
            i0 = min(int(np.floor(src)), n_in - 1)
            i1 = min(i0 + 1, n_in - 1)
            t = src - i0
            m[i, i0] += 1.0 - t
            m[i, i1] += t
        _resize_cache[key] = m
    return m


def bilinear_resize(x, out_h, out_w):
    if x.ndim != 4:
        raise ShapeError(f"bilinear_resize expects [B,H,W,C], got {x.shape}")
    R = _resize_matrix(x.shape[1], out_h)
    C = _resize_matrix(x.shape[2], out_w)
    y = np.einsum("oi,pj,bijc->bopc", R, C, x.data, optimize=True)
    out = Tensor._result(y, (x,))
    if out.requires_grad:
        def _bw():
            x._accum(np.einsum("oi,pj,bopc->bijc", R, C, out.grad, optimize=True))
        out._backward = _bw
    return out


# ---- parameterized layers ---------------------------------------------

class Conv2d(Module):
    def __init__(self, cin, cout, rng, k=3):
        super().__init__()
        fan = k * k * cin, k * k * cout
        self.weight = parameter(glorot_uniform(rng, (k, k, cin, cout), *fan))
        self.bias = parameter(np.zeros(cout))

    def __call__(self, x):
        return conv2d(x, self.weight, self.bias)


class PatchConv(Module):
    """Bank of independent same-padding convolutions over a g x g tiling."""

    def __init__(self, g, cin, cout, rng, k=3):
        super().__init__()
        self.g = g
        fan = k * k * cin, k * k * cout
        self.weight = parameter(
            glorot_uniform(rng, (g, g, k, k, cin, cout), *fan))
        self.bias = parameter(np.zeros((g, g, cout)))

    def __call__(self, x):
        return patch_conv(x, self.weight, self.bias)


class Linear(Module):
    def __init__(self, n_in, n_out, rng):
        super().__init__()
        self.weight = parameter(glorot_uniform(rng, (n_in, n_out), n_in, n_out))
        self.bias = parameter(np.zeros(n_out))

    def __call__(self, x):
        if x.shape[-1] != self.weight.shape[0]:
            raise ShapeError(
                f"linear: input {x.shape} incompatible with weight {self.weight.shape}")
        return x @ self.weight + self.bias


class BatchNorm(Module):
    """Per-channel batch normalization over batch and spatial positions.

    Running statistics use an exponential moving average with momentum
    0.9 (90 percent history retained per update) and are only updated
    during a gradient-enabled training-mode forward, so finite-difference
    probing never drifts the state. Normalization uses the biased
    variance estimate.
    """

    def __init__(self, channels, eps=1e-5, momentum=0.9):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.gamma = parameter(np.ones(channels))
        self.beta = parameter(np.zeros(channels))
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    def __call__(self, x):
        if x.ndim != 4 or x.shape[3] != self.gamma.shape[0]:
            raise ShapeError(
                f"batch_norm: input {x.shape} incompatible with {self.gamma.shape[0]} channels")
        if self.training:
            if x.data.shape[0] * x.data.shape[1] * x.data.shape[2] < 2:
                raise StateError("batch_norm training requires a population >= 2")
            mu = x.mean(axis=(0, 1, 2), keepdims=True)
            var = ((x - mu) ** 2).mean(axis=(0, 1, 2), keepdims=True)
            if is_grad_enabled():
                m = self.momentum
                self.running_mean *= m
                self.running_mean += (1.0 - m) * mu.data.reshape(-1)
                self.running_var *= m
                self.running_var += (1.0 - m) * var.data.reshape(-1)
            xhat = (x - mu) * (var + self.eps) ** -0.5
        else:
            rm = self.running_mean.reshape(1, 1, 1, -1)
            rv = self.running_var.reshape(1, 1, 1, -1)
            xhat = (x - rm) * ((rv + self.eps) ** -0.5)
        return xhat * self.gamma + self.beta
