"""Fully-connected binary CRF over attention pixels, per AU.

The initial attention map supplies unary potentials (psi_u = -log P0),
and two Gaussian kernels supply dense pairwise potentials: an
appearance kernel K1 over position and color, and a smoothness kernel
K2 over position alone, both with zero diagonal. T parallel mean-field
updates refine the per-pixel marginals; the whole computation is
differentiable, so gradients reach the attention network, the
compatibility matrix, and the kernel weights.

Numerical form of the update: the textbook expression
Q_j(y) proportional to exp(-psi_u_j(y) - phi_j(y)) is computed as
P0_j(y) * exp(-(phi_j(y) - shift_j)) with a per-pixel constant shift
(which cancels in the row normalization). The multiplicative form
avoids the exp(log(p)) round trip, so at zero coupling (phi = 0) the
output reproduces the clamped input probabilities bit for bit; the
shift keeps every exponent non-positive, so overflow is impossible.

Exact companions for testing live here too: the energy of a concrete
assignment, the expectation of that energy under factorized marginals,
and brute-force Gibbs marginals by full enumeration.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import OracleSizeError, ShapeError
from .tensor import Tensor, concat

log = logging.getLogger("aunet.crf")

UNARY_CLAMP = 1e-6


@dataclass
class CrfHyperParams:
    """Kernel weights w1/w2, bandwidths alpha/beta/gamma (alpha and
    gamma in pixels, beta on the [0,1] color scale), iteration count T,
    and optional damping in [0,1) blending each update with the
    previous marginals (0 = undamped). alpha and gamma left as None
    mean "derive from the map side l" (0.2*l and 0.05*l); they must be
    concrete before kernels are built."""
    w1: float = 1.0
    w2: float = 1.0
    alpha: float | None = None
    beta: float = 0.1
    gamma: float | None = None
    T: int = 10
    damping: float = 0.0

    def validate(self):
        for b in (self.alpha, self.beta, self.gamma):
            if b is not None and b <= 0:
                raise ShapeError("kernel bandwidths must be positive")
        for w in (self.w1, self.w2):
            value = float(w.data) if isinstance(w, Tensor) else w
            if value < 0:
                raise ShapeError("kernel weights must be non-negative")
        if self.T < 1:
            raise ShapeError("iteration count must be >= 1")
        if not 0.0 <= self.damping < 1.0:
            raise ShapeError("damping must be in [0,1)")


@dataclass
class KernelMatrices:
    """Dense m x m pairwise kernels; symmetric, zero diagonal, entries in [0,1]."""
    K1: np.ndarray
    K2: np.ndarray


_sqdist_cache = {}
_position_kernel_cache = {}


def _position_sqdist(h, w):
    d = _sqdist_cache.get((h, w))
    if d is None:
        ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        p = np.stack([ys.ravel(), xs.ravel()], axis=1).astype(np.float64)
        d = ((p[:, None, :] - p[None, :, :]) ** 2).sum(axis=2)
        _sqdist_cache[(h, w)] = d
    return d


def _position_kernel(h, w, bandwidth):
    key = (h, w, bandwidth)
    k = _position_kernel_cache.get(key)
    if k is None:
        k = np.exp(-_position_sqdist(h, w) / (2.0 * bandwidth ** 2))
        _position_kernel_cache[key] = k
    return k


def build_kernels(image, hyper):
    """Pairwise kernels for one [H,W,3] image with values in [0,1].

    Positions are taken on the integer pixel grid of the map itself.
    """
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"build_kernels expects [H,W,3], got {image.shape}")
    if hyper.alpha is None or hyper.gamma is None:
        raise ShapeError("kernel bandwidths alpha/gamma must be resolved before use")
    h, w = image.shape[0], image.shape[1]
    colors = image.reshape(-1, 3).astype(np.float64)
    n2 = (colors * colors).sum(axis=1)
    color_sq = n2[:, None] + n2[None, :] - 2.0 * (colors @ colors.T)
    np.maximum(color_sq, 0.0, out=color_sq)  # guard tiny negative roundoff
    k1 = _position_kernel(h, w, hyper.alpha) * np.exp(
        -color_sq / (2.0 * hyper.beta ** 2))
    k2 = _position_kernel(h, w, hyper.gamma).copy()
    np.fill_diagonal(k1, 0.0)
    np.fill_diagonal(k2, 0.0)
    return KernelMatrices(K1=k1, K2=k2)


def combine_kernels(kern, hyper):
    """(W, KU) with W = w1*K1 + w2*K2 and KU its strict upper triangle.

    Constant-path precomputation for training, where w1/w2 are plain
    floats; gradients never flow into these arrays.
    """
    w = hyper.w1 * kern.K1 + hyper.w2 * kern.K2
    return w, np.triu(w, 1)


def _weight(w):
    return float(w.data) if isinstance(w, Tensor) else float(w)


_clamp_warned = False


def _clamp_unary(p1):
    global _clamp_warned
    data = p1.data
    if np.any(data <= 0.0) or np.any(data >= 1.0):
        # warn loudly once; saturated attention logits would otherwise
        # repeat this on every forward pass
        level = logging.DEBUG if _clamp_warned else logging.WARNING
        log.log(level, "unary probabilities at exact 0/1 clamped to [%g, %g]",
                UNARY_CLAMP, 1.0 - UNARY_CLAMP)
        _clamp_warned = True
    return p1.clip(UNARY_CLAMP, 1.0 - UNARY_CLAMP)


def mean_field_batch(p1, W, mu, T, damping=0.0):
    """T parallel mean-field updates for a batch.

    p1: Tensor [B,m] of P0(y=1); W: Tensor [B,m,m] or [m,m], the
    weighted kernel sum (graph-connected if kernel weights are being
    differentiated); mu: Tensor [2,2]. Returns (q, Q, p1c): refined
    P(y=1) [B,m], full marginals [B,m,2], and the clamped unary.
    """
    p1c = _clamp_unary(p1)
    p0c = 1.0 - p1c
    q = p1c
    row_sum = W.sum(axis=-1)  # total incoming kernel mass per pixel
    for _ in range(T):
        m1 = (W @ q.reshape(*q.shape, 1)).reshape(q.shape)
        m0 = row_sum - m1
        phi0 = m0 * mu[0, 0] + m1 * mu[0, 1]
        phi1 = m0 * mu[1, 0] + m1 * mu[1, 1]
        shift = Tensor(np.minimum(phi0.data, phi1.data))
        e0 = (shift - phi0).exp() * p0c
        e1 = (shift - phi1).exp() * p1c
        q_new = e1 / (e0 + e1)
        if damping > 0.0:
            q_new = q_new * (1.0 - damping) + q * damping
        q = q_new
    Q = concat([(1.0 - q).reshape(*q.shape, 1), q.reshape(*q.shape, 1)], axis=-1)
    return q, Q, p1c


def mean_field(v0, kern, mu, hyper):
    """Single-instance front end: v0 Tensor [m] -> marginals Q [m,2]."""
    hyper.validate()
    w1 = hyper.w1 if isinstance(hyper.w1, Tensor) else Tensor(hyper.w1)
    w2 = hyper.w2 if isinstance(hyper.w2, Tensor) else Tensor(hyper.w2)
    if w1.requires_grad or w2.requires_grad:
        W = Tensor(kern.K1) * w1 + Tensor(kern.K2) * w2
    else:
        W = Tensor(w1.data * kern.K1 + w2.data * kern.K2)
    p1 = v0.reshape(1, v0.size)
    _, Q, _ = mean_field_batch(p1, W, mu, hyper.T, hyper.damping)
    return Q.reshape(v0.size, 2)


def expected_energy_batch(Q, p1c, KU, mu):
    """Expected CRF energy per sample: Tensor [B].

    Q: [B,m,2] marginals; p1c: [B,m] clamped unary P0(y=1); KU: [B,m,m]
    or [m,m] strict-upper-triangular weighted kernel; mu: [2,2].
    Pairwise counting is over unordered pairs j<k with mu indexed
    [y_j, y_k], matching the assignment-energy convention.
    """
    lp1 = p1c.log()
    lp0 = (1.0 - p1c).log()
    q = Q[:, :, 1]
    unary = ((q - 1.0) * lp0 - q * lp1).sum(axis=-1)
    s = (Q.swapaxes(-1, -2) @ KU) @ Q  # [B,2,2] label-pair mass over j<k
    pair = (s * mu).sum(axis=-1).sum(axis=-1)
    return unary + pair


def expected_crf_energy(Q, v0, kern, mu, hyper):
    """Spec-shaped scalar: expectation of the assignment energy under Q."""
    p1c = _clamp_unary(v0.reshape(1, v0.size))
    m = v0.size
    w1, w2 = hyper.w1, hyper.w2
    if (isinstance(w1, Tensor) and w1.requires_grad) or (
            isinstance(w2, Tensor) and w2.requires_grad):
        mask = np.triu(np.ones_like(kern.K1), 1)
        w1 = w1 if isinstance(w1, Tensor) else Tensor(w1)
        w2 = w2 if isinstance(w2, Tensor) else Tensor(w2)
        ku = (Tensor(kern.K1 * mask) * w1) + (Tensor(kern.K2 * mask) * w2)
    else:
        ku = Tensor(np.triu(_weight(w1) * kern.K1 + _weight(w2) * kern.K2, 1))
    e = expected_energy_batch(Q.reshape(1, m, 2), p1c, ku, mu)
    return e.reshape(())


def crf_energy(y, v0, kern, mu, hyper):
    """Energy of one binary assignment (plain float, no graph).

    E = sum_j -log P0(y_j) + sum_{j<k} mu[y_j,y_k] * (w1*K1 + w2*K2)[j,k]
    """
    y = np.asarray(y, dtype=np.intp)
    if y.ndim != 1 or not np.all((y == 0) | (y == 1)):
        raise ShapeError("assignment must be a flat 0/1 vector")
    v = np.clip(np.asarray(v0, dtype=np.float64).reshape(-1),
                UNARY_CLAMP, 1.0 - UNARY_CLAMP)
    mu_a = mu.data if isinstance(mu, Tensor) else np.asarray(mu, dtype=np.float64)
    unary = -(np.log(np.where(y == 1, v, 1.0 - v))).sum()
    ku = np.triu(_weight(hyper.w1) * kern.K1 + _weight(hyper.w2) * kern.K2, 1)
    pair = (ku * mu_a[np.ix_(y, y)]).sum()
    return float(unary + pair)


def brute_force_marginals(v0, kern, mu, hyper):
    """Exact Gibbs marginals P(y_j = 1) by enumerating all 2^m assignments."""
    v = np.clip(np.asarray(v0, dtype=np.float64).reshape(-1),
                UNARY_CLAMP, 1.0 - UNARY_CLAMP)
    m = v.size
    if m > 16:
        raise OracleSizeError(f"enumeration limited to m <= 16, got m = {m}")
    mu_a = mu.data if isinstance(mu, Tensor) else np.asarray(mu, dtype=np.float64)
    ku = np.triu(_weight(hyper.w1) * kern.K1 + _weight(hyper.w2) * kern.K2, 1)
    n = 1 << m
    a = ((np.arange(n)[:, None] >> np.arange(m)[None, :]) & 1).astype(np.float64)
    u = 1.0 - a
    e = a @ (-np.log(v)) + u @ (-np.log(1.0 - v))
    pu = u @ ku
    pa = a @ ku
    e += (mu_a[0, 0] * (pu * u).sum(axis=1) + mu_a[0, 1] * (pu * a).sum(axis=1)
          + mu_a[1, 0] * (pa * u).sum(axis=1) + mu_a[1, 1] * (pa * a).sum(axis=1))
    w = np.exp(-(e - e.min()))
    return (w @ a) / w.sum()
