"""Kernel contracts, hand oracles, and native/numpy backend agreement.

The convolution oracle below is an intentionally naive quadruple loop,
independent of both backends.
"""

import numpy as np
import pytest

from aunet.kernels import numpy_backend

try:
    from aunet.kernels import _native as native
except ImportError:  # pragma: no cover - build-env dependent
    native = None

needs_native = pytest.mark.skipif(native is None, reason="native backend not built")


def naive_conv2d(x, w):
    """Stride-1 same-padding conv, channels last, by direct summation."""
    B, H, W, ci = x.shape
    kh, kw, _, co = w.shape
    ph, pw = kh // 2, kw // 2
    y = np.zeros((B, H, W, co))
    for b in range(B):
        for oy in range(H):
            for ox in range(W):
                for fy in range(kh):
                    for fx in range(kw):
                        iy, ix = oy + fy - ph, ox + fx - pw
                        if 0 <= iy < H and 0 <= ix < W:
                            y[b, oy, ox] += x[b, iy, ix] @ w[fy, fx]
    return y


def naive_patch_conv(x, w):
    g = w.shape[0]
    B, H, W, _ = x.shape
    ph, pw = H // g, W // g
    y = np.zeros((B, H, W, w.shape[5]))
    for i in range(g):
        for j in range(g):
            sl = np.s_[:, i * ph:(i + 1) * ph, j * pw:(j + 1) * pw]
            y[sl] = naive_conv2d(x[sl], w[i, j])
    return y


def fd_check_patch_conv(impl_fwd, impl_bwd, shape, g, co, seed):
    """Backward against finite differences on the summed output."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=shape)
    ci = shape[3]
    w = rng.normal(size=(g, g, 3, 3, ci, co)) * 0.3
    gy = rng.normal(size=shape[:3] + (co,))

    gx, gw = impl_bwd(x, w, gy)
    step = 1e-6

    def loss(xx, ww):
        return float((impl_fwd(xx, ww) * gy).sum())

    flat, ref = x.reshape(-1), gx.reshape(-1)
    idx = rng.choice(flat.size, size=min(25, flat.size), replace=False)
    for i in idx:
        orig = flat[i]
        flat[i] = orig + step
        fp = loss(x, w)
        flat[i] = orig - step
        fm = loss(x, w)
        flat[i] = orig
        assert abs((fp - fm) / (2 * step) - ref[i]) < 1e-5 * max(1, abs(ref[i]))

    flat, ref = w.reshape(-1), gw.reshape(-1)
    idx = rng.choice(flat.size, size=min(25, flat.size), replace=False)
    for i in idx:
        orig = flat[i]
        flat[i] = orig + step
        fp = loss(x, w)
        flat[i] = orig - step
        fm = loss(x, w)
        flat[i] = orig
        assert abs((fp - fm) / (2 * step) - ref[i]) < 1e-5 * max(1, abs(ref[i]))


def test_numpy_conv_matches_naive_oracle():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 5, 6, 3))
    w = rng.normal(size=(3, 3, 3, 4))
    got = numpy_backend.conv2d_forward(x, w)
    np.testing.assert_allclose(got, naive_conv2d(x, w), rtol=1e-12, atol=1e-12)


def test_numpy_conv_identity_filter():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(1, 4, 4, 2))
    w = np.zeros((3, 3, 2, 2))
    w[1, 1] = np.eye(2)  # center tap copies channels through
    np.testing.assert_allclose(numpy_backend.conv2d_forward(x, w), x, atol=1e-15)


@pytest.mark.parametrize("g", [1, 2, 4])
def test_numpy_patch_conv_matches_naive(g):
    rng = np.random.default_rng(g)
    x = rng.normal(size=(2, 8, 8, 2))
    w = rng.normal(size=(g, g, 3, 3, 2, 3))
    got = numpy_backend.patch_conv_forward(x, w)
    np.testing.assert_allclose(got, naive_patch_conv(x, w), rtol=1e-12, atol=1e-12)


def test_patch_isolation_no_cross_boundary_flow():
    """Changing pixels in one patch never changes another patch's output."""
    rng = np.random.default_rng(3)
    x = rng.normal(size=(1, 8, 8, 2))
    w = rng.normal(size=(2, 2, 3, 3, 2, 2))
    base = numpy_backend.patch_conv_forward(x, w)
    x2 = x.copy()
    x2[0, 0:4, 0:4, :] += 100.0  # perturb only the top-left patch
    out = numpy_backend.patch_conv_forward(x2, w)
    np.testing.assert_array_equal(out[:, 0:4, 4:8], base[:, 0:4, 4:8])
    np.testing.assert_array_equal(out[:, 4:8, 0:4], base[:, 4:8, 0:4])
    np.testing.assert_array_equal(out[:, 4:8, 4:8], base[:, 4:8, 4:8])
    assert not np.array_equal(out[:, 0:4, 0:4], base[:, 0:4, 0:4])


def test_numpy_patch_conv_backward_fd():
    fd_check_patch_conv(numpy_backend.patch_conv_forward,
                        numpy_backend.patch_conv_backward,
                        (2, 4, 4, 2), g=2, co=3, seed=11)


def test_numpy_conv2d_backward_fd():
    def fwd(x, w):
        return numpy_backend.patch_conv_forward(x, w)

    fd_check_patch_conv(fwd, numpy_backend.patch_conv_backward,
                        (1, 5, 5, 2), g=1, co=2, seed=12)


def test_maxpool_forward_and_tie_semantics():
    x = np.array([[[[1.0], [3.0], [0.0], [0.0]],
                   [[2.0], [0.0], [5.0], [5.0]],
                   [[7.0], [7.0], [1.0], [2.0]],
                   [[7.0], [7.0], [3.0], [4.0]]]])
    y, arg = numpy_backend.maxpool2_forward(x)
    np.testing.assert_array_equal(y[0, :, :, 0], [[3.0, 5.0], [7.0, 4.0]])
    # ties resolve to the first position in (0,0),(0,1),(1,0),(1,1) order
    assert arg[0, 0, 1, 0] == 2  # the 5 at row offset 1, col offset 0
    assert arg[0, 1, 0, 0] == 0  # four-way tie of 7s picks (0,0)
    assert arg[0, 1, 1, 0] == 3


def test_maxpool_backward_routes_to_argmax():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(2, 6, 6, 3))
    y, arg = numpy_backend.maxpool2_forward(x)
    gy = rng.normal(size=y.shape)
    gx = numpy_backend.maxpool2_backward(arg, gy)
    assert gx.shape == x.shape
    # every 2x2 block receives exactly its one incoming gradient
    blocks = gx.reshape(2, 3, 2, 3, 2, 3).swapaxes(2, 3)
    np.testing.assert_allclose(blocks.sum(axis=(3, 4)), gy, atol=1e-15)
    nonzero = (blocks != 0).sum(axis=(3, 4))
    assert np.all(nonzero <= 1)


@needs_native
def test_native_matches_numpy_patch_conv():
    rng = np.random.default_rng(5)
    for g, shape, co in [(1, (2, 6, 6, 3), 4), (2, (1, 8, 8, 2), 2),
                         (4, (2, 8, 8, 1), 3)]:
        x = rng.normal(size=shape)
        w = rng.normal(size=(g, g, 3, 3, shape[3], co))
        a = numpy_backend.patch_conv_forward(x, w)
        b = native.patch_conv_forward(x, w)
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)
        gy = rng.normal(size=a.shape)
        gxa, gwa = numpy_backend.patch_conv_backward(x, w, gy)
        gxb, gwb = native.patch_conv_backward(x, w, gy, True)
        np.testing.assert_allclose(gxa, gxb, rtol=1e-11, atol=1e-11)
        np.testing.assert_allclose(gwa, gwb, rtol=1e-11, atol=1e-11)


@needs_native
def test_native_matches_numpy_maxpool_including_ties():
    rng = np.random.default_rng(6)
    x = rng.integers(0, 3, size=(3, 8, 8, 2)).astype(np.float64)  # many ties
    ya, aa = numpy_backend.maxpool2_forward(x)
    yb, ab = native.maxpool2_forward(x)
    np.testing.assert_array_equal(ya, yb)
    np.testing.assert_array_equal(aa, ab)
    gy = rng.normal(size=ya.shape)
    np.testing.assert_array_equal(
        numpy_backend.maxpool2_backward(aa, gy),
        native.maxpool2_backward(ab, gy))


@needs_native
def test_native_skips_input_gradient_when_not_needed():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(1, 4, 4, 2))
    w = rng.normal(size=(2, 2, 3, 3, 2, 2))
    gy = rng.normal(size=(1, 4, 4, 2))
    gx, gw = native.patch_conv_backward(x, w, gy, False)
    assert gx is None
    _, gw_ref = numpy_backend.patch_conv_backward(x, w, gy, False)
    np.testing.assert_allclose(gw, gw_ref, rtol=1e-11, atol=1e-11)


def test_backend_selection_env(monkeypatch):
    import importlib
    import aunet.kernels as K

    monkeypatch.setenv("AUNET_FORCE_BACKEND", "numpy")
    mod = importlib.reload(K)
    assert mod.BACKEND == "numpy"
    monkeypatch.setenv("AUNET_FORCE_BACKEND", "bogus")
    with pytest.raises(Exception):
        importlib.reload(K)
    monkeypatch.delenv("AUNET_FORCE_BACKEND")
    mod = importlib.reload(K)
    assert mod.BACKEND in ("native", "numpy")
