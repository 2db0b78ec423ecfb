"""The finite-difference checker itself, on closed-form cases."""

import numpy as np
import pytest

from aunet.gradcheck import grad_check, toy_config
from aunet.tensor import Tensor, parameter


def test_quadratic_grads_verify_cleanly():
    w = parameter(np.array([1.0, -2.0, 0.5]), name="w")
    x = np.array([0.3, 0.7, -0.2])

    def loss():
        return ((w * x) ** 2).sum()

    report = grad_check(loss, [("w", w)], step=1e-5)
    assert report.max_rel < 1e-8
    assert report.total_checked == 3
    assert report.total_skipped == 0
    assert report.loss_value == pytest.approx(float(loss().data))


def test_coordinate_cap_subsamples_large_tensors():
    rng = np.random.default_rng(0)
    w = parameter(rng.normal(size=40), name="w")
    x = rng.normal(size=40)

    def loss():
        return ((w * x) ** 2).sum()

    report = grad_check(loss, [("w", w)], step=1e-5, max_coords_per_param=7)
    assert report.total_checked + report.total_skipped == 7
    assert report.max_rel < 1e-7
    # small tensors are still exhaustive
    full = grad_check(loss, [("w", w)], step=1e-5, max_coords_per_param=40)
    assert full.total_checked + full.total_skipped == 40


def test_wrong_gradient_is_caught():
    w = parameter(np.array([0.4, 0.6]), name="w")

    def bad_loss():
        # autodiff sees only the 3*w term (grad 3), while the constant
        # offset makes the true finite difference track w*w as well
        return (w * 3.0).sum() + float((w.data ** 2).sum())

    bad = grad_check(bad_loss, [("w", w)], step=1e-5)
    assert bad.max_rel > 0.1


def test_kink_coordinates_are_skipped_not_failed():
    w = parameter(np.array([0.5, 1e-9, -0.5]), name="w")

    def loss():
        return w.relu().sum()

    report = grad_check(loss, [("w", w)], step=1e-5, skip_ratio=0.01)
    g = report.groups[0]
    # the near-zero coordinate straddles the ReLU kink inside +-step and
    # the dead coordinate's zero derivative sits below FD resolution;
    # both are reported as skipped rather than compared
    assert g.skipped == 2
    assert g.checked == 1
    assert g.max_rel < 1e-8


def test_parameters_restored_exactly():
    w = parameter(np.array([0.25, -1.5]), name="w")
    before = w.data.copy()

    def loss():
        return (w * w).sum()

    grad_check(loss, [("w", w)], step=1e-4)
    np.testing.assert_array_equal(w.data, before)


def test_report_summary_mentions_groups():
    w = parameter(np.array([1.0]), name="layer.weight")

    def loss():
        return (w * w).sum()

    report = grad_check(loss, [("layer.weight", w)])
    text = report.summary()
    assert "layer.weight" in text
    assert "max rel err" in text


def test_toy_config_is_small_and_valid():
    cfg = toy_config()
    cfg.validate()
    assert cfg.l == 16 and cfg.c == 1 and cfg.n == 2 and cfg.T == 2
    assert cfg.batch_size == 2
    over = toy_config(T=1)
    assert over.T == 1
