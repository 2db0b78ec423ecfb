"""Loss, class weighting, and metric oracles."""

import json
import logging

import numpy as np
import pytest

from aunet.errors import ShapeError
from aunet.head import (class_weights, detection_loss, evaluate_metrics,
                        total_loss)
from aunet.tensor import Tensor, parameter


# ---- class weights ---------------------------------------------------


def test_class_weights_hand_values():
    labels = np.array([[1, 0], [1, 1], [0, 0], [0, 0]])  # rates 0.5, 0.25
    w = class_weights(labels)
    np.testing.assert_allclose(w, [2.0 / 3.0, 4.0 / 3.0], rtol=1e-15)


def test_class_weights_average_to_one():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 2, (50, 7))
    w = class_weights(labels)
    assert w.mean() == pytest.approx(1.0, rel=1e-12)
    # rarer AUs must weigh more
    rates = labels.mean(axis=0)
    order = np.argsort(rates)
    assert np.all(np.diff(w[order]) <= 1e-12)


def test_class_weights_floor_absent_au(caplog):
    labels = np.zeros((8, 2))
    labels[:4, 0] = 1
    with caplog.at_level(logging.WARNING, logger="aunet.head"):
        w = class_weights(labels)
    assert any("never occur" in r.message for r in caplog.records)
    # floored rate 1/16 against rate 1/2: inverse ratio 8
    assert w[1] / w[0] == pytest.approx(8.0, rel=1e-12)


def test_class_weights_shape_errors():
    with pytest.raises(ShapeError):
        class_weights(np.zeros(5))
    with pytest.raises(ShapeError):
        class_weights(np.zeros((0, 3)))


# ---- detection loss --------------------------------------------------


def test_detection_loss_hand_value():
    probs = Tensor(np.array([[0.9, 0.2], [0.3, 0.7]]))
    labels = np.array([[1.0, 0.0], [0.0, 1.0]])
    w = np.array([1.0, 2.0])
    expect = -0.5 * (
        (np.log(0.9) * 1.0 + np.log(0.8) * 2.0)
        + (np.log(0.7) * 1.0 + np.log(0.7) * 2.0)
    )
    got = detection_loss(probs, labels, w)
    assert float(got.data) == pytest.approx(expect, rel=1e-14)


def test_detection_loss_gradient_matches_fd():
    rng = np.random.default_rng(1)
    p0 = rng.uniform(0.1, 0.9, (3, 2))
    labels = rng.integers(0, 2, (3, 2)).astype(float)
    w = np.array([0.7, 1.3])

    p = parameter(p0.copy())
    detection_loss(p, labels, w).backward()
    step = 1e-7
    for idx in np.ndindex(3, 2):
        pp = p0.copy(); pp[idx] += step
        pm = p0.copy(); pm[idx] -= step
        fd = (float(detection_loss(Tensor(pp), labels, w).data)
              - float(detection_loss(Tensor(pm), labels, w).data)) / (2 * step)
        assert p.grad[idx] == pytest.approx(fd, rel=1e-6)


def test_detection_loss_is_finite_at_saturated_probs():
    probs = Tensor(np.array([[0.0, 1.0]]))
    labels = np.array([[1.0, 0.0]])
    loss = detection_loss(probs, labels, np.ones(2))
    assert np.isfinite(loss.data)
    # clamp at 1e-7 bounds each mismatch term by -log(1e-7)
    assert float(loss.data) <= 2 * -np.log(1e-7) + 1e-9


def test_detection_loss_shape_mismatch():
    with pytest.raises(ShapeError):
        detection_loss(Tensor(np.zeros((2, 3))), np.zeros((2, 2)), np.ones(3))


def test_total_loss_weighted_sum():
    det = Tensor(np.array(1.5))
    terms = [Tensor(np.array(10.0)), Tensor(np.array(-4.0))]
    out = total_loss(det, terms, crf_loss_weight=0.1)
    assert float(out.data) == pytest.approx(1.5 + 0.1 * 6.0, rel=1e-15)
    assert float(total_loss(det, [], 0.1).data) == 1.5


# ---- metrics ---------------------------------------------------------


def test_metrics_fixed_confusion_counts():
    # one AU with TP=2, FP=1, FN=1, TN=6 over 10 samples
    labels = np.array([1, 1, 1, 0, 0, 0, 0, 0, 0, 0]).reshape(10, 1)
    probs = np.array([0.9, 0.8, 0.1, 0.7, 0.2, 0.2, 0.1, 0.1, 0.3, 0.0]).reshape(10, 1)
    rep = evaluate_metrics(probs, labels, threshold=0.5)
    assert rep.tp[0] == 2 and rep.fp[0] == 1 and rep.fn[0] == 1 and rep.tn[0] == 6
    assert rep.f1[0] == 2.0 / 3.0
    assert rep.accuracy[0] == 0.8


def test_f1_equals_precision_when_precision_equals_recall():
    rng = np.random.default_rng(2)
    for _ in range(20):
        n = int(rng.integers(4, 30))
        labels = rng.integers(0, 2, (n, 1))
        probs = rng.uniform(0, 1, (n, 1))
        rep = evaluate_metrics(probs, labels)
        tp, fp, fn = rep.tp[0], rep.fp[0], rep.fn[0]
        if tp + fp == 0 or tp + fn == 0:
            continue
        p = tp / (tp + fp)
        r = tp / (tp + fn)
        if p == r:
            assert rep.f1[0] == pytest.approx(p, rel=1e-14)


def test_f1_zero_when_no_positives_anywhere():
    rep = evaluate_metrics(np.full((4, 2), 0.1), np.zeros((4, 2)))
    np.testing.assert_array_equal(rep.f1, 0.0)
    np.testing.assert_array_equal(rep.accuracy, 1.0)


def test_threshold_is_inclusive():
    rep = evaluate_metrics(np.array([[0.5]]), np.array([[1]]), threshold=0.5)
    assert rep.tp[0] == 1


def test_metrics_validation_errors():
    with pytest.raises(ShapeError):
        evaluate_metrics(np.zeros((0, 2)), np.zeros((0, 2)))
    with pytest.raises(ShapeError):
        evaluate_metrics(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        evaluate_metrics(np.zeros((2, 2)), np.zeros((2, 2)), threshold=0.0)
    with pytest.raises(ShapeError):
        evaluate_metrics(np.zeros((2, 2)), np.zeros((2, 2)), threshold=1.0)


def test_report_json_round_trip_and_ordering():
    rng = np.random.default_rng(3)
    rep = evaluate_metrics(rng.uniform(0, 1, (6, 2)), rng.integers(0, 2, (6, 2)))
    text = rep.to_json()
    assert text.endswith("\n")
    data = json.loads(text)
    assert data["avg_f1"] == rep.avg_f1
    assert len(data["per_au"]) == 2
    assert text == json.dumps(data, sort_keys=True, indent=2) + "\n"
