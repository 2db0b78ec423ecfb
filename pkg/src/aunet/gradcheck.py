"""Finite-difference verification of the backward pass.

Central differences with a fixed absolute step. A coordinate is skipped
(not failed) when its two one-sided differences disagree by more than
skip_ratio relatively, which flags both genuine kinks (ReLU, clamps,
max-pool tie switches) and coordinates whose true derivative sits at
the cancellation noise floor eps * |loss| / (2 * step).
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .data import SyntheticSpec, render_synthetic
from .head import class_weights, detection_loss, total_loss
from .model import AuDetector
from .tensor import no_grad


@dataclass
class GroupReport:
    name: str
    checked: int = 0
    skipped: int = 0
    max_rel: float = 0.0
    worst_index: int = -1


@dataclass
class GradCheckReport:
    groups: list = field(default_factory=list)
    loss_value: float = 0.0
    step: float = 0.0
    noise_floor: float = 0.0
    seconds: float = 0.0

    @property
    def max_rel(self):
        return max((g.max_rel for g in self.groups), default=0.0)

    @property
    def total_checked(self):
        return sum(g.checked for g in self.groups)

    @property
    def total_skipped(self):
        return sum(g.skipped for g in self.groups)

    def summary(self):
        lines = [
            f"loss {self.loss_value:.9g}  step {self.step:g}  "
            f"noise floor ~{self.noise_floor:.2g}",
        ]
        for g in self.groups:
            lines.append(
                f"  {g.name}: max rel {g.max_rel:.3e} "
                f"({g.checked} checked, {g.skipped} skipped)"
            )
        lines.append(
            f"max rel err {self.max_rel:.3e} over {self.total_checked} coords "
            f"({self.total_skipped} skipped) in {self.seconds:.1f}s"
        )
        return "\n".join(lines)


def grad_check(loss_fn, named_params, step=1e-5, skip_ratio=0.01,
               max_coords_per_param=None, noise_gate_mult=1e4):
    """Compare analytic grads of loss_fn() against central differences.

    loss_fn must rebuild the graph on every call and be deterministic;
    parameters are perturbed in place and restored exactly. When
    max_coords_per_param is set, larger tensors are probed at that many
    evenly spaced coordinates instead of exhaustively, which keeps the
    whole-model sweep inside a reasonable time budget at two extra
    forward passes per coordinate.

    Coordinates whose derivative magnitude sits within noise_gate_mult
    of the cancellation floor eps * |loss| / (2 * step) are skipped:
    the finite difference there is dominated by rounding of the loss
    itself and cannot certify or refute the analytic value.
    """
    t0 = time.time()
    named_params = list(named_params)
    loss = loss_fn()
    loss.backward()
    center = float(loss.data)
    analytic = {}
    for name, t in named_params:
        analytic[name] = (
            t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
        )
        t.grad = None
    report = GradCheckReport(
        loss_value=center, step=step,
        noise_floor=np.finfo(np.float64).eps * abs(center) / (2 * step),
    )
    noise_gate = report.noise_floor * noise_gate_mult
    with no_grad():
        for name, t in named_params:
            group = GroupReport(name=name)
            flat = t.data.reshape(-1)
            a_flat = analytic[name].reshape(-1)
            if max_coords_per_param and flat.size > max_coords_per_param:
                coords = np.unique(np.linspace(
                    0, flat.size - 1, max_coords_per_param).astype(np.intp))
            else:
                coords = range(flat.size)
            for i in coords:
                orig = flat[i]
                flat[i] = orig + step
                lp = float(loss_fn().data)
                flat[i] = orig - step
                lm = float(loss_fn().data)
                flat[i] = orig
                d_plus = (lp - center) / step
                d_minus = (center - lm) / step
                scale = max(abs(d_plus), abs(d_minus), 1e-8)
                if abs(d_plus - d_minus) / scale > skip_ratio:
                    group.skipped += 1
                    continue
                fd = (lp - lm) / (2 * step)
                if max(abs(a_flat[i]), abs(fd)) < noise_gate:
                    group.skipped += 1
                    continue
                rel = abs(a_flat[i] - fd) / max(abs(a_flat[i]), abs(fd), 1e-8)
                group.checked += 1
                if rel > group.max_rel:
                    group.max_rel = rel
                    group.worst_index = i
            report.groups.append(group)
    report.seconds = time.time() - t0
    return report


def toy_config(**overrides):
    """Small full-pipeline configuration sized for exhaustive checking."""
    base = dict(
        l=16, c=1, n=2, T=2, epochs=1, batch_size=2,
        seed=3, crf_loss_weight=0.01,
    )
    base.update(overrides)
    return RunConfig(**base)


def full_model_check(config=None, step=1e-5, skip_ratio=0.01,
                     max_coords_per_param=64):
    """Grad-check every parameter of a small end-to-end model.

    Every parameter tensor is probed; tensors larger than
    max_coords_per_param are sampled at evenly spaced coordinates.
    """
    config = config or toy_config()
    spec = SyntheticSpec(count=config.batch_size, n=config.n, l=config.l, seed=11)
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed]))
    labels = np.array(
        [rng.integers(0, 2, size=config.n) for _ in range(config.batch_size)]
    )
    images = np.stack(
        [render_synthetic(row, rng, spec) for row in labels]
    )
    weights = class_weights(labels)
    model = AuDetector(config)
    model.train()

    def loss_fn():
        out = model.forward(images)
        det = detection_loss(out.probs, labels, weights)
        return total_loss(det, out.crf_energies, config.crf_loss_weight)

    return grad_check(loss_fn, model.named_params(), step, skip_ratio,
                      max_coords_per_param)
