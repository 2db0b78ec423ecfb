"""SGD training loop with a deterministic epoch schedule.

Per-epoch randomness comes from seed streams derived with fixed tags,
so two runs with the same config and data produce byte-identical
checkpoints and logs: shuffling uses SeedSequence([seed, 7, epoch]) and
augmentation SeedSequence([seed, 11, epoch]).
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from .checkpoint import (apply_backbone, apply_checkpoint, load_checkpoint,
                         save_checkpoint)
from .data import augment_image
from .errors import ShapeError, StateError, TrainingDiverged
from .head import class_weights, detection_loss, total_loss
from .model import AuDetector

# weight decay skips biases, norm affines, and pairwise compatibilities
_DECAY_EXEMPT_SUFFIXES = (".bias", ".gamma", ".beta", ".mu")


def lr_at(config, epoch):
    """Step decay: base_lr * factor ** (epoch // every)."""
    return config.base_lr * config.lr_decay_factor ** (epoch // config.lr_decay_every)


def decay_exempt(name):
    return name.endswith(_DECAY_EXEMPT_SUFFIXES)


class SGD:
    """Momentum SGD: buf = m*buf + grad; theta -= lr*buf."""

    def __init__(self, named_params, momentum, weight_decay):
        self.named_params = list(named_params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.momenta = {
            name: np.zeros_like(t.data) for name, t in self.named_params
        }

    def step(self, lr):
        for name, t in self.named_params:
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            if self.weight_decay and not decay_exempt(name):
                g = g + self.weight_decay * t.data
            buf = self.momenta[name]
            buf *= self.momentum
            buf += g
            t.data -= lr * buf


@dataclass
class TrainResult:
    model: AuDetector
    final_path: str
    log_path: str
    history: list


def train(config, manifest, out_dir, resume=None, init_from=None, log=print):
    """Train on a manifest; writes latest.ckpt each epoch, then final.ckpt.

    resume continues an interrupted run from its latest checkpoint (the
    config must match exactly). init_from warm-starts weights from
    another run's checkpoint: fully when the parameter sets line up,
    otherwise backbone-only (e.g. a different AU count).
    """
    config.validate()
    if manifest.n != config.n:
        raise ShapeError(
            f"manifest has {manifest.n} label columns but config.n={config.n}"
        )
    if len(manifest) == 0:
        raise ShapeError("cannot train on an empty manifest")
    os.makedirs(out_dir, exist_ok=True)

    model = AuDetector(config)
    opt = SGD(model.named_params(), config.momentum, config.weight_decay)
    cfg_json = config.to_json()
    start_epoch = 0

    if init_from is not None:
        ckpt = load_checkpoint(init_from)
        try:
            apply_checkpoint(model, ckpt, path_hint=init_from)
            log(f"warm start: loaded all weights from {init_from}")
        except StateError:
            loaded = apply_backbone(model, ckpt, path_hint=init_from)
            log(f"warm start: loaded {loaded} backbone entries from {init_from}; "
                "per-output heads keep fresh init")
    if resume is not None:
        ckpt = load_checkpoint(resume)
        if ckpt.config_json != cfg_json:
            raise StateError(f"{resume}: config does not match the resumed run")
        apply_checkpoint(model, ckpt, path_hint=resume)
        for name in opt.momenta:
            if name not in ckpt.momenta:
                raise StateError(f"{resume}: missing momentum entry {name}")
            opt.momenta[name][...] = ckpt.momenta[name]
        start_epoch = ckpt.epoch

    weights = class_weights(manifest.labels)
    images = [manifest.load_image(i) for i in range(len(manifest))]
    want = config.l + 2 * config.augmentation.random_crop_margin
    for i, img in enumerate(images):
        if img.shape[0] < want or img.shape[1] < want:
            raise ShapeError(
                f"{manifest.path(i)}: image {img.shape[:2]} smaller than "
                f"l + 2*margin = {want}"
            )

    margin = config.augmentation.random_crop_margin
    flip = config.augmentation.horizontal_flip
    n_img = len(manifest)
    history = []
    model.train()
    latest = os.path.join(out_dir, "latest.ckpt")

    for epoch in range(start_epoch, config.epochs):
        lr = lr_at(config, epoch)
        perm = np.random.default_rng(
            np.random.SeedSequence([config.seed, 7, epoch])
        ).permutation(n_img)
        aug_rng = np.random.default_rng(
            np.random.SeedSequence([config.seed, 11, epoch])
        )
        sums = {"detection": 0.0, "crf": 0.0, "total": 0.0}
        for batch_index, s in enumerate(range(0, n_img, config.batch_size)):
            idx = perm[s:s + config.batch_size]
            batch = np.stack(
                [augment_image(images[i], config.l, margin, flip, aug_rng)
                 for i in idx]
            )
            model.zero_grad()
            out = model.forward(batch)
            det = detection_loss(out.probs, manifest.labels[idx], weights)
            loss = total_loss(det, out.crf_energies, config.crf_loss_weight)
            if not np.isfinite(loss.data):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} batch {batch_index} "
                    f"(rows {idx.tolist()})",
                    epoch=epoch, batch_index=batch_index,
                )
            loss.backward()
            opt.step(lr)
            frac = len(idx) / n_img
            sums["detection"] += float(det.data) * frac
            sums["total"] += float(loss.data) * frac
            if out.crf_energies:
                crf = sum(float(e.data) for e in out.crf_energies)
                sums["crf"] += crf * frac
        history.append({
            "epoch": epoch,
            "lr": lr,
            "loss": sums["total"],
            "detection_loss": sums["detection"],
            "crf_energy": sums["crf"],
        })
        log(f"epoch {epoch}: lr={lr:.6g} loss={sums['total']:.6f} "
            f"det={sums['detection']:.6f} crf={sums['crf']:.6f}")
        save_checkpoint(latest, model, cfg_json, epoch + 1, opt.momenta)

    final = os.path.join(out_dir, "final.ckpt")
    save_checkpoint(final, model, cfg_json, config.epochs, opt.momenta)
    log_path = os.path.join(out_dir, "train_log.json")
    with open(log_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(history, sort_keys=True, indent=2) + "\n")
    return TrainResult(model, final, log_path, history)
