"""Inference, metric reporting, and attention-map inspection."""

import os

import numpy as np

from .checkpoint import apply_checkpoint, load_checkpoint
from .config import RunConfig
from .data import center_crop
from .errors import ShapeError
from .head import evaluate_metrics
from .imageio import write_pgm
from .model import AuDetector
from .tensor import no_grad


def predict_probs(model, manifest, batch_size=8):
    """Per-output probabilities [N, n] in manifest order, eval mode."""
    if len(manifest) == 0:
        raise ShapeError("cannot evaluate an empty manifest")
    if manifest.n != model.config.n:
        raise ShapeError(
            f"manifest has {manifest.n} label columns but model expects {model.config.n}"
        )
    was_training = model.training
    model.eval()
    out = []
    try:
        with no_grad():
            for s in range(0, len(manifest), batch_size):
                batch = np.stack([
                    center_crop(manifest.load_image(i), model.config.l)
                    for i in range(s, min(s + batch_size, len(manifest)))
                ])
                out.append(model.forward(batch).probs.data.copy())
    finally:
        if was_training:
            model.train()
    return np.concatenate(out, axis=0)


def evaluate_model(model, manifest, threshold=None, batch_size=8):
    probs = predict_probs(model, manifest, batch_size)
    thr = model.config.threshold if threshold is None else threshold
    return evaluate_metrics(probs, manifest.labels, thr)


def load_model(ckpt_path):
    ckpt = load_checkpoint(ckpt_path)
    config = RunConfig.from_json(ckpt.config_json)
    model = AuDetector(config)
    apply_checkpoint(model, ckpt, path_hint=ckpt_path)
    model.eval()
    return model


def attention_bundles(model, manifest, batch_size=8):
    """Per-image attention bundles (one list entry per manifest row)."""
    was_training = model.training
    model.eval()
    bundles = []
    try:
        with no_grad():
            for s in range(0, len(manifest), batch_size):
                batch = np.stack([
                    center_crop(manifest.load_image(i), model.config.l)
                    for i in range(s, min(s + batch_size, len(manifest)))
                ])
                res = model.forward(batch, need_attention=True)
                for b in range(batch.shape[0]):
                    bundles.append([
                        bundle.select(b) for bundle in res.attention
                    ])
    finally:
        if was_training:
            model.train()
    return bundles


def region_mask(region, size):
    """Boolean [size, size] mask of grid cells whose centers fall inside."""
    y0, x0, y1, x1 = region
    centers = (np.arange(size) + 0.5) / size
    inside_y = (centers >= y0) & (centers < y1)
    inside_x = (centers >= x0) & (centers < x1)
    return inside_y[:, None] & inside_x[None, :]


def attention_localization(model, manifest, regions, batch_size=8):
    """Mean refined spatial attention inside vs outside each region.

    Returns [n, 2] with columns (inside_mean, outside_mean), averaged
    over all images in the manifest.
    """
    if len(regions) != model.config.n:
        raise ShapeError(f"need {model.config.n} regions, got {len(regions)}")
    bundles = attention_bundles(model, manifest, batch_size)
    size = model.config.l // 4
    out = np.zeros((model.config.n, 2))
    for k, region in enumerate(regions):
        mask = region_mask(region, size)
        if not mask.any() or mask.all():
            raise ShapeError(f"region {region} covers none or all of the map")
        inside, outside = [], []
        for per_image in bundles:
            v_s = per_image[k].v_s
            if v_s is None:
                raise ShapeError("model has no spatial attention maps")
            inside.append(float(v_s[mask].mean()))
            outside.append(float(v_s[~mask].mean()))
        out[k, 0] = np.mean(inside)
        out[k, 1] = np.mean(outside)
    return out


def export_attention(model, image, out_dir, prefix="au"):
    """Write per-output attention maps as PGM plus channel gates as text."""
    os.makedirs(out_dir, exist_ok=True)
    with no_grad():
        res = model.forward(image[None], need_attention=True)
    paths = []
    for k, bundle in enumerate(res.attention):
        b = bundle.select(0)
        base = os.path.join(out_dir, f"{prefix}{k + 1}")
        if b.v0us is not None:
            write_pgm(base + "_initial.pgm", b.v0us)
        if b.v_us is not None:
            write_pgm(base + "_refined.pgm", b.v_us)
        if b.v_s is not None:
            write_pgm(base + "_gate.pgm", b.v_s)
        if b.v_c is not None:
            with open(base + "_channels.txt", "w", encoding="utf-8",
                      newline="\n") as fh:
                fh.write(" ".join(f"{v:.17g}" for v in b.v_c) + "\n")
        paths.append(base)
    return paths
