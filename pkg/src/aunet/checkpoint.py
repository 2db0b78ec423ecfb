"""Flat binary checkpoints: config echo, epoch, params, buffers, momenta.

Layout (all integers little-endian):

    magic    8 bytes  b"AUNETCK1"
    version  u32      currently 1
    cfg_len  u32      followed by that many UTF-8 bytes of config JSON
    epoch    u32      completed epochs
    count    u32      number of entries, then per entry:
        kind     u8   0 param, 1 buffer, 2 momentum
        name_len u16  followed by the dotted name in UTF-8
        ndim     u8   followed by ndim u32 dims
        payload  float64 little-endian, C order

Entries are written in model traversal order, so save -> load -> save
reproduces the file byte for byte.
"""

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import StateError

MAGIC = b"AUNETCK1"
VERSION = 1
_KINDS = {"param": 0, "buffer": 1, "momentum": 2}
_KIND_NAMES = {v: k for k, v in _KINDS.items()}


@dataclass
class CheckpointData:
    config_json: str
    epoch: int
    params: dict = field(default_factory=dict)
    buffers: dict = field(default_factory=dict)
    momenta: dict = field(default_factory=dict)

    def group(self, kind):
        return {"param": self.params, "buffer": self.buffers, "momentum": self.momenta}[kind]


def _write_entry(fh, kind, name, arr):
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    name_b = name.encode("utf-8")
    fh.write(struct.pack("<BH", _KINDS[kind], len(name_b)))
    fh.write(name_b)
    fh.write(struct.pack("<B", arr.ndim))
    for d in arr.shape:
        fh.write(struct.pack("<I", d))
    fh.write(arr.astype("<f8").tobytes())


def save_checkpoint(path, model, config_json, epoch, momenta=None):
    params = list(model.named_params())
    buffers = list(model.named_buffers())
    momenta = momenta or {}
    mom_entries = [(name, momenta.get(name, np.zeros_like(t.data))) for name, t in params]
    cfg_b = config_json.encode("utf-8")
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(cfg_b)))
        fh.write(cfg_b)
        fh.write(struct.pack("<I", epoch))
        fh.write(struct.pack("<I", len(params) + len(buffers) + len(mom_entries)))
        for name, t in params:
            _write_entry(fh, "param", name, t.data)
        for name, arr in buffers:
            _write_entry(fh, "buffer", name, arr)
        for name, arr in mom_entries:
            _write_entry(fh, "momentum", name, arr)
    os.replace(tmp, path)


def _read_exact(fh, size, path):
    data = fh.read(size)
    if len(data) != size:
        raise StateError(f"{path}: truncated checkpoint")
    return data


def load_checkpoint(path):
    with open(path, "rb") as fh:
        if _read_exact(fh, 8, path) != MAGIC:
            raise StateError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, path))
        if version != VERSION:
            raise StateError(f"{path}: unsupported checkpoint version {version}")
        (cfg_len,) = struct.unpack("<I", _read_exact(fh, 4, path))
        config_json = _read_exact(fh, cfg_len, path).decode("utf-8")
        (epoch,) = struct.unpack("<I", _read_exact(fh, 4, path))
        (count,) = struct.unpack("<I", _read_exact(fh, 4, path))
        ckpt = CheckpointData(config_json, epoch)
        for _ in range(count):
            kind_code, name_len = struct.unpack("<BH", _read_exact(fh, 3, path))
            if kind_code not in _KIND_NAMES:
                raise StateError(f"{path}: unknown entry kind {kind_code}")
            name = _read_exact(fh, name_len, path).decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1, path))
            shape = tuple(
                struct.unpack("<I", _read_exact(fh, 4, path))[0] for _ in range(ndim)
            )
            size = int(np.prod(shape, dtype=np.int64)) if shape else 1
            arr = np.frombuffer(_read_exact(fh, size * 8, path), dtype="<f8")
            ckpt.group(_KIND_NAMES[kind_code])[name] = (
                arr.astype(np.float64).reshape(shape).copy()
            )
        if fh.read(1):
            raise StateError(f"{path}: trailing bytes after last entry")
    return ckpt


def _copy_into(target, source, name, path_hint):
    if target.shape != source.shape:
        raise StateError(
            f"{path_hint}: shape mismatch for {name}: "
            f"model {target.shape} vs checkpoint {source.shape}"
        )
    target[...] = source


def apply_checkpoint(model, ckpt, path_hint="checkpoint"):
    """Copy params and buffers into the model in place; strict on names."""
    params = dict(model.named_params())
    buffers = dict(model.named_buffers())
    for label, model_side, ckpt_side in (
        ("param", params, ckpt.params),
        ("buffer", buffers, ckpt.buffers),
    ):
        missing = sorted(set(model_side) - set(ckpt_side))
        extra = sorted(set(ckpt_side) - set(model_side))
        if missing or extra:
            raise StateError(
                f"{path_hint}: {label} name mismatch; missing {missing}, unexpected {extra}"
            )
    for name, t in params.items():
        _copy_into(t.data, ckpt.params[name], name, path_hint)
    for name, arr in buffers.items():
        _copy_into(arr, ckpt.buffers[name], name, path_hint)


def apply_backbone(model, ckpt, path_hint="checkpoint"):
    """Warm-start only backbone entries; per-output heads keep fresh init."""
    loaded = 0
    for name, t in model.named_params():
        if name.startswith("backbone.") and name in ckpt.params:
            _copy_into(t.data, ckpt.params[name], name, path_hint)
            loaded += 1
    for name, arr in model.named_buffers():
        if name.startswith("backbone.") and name in ckpt.buffers:
            _copy_into(arr, ckpt.buffers[name], name, path_hint)
            loaded += 1
    if loaded == 0:
        raise StateError(f"{path_hint}: no backbone entries found to warm-start from")
    return loaded
