"""Shared feature extractor: two partitioned-convolution blocks.

Each block runs an input convolution and then four banks of per-patch
independent convolutions over 8x8, 4x4, 2x2, and 1x1 tilings of the
map. The four bank outputs (each a quarter of the block width) are
concatenated along channels and summed with the input-conv map, giving
features that mix local statistics at several granularities while
remaining sensitive to absolute position. A 2x2 max pool follows each
block, so the backbone maps [l,l,3] to [l/4, l/4, 8c].
"""

import numpy as np

from .errors import ShapeError
from .layers import BatchNorm, Conv2d, Module, ModuleList, PatchConv, maxpool2
from .tensor import concat

PARTITIONS = (8, 4, 2, 1)


def partition_patches(array, k):
    """Tile [H,W,C] into k*k patches, row-major. Returns a list."""
    h, w = array.shape[0], array.shape[1]
    if h % k or w % k:
        raise ShapeError(f"map {array.shape} not divisible into {k}x{k} patches")
    ph, pw = h // k, w // k
    return [
        array[i * ph:(i + 1) * ph, j * pw:(j + 1) * pw]
        for i in range(k) for j in range(k)
    ]


def reassemble_patches(patches, k):
    """Inverse of partition_patches."""
    rows = [np.concatenate(patches[i * k:(i + 1) * k], axis=1) for i in range(k)]
    return np.concatenate(rows, axis=0)


class MultiScaleBlock(Module):
    """input conv -> BN -> ReLU -> four patch banks -> concat -> +residual -> BN -> ReLU"""

    def __init__(self, cin, cb, rng):
        super().__init__()
        if cb % 4:
            raise ShapeError(f"block width {cb} must be divisible by 4")
        self.input_conv = Conv2d(cin, cb, rng)
        self.bn_in = BatchNorm(cb)
        self.banks = ModuleList(
            [PatchConv(g, cb, cb // 4, rng) for g in PARTITIONS])
        self.bn_out = BatchNorm(cb)

    def __call__(self, x):
        if x.shape[1] % 8 or x.shape[2] % 8:
            raise ShapeError(f"block input {x.shape} must have spatial dims divisible by 8")
        base = self.bn_in(self.input_conv(x)).relu()
        parts = [bank(base) for bank in self.banks]
        merged = concat(parts, axis=3) + base
        return self.bn_out(merged).relu()


class Backbone(Module):
    """block1 (3 -> 4c) -> pool -> block2 (4c -> 8c) -> pool."""

    def __init__(self, c, rng):
        super().__init__()
        self.block1 = MultiScaleBlock(3, 4 * c, rng)
        self.block2 = MultiScaleBlock(4 * c, 8 * c, rng)

    def __call__(self, x):
        if x.ndim != 4 or x.shape[3] != 3:
            raise ShapeError(f"backbone expects [B,l,l,3], got {x.shape}")
        if x.shape[1] % 16 or x.shape[1] != x.shape[2]:
            raise ShapeError(f"image side must be square and divisible by 16, got {x.shape}")
        h = maxpool2(self.block1(x))
        return maxpool2(self.block2(h))
