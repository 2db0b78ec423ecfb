"""Per-AU branch: channel attention, spatial attention, and classifier.

The branch consumes the shared backbone features and produces one
occurrence probability. Wiring:

    backbone -> conv1 (+BN+ReLU) -> f1
    f1 -> GAP -> FC -> sigmoid -> v_c          (channel attention vector)
    f1 -> conv2 -> scale by v_c -> BN+ReLU -> f_c
    f_c -> conv3 (+BN+ReLU) -> f3
    f3 -> conv_spatial -> upsample to l x l -> sigmoid -> v0us
    f3 -> conv4 -> scale by v_s -> BN+ReLU -> f_s
    f_s -> conv5 -> GAP -> classifier -> probability

v0us is the initial spatial attention; the refinement that turns it
into the gating map v_s happens outside the branch (see the relation
module), because it needs image-derived kernel matrices. A disabled
attention path degenerates to the identity and its parameters are not
allocated.
"""

from dataclasses import dataclass

import numpy as np

from .layers import BatchNorm, Conv2d, Linear, Module, bilinear_resize, global_avg_pool
from .tensor import parameter


@dataclass
class AttentionBundle:
    """Detached per-AU attention snapshots for inspection and export."""
    v_c: np.ndarray | None      # [B, 12c] channel attention
    v0us: np.ndarray | None     # [B, l, l] initial spatial attention
    v_us: np.ndarray | None     # [B, l, l] refined spatial attention
    v_s: np.ndarray | None      # [B, l/4, l/4] downsampled gating map

    def select(self, b):
        """Bundle for one batch row (arrays drop the leading axis)."""
        pick = lambda a: None if a is None else a[b]
        return AttentionBundle(
            v_c=pick(self.v_c), v0us=pick(self.v0us),
            v_us=pick(self.v_us), v_s=pick(self.v_s),
        )


class AuBranch(Module):
    def __init__(self, c, l, rng, channel_attention=True, spatial_attention=True,
                 learn_compat=False):
        super().__init__()
        width = 12 * c
        self.width = width
        self.l = l
        self.use_channel = channel_attention
        self.use_spatial = spatial_attention
        self.conv1 = Conv2d(8 * c, width, rng)
        self.bn1 = BatchNorm(width)
        if channel_attention:
            self.fc_c = Linear(width, width, rng)
        self.conv2 = Conv2d(width, width, rng)
        self.bn_c = BatchNorm(width)
        self.conv3 = Conv2d(width, width, rng)
        self.bn3 = BatchNorm(width)
        if spatial_attention:
            self.conv_spatial = Conv2d(width, 1, rng)
        self.conv4 = Conv2d(width, width, rng)
        self.bn_s = BatchNorm(width)
        self.conv5 = Conv2d(width, width, rng)
        self.classifier = Linear(width, 1, rng)
        if learn_compat:
            # label compatibility of the relation stage, Potts start
            self.mu = parameter(np.array([[0.0, 1.0], [1.0, 0.0]]))

    def front(self, feat):
        """Backbone features -> (v_c, f3, v0us).

        v_c is None without channel attention; v0us is None without
        spatial attention.
        """
        f1 = self.bn1(self.conv1(feat)).relu()
        v_c = None
        f2 = self.conv2(f1)
        if self.use_channel:
            v_c = self.fc_c(global_avg_pool(f1)).sigmoid()
            f2 = f2 * v_c.reshape(v_c.shape[0], 1, 1, self.width)
        f_c = self.bn_c(f2).relu()
        f3 = self.bn3(self.conv3(f_c)).relu()
        v0us = None
        if self.use_spatial:
            f3s = self.conv_spatial(f3)
            v0us = bilinear_resize(f3s, self.l, self.l).sigmoid()
        return v_c, f3, v0us

    def back(self, f3, v_s):
        """(f3, gating map or None) -> branch probability [B,1]."""
        f4 = self.conv4(f3)
        if v_s is not None:
            f4 = f4 * v_s
        f_s = self.bn_s(f4).relu()
        f_p = global_avg_pool(self.conv5(f_s))
        return self.classifier(f_p).sigmoid()
