"""Stereo network: shared feature encoder, correlation pyramid with lookup,
GRU refinement, and the full iterative forward pass.

The correlation volume follows vol[y,x,z] = <c_left(:,y,x), c_right(:,y,x-z)>
scaled by 1/sqrt(C_f), with out-of-frame matches set to zero; three
disparity-axis poolings give a 4-level pyramid. Each GRU step looks the
pyramid up around the current (detached) disparity, updates a hidden state
at quarter resolution, and emits a residual disparity step; every iterate is
upsampled to a full-resolution prediction.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .modules import ResidualUnit
from .tensor import (Tensor, avg_pool_last, concat, corr_lookup_level, correlation,
                     interp_bilinear)
from .transfer import ContextNetwork

PYRAMID_LEVELS = 4


@dataclass
class FeaturePair:
    c_left: Tensor
    c_right: Tensor


@dataclass
class CorrelationPyramid:
    levels: list  # 4 tensors [H/4, W/4, ceil(D/2^j)]


class FeatureNetwork:
    """Shared-weight encoder to quarter resolution: 7x7/2 stem, two residual
    units, 3x3/2 conv, two residual units, 1x1 projection."""

    def __init__(self, store, widths=(32, 48), out_channels=64):
        w0, w1 = widths
        self.stem = store.conv("feature.stem", 3, w0, 7, 2)
        self.unit1 = ResidualUnit(store, "feature.unit1", w0, w0, 1)
        self.unit2 = ResidualUnit(store, "feature.unit2", w0, w0, 1)
        self.down = store.conv("feature.down", w0, w1, 3, 2)
        self.unit3 = ResidualUnit(store, "feature.unit3", w1, w1, 1)
        self.unit4 = ResidualUnit(store, "feature.unit4", w1, w1, 1)
        self.proj = store.conv("feature.proj", w1, out_channels, 1, 1, padding=0)
        self.out_channels = out_channels

    def __call__(self, image):
        h, w = image.data.shape[1], image.data.shape[2]
        if h % 4 or w % 4:
            raise ContractError(f"feature network needs H,W divisible by 4, got {h}x{w}")
        f = self.stem(image).channel_norm().relu()
        f = self.unit2(self.unit1(f))
        f = self.down(f).channel_norm().relu()
        f = self.unit4(self.unit3(f))
        return self.proj(f)


def feature_pair(net, sample):
    return FeaturePair(net(sample.left), net(sample.right))


def build_corr(pair, max_disp):
    c_f = pair.c_left.data.shape[0]
    if max_disp > pair.c_left.data.shape[2]:
        raise ContractError(
            f"max_disp {max_disp} exceeds feature width {pair.c_left.data.shape[2]}")
    vol = correlation(pair.c_left, pair.c_right, max_disp, 1.0 / float(np.sqrt(c_f)))
    levels = [vol]
    for _ in range(PYRAMID_LEVELS - 1):
        levels.append(avg_pool_last(levels[-1]))
    return CorrelationPyramid(levels)


def corr_lookup(pyr, disparity, radius):
    """Concatenated per-level samples around the current disparity estimate.

    Sampling positions are constants: disparity enters as plain values and
    gradients flow only into the volume."""
    if radius < 1:
        raise ContractError(f"lookup radius must be >= 1, got {radius}")
    d = disparity.data[0] if disparity.data.ndim == 3 else disparity.data
    feats = []
    for j, level in enumerate(pyr.levels):
        feats.append(corr_lookup_level(level, d, radius, 1.0 / float(2 ** j)))
    return concat(feats, axis=0)


@dataclass
class GruState:
    hidden: Tensor
    context_inject: Tensor
    disparity: Tensor


class StereoModel:
    """Feature net + context net with selective transfer + ConvGRU updater."""

    def __init__(self, store, feat_widths=(32, 48), feat_channels=64,
                 context_widths=(32, 32, 48, 64), hidden_channels=64,
                 motion_channels=64, head_channels=32, max_disp=16, radius=4,
                 teacher_kinds=("dino", "sam", "depth_anything"), teacher_channels=16,
                 k=2, mode="full", align_hidden=64):
        self.features = FeatureNetwork(store, feat_widths, feat_channels)
        self.context = ContextNetwork(store, context_widths, teacher_kinds,
                                      teacher_channels, k, mode, align_hidden)
        self.max_disp = max_disp
        self.radius = radius
        ch = hidden_channels
        corr_ch = PYRAMID_LEVELS * (2 * radius + 1)
        self.proj_hidden = store.conv("gru.proj_hidden", context_widths[3], ch, 1, 1, padding=0)
        self.proj_inject = store.conv("gru.proj_inject", context_widths[3], ch, 1, 1, padding=0)
        self.motion1 = store.conv("gru.motion1", corr_ch + 1, motion_channels, 3, 1)
        self.motion2 = store.conv("gru.motion2", motion_channels, motion_channels, 3, 1)
        x_ch = motion_channels + ch
        self.convz = store.conv("gru.convz", ch + x_ch, ch, 3, 1)
        self.convr = store.conv("gru.convr", ch + x_ch, ch, 3, 1)
        self.convq = store.conv("gru.convq", ch + x_ch, ch, 3, 1)
        self.head1 = store.conv("gru.head1", ch, head_channels, 3, 1)
        self.head2 = store.conv("gru.head2", head_channels, 1, 3, 1)

    def init_state(self, f3):
        return GruState(hidden=self.proj_hidden(f3).tanh(),
                        context_inject=self.proj_inject(f3).relu(),
                        disparity=Tensor(np.zeros((1,) + f3.data.shape[1:], dtype=f3.data.dtype)))

    def gru_update(self, state, corr_feat, pyr=None):
        """One refinement step; returns (new state, delta)."""
        d_const = state.disparity.detach()
        m = self.motion1(concat([corr_feat, d_const], axis=0)).relu()
        m = self.motion2(m).relu()
        x = concat([m, state.context_inject], axis=0)
        h = state.hidden
        hx = concat([h, x], axis=0)
        z = self.convz(hx).sigmoid()
        r = self.convr(hx).sigmoid()
        q = self.convq(concat([r.mul(h), x], axis=0)).tanh()
        h_new = z.scale(-1.0, 1.0).mul(h).add(z.mul(q))
        delta = self.head2(self.head1(h_new).relu())
        new_disp = d_const.add(delta).relu()
        return GruState(h_new, state.context_inject, new_disp), delta

    def forward(self, sample, teacher_lookup=None, iters=8):
        if iters < 1:
            raise ContractError(f"iters must be >= 1, got {iters}")
        h, w = sample.gt_disparity.data.shape
        pair = feature_pair(self.features, sample)
        pyr = build_corr(pair, self.max_disp)
        f3, aux = self.context.forward(sample.left, teacher_lookup)
        state = self.init_state(f3)
        preds = []
        for _ in range(iters):
            corr_feat = corr_lookup(pyr, state.disparity.detach(), self.radius)
            state, _ = self.gru_update(state, corr_feat)
            preds.append(upsample_disparity(state.disparity, h, w))
        return preds, aux


def upsample_disparity(d_quarter, out_h, out_w):
    """Bilinear x4 resize with the matching x4 value scale."""
    up = interp_bilinear(d_quarter, out_h, out_w).scale(4.0)
    return up.reshape((out_h, out_w))
