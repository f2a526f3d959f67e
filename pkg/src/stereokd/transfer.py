"""Dual-level selective knowledge transfer around the context blocks.

Per (block, teacher): a one-conv expert produces features in the block's
output geometry, and a heavier three-conv alignment head maps them into the
teacher's space for an MSE distillation loss. A per-block gating conv yields
per-pixel softmax weights over teachers, sparsified by keep_top_k, and the
gated expert features are added onto the residual block output so distilled
knowledge survives into the forward pass.

Modes: "full", "no_selection" (dense uniform gates), "no_distillation"
(fusion kept, alignment dropped), "baseline" (blocks only).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError
from .modules import ResidualUnit
from .tensor import Tensor, interp_bilinear, mse_loss, narrow

MODES = ("full", "baseline", "no_selection", "no_distillation")


def keep_top_k(weights, k):
    """Zero all but the k largest entries along axis 0, ties to the lower index.

    The selection mask is a constant in backward; retained entries keep their
    incoming values (no renormalization).
    """
    n = weights.data.shape[0]
    if not 1 <= k <= n:
        raise ContractError(f"keep_top_k k={k} out of range for {n} teachers")
    if k == n:
        return weights
    mask = top_k_mask(weights.data, k)
    return weights.mul(Tensor(mask, dtype=weights.data.dtype))


def top_k_mask(values, k):
    # stable argsort of the negated values keeps the lower index first on ties
    order = np.argsort(-values, axis=0, kind="stable")[:k]
    mask = np.zeros_like(values)
    np.put_along_axis(mask, order, 1.0, axis=0)
    return mask


def selective_fuse(block_out, expert_feats, gates):
    """block_out + sum_x expert_x * gate_x, gate broadcast across channels."""
    if gates.data.shape[0] != len(expert_feats):
        raise ContractError(
            f"{len(expert_feats)} expert maps but {gates.data.shape[0]} gate channels")
    out = block_out
    for j, e in enumerate(expert_feats):
        if e.data.shape != block_out.data.shape:
            raise DimensionError(
                f"expert feature shape {e.data.shape} does not match block output {block_out.data.shape}")
        if gates.data.shape[1:] != block_out.data.shape[1:]:
            raise DimensionError(
                f"gate map shape {gates.data.shape} does not match block output {block_out.data.shape}")
        out = out.add(e.mul(narrow(gates, 0, j, 1)))
    return out


def multi_kd_loss(per_teacher):
    """Sum of the per-teacher distillation losses of one block."""
    if not per_teacher:
        raise ContractError("multi_kd_loss needs at least one teacher loss")
    total = None
    for loss in per_teacher.values():
        total = loss if total is None else total.add(loss)
    return total


@dataclass
class DlsktOutputs:
    """Per-block auxiliary results of one context forward pass."""

    gate_maps: list = field(default_factory=list)       # Tensor [n_teachers,h,w] per block
    kd_losses: list = field(default_factory=list)       # {kind: scalar Tensor} per block
    expert_feats: list = field(default_factory=list)    # {kind: Tensor} per block

    def block_kd_totals(self):
        return [multi_kd_loss(per) if per else None for per in self.kd_losses]


class _Expert:
    def __init__(self, store, name, c_in, c_out, stride):
        self.conv = store.conv(name, c_in, c_out, 3, stride)

    def __call__(self, f):
        return self.conv(f).channel_norm().relu()

    def param_count(self):
        return self.conv.param_count()


class _Aligner:
    def __init__(self, store, name, c_in, hidden, c_teacher):
        self.conv1 = store.conv(f"{name}.conv1", c_in, hidden, 3, 1)
        self.conv2 = store.conv(f"{name}.conv2", hidden, hidden, 3, 1)
        self.conv3 = store.conv(f"{name}.conv3", hidden, c_teacher, 3, 1)

    def __call__(self, e):
        return self.conv3(self.conv2(self.conv1(e).relu()).relu())

    def param_count(self):
        return sum(c.param_count() for c in (self.conv1, self.conv2, self.conv3))


class ContextNetwork:
    """Left-image encoder: 7x7 stem then three residual blocks with transfer."""

    def __init__(self, store, widths=(32, 32, 48, 64), teacher_kinds=("dino", "sam", "depth_anything"),
                 teacher_channels=16, k=2, mode="full", align_hidden=64):
        if mode not in MODES:
            raise ContractError(f"unknown mode {mode!r}, expected one of {MODES}")
        if not teacher_kinds:
            raise ContractError("at least one teacher kind is required")
        if not 1 <= k <= len(teacher_kinds):
            raise ContractError(f"k={k} out of range for {len(teacher_kinds)} teachers")
        self.mode = mode
        self.k = k
        self.kinds = tuple(teacher_kinds)
        self.widths = tuple(widths)
        self.stem = store.conv("context.stem", 3, widths[0], 7, 1)
        self.blocks = []
        self.experts = []
        self.gates = []
        self.aligners = []
        for i in (1, 2, 3):
            c_in, c_out = widths[i - 1], widths[i]
            stride = 1 if i == 1 else 2
            self.blocks.append((
                ResidualUnit(store, f"context.block{i}.unit1", c_in, c_out, stride),
                ResidualUnit(store, f"context.block{i}.unit2", c_out, c_out, 1)))
            if mode == "baseline":
                continue
            self.experts.append({
                kind: _Expert(store, f"context.block{i}.expert.{kind}", c_in, c_out, stride)
                for kind in self.kinds})
            self.gates.append(store.conv(f"context.block{i}.gate", c_in, len(self.kinds), 3,
                                         stride, zero_bias=True))
            if mode != "no_distillation":
                self.aligners.append({
                    kind: _Aligner(store, f"context.block{i}.align.{kind}", c_out,
                                   align_hidden, teacher_channels)
                    for kind in self.kinds})

    def block_forward(self, i, f):
        unit1, unit2 = self.blocks[i - 1]
        return unit2(unit1(f))

    def gate_weights(self, i, f):
        logits = self.gates[i - 1](f)
        if self.mode == "no_selection":
            n = len(self.kinds)
            uniform = np.full(logits.data.shape, 1.0 / n, dtype=logits.data.dtype)
            return Tensor(uniform, dtype=logits.data.dtype)
        return keep_top_k(logits.softmax(axis=0), self.k)

    def kd_loss(self, i, kind, expert_feat, teacher_feat):
        if teacher_feat.stage != i:
            raise ContractError(
                f"teacher features for stage {teacher_feat.stage} fed to block {i}")
        aligned = self.aligners[i - 1][kind](expert_feat)
        h, w = aligned.data.shape[1], aligned.data.shape[2]
        target = interp_bilinear(teacher_feat.map, h, w)
        return mse_loss(aligned, target)

    def forward(self, image, teacher_lookup=None):
        """Returns (f_3, DlsktOutputs). teacher_lookup(kind, stage) supplies
        the distillation targets; only consulted when distillation is on."""
        f = self.stem(image).channel_norm().relu()
        aux = DlsktOutputs()
        for i in (1, 2, 3):
            b_out = self.block_forward(i, f)
            if self.mode == "baseline":
                f = b_out
                continue
            experts = {kind: self.experts[i - 1][kind](f) for kind in self.kinds}
            gates = self.gate_weights(i, f)
            aux.gate_maps.append(gates)
            aux.expert_feats.append(experts)
            if self.mode != "no_distillation":
                if teacher_lookup is None:
                    raise ContractError("distillation requires a teacher_lookup")
                aux.kd_losses.append({
                    kind: self.kd_loss(i, kind, experts[kind], teacher_lookup(kind, i))
                    for kind in self.kinds})
            else:
                aux.kd_losses.append({})
            f = selective_fuse(b_out, [experts[kind] for kind in self.kinds], gates)
        return f, aux
