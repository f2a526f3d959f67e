"""Finite-difference verification of every backward closure.

Each check builds a scalar loss twice: once through the graph for analytic
gradients, then element by element with central differences.  All checks run
in float64, and inputs for kinked ops (relu, abs, the L1 loss) are drawn with
a margin around the kink so the numeric probe never crosses it.
"""

import zlib
from dataclasses import dataclass

import numpy as np

from .datagen import gen_rds, random_scene
from .errors import ContractError
from .modules import ParamStore
from .stereo import GruState, StereoModel, build_corr, corr_lookup, feature_pair
from .teachers import make_providers
from .tensor import (Tensor, avg_pool2, avg_pool_last, concat, conv2d,
                     corr_lookup_level, correlation, interp_bilinear, l1_loss,
                     mse_loss, narrow, no_grad)
from .transfer import ContextNetwork

EPS = 1e-4
PRIMITIVE_TOL = 1e-4
COMPOSITE_TOL = 1e-3
# hard top-k selection is piecewise constant, so the composite probes use a
# smaller step that stays inside one selection region
COMPOSITE_EPS = 1e-5


@dataclass
class GradCheckReport:
    name: str
    tol: float
    max_rel_err: float
    n_checked: int
    worst_leaf: str = ""
    worst_index: int = -1
    analytic: float = 0.0
    numeric: float = 0.0

    @property
    def ok(self):
        # <= keeps a NaN error from sneaking through as a pass
        return bool(self.max_rel_err <= self.tol)

    def line(self):
        tag = "PASS" if self.ok else "FAIL"
        return (f"{tag}  {self.name:<18} max_rel_err={self.max_rel_err:.3e}  "
                f"tol={self.tol:.0e}  n={self.n_checked}")


def grad_check(name, build_fn, leaves, tol=PRIMITIVE_TOL, eps=EPS):
    """Compares analytic gradients of a scalar against central differences.

    leaves is a list of (label, tensor) pairs; every tensor must be float64
    and require grad.  build_fn() must rebuild the same scalar from the
    current leaf data on every call, since each evaluation perturbs it in
    place; anything random inside it has to be frozen beforehand.
    """
    for label, t in leaves:
        if t.data.dtype != np.float64:
            raise ContractError(f"grad check needs float64 leaves, {label} is {t.data.dtype}")
        if not t.requires_grad:
            raise ContractError(f"grad check leaf {label} does not require grad")
        t.grad = None
    out = build_fn()
    if out.data.shape != ():
        raise ContractError(f"grad check target must be scalar, got shape {out.data.shape}")
    out.backward()
    analytic = {}
    for label, t in leaves:
        analytic[label] = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        t.grad = None
    report = GradCheckReport(name=name, tol=tol, max_rel_err=0.0, n_checked=0)
    with no_grad():
        for label, t in leaves:
            flat = t.data.reshape(-1)
            aflat = analytic[label].reshape(-1)
            for j in range(flat.size):
                keep = flat[j]
                flat[j] = keep + eps
                hi = float(build_fn().data)
                flat[j] = keep - eps
                lo = float(build_fn().data)
                flat[j] = keep
                num = (hi - lo) / (2.0 * eps)
                a = float(aflat[j])
                rel = abs(a - num) / max(abs(a), abs(num), 1e-8)
                if not np.isfinite(rel):
                    rel = float("inf")
                report.n_checked += 1
                if rel > report.max_rel_err:
                    report.max_rel_err = rel
                    report.worst_leaf = label
                    report.worst_index = j
                    report.analytic = a
                    report.numeric = num
    return report


def _rng(seed, label):
    return np.random.default_rng(
        np.random.SeedSequence((int(seed), zlib.crc32(label.encode("ascii")))))


def _leaf(rng, shape):
    return Tensor(rng.uniform(-1.0, 1.0, size=shape), requires_grad=True)


def _kink_free_leaf(rng, shape, margin=0.25):
    mag = rng.uniform(margin, 1.0, size=shape)
    sign = np.where(rng.random(size=shape) < 0.5, -1.0, 1.0)
    return Tensor(mag * sign, requires_grad=True)


def _weighted_check(name, raw, leaves, rng, tol=PRIMITIVE_TOL):
    """Checks raw() through a frozen random weighted sum to vary the grads."""
    with no_grad():
        shape = raw().data.shape
    c = Tensor(rng.uniform(-1.0, 1.0, size=shape))
    return grad_check(name, lambda: raw().mul(c).sum(), leaves, tol=tol)


def _unary(name, op, seed, margin=0.0, shape=(3, 4, 5)):
    rng = _rng(seed, name)
    x = _kink_free_leaf(rng, shape, margin) if margin else _leaf(rng, shape)
    return _weighted_check(name, lambda: op(x), [("x", x)], rng)


def _check_binary(name, op, seed):
    rng = _rng(seed, name)
    x, y = _leaf(rng, (3, 4)), _leaf(rng, (3, 4))
    return _weighted_check(name, lambda: op(x, y), [("x", x), ("y", y)], rng)


def _check_mul_gate(seed):
    rng = _rng(seed, "mul_gate")
    x = _leaf(rng, (3, 4, 5))
    g = _leaf(rng, (1, 4, 5))
    return _weighted_check("mul_gate", lambda: x.mul(g), [("x", x), ("gate", g)], rng)


def _check_sum(seed):
    rng = _rng(seed, "sum")
    x = _leaf(rng, (3, 4))
    return grad_check("sum", lambda: x.sum(), [("x", x)])


def _check_reshape(seed):
    rng = _rng(seed, "reshape")
    x = _leaf(rng, (3, 4))
    return _weighted_check("reshape", lambda: x.reshape((2, 6)), [("x", x)], rng)


def _check_narrow(seed):
    rng = _rng(seed, "narrow")
    x = _leaf(rng, (4, 5, 3))
    return _weighted_check("narrow", lambda: narrow(x, 0, 1, 2), [("x", x)], rng)


def _check_concat(seed):
    rng = _rng(seed, "concat")
    x, y = _leaf(rng, (2, 3, 4)), _leaf(rng, (3, 3, 4))
    return _weighted_check("concat", lambda: concat([x, y], axis=0),
                           [("x", x), ("y", y)], rng)


def _check_conv(name, seed, x_shape, w_shape, stride, padding, with_bias):
    rng = _rng(seed, name)
    x = _leaf(rng, x_shape)
    w = _leaf(rng, w_shape)
    b = _leaf(rng, (w_shape[0],)) if with_bias else None
    leaves = [("x", x), ("w", w)] + ([("b", b)] if with_bias else [])
    return _weighted_check(name, lambda: conv2d(x, w, b, stride, padding), leaves, rng)


def _check_pool(name, fn, seed, shape):
    rng = _rng(seed, name)
    x = _leaf(rng, shape)
    return _weighted_check(name, lambda: fn(x), [("x", x)], rng)


def _check_interp(name, seed, in_shape, out_hw):
    rng = _rng(seed, name)
    x = _leaf(rng, in_shape)
    return _weighted_check(name, lambda: interp_bilinear(x, *out_hw), [("x", x)], rng)


def _check_correlation(seed):
    rng = _rng(seed, "correlation")
    cl, cr = _leaf(rng, (3, 4, 6)), _leaf(rng, (3, 4, 6))
    scale = 1.0 / np.sqrt(3.0)
    return _weighted_check("correlation", lambda: correlation(cl, cr, 3, scale),
                           [("c_left", cl), ("c_right", cr)], rng)


def _check_corr_lookup(seed):
    rng = _rng(seed, "corr_lookup")
    vol = _leaf(rng, (4, 6, 5))
    # taps stay inside the volume and off the integer knots
    disp = rng.uniform(2.3, 3.4, size=(4, 6))
    return _weighted_check("corr_lookup", lambda: corr_lookup_level(vol, disp, 1, 0.5),
                           [("vol", vol)], rng)


def _check_loss(name, fn, seed, margin):
    rng = _rng(seed, name)
    target = Tensor(rng.uniform(-1.0, 1.0, size=(5, 6)))
    off = _kink_free_leaf(rng, (5, 6), margin) if margin else _leaf(rng, (5, 6))
    pred = Tensor(target.data + off.data, requires_grad=True)
    mask_arr = (rng.random((5, 6)) < 0.7).astype(np.float64)
    mask_arr.flat[0] = 1.0
    mask = Tensor(mask_arr)
    return grad_check(name, lambda: fn(pred, target, mask), [("pred", pred)])


def _tiny_sample(seed):
    return gen_rds(random_scene(seed, 8, 8, density=0.5, d_max=2, n_layers=(1, 2)))


def _cached_lookup(sample, kinds, seed, channels):
    providers = make_providers(kinds, seed, channels)
    cache = {(k, s): providers[k].stage_features(sample, s)
             for k in kinds for s in (1, 2, 3)}
    return lambda kind, stage: cache[(kind, stage)]


def _check_dlskt_block(seed):
    """Composite: stem + residual blocks + experts, gates, and aligners."""
    store = ParamStore(seed=int(seed) + 11, dtype=np.float64)
    kinds = ("dino", "sam")
    net = ContextNetwork(store, widths=(2, 2, 3, 3), teacher_kinds=kinds,
                         teacher_channels=4, k=1, mode="full", align_hidden=3)
    sample = _tiny_sample(int(seed) + 3)
    lookup = _cached_lookup(sample, kinds, int(seed) + 5, 4)
    image = Tensor(np.asarray(sample.left.data, dtype=np.float64))
    rng = _rng(seed, "dlskt_block")
    c3 = Tensor(rng.uniform(-1.0, 1.0, size=(3, 2, 2)))
    leaves = [(n, store.params[n]) for n in (
        "context.block1.unit1.conv1.weight",
        "context.block2.expert.dino.weight",
        "context.block3.gate.weight",
        "context.block1.align.sam.conv2.weight",
        "context.block2.gate.bias")]

    def build():
        f3, aux = net.forward(image, lookup)
        out = f3.mul(c3).sum()
        for t in aux.block_kd_totals():
            out = out.add(t)
        return out

    return grad_check("dlskt_block", build, leaves, tol=COMPOSITE_TOL, eps=COMPOSITE_EPS)


def _check_gru_cell(seed):
    """Composite: one ConvGRU refinement on real features and a pinned state.

    A single update keeps the lookup positions constant, so every perturbed
    path stays differentiable; later iterations would move the taps through
    the detached disparity, which the backward pass ignores on purpose.
    """
    store = ParamStore(seed=int(seed) + 23, dtype=np.float64)
    kinds = ("dino",)
    model = StereoModel(store, feat_widths=(2, 3), feat_channels=3,
                        context_widths=(2, 2, 3, 3), hidden_channels=2,
                        motion_channels=2, head_channels=2, max_disp=2, radius=1,
                        teacher_kinds=kinds, teacher_channels=4, k=1,
                        mode="no_distillation")
    sample = _tiny_sample(int(seed) + 7)
    lookup = _cached_lookup(sample, kinds, int(seed) + 9, 4)
    rng = _rng(seed, "gru_cell")
    d0 = Tensor(rng.uniform(0.55, 1.45, size=(1, 2, 2)))
    c_d = Tensor(rng.uniform(-1.0, 1.0, size=(1, 2, 2)))
    c_h = Tensor(rng.uniform(-1.0, 1.0, size=(2, 2, 2)))
    leaves = [(n, store.params[n]) for n in (
        "feature.proj.weight",
        "gru.proj_hidden.weight",
        "gru.proj_inject.weight",
        "gru.convz.weight",
        "gru.convr.weight",
        "gru.convq.weight",
        "gru.head1.weight",
        "gru.head2.weight",
        "gru.motion2.weight")]

    def build():
        pair = feature_pair(model.features, sample)
        pyr = build_corr(pair, model.max_disp)
        f3, _ = model.context.forward(sample.left, lookup)
        init = model.init_state(f3)
        state = GruState(init.hidden, init.context_inject, d0)
        corr_feat = corr_lookup(pyr, state.disparity.detach(), model.radius)
        new_state, _ = model.gru_update(state, corr_feat)
        return new_state.disparity.mul(c_d).sum().add(new_state.hidden.mul(c_h).sum())

    return grad_check("gru_cell", build, leaves, tol=COMPOSITE_TOL, eps=COMPOSITE_EPS)


def run_suite(seed=0, composites=True):
    """Runs every per-op check plus the two composite checks; returns reports."""
    reports = [
        _check_binary("add", lambda a, b: a.add(b), seed),
        _check_binary("sub", lambda a, b: a.sub(b), seed),
        _check_binary("mul", lambda a, b: a.mul(b), seed),
        _check_mul_gate(seed),
        _unary("scale", lambda t: t.scale(1.7, 0.3), seed),
        _unary("neg", lambda t: t.neg(), seed),
        _unary("relu", lambda t: t.relu(), seed, margin=0.25),
        _unary("abs", lambda t: t.abs(), seed, margin=0.25),
        _unary("sigmoid", lambda t: t.sigmoid(), seed),
        _unary("tanh", lambda t: t.tanh(), seed),
        _unary("softmax", lambda t: t.softmax(0), seed),
        _unary("channel_norm", lambda t: t.channel_norm(), seed),
        _check_sum(seed),
        _check_reshape(seed),
        _check_narrow(seed),
        _check_concat(seed),
        _check_conv("conv2d_s1", seed, (3, 6, 5), (4, 3, 3, 3), 1, 1, True),
        _check_conv("conv2d_s2", seed, (3, 7, 6), (2, 3, 3, 3), 2, 1, False),
        _check_conv("conv2d_batch", seed, (2, 3, 5, 4), (3, 3, 3, 3), 1, 1, True),
        _check_conv("conv2d_1x1", seed, (4, 5, 6), (2, 4, 1, 1), 1, 0, True),
        _check_conv("conv2d_7x7", seed, (3, 8, 8), (2, 3, 7, 7), 1, 3, True),
        _check_pool("avg_pool2_even", avg_pool2, seed, (2, 4, 6)),
        _check_pool("avg_pool2_odd", avg_pool2, seed, (2, 5, 7)),
        _check_pool("avg_pool_last", avg_pool_last, seed, (3, 4, 5)),
        _check_interp("interp_up", seed, (2, 5, 7), (8, 10)),
        _check_interp("interp_down", seed, (2, 8, 10), (5, 7)),
        _check_correlation(seed),
        _check_corr_lookup(seed),
        _check_loss("l1_loss", l1_loss, seed, margin=0.25),
        _check_loss("mse_loss", mse_loss, seed, margin=0.0),
    ]
    if composites:
        reports.append(_check_dlskt_block(seed))
        reports.append(_check_gru_cell(seed))
    return reports
