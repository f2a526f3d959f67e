"""Loss assembly, schedules, the optimizer, and the training loop."""

import csv
import os

import numpy as np
import pytest

from helpers import TINY_CFG, tiny_cfg
from stereokd import config as config_mod
from stereokd.datagen import build_dataset
from stereokd.errors import ContractError, NumericsError
from stereokd.fileio import load_checkpoint
from stereokd.tensor import Tensor
from stereokd.trainer import (AdamW, align_lr, build_model, one_cycle_lr,
                              param_groups, prediction_loss, restore_model,
                              total_loss, train)


def scalar(v):
    return Tensor(np.float64(v), requires_grad=True, dtype=np.float64)


def map_of(v, shape=(4, 4)):
    return Tensor(np.full(shape, v), requires_grad=True, dtype=np.float64)


def test_prediction_loss_single_term_is_masked_l1():
    gt = Tensor(np.zeros((4, 4)), dtype=np.float64)
    valid = Tensor(np.ones((4, 4)), dtype=np.float64)
    loss, per = prediction_loss([map_of(2.0)], gt, valid, 0.9)
    assert float(loss.data) == 2.0
    assert per == [2.0]


def test_prediction_loss_two_term_example():
    gt = Tensor(np.zeros((4, 4)), dtype=np.float64)
    valid = Tensor(np.ones((4, 4)), dtype=np.float64)
    loss, per = prediction_loss([map_of(1.0), map_of(0.5)], gt, valid, 0.9)
    assert per == [1.0, 0.5]
    assert float(loss.data) == pytest.approx(0.9 * 1.0 + 0.5, abs=1e-12)


def test_prediction_loss_perfect_is_zero():
    gt = Tensor(np.full((4, 4), 3.0), dtype=np.float64)
    valid = Tensor(np.ones((4, 4)), dtype=np.float64)
    loss, _ = prediction_loss([map_of(3.0), map_of(3.0)], gt, valid, 0.9)
    assert float(loss.data) == 0.0


def test_prediction_loss_needs_predictions():
    with pytest.raises(ContractError):
        prediction_loss([], Tensor(np.zeros((2, 2))), Tensor(np.ones((2, 2))), 0.9)


def test_total_loss_decay_weights():
    total = total_loss(scalar(1.0), [scalar(1.0), scalar(1.0), scalar(1.0)], 0.9)
    # deeper blocks carry larger weights: exponents 3, 2, 1
    assert float(total.data) == 3.439
    assert float(total.data) == 1.0 + 0.9 ** 3 + 0.9 ** 2 + 0.9


def test_total_loss_degenerate_cases():
    lp = scalar(1.25)
    zero = total_loss(lp, [scalar(0.0)] * 3, 0.9)
    assert float(zero.data) == 1.25
    gamma0 = total_loss(lp, [scalar(5.0)] * 3, 0.0)
    assert float(gamma0.data) == 1.25
    skipped = total_loss(lp, [None, None, None], 0.9)
    assert float(skipped.data) == 1.25
    with pytest.raises(ContractError):
        total_loss(lp, [scalar(1.0)] * 2, 0.9)


def test_one_cycle_schedule_shape():
    total, peak = 1000, 2e-4
    warm = 10
    assert one_cycle_lr(0, total, peak) > 0.0
    assert one_cycle_lr(warm, total, peak) == peak
    assert one_cycle_lr(total, total, peak) == 0.0
    mid = (warm + total) // 2
    expect = peak * (total - mid) / (total - warm)
    assert one_cycle_lr(mid, total, peak) == pytest.approx(expect, rel=1e-12)
    # piecewise linear and never negative
    values = [one_cycle_lr(s, total, peak) for s in range(total + 1)]
    assert min(values) >= 0.0
    assert max(values) == peak


def test_align_schedule_dominates_then_decays_faster():
    total, peak = 200, 1e-3
    main0 = one_cycle_lr(0, total, peak)
    align0 = align_lr(0, total, peak)
    assert align0 > main0
    ratios = [align_lr(s, total, peak) / one_cycle_lr(s, total, peak)
              for s in range(0, 150)]
    assert all(r2 < r1 for r1, r2 in zip(ratios, ratios[1:]))
    # the multiplier halves every 10% of training
    assert ratios[20] / ratios[0] == pytest.approx(0.5, rel=1e-9)


def test_adamw_zero_grad_zero_decay_fixed_point():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True, dtype=np.float64)
    p.grad = np.zeros(2)
    opt = AdamW([{"name": "g", "params": {"p": p}, "weight_decay": 0.0,
                  "lr_fn": lambda s: 0.1}])
    before = p.data.copy()
    opt.step(0)
    assert np.array_equal(p.data, before)


def test_adamw_single_step_hand_formula():
    p = Tensor(np.array([1.0]), requires_grad=True, dtype=np.float64)
    p.grad = np.array([0.5])
    lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
    opt = AdamW([{"name": "g", "params": {"p": p}, "weight_decay": 0.0,
                  "lr_fn": lambda s: lr}], beta1=b1, beta2=b2, eps=eps)
    opt.step(0)
    m_hat = (1 - b1) * 0.5 / (1 - b1)
    v_hat = (1 - b2) * 0.25 / (1 - b2)
    want = 1.0 - lr * m_hat / (np.sqrt(v_hat) + eps)
    assert p.data[0] == pytest.approx(want, rel=1e-12)


def test_adamw_decoupled_decay_shrinks():
    p = Tensor(np.array([2.0]), requires_grad=True, dtype=np.float64)
    p.grad = np.zeros(1)
    lr, wd = 0.1, 0.01
    opt = AdamW([{"name": "g", "params": {"p": p}, "weight_decay": wd,
                  "lr_fn": lambda s: lr}])
    opt.step(0)
    assert p.data[0] == pytest.approx(2.0 * (1 - lr * wd), rel=1e-12)


def test_adamw_rejects_non_finite_grads():
    p = Tensor(np.array([1.0]), requires_grad=True, dtype=np.float64)
    p.grad = np.array([np.nan])
    opt = AdamW([{"name": "g", "params": {"lonely": p}, "weight_decay": 0.0,
                  "lr_fn": lambda s: 0.1}])
    with pytest.raises(NumericsError, match="lonely"):
        opt.step(0)


def test_param_groups_partition():
    full = config_mod.validate({"model": TINY_CFG["model"]})
    store, _ = build_model(full, "full")
    main, align = param_groups(store)
    assert set(main) | set(align) == set(store.params)
    assert not (set(main) & set(align))
    assert align and all(".align." in n for n in align)
    assert all(".align." not in n for n in main)


def fresh_run(tmp_path, name, mode="full", **train_overrides):
    cfg = config_mod.validate(tiny_cfg(tmp_path, **train_overrides))
    if not os.path.exists(os.path.join(cfg["data"]["root"], "train.json")):
        build_dataset(cfg["data"], cfg["data"]["root"], cfg["seed"])
    out = str(tmp_path / name)
    return train(cfg, mode=mode, out_dir=out), out


def test_train_writes_checkpoint_and_log(tmp_path):
    result, out = fresh_run(tmp_path, "run1")
    assert os.path.exists(result["checkpoint"])
    assert os.path.exists(result["log"])
    with open(result["log"]) as f:
        rows = list(csv.reader(f))
    assert rows[0][0] == "step"
    assert len(rows) == 1 + 2 + 1  # header, two steps, final probe row
    store, model, meta = restore_model(result["checkpoint"])
    assert meta["step"] == 2 and meta["mode"] == "full"


def test_train_zero_steps_keeps_initialization(tmp_path):
    result, out = fresh_run(tmp_path, "run0", steps=0)
    arrays, meta = load_checkpoint(result["checkpoint"])
    cfg = config_mod.validate({"model": meta["model_config"], "seed": meta["seed"]})
    store, _ = build_model(cfg, "full")
    for name, p in store.params.items():
        assert np.array_equal(arrays[f"param.{name}"], p.data)


def test_train_same_seed_byte_identical(tmp_path):
    r1, _ = fresh_run(tmp_path, "rep1")
    r2, _ = fresh_run(tmp_path, "rep2")
    ck1 = open(r1["checkpoint"], "rb").read()
    ck2 = open(r2["checkpoint"], "rb").read()
    assert ck1 == ck2
    assert open(r1["log"], "rb").read() == open(r2["log"], "rb").read()


def test_train_aborts_on_non_finite_loss(tmp_path, monkeypatch):
    import stereokd.trainer as trainer_mod
    poisoned = lambda l_p, kd, g: Tensor(np.float32(np.inf))
    monkeypatch.setattr(trainer_mod, "total_loss", poisoned)
    cfg = config_mod.validate(tiny_cfg(tmp_path))
    build_dataset(cfg["data"], cfg["data"]["root"], cfg["seed"])
    out = str(tmp_path / "nanrun")
    with pytest.raises(NumericsError, match="step 0"):
        train(cfg, out_dir=out)
    # the initialization checkpoint survives the abort
    assert os.path.exists(os.path.join(out, "checkpoint.ftcc"))


def test_restore_model_round_trip(tmp_path):
    result, out = fresh_run(tmp_path, "restore")
    store, model, meta = restore_model(result["checkpoint"])
    arrays, _ = load_checkpoint(result["checkpoint"])
    for name, p in store.params.items():
        assert np.array_equal(p.data, arrays[f"param.{name}"])
    assert meta["config_hash"] == config_mod.model_hash(
        config_mod.validate(tiny_cfg(tmp_path)))
