"""Loss assembly, schedules, AdamW, and the training loop.

The prediction loss sums masked L1 terms over GRU iterates with exponential
decay toward early iterates; block distillation losses join with decay
weights gamma^(4-j), so deeper blocks weigh more. Alignment-network
parameters form their own optimizer group with a higher peak learning rate
and an extra per-step exponential decay.
"""

import csv
import os

import numpy as np

from . import config as config_mod
from .datagen import load_manifest, load_sample
from .errors import ContractError, NumericsError
from .fileio import load_checkpoint, save_checkpoint
from .metrics import aggregate, evaluate
from .modules import ParamStore
from .stereo import StereoModel
from .teachers import make_providers
from .tensor import l1_loss, no_grad

LOG_COLUMNS = ("step", "l_total", "l_p", "l_kd1", "l_kd2", "l_kd3",
               "lr_main", "lr_align", "val_epe")


def prediction_loss(preds, gt, valid, gamma_p):
    """Sum of gamma_p^(N-i) * masked mean L1 over the N iterates.

    Returns (loss tensor, per-iterate L1 floats)."""
    n = len(preds)
    if n < 1:
        raise ContractError("prediction_loss needs at least one prediction")
    total = None
    per_iter = []
    for i, pred in enumerate(preds):
        term = l1_loss(pred, gt, valid)
        per_iter.append(float(term.data))
        weighted = term.scale(gamma_p ** (n - 1 - i))
        total = weighted if total is None else total.add(weighted)
    return total, per_iter


def total_loss(l_p, kd_blocks, gamma_kd):
    """l_p + sum_j gamma_kd^(4-j) * kd_j for blocks j = 1..3."""
    if len(kd_blocks) != 3:
        raise ContractError(f"expected 3 block KD terms, got {len(kd_blocks)}")
    out = l_p
    for j, kd in enumerate(kd_blocks, start=1):
        if kd is None:
            continue
        out = out.add(kd.scale(gamma_kd ** (4 - j)))
    return out


def one_cycle_lr(step, total_steps, peak_lr, warm_frac=0.01):
    """Linear warmup to the peak, then linear decay to zero at total_steps.

    The ramp is (step+1)/(warm+1) so the first step already has a positive
    rate and the apex lands exactly on the warmup boundary."""
    warm = max(1, round(warm_frac * total_steps))
    if step <= warm:
        return peak_lr * (step + 1) / (warm + 1)
    return peak_lr * max(0, total_steps - step) / max(1, total_steps - warm)


def align_lr(step, total_steps, peak_lr, warm_frac=0.01, mult=3.0, half_every=0.1):
    """Alignment-group schedule: the one-cycle value times mult * rho^step,
    with rho chosen so the factor halves every half_every of training."""
    rho = 0.5 ** (1.0 / max(1.0, half_every * total_steps))
    return one_cycle_lr(step, total_steps, peak_lr, warm_frac) * mult * rho ** step


def param_groups(store):
    """Split parameters into (main, alignment) name->tensor dicts."""
    align = {n: p for n, p in store.params.items() if ".align." in n}
    main = {n: p for n, p in store.params.items() if ".align." not in n}
    return main, align


class AdamW:
    """Decoupled-weight-decay Adam with bias correction and per-group LR."""

    def __init__(self, groups, beta1=0.9, beta2=0.999, eps=1e-8):
        self.groups = groups  # list of {"name", "params", "lr_fn", "weight_decay"}
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {}
        self.v = {}
        for g in groups:
            for name, p in g["params"].items():
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)

    def step(self, step_idx):
        t = step_idx + 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** t
        bc2 = 1.0 - b2 ** t
        for g in self.groups:
            lr = g["lr_fn"](step_idx)
            wd = g["weight_decay"]
            for name, p in g["params"].items():
                grad = p.grad
                if grad is None:
                    grad = np.zeros_like(p.data)
                elif not np.all(np.isfinite(grad)):
                    raise NumericsError(f"non-finite gradient in parameter {name!r}")
                m = self.m[name] = b1 * self.m[name] + (1.0 - b1) * grad
                v = self.v[name] = b2 * self.v[name] + (1.0 - b2) * grad * grad
                update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
                p.data = p.data - lr * update - lr * wd * p.data

    def state_arrays(self):
        out = {}
        for name in self.m:
            out[f"opt.m.{name}"] = self.m[name]
            out[f"opt.v.{name}"] = self.v[name]
        return out

    def load_state(self, arrays):
        for name in self.m:
            self.m[name] = np.asarray(arrays[f"opt.m.{name}"], dtype=self.m[name].dtype)
            self.v[name] = np.asarray(arrays[f"opt.v.{name}"], dtype=self.v[name].dtype)


def build_model(cfg, mode="full", dtype=np.float32):
    m = cfg["model"]
    store = ParamStore(cfg["seed"], dtype=dtype)
    model = StereoModel(
        store,
        feat_widths=tuple(m["feat_widths"]),
        feat_channels=m["feat_channels"],
        context_widths=tuple(m["context_widths"]),
        hidden_channels=m["hidden_channels"],
        motion_channels=m["motion_channels"],
        head_channels=m["head_channels"],
        max_disp=m["max_disp"],
        radius=m["radius"],
        teacher_kinds=tuple(m["teachers"]),
        teacher_channels=m["teacher_channels"],
        k=m["k"],
        mode=mode,
        align_hidden=m["align_hidden"])
    return store, model


def teacher_lookup(providers, sample):
    return lambda kind, stage: providers[kind].stage_features(sample, stage)


def probe_epe(model, providers, samples, iters):
    reports = []
    with no_grad():
        for s in samples:
            preds, _ = model.forward(s, teacher_lookup(providers, s), iters=iters)
            reports.append(evaluate(preds[-1].data, s.gt_disparity.data, s.valid.data))
    return aggregate(reports).epe


def train(cfg, mode="full", out_dir=None):
    """Runs the configured training loop; returns a summary dict."""
    out_dir = out_dir or cfg["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    train_manifest = os.path.join(cfg["data"]["root"], "train.json")
    val_manifest = os.path.join(cfg["data"]["root"], "val.json")
    _, train_items = load_manifest(train_manifest)
    _, val_items = load_manifest(val_manifest)
    train_samples = [load_sample(it) for it in train_items]
    probe_samples = [load_sample(it) for it in val_items[:cfg["train"]["probe"]]]

    store, model = build_model(cfg, mode)
    m_cfg, lo, op, tr = cfg["model"], cfg["loss"], cfg["optim"], cfg["train"]
    providers = make_providers(m_cfg["teachers"], cfg["seed"], m_cfg["teacher_channels"],
                               m_cfg["noise_amp"])
    steps = tr["steps"]
    main, align = param_groups(store)
    groups = [{"name": "main", "params": main, "weight_decay": op["weight_decay"],
               "lr_fn": lambda s: one_cycle_lr(s, steps, op["peak_lr"], op["warm_frac"])}]
    if align:
        groups.append({"name": "align", "params": align, "weight_decay": op["weight_decay"],
                       "lr_fn": lambda s: align_lr(s, steps, op["peak_lr"], op["warm_frac"],
                                                   op["align_mult"], op["align_half_every"])})
    opt = AdamW(groups, op["beta1"], op["beta2"], op["eps"])

    ckpt_path = os.path.join(out_dir, "checkpoint.ftcc")
    log_path = os.path.join(out_dir, "log.csv")
    meta = {"step": 0, "mode": mode, "config_hash": config_mod.model_hash(cfg),
            "model_config": cfg["model"], "seed": cfg["seed"]}

    def save(step):
        arrays = {f"param.{n}": p.data for n, p in store.params.items()}
        arrays.update(opt.state_arrays())
        save_checkpoint(ckpt_path, arrays, {**meta, "step": step})

    batch_rng = np.random.default_rng(np.random.SeedSequence((cfg["seed"], 0xBA7C)))
    initial_epe = probe_epe(model, providers, probe_samples, m_cfg["iters_eval"])
    final_epe = initial_epe
    save(0)

    with open(log_path, "w", newline="") as logf:
        log = csv.writer(logf)
        log.writerow(LOG_COLUMNS)
        for step in range(steps):
            probe = ""
            if step % tr["val_every"] == 0:
                epe = probe_epe(model, providers, probe_samples, m_cfg["iters_eval"]) \
                    if step > 0 else initial_epe
                final_epe = epe
                probe = repr(epe)
            batch = batch_rng.integers(0, len(train_samples), size=tr["batch"])
            store.zero_grad()
            batch_total = None
            comp = np.zeros(5)  # l_total, l_p, kd1..3
            for idx in batch:
                s = train_samples[int(idx)]
                preds, aux = model.forward(s, teacher_lookup(providers, s),
                                           iters=m_cfg["iters_train"])
                l_p, _ = prediction_loss(preds, s.gt_disparity, s.valid, lo["gamma_p"])
                kd_totals = aux.block_kd_totals()
                if len(kd_totals) != 3:
                    kd_totals = [None, None, None]
                l_all = total_loss(l_p, kd_totals, lo["gamma_kd"])
                comp += [float(l_all.data), float(l_p.data)] + \
                        [float(k.data) if k is not None else 0.0 for k in kd_totals]
                batch_total = l_all if batch_total is None else batch_total.add(l_all)
            comp /= len(batch)
            if not np.isfinite(comp[0]):
                raise NumericsError(
                    f"non-finite loss at step {step}; last checkpoint kept at {ckpt_path}")
            batch_total.scale(1.0 / len(batch)).backward()
            opt.step(step)
            row = [str(step)] + [repr(float(c)) for c in comp] + \
                  [repr(groups[0]["lr_fn"](step)),
                   repr(groups[1]["lr_fn"](step)) if len(groups) > 1 else repr(0.0),
                   probe]
            log.writerow(row)
            if (step + 1) % tr["ckpt_every"] == 0:
                save(step + 1)
        save(steps)
        final_epe = probe_epe(model, providers, probe_samples, m_cfg["iters_eval"]) \
            if steps > 0 else initial_epe
        log.writerow([str(steps), "", "", "", "", "", "", "", repr(final_epe)])

    return {"checkpoint": ckpt_path, "log": log_path,
            "initial_epe": initial_epe, "final_epe": final_epe}


def restore_model(ckpt_path):
    """Rebuilds the model a checkpoint was trained with; returns
    (store, model, meta)."""
    arrays, meta = load_checkpoint(ckpt_path)
    cfg = config_mod.validate({"model": meta["model_config"], "seed": meta["seed"]})
    store, model = build_model(cfg, meta.get("mode", "full"))
    for name, p in store.params.items():
        key = f"param.{name}"
        if key not in arrays:
            raise ContractError(f"checkpoint missing parameter {name!r}")
        if arrays[key].shape != p.data.shape:
            raise ContractError(
                f"checkpoint parameter {name!r} shape {arrays[key].shape} != {p.data.shape}")
        p.data = arrays[key].astype(p.data.dtype)
    return store, model, meta
