"""Shared builders and frozen oracles for the test suite.

Oracles here are deliberately naive (python loops, direct formula
evaluation) so they cannot share bugs with the vectorized kernels they
check.
"""

import copy

import numpy as np

from stereokd.datagen import gen_rds, random_scene

TINY_CFG = {
    "seed": 0,
    "data": {"root": "", "height": 16, "width": 32, "density": 0.5, "d_max": 4,
             "n_train": 3, "n_val": 2, "layers_min": 1, "layers_max": 2},
    "model": {"feat_widths": [4, 6], "feat_channels": 8,
              "context_widths": [4, 4, 6, 8], "hidden_channels": 8,
              "motion_channels": 8, "head_channels": 4, "align_hidden": 4,
              "max_disp": 4, "radius": 1, "iters_train": 2, "iters_eval": 3,
              "k": 2, "teachers": ["dino", "sam", "depth_anything"],
              "teacher_channels": 4, "noise_amp": 0.1},
    "train": {"steps": 2, "batch": 1, "val_every": 1, "ckpt_every": 2,
              "probe": 1},
}


def tiny_cfg(tmp_path, **train_overrides):
    cfg = copy.deepcopy(TINY_CFG)
    cfg["data"]["root"] = str(tmp_path / "data")
    cfg["out_dir"] = str(tmp_path / "run")
    cfg["train"].update(train_overrides)
    return cfg


def tiny_sample(seed=3, h=16, w=32, d_max=4):
    return gen_rds(random_scene(seed, h, w, density=0.5, d_max=d_max,
                                n_layers=(1, 2)))


def conv_oracle(x, w, b=None, stride=1, padding=0):
    """Sliding-window convolution, one output element at a time."""
    c_out, c_in, kh, kw = w.shape
    xp = np.pad(np.asarray(x, dtype=np.float64),
                ((0, 0), (padding, padding), (padding, padding)))
    oh = (xp.shape[1] - kh) // stride + 1
    ow = (xp.shape[2] - kw) // stride + 1
    out = np.zeros((c_out, oh, ow))
    for co in range(c_out):
        for oy in range(oh):
            for ox in range(ow):
                s = 0.0
                for ci in range(c_in):
                    for ky in range(kh):
                        for kx in range(kw):
                            s += xp[ci, oy * stride + ky, ox * stride + kx] \
                                * w[co, ci, ky, kx]
                out[co, oy, ox] = s + (0.0 if b is None else b[co])
    return out


def corr_oracle(cl, cr, max_disp, scale):
    """Triple-loop inner-product volume with explicit out-of-frame zeros."""
    c, h, w = cl.shape
    vol = np.zeros((h, w, max_disp))
    for y in range(h):
        for x in range(w):
            for z in range(max_disp):
                if z > x:
                    continue
                s = 0.0
                for ch in range(c):
                    s += float(cl[ch, y, x]) * float(cr[ch, y, x - z])
                vol[y, x, z] = s * scale
    return vol


def stereo_violations(sample):
    """Count valid pixels breaking right(x - gt(x), y) == left(x, y)."""
    left = sample.left.data[0]
    right = sample.right.data[0]
    gt = sample.gt_disparity.data
    valid = sample.valid.data
    h, w = gt.shape
    bad = 0
    for y in range(h):
        for x in range(w):
            if valid[y, x] > 0:
                xr = x - int(round(float(gt[y, x])))
                if not (0 <= xr < w) or right[y, xr] != left[y, x]:
                    bad += 1
    return bad


def metrics_oracle(pred, gt, valid):
    """Per-pixel loop collection, shared-formula statistics."""
    errs = []
    gts = []
    h, w = pred.shape
    for y in range(h):
        for x in range(w):
            if valid[y, x] > 0:
                errs.append(abs(np.float64(pred[y, x]) - np.float64(gt[y, x])))
                gts.append(np.float64(gt[y, x]))
    err = np.array(errs)
    gt_v = np.array(gts)
    n = err.size
    bad = {tau: 100.0 * float(np.mean(err > tau)) for tau in (0.5, 1.0, 2.0, 3.0)}
    d1 = 100.0 * float(np.mean((err > 3.0) & (err > 0.05 * gt_v)))
    return {"n_valid": n, "epe": float(err.mean()), "bad": bad, "d1": d1,
            "a90": float(np.percentile(err, 90))}
