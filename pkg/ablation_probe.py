import time, tempfile, os, json, sys
from stereokd.config import validate
from stereokd.datagen import build_dataset
from stereokd import trainer

ABL = {
    "data": {"height": 32, "width": 64, "d_max": 12, "density": 0.4,
             "n_train": 48, "n_val": 16, "layers_min": 2, "layers_max": 3},
    "model": {"feat_widths": [12, 16], "feat_channels": 24,
              "context_widths": [12, 12, 16, 24], "hidden_channels": 24,
              "motion_channels": 24, "head_channels": 12, "align_hidden": 24,
              "max_disp": 8, "radius": 2, "iters_train": 4, "iters_eval": 8,
              "k": 2, "teacher_channels": 8, "noise_amp": 0.1},
    "train": {"steps": 250, "batch": 2, "val_every": 250, "ckpt_every": 250,
              "probe": 16},
}

seeds = [int(s) for s in sys.argv[1:]] or [0, 1, 2]
tmp = tempfile.mkdtemp()
finals = {}
for seed in seeds:
    for mode in ("baseline", "no_distillation", "full", "no_selection"):
        cfg = validate(json.loads(json.dumps(ABL)) | {
            "seed": seed,
            "data": {**ABL["data"], "root": os.path.join(tmp, f"d{seed}")},
            "out_dir": os.path.join(tmp, f"r_{mode}_{seed}")})
        if mode == "baseline":
            build_dataset(cfg["data"], cfg["data"]["root"], cfg["seed"])
        t0 = time.time()
        res = trainer.train(cfg, mode=mode, out_dir=cfg["out_dir"])
        finals.setdefault(mode, []).append(res["final_epe"])
        print(f"seed{seed} {mode:>16}: final {res['final_epe']:.4f} ({time.time()-t0:.0f}s)",
              flush=True)

import statistics
print()
for mode, vals in finals.items():
    med = statistics.median(vals)
    print(f"{mode:>16}: median {med:.4f}  runs {[round(v,4) for v in vals]}")
