"""Command line front end: data generation, training, evaluation, exports."""

import argparse
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import config as config_mod
from .backend import thread_cap
from .datagen import build_dataset, load_manifest, load_sample
from .errors import ConfigError, ContractError, StereoKdError
from .fileio import write_pgm
from .gradcheck import run_suite
from .metrics import aggregate, evaluate, write_csv
from .teachers import make_providers
from .tensor import no_grad
from .trainer import restore_model, teacher_lookup, train
from .transfer import MODES


def _split_samples(cfg, split):
    path = os.path.join(cfg["data"]["root"], f"{split}.json")
    _, items = load_manifest(path)
    return [load_sample(item) for item in items]


def _providers_for(meta):
    mc = meta["model_config"]
    return make_providers(mc["teachers"], meta["seed"], mc["teacher_channels"],
                          mc["noise_amp"])


def _checkpoint_path(args, cfg):
    if args.checkpoint:
        return args.checkpoint
    return os.path.join(cfg["out_dir"], "checkpoint.ftcc")


def cmd_gen_data(args, cfg):
    root = cfg["data"]["root"]
    manifests = [os.path.join(root, f"{split}.json") for split in ("train", "val")]
    if not args.force and all(os.path.exists(m) for m in manifests):
        print(f"dataset already present at {root}; use --force to regenerate")
        return 0
    paths = build_dataset(cfg["data"], root, cfg["seed"])
    for split in ("train", "val"):
        print(f"{split} manifest: {paths[split]}")
    return 0


def cmd_train(args, cfg):
    result = train(cfg, mode=args.ablation, out_dir=cfg["out_dir"])
    print(f"checkpoint: {result['checkpoint']}")
    print(f"log: {result['log']}")
    print(f"val EPE {result['initial_epe']:.4f} -> {result['final_epe']:.4f}")
    return 0


def cmd_eval(args, cfg):
    store, model, meta = restore_model(_checkpoint_path(args, cfg))
    want = config_mod.model_hash(cfg)
    if meta["config_hash"] != want:
        raise ContractError(
            f"checkpoint was trained with model hash {meta['config_hash']} but this "
            f"config hashes to {want}; pass the config the checkpoint was trained with")
    providers = _providers_for(meta)
    samples = _split_samples(cfg, args.split)
    iters = meta["model_config"]["iters_eval"]

    def run_one(sample):
        preds, _ = model.forward(sample, teacher_lookup(providers, sample), iters=iters)
        disp = preds[-1].data
        return evaluate(disp, sample.gt_disparity.data, sample.valid.data), disp

    workers = thread_cap(os.cpu_count() or 1)
    with no_grad():
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_one, samples))

    os.makedirs(cfg["out_dir"], exist_ok=True)
    csv_path = os.path.join(cfg["out_dir"], f"eval_{args.split}.csv")
    write_csv(csv_path, [(s.id, rep) for s, (rep, _) in zip(samples, results)])
    if args.render:
        render_dir = os.path.join(cfg["out_dir"], "renders")
        os.makedirs(render_dir, exist_ok=True)
        for s, (_, disp) in zip(samples, results):
            top = max(float(disp.max()), 1e-9)
            write_pgm(os.path.join(render_dir, f"disp_{s.id}.pgm"), disp / top)
    agg = aggregate([rep for rep, _ in results])
    print(f"{len(samples)} images, aggregate EPE {agg.epe:.4f}, D1 {agg.d1:.2f}%")
    print(f"csv: {csv_path}")
    return 0


def cmd_export_gates(args, cfg):
    store, model, meta = restore_model(_checkpoint_path(args, cfg))
    providers = _providers_for(meta)
    _, items = load_manifest(os.path.join(cfg["data"]["root"], f"{args.split}.json"))
    if not 0 <= args.index < len(items):
        raise ContractError(f"sample index {args.index} out of range for {len(items)} items")
    sample = load_sample(items[args.index])
    with no_grad():
        _, aux = model.context.forward(sample.left, teacher_lookup(providers, sample))
    if not aux.gate_maps:
        raise ContractError("this checkpoint was trained without gates (baseline mode)")
    dest = args.out or cfg["out_dir"]
    os.makedirs(dest, exist_ok=True)
    n = 0
    for i, gates in enumerate(aux.gate_maps, start=1):
        for j, kind in enumerate(model.context.kinds):
            write_pgm(os.path.join(dest, f"gates_block{i}_{kind}.pgm"), gates.data[j])
            n += 1
    print(f"wrote {n} gate maps for sample {sample.id} to {dest}")
    return 0


def cmd_gradcheck(args=None, cfg=None):
    t0 = time.perf_counter()
    reports = run_suite(seed=0)
    for rep in reports:
        print(rep.line())
    failed = [rep for rep in reports if not rep.ok]
    print(f"{len(reports)} checks, {len(failed)} failed, {time.perf_counter() - t0:.1f}s")
    return 1 if failed else 0


def build_parser():
    parser = argparse.ArgumentParser(prog="stereokd",
                                     description="Iterative stereo matching with "
                                                 "selective multi-teacher transfer")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="path to a JSON run config")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common],
                       help="write the random-dot stereo dataset and manifests")
    p.add_argument("--force", action="store_true", help="regenerate even if present")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", parents=[common], help="train and write checkpoints")
    p.add_argument("--ablation", choices=MODES, default="full",
                   help="which transfer arm to train")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", default=None, help="checkpoint path")
    p.add_argument("--split", choices=("train", "val"), default="val")
    p.add_argument("--render", action="store_true",
                   help="also write normalized disparity PGMs")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("export-gates", parents=[common],
                       help="write per-teacher gate weight maps as PGMs")
    p.add_argument("--checkpoint", default=None, help="checkpoint path")
    p.add_argument("--split", choices=("train", "val"), default="val")
    p.add_argument("--index", type=int, default=0, help="sample index in the manifest")
    p.add_argument("--out", default=None, help="output directory (default: out_dir)")
    p.set_defaults(fn=cmd_export_gates)

    p = sub.add_parser("gradcheck", parents=[common],
                       help="finite-difference check of every backward rule")
    p.set_defaults(fn=cmd_gradcheck)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        cfg = config_mod.load(args.config, overrides)
        return args.fn(args, cfg)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except StereoKdError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
