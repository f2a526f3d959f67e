"""Timing comparison of the numba and pure-numpy kernel backends.

Runs each hot kernel on representative shapes and a full model forward
pass, reporting per-call milliseconds for both backends. Invoke from the
repo root:

    python3 benchmarks/bench_backends.py [--repeats N]
"""

import argparse
import time

import numpy as np

from stereokd import backend
from stereokd.config import validate
from stereokd.datagen import gen_rds, random_scene
from stereokd.stereo import StereoModel
from stereokd.teachers import make_providers
from stereokd.tensor import Tensor, no_grad


def timeit(fn, repeats):
    fn()  # warmup covers numba compilation
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats * 1e3


def kernel_cases(rng):
    x = rng.standard_normal((32, 52, 100)).astype(np.float32)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    w = rng.standard_normal((48, 32, 3, 3)).astype(np.float32)
    g = rng.standard_normal((48, 52, 100)).astype(np.float32)
    cl = rng.standard_normal((32, 12, 24)).astype(np.float32)
    cr = rng.standard_normal((32, 12, 24)).astype(np.float32)
    vol = rng.standard_normal((17, 12, 24)).astype(np.float32)
    disp = (rng.random((12, 24)) * 4).astype(np.float32)
    img = rng.standard_normal((24, 12, 24)).astype(np.float32)
    return [
        ("conv2d_fwd 32->48 3x3 @52x100",
         lambda k: k.conv2d_fwd(xp, w, 1)),
        ("conv2d_bwd_weight", lambda k: k.conv2d_bwd_weight(g, xp, 3, 3, 1)),
        ("conv2d_bwd_input", lambda k: k.conv2d_bwd_input(g, w, 1, 54, 102)),
        ("corr_fwd D=16 @12x24", lambda k: k.corr_fwd(cl, cr, 16, 0.18)),
        ("corr_bwd", lambda k: k.corr_bwd(
            rng.standard_normal((17, 12, 24)).astype(np.float32), cl, cr, 0.18)),
        ("lookup_fwd r=4", lambda k: k.lookup_fwd(vol, disp, 4, 1.0)),
        ("bilinear_fwd x4", lambda k: k.bilinear_fwd(img, 48, 96)),
    ]


def model_case():
    cfg = validate({"data": {"height": 48, "width": 96}})["model"]
    scene = random_scene(7, 48, 96, d_max=8)
    sample = gen_rds(scene)
    from stereokd.modules import ParamStore
    store = ParamStore(0)
    model = StereoModel(store, cfg, mode="full")
    providers = make_providers(cfg["teachers"], 0, cfg["teacher_channels"])
    lookup = lambda kind, stage: providers[kind].stage_features(sample, stage)

    def run():
        with no_grad():
            model.forward(sample, teacher_lookup=lookup, iters=4)
    return run


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    cases = kernel_cases(rng)
    results = {}
    for name in ("numpy", "numba"):
        try:
            backend.set_backend(name)
        except ImportError:
            print(f"{name}: unavailable, skipped")
            continue
        k = backend.kernels()
        for label, fn in cases:
            results.setdefault(label, {})[name] = timeit(lambda: fn(k), args.repeats)
        results.setdefault("model forward 48x96 4 iters", {})[name] = timeit(
            model_case(), max(3, args.repeats // 4))
    backend.set_backend("auto")

    width = max(len(label) for label in results)
    print(f"{'kernel':<{width}}  {'numpy ms':>10}  {'numba ms':>10}  {'speedup':>8}")
    for label, times in results.items():
        np_ms = times.get("numpy", float("nan"))
        nb_ms = times.get("numba", float("nan"))
        ratio = np_ms / nb_ms if nb_ms and nb_ms == nb_ms else float("nan")
        print(f"{label:<{width}}  {np_ms:>10.3f}  {nb_ms:>10.3f}  {ratio:>7.2f}x")


if __name__ == "__main__":
    main()
