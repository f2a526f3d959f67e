"""Random-dot stereogram synthesis with exact ground truth.

A scene is a stack of fronto-parallel rectangular layers over a zero-
disparity background. The left view is a seeded dot field whose density
is jittered per layer, so layer outlines are visible monocularly (the
jitter sign and size are scene-random, so density never encodes the
disparity value itself). The right view is built by projecting every
left pixel x to x - d(x) with a disparity z-buffer (nearest layer wins),
so the defining constraint right(x - gt(x), y) == left(x, y) holds
exactly on every valid pixel. Pixels that lose the z-buffer or fall out
of frame are exactly the valid == 0 set; right-view holes are filled
with fresh dots.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .fileio import read_pfm, read_pgm, write_pfm, write_pgm
from .tensor import Tensor

MAX_LAYER_DISPARITY = 64


@dataclass
class StereoSample:
    left: Tensor
    right: Tensor
    gt_disparity: Tensor
    valid: Tensor
    id: str = ""

    def __post_init__(self):
        h, w = self.gt_disparity.data.shape
        if h % 4 or w % 4:
            raise ContractError(f"sample size {h}x{w} must be a multiple of 4")
        for name in ("left", "right"):
            img = getattr(self, name).data
            if img.shape != (3, h, w):
                raise ContractError(f"{name} image shape {img.shape}, expected {(3, h, w)}")
        if self.valid.data.shape != (h, w):
            raise ContractError(f"valid mask shape {self.valid.data.shape}, expected {(h, w)}")
        bad = (self.gt_disparity.data < 0) & (self.valid.data > 0)
        if bad.any():
            raise ContractError("negative ground-truth disparity on valid pixels")


@dataclass
class Layer:
    y0: int
    x0: int
    y1: int
    x1: int
    disp: int


@dataclass
class SceneSpec:
    seed: int
    height: int
    width: int
    density: float
    layers: list = field(default_factory=list)

    def validate(self):
        if not 0.0 < self.density <= 1.0:
            raise ContractError(f"dot density {self.density} outside (0, 1]")
        prev = None
        for lay in self.layers:
            if int(lay.disp) != lay.disp or not 0 <= lay.disp <= MAX_LAYER_DISPARITY:
                raise ContractError(f"layer disparity {lay.disp} must be an integer in [0, {MAX_LAYER_DISPARITY}]")
            if not (0 <= lay.y0 < lay.y1 <= self.height and 0 <= lay.x0 < lay.x1 <= self.width):
                raise ContractError(
                    f"layer bounds ({lay.y0},{lay.x0})..({lay.y1},{lay.x1}) out of the {self.height}x{self.width} frame")
            if prev is not None and lay.disp > prev:
                raise ContractError("layers must be sorted front-to-back (non-increasing disparity)")
            prev = lay.disp


def random_scene(seed, height, width, density=0.5, d_max=8, n_layers=(1, 3)):
    if d_max > MAX_LAYER_DISPARITY:
        raise ContractError(f"d_max {d_max} exceeds {MAX_LAYER_DISPARITY}")
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0xA11)))
    n = int(rng.integers(n_layers[0], n_layers[1] + 1))
    layers = []
    for _ in range(n):
        lh = int(rng.integers(height // 4, 3 * height // 4 + 1))
        lw = int(rng.integers(width // 4, 3 * width // 4 + 1))
        y0 = int(rng.integers(0, height - lh + 1))
        x0 = int(rng.integers(0, width - lw + 1))
        disp = int(rng.integers(0, d_max + 1))
        layers.append(Layer(y0, x0, y0 + lh, x0 + lw, disp))
    layers.sort(key=lambda l: -l.disp)
    return SceneSpec(int(seed), height, width, density, layers)


def layer_densities(spec, rng):
    """Per-layer dot densities: base density plus a signed contrast step."""
    out = []
    for _ in spec.layers:
        step = rng.uniform(0.12, 0.30) * (1.0 if rng.random() < 0.5 else -1.0)
        out.append(float(np.clip(spec.density + step, 0.08, 0.92)))
    return out


def gen_rds(spec):
    spec.validate()
    h, w = spec.height, spec.width
    rng = np.random.default_rng(np.random.SeedSequence((spec.seed, 0xD075)))
    dens = np.full((h, w), spec.density, dtype=np.float64)
    for lay, rho in zip(reversed(spec.layers), reversed(layer_densities(spec, rng))):
        dens[lay.y0:lay.y1, lay.x0:lay.x1] = rho  # painter's algorithm, back to front
    left = (rng.random((h, w)) < dens).astype(np.float32)
    gt = np.zeros((h, w), dtype=np.int64)
    for lay in reversed(spec.layers):
        gt[lay.y0:lay.y1, lay.x0:lay.x1] = lay.disp
    right = np.zeros((h, w), dtype=np.float32)
    rdisp = np.full((h, w), -1, dtype=np.int64)
    xs = np.arange(w)
    for d in sorted(set(gt.ravel().tolist())):  # ascending: nearer layers overwrite
        yy, xx = np.nonzero(gt == d)
        xr = xx - d
        m = xr >= 0
        right[yy[m], xr[m]] = left[yy[m], xx[m]]
        rdisp[yy[m], xr[m]] = d
    xr_all = xs[None, :] - gt
    inb = xr_all >= 0
    valid = np.zeros((h, w), dtype=np.float32)
    yy_all = np.broadcast_to(np.arange(h)[:, None], (h, w))
    valid[inb] = (rdisp[yy_all[inb], xr_all[inb]] == gt[inb]).astype(np.float32)
    hole = rdisp < 0
    fresh = (rng.random((h, w)) < dens).astype(np.float32)
    right[hole] = fresh[hole]
    rep = lambda img: np.repeat(img[None], 3, axis=0)
    return StereoSample(Tensor(rep(left)), Tensor(rep(right)),
                        Tensor(gt.astype(np.float32)), Tensor(valid),
                        id=f"rds{spec.seed:08d}")


_VAL_SEED_OFFSET = 1_000_000  # keeps train/val seed ranges disjoint


def build_dataset(data_cfg, out_dir, base_seed):
    """Writes PGM/PFM files plus one JSON manifest per split; returns paths."""
    os.makedirs(out_dir, exist_ok=True)
    h, w = data_cfg["height"], data_cfg["width"]
    counts = {"train": (data_cfg["n_train"], 0), "val": (data_cfg["n_val"], _VAL_SEED_OFFSET)}
    manifests = {}
    for split, (count, offset) in counts.items():
        items = []
        for j in range(count):
            spec = random_scene(base_seed + offset + j, h, w, data_cfg["density"],
                                data_cfg["d_max"], (data_cfg["layers_min"], data_cfg["layers_max"]))
            sample = gen_rds(spec)
            sid = f"{split}_{j:05d}"
            names = {"left": f"{sid}_left.pgm", "right": f"{sid}_right.pgm",
                     "gt": f"{sid}_gt.pfm", "valid": f"{sid}_valid.pgm"}
            write_pgm(os.path.join(out_dir, names["left"]), sample.left.data[0])
            write_pgm(os.path.join(out_dir, names["right"]), sample.right.data[0])
            write_pfm(os.path.join(out_dir, names["gt"]), sample.gt_disparity.data)
            write_pgm(os.path.join(out_dir, names["valid"]), sample.valid.data)
            items.append({"id": sid, **names})
        path = os.path.join(out_dir, f"{split}.json")
        with open(path, "w") as f:
            json.dump({"split": split, "items": items}, f, indent=2, sort_keys=True)
            f.write("\n")
        manifests[split] = path
    return manifests


def load_manifest(path):
    with open(path) as f:
        doc = json.load(f)
    if "split" not in doc or "items" not in doc:
        raise ContractError(f"manifest {path} missing 'split' or 'items'")
    root = os.path.dirname(os.path.abspath(path))
    seen = set()
    items = []
    for it in doc["items"]:
        if it["id"] in seen:
            raise ContractError(f"duplicate sample id {it['id']!r} in {path}")
        seen.add(it["id"])
        resolved = {"id": it["id"]}
        for key in ("left", "right", "gt", "valid"):
            p = os.path.join(root, it[key])
            if not os.path.exists(p):
                raise ContractError(f"manifest entry {it['id']!r}: missing file {p}")
            resolved[key] = p
        items.append(resolved)
    return doc["split"], items


def load_sample(item):
    rep = lambda img: np.repeat(img[None], 3, axis=0)
    left = read_pgm(item["left"]).astype(np.float32) / 255.0
    right = read_pgm(item["right"]).astype(np.float32) / 255.0
    gt = read_pfm(item["gt"])
    valid = (read_pgm(item["valid"]) > 0).astype(np.float32)
    return StereoSample(Tensor(rep(left)), Tensor(rep(right)), Tensor(gt), Tensor(valid),
                        id=item["id"])
