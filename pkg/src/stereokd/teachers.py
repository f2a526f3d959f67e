"""Teacher feature providers.

Three synthetic stand-ins with distinct spatial characters feed the
transfer machinery: a smooth center-weighted one ("dino"), an
edge-concentrated one ("sam"), and a depth-informative one derived from
ground-truth disparity ("depth_anything"). A file-backed provider loads
precomputed features from FTC tensors instead.

Stage i features live at 1/2^(i-1) of the input resolution, matching the
context blocks. All providers are deterministic in (sample, stage, seed)
and always return finite maps with no gradient tracking.
"""

import zlib
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import ContractError
from .fileio import read_ftc
from .tensor import Tensor

KNOWN_TEACHERS = ("dino", "sam", "depth_anything")
_TEACHER_ID = {"dino": 1, "sam": 2, "depth_anything": 3}
DEFAULT_CHANNELS = 16


@dataclass
class TeacherFeatures:
    kind: str
    stage: int
    map: Tensor

    def __post_init__(self):
        if self.kind not in _TEACHER_ID:
            raise ContractError(f"unknown teacher kind {self.kind!r}")
        if self.stage not in (1, 2, 3):
            raise ContractError(f"teacher stage must be 1..3, got {self.stage}")
        if self.map.data.ndim != 3:
            raise ContractError(f"teacher map must be [C,h,w], got shape {self.map.data.shape}")
        if not np.all(np.isfinite(self.map.data)):
            raise ContractError(f"non-finite values in {self.kind} stage-{self.stage} features")


def _pool2(a):
    h, w = a.shape
    return a.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def _to_stage(a, stage):
    for _ in range(stage - 1):
        a = _pool2(a)
    return a


def _gray(sample):
    return np.asarray(sample.left.data, dtype=np.float64).mean(axis=0)


def _grads(g):
    gx = np.zeros_like(g)
    gy = np.zeros_like(g)
    gd1 = np.zeros_like(g)
    gd2 = np.zeros_like(g)
    gx[:, 1:] = g[:, 1:] - g[:, :-1]
    gy[1:, :] = g[1:, :] - g[:-1, :]
    gd1[1:, 1:] = g[1:, 1:] - g[:-1, :-1]
    gd2[1:, :-1] = g[1:, :-1] - g[:-1, 1:]
    return gx, gy, gd1, gd2


def saliency_mask(h, w, sigma=0.35):
    """Center-weighted Gaussian falloff in resolution-normalized coordinates."""
    u = (np.arange(w, dtype=np.float64) - (w - 1) / 2.0) / w
    v = (np.arange(h, dtype=np.float64) - (h - 1) / 2.0) / h
    return np.exp(-(u[None, :] ** 2 + v[:, None] ** 2) / (2.0 * sigma * sigma))


def synth_dino(sample, stage, seed, channels=DEFAULT_CHANNELS):
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), _TEACHER_ID["dino"], int(stage))))
    gray = _gray(sample)
    maps = []
    mask = None
    for c in range(channels):
        a = rng.uniform(0.5, 1.5)
        b = rng.uniform(-0.25, 0.25)
        blur = uniform_filter(gray, size=2 * (c % 4) + 1, mode="nearest")
        ch = _to_stage(a * blur + b, stage)
        if mask is None:
            mask = saliency_mask(*ch.shape)
        maps.append(ch * mask)
    return TeacherFeatures("dino", stage, Tensor(np.stack(maps), dtype=np.float32))


def synth_sam(sample, stage, seed, channels=DEFAULT_CHANNELS):
    gray = _gray(sample)
    gx, gy, gd1, gd2 = _grads(gray)
    mag = np.sqrt(gx * gx + gy * gy)
    chans = [np.abs(gx), np.abs(gy), np.abs(gd1), np.abs(gd2), mag, mag * mag,
             np.abs(gx) * np.abs(gy), np.abs(gd1) + np.abs(gd2)]
    for t in range(8):
        theta = 2.0 * np.pi * t / 8.0
        chans.append(np.maximum(np.cos(theta) * gx + np.sin(theta) * gy, 0.0))
    chans = chans[:channels]
    while len(chans) < channels:
        chans.append(np.zeros_like(gray))
    maps = [_to_stage(ch, stage) for ch in chans]
    return TeacherFeatures("sam", stage, Tensor(np.stack(maps), dtype=np.float32))


def synth_depth(sample, stage, seed, channels=DEFAULT_CHANNELS, noise_amp=0.1):
    gt = getattr(sample, "gt_disparity", None)
    if gt is None:
        raise ContractError("depth teacher requires a sample with ground-truth disparity")
    d = np.asarray(gt.data, dtype=np.float64)
    rng = np.random.default_rng(np.random.SeedSequence(
        (int(seed), _TEACHER_ID["depth_anything"], int(stage), zlib.crc32(d.tobytes()))))
    span = d.max() - d.min()
    norm = (d - d.min()) / span if span > 0 else np.zeros_like(d)
    smooth = uniform_filter(norm, size=5, mode="nearest")
    gx, gy, _, _ = _grads(norm)
    bases = [_to_stage(b, stage) for b in (norm, smooth, gx, gy)]
    maps = []
    for c in range(channels):
        base = bases[c % 4]
        noise = uniform_filter(rng.standard_normal(base.shape), size=3, mode="nearest")
        maps.append(base + (noise_amp * base.std()) * noise)
    return TeacherFeatures("depth_anything", stage, Tensor(np.stack(maps), dtype=np.float32))


def load_teacher_file(path, kind, stage):
    arr = read_ftc(path)
    if arr.ndim != 3:
        raise ContractError(f"teacher file {path} holds a {arr.ndim}-d tensor, expected [C,h,w]")
    return TeacherFeatures(kind, stage, Tensor(arr, dtype=np.float32))


class SyntheticTeacher:
    """Deterministic synthetic provider for one teacher kind."""

    def __init__(self, kind, seed, channels=DEFAULT_CHANNELS, noise_amp=0.1):
        if kind not in _TEACHER_ID:
            raise ContractError(f"unknown teacher kind {kind!r}")
        self.kind = kind
        self.seed = int(seed)
        self.channels = channels
        self.noise_amp = noise_amp

    def stage_features(self, sample, stage):
        if self.kind == "dino":
            return synth_dino(sample, stage, self.seed, self.channels)
        if self.kind == "sam":
            return synth_sam(sample, stage, self.seed, self.channels)
        return synth_depth(sample, stage, self.seed, self.channels, self.noise_amp)


class FileTeacher:
    """Loads `<kind>_stage<i>_<sampleid>.ftc` from a directory."""

    def __init__(self, root, kind):
        if kind not in _TEACHER_ID:
            raise ContractError(f"unknown teacher kind {kind!r}")
        self.root = root
        self.kind = kind

    def stage_features(self, sample, stage):
        sample_id = getattr(sample, "id", None)
        if sample_id is None:
            raise ContractError("file-backed teacher needs samples with an id")
        path = f"{self.root}/{self.kind}_stage{stage}_{sample_id}.ftc"
        return load_teacher_file(path, self.kind, stage)


def make_providers(kinds, seed, channels=DEFAULT_CHANNELS, noise_amp=0.1):
    return {kind: SyntheticTeacher(kind, seed, channels, noise_amp) for kind in kinds}
