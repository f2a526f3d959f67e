"""Random-dot stereogram generation and dataset plumbing."""

import json

import numpy as np
import pytest

from stereokd.datagen import (Layer, SceneSpec, StereoSample, build_dataset,
                              gen_rds, load_manifest, load_sample, random_scene)
from stereokd.errors import ContractError
from stereokd.tensor import Tensor

from helpers import stereo_violations


def test_generated_samples_satisfy_stereo_constraint():
    for seed in range(6):
        sample = gen_rds(random_scene(seed, 16, 24, density=0.5, d_max=6,
                                      n_layers=(1, 3)))
        assert stereo_violations(sample) == 0
        assert sample.valid.data.sum() > 0


def test_hand_built_occlusion_geometry():
    # one near layer over zero background: the layer shifts left by its
    # disparity in the right view, covering background just left of it
    spec = SceneSpec(0, 8, 16, 0.5, [Layer(2, 4, 6, 10, 3)])
    sample = gen_rds(spec)
    gt = sample.gt_disparity.data
    valid = sample.valid.data
    assert np.all(gt[2:6, 4:10] == 3.0)
    assert np.all(gt[:2] == 0.0)
    # background columns 1..3 on layer rows land under the shifted layer
    assert np.all(valid[2:6, 1:4] == 0.0)
    assert np.all(valid[2:6, 0] == 1.0)
    # the layer itself and the background right of it stay visible
    assert np.all(valid[2:6, 4:] == 1.0)
    assert np.all(valid[:2] == 1.0) and np.all(valid[6:] == 1.0)
    assert stereo_violations(sample) == 0


def test_left_edge_pixels_invalid_when_projected_out():
    spec = SceneSpec(1, 8, 16, 0.5, [Layer(0, 0, 8, 16, 4)])
    sample = gen_rds(spec)
    assert np.all(sample.valid.data[:, :4] == 0.0)
    assert np.all(sample.valid.data[:, 4:] == 1.0)


def test_scene_validation():
    with pytest.raises(ContractError, match="density"):
        gen_rds(SceneSpec(0, 8, 8, 0.0, []))
    with pytest.raises(ContractError, match="disparity"):
        gen_rds(SceneSpec(0, 8, 8, 0.5, [Layer(0, 0, 4, 4, -1)]))
    with pytest.raises(ContractError, match="disparity"):
        gen_rds(SceneSpec(0, 8, 8, 0.5, [Layer(0, 0, 4, 4, 65)]))
    with pytest.raises(ContractError, match="bounds"):
        gen_rds(SceneSpec(0, 8, 8, 0.5, [Layer(0, 0, 9, 4, 1)]))
    with pytest.raises(ContractError, match="front-to-back"):
        gen_rds(SceneSpec(0, 8, 8, 0.5,
                          [Layer(0, 0, 4, 4, 1), Layer(4, 4, 8, 8, 2)]))
    with pytest.raises(ContractError, match="d_max"):
        random_scene(0, 8, 8, d_max=65)


def test_sample_validation():
    ok = {"left": Tensor(np.zeros((3, 8, 8))), "right": Tensor(np.zeros((3, 8, 8))),
          "gt_disparity": Tensor(np.zeros((8, 8))), "valid": Tensor(np.ones((8, 8)))}
    StereoSample(**ok)
    with pytest.raises(ContractError, match="multiple of 4"):
        StereoSample(Tensor(np.zeros((3, 6, 8))), ok["right"],
                     Tensor(np.zeros((6, 8))), Tensor(np.ones((6, 8))))
    with pytest.raises(ContractError, match="left image"):
        StereoSample(Tensor(np.zeros((1, 8, 8))), ok["right"],
                     ok["gt_disparity"], ok["valid"])
    with pytest.raises(ContractError, match="negative"):
        StereoSample(ok["left"], ok["right"],
                     Tensor(np.full((8, 8), -1.0)), ok["valid"])


def test_generation_is_deterministic():
    a = gen_rds(random_scene(5, 16, 16, density=0.4, d_max=4, n_layers=(1, 2)))
    b = gen_rds(random_scene(5, 16, 16, density=0.4, d_max=4, n_layers=(1, 2)))
    for field in ("left", "right", "gt_disparity", "valid"):
        assert np.array_equal(getattr(a, field).data, getattr(b, field).data)


def test_build_dataset_and_manifest_round_trip(tmp_path):
    cfg = {"height": 16, "width": 16, "density": 0.5, "d_max": 3,
           "n_train": 2, "n_val": 2, "layers_min": 1, "layers_max": 2}
    paths = build_dataset(cfg, str(tmp_path), base_seed=0)
    split, items = load_manifest(paths["train"])
    assert split == "train" and len(items) == 2
    sample = load_sample(items[0])
    assert sample.id == "train_00000"
    assert stereo_violations(sample) == 0
    # dot images are binary, so the 8-bit store round-trips them exactly
    fresh = gen_rds(random_scene(0, 16, 16, cfg["density"], cfg["d_max"], (1, 2)))
    assert np.array_equal(sample.left.data, fresh.left.data)
    assert np.array_equal(sample.gt_disparity.data, fresh.gt_disparity.data)


def test_train_and_val_use_disjoint_seeds(tmp_path):
    cfg = {"height": 16, "width": 16, "density": 0.5, "d_max": 3,
           "n_train": 1, "n_val": 1, "layers_min": 1, "layers_max": 2}
    paths = build_dataset(cfg, str(tmp_path), base_seed=0)
    _, train_items = load_manifest(paths["train"])
    _, val_items = load_manifest(paths["val"])
    a = load_sample(train_items[0])
    b = load_sample(val_items[0])
    assert not np.array_equal(a.left.data, b.left.data)


def test_manifest_errors(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text(json.dumps({"items": []}))
    with pytest.raises(ContractError, match="split"):
        load_manifest(str(path))
    doc = {"split": "train",
           "items": [{"id": "a", "left": "missing.pgm", "right": "missing.pgm",
                      "gt": "missing.pfm", "valid": "missing.pgm"}]}
    path.write_text(json.dumps(doc))
    with pytest.raises(ContractError, match="missing file"):
        load_manifest(str(path))
    from stereokd.fileio import write_pfm, write_pgm
    write_pgm(str(tmp_path / "missing.pgm"), np.zeros((4, 4)))
    write_pfm(str(tmp_path / "missing.pfm"), np.zeros((4, 4)))
    doc["items"] = [dict(doc["items"][0]), dict(doc["items"][0])]
    path.write_text(json.dumps(doc))
    with pytest.raises(ContractError, match="duplicate"):
        load_manifest(str(path))
