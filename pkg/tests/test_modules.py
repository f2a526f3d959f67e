"""Parameter store seeding and the residual building blocks."""

import numpy as np
import pytest

from stereokd.errors import ContractError
from stereokd.modules import ParamStore, ResidualUnit
from stereokd.tensor import Tensor


def test_params_seeded_by_name_not_order():
    a = ParamStore(3)
    a.conv("alpha", 2, 3, 3)
    a.conv("beta", 2, 3, 3)
    b = ParamStore(3)
    b.conv("beta", 2, 3, 3)  # registered first this time
    b.conv("gamma", 4, 4, 1)
    b.conv("alpha", 2, 3, 3)
    for name in ("alpha.weight", "alpha.bias", "beta.weight", "beta.bias"):
        assert np.array_equal(a.params[name].data, b.params[name].data)


def test_different_seed_different_init():
    a = ParamStore(0).conv("c", 2, 2, 3)
    b = ParamStore(1).conv("c", 2, 2, 3)
    assert not np.array_equal(a.w.data, b.w.data)


def test_duplicate_name_rejected():
    store = ParamStore(0)
    store.conv("c", 2, 2, 3)
    with pytest.raises(ContractError, match="duplicate"):
        store.conv("c", 2, 2, 3)


def test_zero_bias_and_bounds():
    store = ParamStore(0)
    layer = store.conv("g", 4, 2, 3, zero_bias=True)
    assert np.all(layer.b.data == 0.0)
    bound = 1.0 / np.sqrt(4 * 3 * 3)
    assert np.all(np.abs(layer.w.data) <= bound)


def test_zero_grad_clears():
    store = ParamStore(0)
    layer = store.conv("c", 1, 1, 1)
    layer(Tensor(np.ones((1, 2, 2)), requires_grad=True)).sum().backward()
    assert layer.w.grad is not None
    store.zero_grad()
    assert layer.w.grad is None and layer.b.grad is None


def test_residual_unit_shapes_and_skip():
    store = ParamStore(0)
    same = ResidualUnit(store, "same", 4, 4, 1)
    assert same.skip is None
    down = ResidualUnit(store, "down", 4, 8, 2)
    assert down.skip is not None
    x = Tensor(np.random.default_rng(0).standard_normal((4, 8, 8)),
               dtype=np.float32)
    assert same(x).data.shape == (4, 8, 8)
    assert down(x).data.shape == (8, 4, 4)


def test_residual_output_nonnegative():
    store = ParamStore(1)
    unit = ResidualUnit(store, "u", 3, 3, 1)
    x = Tensor(np.random.default_rng(1).standard_normal((3, 6, 6)),
               dtype=np.float32)
    assert unit(x).data.min() >= 0.0
