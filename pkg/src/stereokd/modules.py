"""Small layer helpers: named parameter store, conv layer, residual unit.

Parameters are seeded by (global seed, crc32 of the parameter name), so a
given name always gets the same initial values no matter how many other
parameters exist. Ablation variants that build subsets of the network
therefore share initialization with the full model.
"""

import zlib

import numpy as np

from .errors import ContractError
from .tensor import Tensor, conv2d


class ParamStore:
    def __init__(self, seed, dtype=np.float32):
        self.seed = int(seed)
        self.dtype = dtype
        self.params = {}

    def _register(self, name, data):
        if name in self.params:
            raise ContractError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=True, dtype=self.dtype)
        self.params[name] = t
        return t

    def uniform(self, name, shape, fan_in):
        rng = np.random.default_rng(
            np.random.SeedSequence((self.seed, zlib.crc32(name.encode("ascii")))))
        bound = 1.0 / float(np.sqrt(fan_in))
        return self._register(name, rng.uniform(-bound, bound, size=shape))

    def zeros(self, name, shape):
        return self._register(name, np.zeros(shape))

    def conv(self, name, c_in, c_out, k, stride=1, padding=None, zero_bias=False):
        if padding is None:
            padding = k // 2
        fan_in = c_in * k * k
        w = self.uniform(f"{name}.weight", (c_out, c_in, k, k), fan_in)
        if zero_bias:
            b = self.zeros(f"{name}.bias", (c_out,))
        else:
            b = self.uniform(f"{name}.bias", (c_out,), fan_in)
        return Conv(w, b, stride, padding)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def n_elements(self):
        return sum(p.data.size for p in self.params.values())


class Conv:
    def __init__(self, w, b, stride, padding):
        self.w = w
        self.b = b
        self.stride = stride
        self.padding = padding

    def __call__(self, x):
        return conv2d(x, self.w, self.b, self.stride, self.padding)

    def param_count(self):
        return self.w.data.size + self.b.data.size


class ResidualUnit:
    """conv-norm-relu, conv-norm, projected skip when shape changes, relu."""

    def __init__(self, store, name, c_in, c_out, stride=1):
        self.conv1 = store.conv(f"{name}.conv1", c_in, c_out, 3, stride)
        self.conv2 = store.conv(f"{name}.conv2", c_out, c_out, 3, 1)
        if c_in != c_out or stride != 1:
            self.skip = store.conv(f"{name}.skip", c_in, c_out, 1, stride, padding=0)
        else:
            self.skip = None

    def __call__(self, x):
        y = self.conv1(x).channel_norm().relu()
        y = self.conv2(y).channel_norm()
        s = self.skip(x) if self.skip is not None else x
        return y.add(s).relu()
