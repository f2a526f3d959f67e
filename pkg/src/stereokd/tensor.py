"""Dense tensors with reverse-mode automatic differentiation.

Single-sample, channels-first layout. Each op computes its result eagerly
with numpy (or a backend kernel) and records a closure that routes the
output gradient to its parents; backward() replays the closures in reverse
topological order. float32 is the working precision, float64 is available
for finite-difference checking.

Broadcasting is deliberately restricted: the only sanctioned case is a
[1,h,w] gate map against a [C,h,w] feature map inside mul.
"""

import numpy as np
from scipy.special import expit

from .backend import kernels
from .errors import ContractError, DimensionError, EmptyReductionError, GraphError

_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _float_dtype(dtype):
    return dtype if dtype in (np.float32, np.float64) else np.float32


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        dt = dtype if dtype is not None else _float_dtype(arr.dtype)
        # always copy so no tensor ever aliases caller-owned memory
        self.data = np.array(arr, dtype=dt)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = "leaf"
        self._consumed = False

    @classmethod
    def _node(cls, data, parents, op):
        t = cls.__new__(cls)
        t.data = data
        t.grad = None
        t._consumed = False
        t._op = op
        if _grad_enabled and any(p.requires_grad for p in parents):
            t.requires_grad = True
            t._parents = tuple(parents)
        else:
            t.requires_grad = False
            t._parents = ()
        t._backward = None
        return t

    def _set_backward(self, fn):
        # drop the closure when grad tracking skipped this node
        if self._parents:
            self._backward = fn

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, op={self._op})"

    def _acc(self, g):
        self.grad = g if self.grad is None else self.grad + g

    def detach(self):
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def backward(self):
        if self.data.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {self.data.shape}")
        if self._consumed:
            raise GraphError("backward already ran on this graph; rebuild the forward pass")
        if self._backward is None:
            raise GraphError("tensor has no recorded graph to differentiate")
        # iterative post-order so deep iteration chains cannot hit the
        # recursion limit
        topo = []
        visited = {id(self)}
        stack = [[self, 0]]
        while stack:
            frame = stack[-1]
            node, idx = frame
            if idx < len(node._parents):
                frame[1] += 1
                p = node._parents[idx]
                if id(p) not in visited:
                    # a consumed node has dropped its closure, so it must be
                    # rejected before the closure check treats it as a leaf
                    if p._consumed:
                        raise GraphError("graph shares nodes with an already-consumed backward pass")
                    if p._backward is not None:
                        visited.add(id(p))
                        stack.append([p, 0])
            else:
                stack.pop()
                topo.append(node)
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            node._backward()
            node._consumed = True
            node._backward = None
            node._parents = ()

    # ---- elementwise ----

    def add(self, other):
        other = as_tensor(other, self.dtype)
        _same_shape(self, other, "add")
        out = Tensor._node(self.data + other.data, (self, other), "add")

        def bwd():
            g = out.grad
            if self.requires_grad:
                self._acc(g)
            if other.requires_grad:
                other._acc(g)
        out._set_backward(bwd)
        return out

    def sub(self, other):
        other = as_tensor(other, self.dtype)
        _same_shape(self, other, "sub")
        out = Tensor._node(self.data - other.data, (self, other), "sub")

        def bwd():
            g = out.grad
            if self.requires_grad:
                self._acc(g)
            if other.requires_grad:
                other._acc(-g)
        out._set_backward(bwd)
        return out

    def mul(self, other):
        other = as_tensor(other, self.dtype)
        _mul_shapes(self, other)
        a, b = self.data, other.data
        out = Tensor._node(a * b, (self, other), "mul")

        def bwd():
            g = out.grad
            if self.requires_grad:
                self._acc(_reduce_to(g * b, a.shape))
            if other.requires_grad:
                other._acc(_reduce_to(g * a, b.shape))
        out._set_backward(bwd)
        return out

    def scale(self, factor, shift=0.0):
        out = Tensor._node(self.data * factor + shift, (self,), "scale")

        def bwd():
            self._acc(out.grad * factor)
        out._set_backward(bwd)
        return out

    def neg(self):
        return self.scale(-1.0)

    def relu(self):
        x = self.data
        out = Tensor._node(np.maximum(x, 0.0), (self,), "relu")

        def bwd():
            self._acc(out.grad * (x > 0))
        out._set_backward(bwd)
        return out

    def abs(self):
        x = self.data
        out = Tensor._node(np.abs(x), (self,), "abs")

        def bwd():
            self._acc(out.grad * np.sign(x))
        out._set_backward(bwd)
        return out

    def sigmoid(self):
        y = expit(self.data)
        out = Tensor._node(y, (self,), "sigmoid")

        def bwd():
            self._acc(out.grad * y * (1.0 - y))
        out._set_backward(bwd)
        return out

    def tanh(self):
        y = np.tanh(self.data)
        out = Tensor._node(y, (self,), "tanh")

        def bwd():
            self._acc(out.grad * (1.0 - y * y))
        out._set_backward(bwd)
        return out

    def softmax(self, axis):
        x = self.data
        if not -x.ndim <= axis < x.ndim:
            raise DimensionError(f"softmax axis {axis} invalid for shape {x.shape}")
        m = x.max(axis=axis, keepdims=True)
        e = np.exp(x - m)
        y = e / e.sum(axis=axis, keepdims=True)
        out = Tensor._node(y, (self,), "softmax")

        def bwd():
            g = out.grad
            self._acc(y * (g - (g * y).sum(axis=axis, keepdims=True)))
        out._set_backward(bwd)
        return out

    # ---- shape ----

    def reshape(self, shape):
        src = self.data.shape
        out = Tensor._node(self.data.reshape(shape).copy(), (self,), "reshape")

        def bwd():
            self._acc(out.grad.reshape(src))
        out._set_backward(bwd)
        return out

    def sum(self):
        out = Tensor._node(self.data.sum(), (self,), "sum")

        def bwd():
            self._acc(np.broadcast_to(out.grad, self.data.shape).copy())
        out._set_backward(bwd)
        return out

    # ---- structured ops ----

    def conv2d(self, weight, bias=None, stride=1, padding=0):
        return conv2d(self, weight, bias, stride, padding)

    def channel_norm(self, eps=1e-5):
        x = self.data
        if x.ndim != 3:
            raise DimensionError(f"channel_norm expects [C,H,W], got shape {x.shape}")
        mu = x.mean(axis=(1, 2), keepdims=True)
        var = x.var(axis=(1, 2), keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xh = (x - mu) * inv
        out = Tensor._node(xh, (self,), "channel_norm")

        def bwd():
            g = out.grad
            gm = g.mean(axis=(1, 2), keepdims=True)
            gxh = (g * xh).mean(axis=(1, 2), keepdims=True)
            self._acc((g - gm - xh * gxh) * inv)
        out._set_backward(bwd)
        return out

    __add__ = add
    __sub__ = sub

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.scale(float(other))
        return self.mul(other)

    def __neg__(self):
        return self.neg()


def as_tensor(x, dtype=np.float32):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    dt = arr.dtype if arr.dtype in (np.float32, np.float64) else dtype
    return Tensor(arr, requires_grad=False, dtype=dt)


def _same_shape(a, b, op):
    if a.data.shape != b.data.shape:
        for ax, (da, db) in enumerate(zip(a.data.shape, b.data.shape)):
            if da != db:
                raise DimensionError(f"{op}: axis {ax} mismatch ({da} vs {db}) for shapes {a.data.shape} and {b.data.shape}")
        raise DimensionError(f"{op}: rank mismatch for shapes {a.data.shape} and {b.data.shape}")


def _mul_shapes(a, b):
    sa, sb = a.data.shape, b.data.shape
    if sa == sb:
        return
    # gate broadcast: [1,h,w] against [C,h,w], either order
    if len(sa) == 3 and len(sb) == 3 and sa[1:] == sb[1:] and (sa[0] == 1 or sb[0] == 1):
        return
    raise DimensionError(f"mul: shapes {sa} and {sb} differ outside the [1,h,w] gate broadcast")


def _reduce_to(g, shape):
    if g.shape == shape:
        return g
    return g.sum(axis=0, keepdims=True)


def concat(tensors, axis=0):
    if not tensors:
        raise ContractError("concat of an empty list")
    datas = [t.data for t in tensors]
    out = Tensor._node(np.concatenate(datas, axis=axis), tuple(tensors), "concat")
    sizes = [d.shape[axis] for d in datas]

    def bwd():
        g = out.grad
        off = 0
        sl = [slice(None)] * g.ndim
        for t, n in zip(tensors, sizes):
            if t.requires_grad:
                sl[axis] = slice(off, off + n)
                t._acc(g[tuple(sl)])
            off += n
    out._set_backward(bwd)
    return out


def narrow(x, axis, start, length):
    """Contiguous slice along one axis; backward scatters into place."""
    nd = x.data.ndim
    if not -nd <= axis < nd:
        raise DimensionError(f"narrow axis {axis} invalid for shape {x.data.shape}")
    sl = [slice(None)] * nd
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    out = Tensor._node(x.data[sl].copy(), (x,), "narrow")

    def bwd():
        g = np.zeros_like(x.data)
        g[sl] = out.grad
        x._acc(g)
    out._set_backward(bwd)
    return out


def conv2d(x, weight, bias=None, stride=1, padding=0):
    xd, wd = x.data, weight.data
    if wd.ndim != 4:
        raise DimensionError(f"conv2d weight must be [C_out,C_in,kh,kw], got shape {wd.shape}")
    batched = xd.ndim == 4
    if xd.ndim not in (3, 4):
        raise DimensionError(f"conv2d input must be [C,H,W] or [N,C,H,W], got shape {xd.shape}")
    cin_axis = 1 if batched else 0
    if xd.shape[cin_axis] != wd.shape[1]:
        raise DimensionError(
            f"conv2d: input channel axis {cin_axis} has {xd.shape[cin_axis]} channels, weight expects {wd.shape[1]}")
    if bias is not None and bias.data.shape != (wd.shape[0],):
        raise DimensionError(f"conv2d: bias shape {bias.data.shape} does not match {wd.shape[0]} output channels")
    h, w = xd.shape[-2], xd.shape[-1]
    if h + 2 * padding < wd.shape[2] or w + 2 * padding < wd.shape[3]:
        raise DimensionError(
            f"conv2d: padded spatial dims {(h + 2 * padding, w + 2 * padding)} smaller than kernel {wd.shape[2:]}")
    kern = kernels()

    def pad3(a):
        if padding == 0:
            return a
        return np.pad(a, ((0, 0), (padding, padding), (padding, padding)))

    if batched:
        xps = [pad3(xd[n]) for n in range(xd.shape[0])]
        out_data = np.stack([kern.conv2d_fwd(xp, wd, stride) for xp in xps])
    else:
        xps = [pad3(xd)]
        out_data = kern.conv2d_fwd(xps[0], wd, stride)
    if bias is not None:
        out_data = out_data + bias.data[:, None, None]
    parents = (x, weight) if bias is None else (x, weight, bias)
    out = Tensor._node(out_data, parents, "conv2d")
    hp, wp = h + 2 * padding, w + 2 * padding

    def bwd():
        g = out.grad
        gs = [g[n] for n in range(g.shape[0])] if batched else [g]
        if x.requires_grad:
            gxs = []
            for gn in gs:
                gxp = kern.conv2d_bwd_input(np.ascontiguousarray(gn), wd, stride, hp, wp)
                if padding:
                    gxp = gxp[:, padding:padding + h, padding:padding + w]
                gxs.append(gxp)
            x._acc(np.stack(gxs) if batched else gxs[0])
        if weight.requires_grad:
            gw = None
            for gn, xp in zip(gs, xps):
                gwn = kern.conv2d_bwd_weight(np.ascontiguousarray(gn), xp, wd.shape[2], wd.shape[3], stride)
                gw = gwn if gw is None else gw + gwn
            weight._acc(gw)
        if bias is not None and bias.requires_grad:
            bias._acc(g.sum(axis=(-2, -1)).sum(axis=0) if batched else g.sum(axis=(-2, -1)))
    out._set_backward(bwd)
    return out


def avg_pool2(x):
    xd = x.data
    if xd.ndim != 3:
        raise DimensionError(f"avg_pool2 expects [C,H,W], got shape {xd.shape}")
    c, h, w = xd.shape
    if h == 0 or w == 0:
        raise DimensionError(f"avg_pool2 on empty spatial dims {xd.shape}")
    # replicate-pad right/bottom so odd sizes stay total
    pad_h, pad_w = h % 2, w % 2
    xp = xd
    if pad_h:
        xp = np.concatenate([xp, xp[:, -1:, :]], axis=1)
    if pad_w:
        xp = np.concatenate([xp, xp[:, :, -1:]], axis=2)
    h2, w2 = xp.shape[1], xp.shape[2]
    out_data = xp.reshape(c, h2 // 2, 2, w2 // 2, 2).mean(axis=(2, 4))
    out = Tensor._node(out_data, (x,), "avg_pool2")

    def bwd():
        g = out.grad
        gp = np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) * np.asarray(0.25, dtype=g.dtype)
        if pad_h:
            gp[:, h - 1, :] += gp[:, h, :]
            gp = gp[:, :h, :]
        if pad_w:
            gp[:, :, w - 1] += gp[:, :, w]
            gp = gp[:, :, :w]
        x._acc(gp)
    out._set_backward(bwd)
    return out


def avg_pool_last(x):
    """Average-pool the trailing axis by 2 with replicate padding when odd."""
    xd = x.data
    d = xd.shape[-1]
    if d == 0:
        raise DimensionError("avg_pool_last on an empty trailing axis")
    pad = d % 2
    xp = np.concatenate([xd, xd[..., -1:]], axis=-1) if pad else xd
    d2 = xp.shape[-1]
    out_data = xp.reshape(xp.shape[:-1] + (d2 // 2, 2)).mean(axis=-1)
    out = Tensor._node(out_data, (x,), "avg_pool_last")

    def bwd():
        g = out.grad
        gp = np.repeat(g, 2, axis=-1) * np.asarray(0.5, dtype=g.dtype)
        if pad:
            gp[..., d - 1] += gp[..., d]
            gp = gp[..., :d]
        x._acc(gp)
    out._set_backward(bwd)
    return out


def interp_bilinear(x, out_h, out_w):
    xd = x.data
    if xd.ndim != 3:
        raise DimensionError(f"interp_bilinear expects [C,h,w], got shape {xd.shape}")
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"interp_bilinear target size {(out_h, out_w)} must be >= 1")
    kern = kernels()
    out = Tensor._node(kern.bilinear_fwd(xd, out_h, out_w), (x,), "interp_bilinear")
    h, w = xd.shape[1], xd.shape[2]

    def bwd():
        x._acc(kern.bilinear_bwd(np.ascontiguousarray(out.grad), h, w))
    out._set_backward(bwd)
    return out


def correlation(c_left, c_right, max_disp, scale):
    """Inner-product volume vol[y,x,z] = scale * <c_left(:,y,x), c_right(:,y,x-z)>."""
    a, b = c_left.data, c_right.data
    if a.shape != b.shape or a.ndim != 3:
        raise DimensionError(f"correlation expects matching [C,H,W] pairs, got {a.shape} and {b.shape}")
    if not 1 <= max_disp <= a.shape[2]:
        raise ContractError(f"correlation max_disp {max_disp} out of range for width {a.shape[2]}")
    kern = kernels()
    out = Tensor._node(kern.corr_fwd(a, b, max_disp, scale), (c_left, c_right), "correlation")

    def bwd():
        gcl, gcr = kern.corr_bwd(np.ascontiguousarray(out.grad), a, b, scale)
        if c_left.requires_grad:
            c_left._acc(gcl)
        if c_right.requires_grad:
            c_right._acc(gcr)
    out._set_backward(bwd)
    return out


def corr_lookup_level(vol, disp, radius, pos_scale):
    """Sample a [H,W,D] volume at disp*pos_scale + [-radius..radius] per pixel.

    disp is a plain array: sampling positions are constants, gradients flow
    only into the volume values.
    """
    vd = vol.data
    disp = np.ascontiguousarray(np.asarray(disp, dtype=vd.dtype))
    if disp.shape != vd.shape[:2]:
        raise DimensionError(f"corr_lookup: disparity shape {disp.shape} does not match volume {vd.shape[:2]}")
    kern = kernels()
    out = Tensor._node(kern.lookup_fwd(vd, disp, radius, pos_scale), (vol,), "corr_lookup")
    depth = vd.shape[2]

    def bwd():
        vol._acc(kern.lookup_bwd(np.ascontiguousarray(out.grad), disp, radius, pos_scale, depth))
    out._set_backward(bwd)
    return out


def _masked_reduce(diff, mask):
    if mask is None:
        count = diff.data.size
        reduced = diff
    else:
        mask = as_tensor(mask, diff.dtype)
        _same_shape(diff, mask, "mask")
        count = float(mask.data.sum())
        reduced = diff.mul(mask)
    if count == 0:
        raise EmptyReductionError("loss reduction over zero unmasked elements")
    return reduced.sum().scale(1.0 / count)


def l1_loss(pred, target, mask=None):
    target = as_tensor(target, pred.dtype)
    _same_shape(pred, target, "l1_loss")
    return _masked_reduce(pred.sub(target).abs(), mask)


def mse_loss(pred, target, mask=None):
    target = as_tensor(target, pred.dtype)
    _same_shape(pred, target, "mse_loss")
    d = pred.sub(target)
    return _masked_reduce(d.mul(d), mask)
