"""Pure-numpy fallback implementations of the hot kernels.

Convolutions go through an im2col copy and a single BLAS matmul; the
gather/scatter kernels are vectorized with fancy indexing. Shapes follow the
channels-first single-sample layout used across the package.
"""

import numpy as np


def _im2col(xp, kh, kw, stride):
    c, hp, wp = xp.shape
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    s0, s1, s2 = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, (c, kh, kw, oh, ow), (s0, s1, s2, s1 * stride, s2 * stride))
    return np.ascontiguousarray(view).reshape(c * kh * kw, oh * ow), oh, ow


def conv2d_fwd(xp, w, stride):
    o = w.shape[0]
    cols, oh, ow = _im2col(xp, w.shape[2], w.shape[3], stride)
    return (w.reshape(o, -1) @ cols).reshape(o, oh, ow)


def conv2d_bwd_weight(g, xp, kh, kw, stride):
    o = g.shape[0]
    cols, oh, ow = _im2col(xp, kh, kw, stride)
    return (g.reshape(o, -1) @ cols.T).reshape(o, -1, kh, kw)


def conv2d_bwd_input(g, w, stride, hp, wp):
    o, c, kh, kw = w.shape
    oh, ow = g.shape[1], g.shape[2]
    gcols = (w.reshape(o, -1).T @ g.reshape(o, -1)).reshape(c, kh, kw, oh, ow)
    gxp = np.zeros((c, hp, wp), dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            gxp[:, i:i + stride * oh:stride, j:j + stride * ow:stride] += gcols[:, i, j]
    return gxp


def corr_fwd(cl, cr, max_disp, scale):
    c, h, w = cl.shape
    vol = np.zeros((h, w, max_disp), dtype=cl.dtype)
    for z in range(max_disp):
        if z < w:
            vol[:, z:, z] = np.einsum("chw,chw->hw", cl[:, :, z:], cr[:, :, :w - z]) * scale
    return vol


def corr_bwd(g, cl, cr, scale):
    w = cl.shape[2]
    gcl = np.zeros_like(cl)
    gcr = np.zeros_like(cr)
    for z in range(g.shape[2]):
        if z >= w:
            break
        gz = g[:, z:, z] * scale
        gcl[:, :, z:] += gz[None] * cr[:, :, :w - z]
        gcr[:, :, :w - z] += gz[None] * cl[:, :, z:]
    return gcl, gcr


def _lookup_coords(disp, radius, pos_scale, depth):
    # float64 tap positions, same expression as the jit backend, so both
    # backends clamp to identical integer cells
    taps = (disp.astype(np.float64)[None] * pos_scale
            + np.arange(-radius, radius + 1, dtype=np.float64)[:, None, None])
    taps = np.clip(taps, 0.0, depth - 1)
    lo = np.minimum(taps.astype(np.int64), max(depth - 2, 0))
    frac = (taps - lo).astype(disp.dtype)
    hi = np.minimum(lo + 1, depth - 1)
    return lo, hi, frac


def lookup_fwd(vol, disp, radius, pos_scale):
    h, w, depth = vol.shape
    lo, hi, frac = _lookup_coords(disp, radius, pos_scale, depth)
    yy = np.arange(h)[None, :, None]
    xx = np.arange(w)[None, None, :]
    return vol[yy, xx, lo] * (1.0 - frac) + vol[yy, xx, hi] * frac


def lookup_bwd(g, disp, radius, pos_scale, depth):
    h, w = disp.shape
    lo, hi, frac = _lookup_coords(disp, radius, pos_scale, depth)
    gvol = np.zeros((h, w, depth), dtype=g.dtype)
    yy = np.broadcast_to(np.arange(h)[None, :, None], lo.shape)
    xx = np.broadcast_to(np.arange(w)[None, None, :], lo.shape)
    np.add.at(gvol, (yy, xx, lo), g * (1.0 - frac))
    np.add.at(gvol, (yy, xx, hi), g * frac)
    return gvol


def _axis_coords(n_in, n_out):
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.minimum(src.astype(np.int64), max(n_in - 2, 0))
    frac = src - lo
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, frac


def bilinear_fwd(x, oh, ow):
    _, h, w = x.shape
    ylo, yhi, fy = _axis_coords(h, oh)
    xlo, xhi, fx = _axis_coords(w, ow)
    fy = fy[None, :, None].astype(x.dtype)
    fx = fx[None, None, :].astype(x.dtype)
    rows = x[:, ylo, :] * (1.0 - fy) + x[:, yhi, :] * fy
    return rows[:, :, xlo] * (1.0 - fx) + rows[:, :, xhi] * fx


def bilinear_bwd(g, h, w):
    c, oh, ow = g.shape
    ylo, yhi, fy = _axis_coords(h, oh)
    xlo, xhi, fx = _axis_coords(w, ow)
    fy = fy[None, :, None].astype(g.dtype)
    fx = fx[None, None, :].astype(g.dtype)
    grows = np.zeros((c, h, ow), dtype=g.dtype)
    np.add.at(grows, (slice(None), ylo), g * (1.0 - fy))
    np.add.at(grows, (slice(None), yhi), g * fy)
    gx = np.zeros((c, h, w), dtype=g.dtype)
    np.add.at(gx, (Ellipsis, xlo), grows * (1.0 - fx))
    np.add.at(gx, (Ellipsis, xhi), grows * fx)
    return gx
