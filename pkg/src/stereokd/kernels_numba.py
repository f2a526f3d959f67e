"""Jit-compiled implementations of the hot kernels.

The convolution kernels stage patches into a contiguous buffer with explicit
loops and hand the contraction to np.dot so the heavy lifting stays in BLAS.
The gather/scatter kernels are plain loop nests. Public wrappers coerce inputs
to contiguous arrays because nopython np.dot refuses strided operands.

Index arithmetic for the interpolating kernels is done in float64 with the
same expressions as the numpy backend so both pick identical taps.
"""

import numpy as np
from numba import njit

_JIT = dict(cache=True, fastmath=True)


@njit(**_JIT)
def _im2col_t(xp, kh, kw, stride):
    c, hp, wp = xp.shape
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    cols = np.empty((oh * ow, c * kh * kw), dtype=xp.dtype)
    for oy in range(oh):
        for ox in range(ow):
            p = oy * ow + ox
            k = 0
            for ci in range(c):
                for i in range(kh):
                    for j in range(kw):
                        cols[p, k] = xp[ci, oy * stride + i, ox * stride + j]
                        k += 1
    return cols, oh, ow


@njit(**_JIT)
def _conv2d_fwd(xp, w2dt, nout, kh, kw, stride):
    cols, oh, ow = _im2col_t(xp, kh, kw, stride)
    y2 = np.dot(cols, w2dt)
    out = np.empty((nout, oh, ow), dtype=xp.dtype)
    for oy in range(oh):
        for ox in range(ow):
            p = oy * ow + ox
            for oc in range(nout):
                out[oc, oy, ox] = y2[p, oc]
    return out


def _common(*arrays):
    dt = np.result_type(*arrays)
    return [np.ascontiguousarray(a, dtype=dt) for a in arrays]


def conv2d_fwd(xp, w, stride):
    o = w.shape[0]
    xp, w = _common(xp, w)
    w2dt = np.ascontiguousarray(w.reshape(o, -1).T)
    return _conv2d_fwd(xp, w2dt, o, w.shape[2], w.shape[3], stride)


@njit(**_JIT)
def _conv2d_bwd_weight(g2, xp, kh, kw, stride):
    cols, _, _ = _im2col_t(xp, kh, kw, stride)
    return np.dot(g2, cols)


def conv2d_bwd_weight(g, xp, kh, kw, stride):
    o = g.shape[0]
    g, xp = _common(g, xp)
    g2 = np.ascontiguousarray(g.reshape(o, -1))
    gw2 = _conv2d_bwd_weight(g2, xp, kh, kw, stride)
    return gw2.reshape(o, -1, kh, kw)


@njit(**_JIT)
def _conv2d_bwd_input(g, w2d, c, kh, kw, stride, hp, wp):
    o, oh, ow = g.shape
    g2t = np.empty((oh * ow, o), dtype=g.dtype)
    for oc in range(o):
        for oy in range(oh):
            for ox in range(ow):
                g2t[oy * ow + ox, oc] = g[oc, oy, ox]
    gcols = np.dot(g2t, w2d)
    gxp = np.zeros((c, hp, wp), dtype=g.dtype)
    for oy in range(oh):
        for ox in range(ow):
            p = oy * ow + ox
            k = 0
            for ci in range(c):
                for i in range(kh):
                    for j in range(kw):
                        gxp[ci, oy * stride + i, ox * stride + j] += gcols[p, k]
                        k += 1
    return gxp


def conv2d_bwd_input(g, w, stride, hp, wp):
    o, c, kh, kw = w.shape
    g, w = _common(g, w)
    w2d = np.ascontiguousarray(w.reshape(o, -1))
    return _conv2d_bwd_input(g, w2d, c, kh, kw, stride, hp, wp)


@njit(**_JIT)
def _corr_fwd(cl, cr, max_disp, scale):
    c, h, w = cl.shape
    vol = np.zeros((h, w, max_disp), dtype=cl.dtype)
    for y in range(h):
        for x in range(w):
            zmax = min(x + 1, max_disp)
            for z in range(zmax):
                s = 0.0
                for ci in range(c):
                    s += cl[ci, y, x] * cr[ci, y, x - z]
                vol[y, x, z] = s * scale
    return vol


def corr_fwd(cl, cr, max_disp, scale):
    cl, cr = _common(cl, cr)
    return _corr_fwd(cl, cr, max_disp, scale)


@njit(**_JIT)
def _corr_bwd(g, cl, cr, scale):
    c, h, w = cl.shape
    max_disp = g.shape[2]
    gcl = np.zeros_like(cl)
    gcr = np.zeros_like(cr)
    for y in range(h):
        for x in range(w):
            zmax = min(x + 1, max_disp)
            for z in range(zmax):
                gz = g[y, x, z] * scale
                for ci in range(c):
                    gcl[ci, y, x] += gz * cr[ci, y, x - z]
                    gcr[ci, y, x - z] += gz * cl[ci, y, x]
    return gcl, gcr


def corr_bwd(g, cl, cr, scale):
    g, cl, cr = _common(g, cl, cr)
    return _corr_bwd(g, cl, cr, scale)


@njit(**_JIT)
def _lookup_fwd(vol, disp, radius, pos_scale):
    h, w, depth = vol.shape
    n = 2 * radius + 1
    out = np.empty((n, h, w), dtype=vol.dtype)
    cap = depth - 2 if depth >= 2 else 0
    top = depth - 1.0
    for y in range(h):
        for x in range(w):
            base = np.float64(disp[y, x]) * pos_scale
            for t in range(n):
                pos = base + (t - radius)
                if pos < 0.0:
                    pos = 0.0
                if pos > top:
                    pos = top
                lo = int(pos)
                if lo > cap:
                    lo = cap
                hi = lo + 1 if lo + 1 < depth else depth - 1
                f = pos - lo
                out[t, y, x] = vol[y, x, lo] * (1.0 - f) + vol[y, x, hi] * f
    return out


def lookup_fwd(vol, disp, radius, pos_scale):
    return _lookup_fwd(np.ascontiguousarray(vol), np.ascontiguousarray(disp),
                       radius, pos_scale)


@njit(**_JIT)
def _lookup_bwd(g, disp, radius, pos_scale, depth):
    n, h, w = g.shape
    gvol = np.zeros((h, w, depth), dtype=g.dtype)
    cap = depth - 2 if depth >= 2 else 0
    top = depth - 1.0
    for y in range(h):
        for x in range(w):
            base = np.float64(disp[y, x]) * pos_scale
            for t in range(n):
                pos = base + (t - radius)
                if pos < 0.0:
                    pos = 0.0
                if pos > top:
                    pos = top
                lo = int(pos)
                if lo > cap:
                    lo = cap
                hi = lo + 1 if lo + 1 < depth else depth - 1
                f = pos - lo
                gvol[y, x, lo] += g[t, y, x] * (1.0 - f)
                gvol[y, x, hi] += g[t, y, x] * f
    return gvol


def lookup_bwd(g, disp, radius, pos_scale, depth):
    return _lookup_bwd(np.ascontiguousarray(g), np.ascontiguousarray(disp),
                       radius, pos_scale, depth)


@njit(**_JIT)
def _axis_taps(n_in, n_out):
    ratio = n_in / n_out
    lo = np.empty(n_out, np.int64)
    hi = np.empty(n_out, np.int64)
    frac = np.empty(n_out, np.float64)
    cap = n_in - 2 if n_in >= 2 else 0
    top = n_in - 1.0
    for i in range(n_out):
        s = (i + 0.5) * ratio - 0.5
        if s < 0.0:
            s = 0.0
        if s > top:
            s = top
        l = int(s)
        if l > cap:
            l = cap
        lo[i] = l
        hi[i] = l + 1 if l + 1 < n_in else n_in - 1
        frac[i] = s - l
    return lo, hi, frac


@njit(**_JIT)
def _bilinear_fwd(x, oh, ow):
    c, h, w = x.shape
    ylo, yhi, fy = _axis_taps(h, oh)
    xlo, xhi, fx = _axis_taps(w, ow)
    out = np.empty((c, oh, ow), dtype=x.dtype)
    for ci in range(c):
        for oy in range(oh):
            y0 = ylo[oy]
            y1 = yhi[oy]
            gy = fy[oy]
            for ox in range(ow):
                x0 = xlo[ox]
                x1 = xhi[ox]
                gx = fx[ox]
                top_row = x[ci, y0, x0] * (1.0 - gx) + x[ci, y0, x1] * gx
                bot_row = x[ci, y1, x0] * (1.0 - gx) + x[ci, y1, x1] * gx
                out[ci, oy, ox] = top_row * (1.0 - gy) + bot_row * gy
    return out


def bilinear_fwd(x, oh, ow):
    return _bilinear_fwd(np.ascontiguousarray(x), oh, ow)


@njit(**_JIT)
def _bilinear_bwd(g, h, w):
    c, oh, ow = g.shape
    ylo, yhi, fy = _axis_taps(h, oh)
    xlo, xhi, fx = _axis_taps(w, ow)
    gx_out = np.zeros((c, h, w), dtype=g.dtype)
    for ci in range(c):
        for oy in range(oh):
            y0 = ylo[oy]
            y1 = yhi[oy]
            gy = fy[oy]
            for ox in range(ow):
                x0 = xlo[ox]
                x1 = xhi[ox]
                fxx = fx[ox]
                val = g[ci, oy, ox]
                gx_out[ci, y0, x0] += val * (1.0 - gy) * (1.0 - fxx)
                gx_out[ci, y0, x1] += val * (1.0 - gy) * fxx
                gx_out[ci, y1, x0] += val * gy * (1.0 - fxx)
                gx_out[ci, y1, x1] += val * gy * fxx
    return gx_out


def bilinear_bwd(g, h, w):
    return _bilinear_bwd(np.ascontiguousarray(g), h, w)
