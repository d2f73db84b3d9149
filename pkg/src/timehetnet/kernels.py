"""Fused forward/backward kernels for the recurrent cell.

The per-step recurrence cannot be vectorized over time, so the whole
time loop runs inside one compiled kernel (numba) instead of hundreds
of interpreter-level array ops.  A pure-numpy twin with identical
semantics serves as fallback when numba is unavailable or disabled via
the TIMEHETNET_NO_NUMBA environment variable; both paths are exercised
by the gradient-check tests.

Layout convention: activations are time-major [T, B, H] so each step
touches contiguous blocks.  Gate order inside fused arrays is
(update, reset, candidate).
"""

from __future__ import annotations

import os

import numpy as np

_FORCE_NUMPY = os.environ.get("TIMEHETNET_NO_NUMBA", "") not in ("", "0")

try:  # pragma: no cover - exercised implicitly at import
    if _FORCE_NUMPY:
        raise ImportError("numba disabled via TIMEHETNET_NO_NUMBA")
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


def using_numba() -> bool:
    return _HAVE_NUMBA


def _sigmoid_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _gru_forward_numpy(xw, u_zr, u_h, h0):
    """xw: [T,B,3H] input projections (bias folded in); h0: [B,H]."""
    steps, batch, h3 = xw.shape
    width = h3 // 3
    hseq = np.empty((steps, batch, width))
    zs = np.empty((steps, batch, width))
    rs = np.empty((steps, batch, width))
    cs = np.empty((steps, batch, width))
    h = h0.copy()
    for t in range(steps):
        gates = _sigmoid_np(xw[t, :, :2 * width] + h @ u_zr)
        z = gates[:, :width]
        r = gates[:, width:]
        hc = np.tanh(xw[t, :, 2 * width:] + (r * h) @ u_h)
        h = h + z * (hc - h)
        zs[t] = z
        rs[t] = r
        cs[t] = hc
        hseq[t] = h
    return hseq, zs, rs, cs


def _gru_backward_numpy(hseq, zs, rs, cs, u_zr, u_h, h0, gout):
    steps, batch, width = hseq.shape
    dxw = np.empty((steps, batch, 3 * width))
    du_zr = np.zeros_like(u_zr)
    du_h = np.zeros_like(u_h)
    dh = np.zeros((batch, width))
    for t in range(steps - 1, -1, -1):
        hp = hseq[t - 1] if t > 0 else h0
        z, r, hc = zs[t], rs[t], cs[t]
        dtot = gout[t] + dh
        dah = dtot * z * (1.0 - hc * hc)
        daz = dtot * (hc - hp) * z * (1.0 - z)
        dh = dtot * (1.0 - z)
        drh = dah @ u_h.T
        du_h += (r * hp).T @ dah
        dar = drh * hp * r * (1.0 - r)
        dh += drh * r
        dxw[t, :, :width] = daz
        dxw[t, :, width:2 * width] = dar
        dxw[t, :, 2 * width:] = dah
        dazr = dxw[t, :, :2 * width]
        du_zr += hp.T @ dazr
        dh += dazr @ u_zr.T
    return dxw, du_zr, du_h, dh


@njit(cache=True)
def _gru_forward_nb(xw, u_zr, u_h, h0):  # pragma: no cover - compiled
    steps, batch, h3 = xw.shape
    width = h3 // 3
    hseq = np.empty((steps, batch, width))
    zs = np.empty((steps, batch, width))
    rs = np.empty((steps, batch, width))
    cs = np.empty((steps, batch, width))
    h = h0.copy()
    rh = np.empty((batch, width))
    for t in range(steps):
        g = np.dot(h, u_zr)
        for i in range(batch):
            for j in range(width):
                az = xw[t, i, j] + g[i, j]
                ar = xw[t, i, width + j] + g[i, width + j]
                if az >= 0.0:
                    z = 1.0 / (1.0 + np.exp(-az))
                else:
                    e = np.exp(az)
                    z = e / (1.0 + e)
                if ar >= 0.0:
                    r = 1.0 / (1.0 + np.exp(-ar))
                else:
                    e = np.exp(ar)
                    r = e / (1.0 + e)
                zs[t, i, j] = z
                rs[t, i, j] = r
                rh[i, j] = r * h[i, j]
        a = np.dot(rh, u_h)
        for i in range(batch):
            for j in range(width):
                hc = np.tanh(xw[t, i, 2 * width + j] + a[i, j])
                cs[t, i, j] = hc
                h[i, j] = h[i, j] + zs[t, i, j] * (hc - h[i, j])
                hseq[t, i, j] = h[i, j]
    return hseq, zs, rs, cs


@njit(cache=True)
def _gru_backward_nb(hseq, zs, rs, cs, u_zr, u_h, h0, gout):  # pragma: no cover
    steps, batch, width = hseq.shape
    dxw = np.empty((steps, batch, 3 * width))
    du_zr = np.zeros_like(u_zr)
    du_h = np.zeros_like(u_h)
    dh = np.zeros((batch, width))
    dah = np.empty((batch, width))
    rh = np.empty((batch, width))
    for t in range(steps - 1, -1, -1):
        hp = hseq[t - 1] if t > 0 else h0
        for i in range(batch):
            for j in range(width):
                z = zs[t, i, j]
                hc = cs[t, i, j]
                dtot = gout[t, i, j] + dh[i, j]
                dah[i, j] = dtot * z * (1.0 - hc * hc)
                dxw[t, i, j] = dtot * (hc - hp[i, j]) * z * (1.0 - z)
                dh[i, j] = dtot * (1.0 - z)
                rh[i, j] = rs[t, i, j] * hp[i, j]
        drh = np.dot(dah, u_h.T)
        du_h += np.dot(rh.T, dah)
        for i in range(batch):
            for j in range(width):
                r = rs[t, i, j]
                dxw[t, i, width + j] = drh[i, j] * hp[i, j] * r * (1.0 - r)
                dxw[t, i, 2 * width + j] = dah[i, j]
                dh[i, j] += drh[i, j] * r
        dazr = dxw[t, :, :2 * width].copy()
        du_zr += np.dot(hp.T, dazr)
        dh += np.dot(dazr, u_zr.T)
    return dxw, du_zr, du_h, dh


def gru_forward(xw, u_zr, u_h, h0):
    if _HAVE_NUMBA:
        return _gru_forward_nb(xw, u_zr, u_h, h0)
    return _gru_forward_numpy(xw, u_zr, u_h, h0)


def gru_backward(hseq, zs, rs, cs, u_zr, u_h, h0, gout):
    if _HAVE_NUMBA:
        return _gru_backward_nb(hseq, zs, rs, cs, u_zr, u_h, h0,
                                np.ascontiguousarray(gout))
    return _gru_backward_numpy(hseq, zs, rs, cs, u_zr, u_h, h0, gout)
