"""Convolution inner loops (forward, input/weight adjoints).

The kernel footprint is forward-offset: output pixel (y, x) reads input
pixels (y+a, x+b) for 0 <= a, b < k, with zero padding past the image.
Loop kernels are jitted on the numba backend; the numpy fallback uses
per-tap shifted matmuls (BLAS). Every path parallelizes only over output
elements, so results are independent of thread count; the two backends
agree to float round-off.
"""

import numpy as np

from . import backend

try:
    from numba import prange
except ImportError:  # pragma: no cover
    prange = range


def conv_fwd_loop(x, wt, bias, out):
    # wt layout (co, a, b, ci): unit-stride inner reduction
    h, w, cin = x.shape
    cout = wt.shape[0]
    k = wt.shape[1]
    for y in prange(h):
        for xx in range(w):
            for co in range(cout):
                acc = bias[co]
                for a in range(k):
                    ya = y + a
                    if ya >= h:
                        continue
                    for b in range(k):
                        xb = xx + b
                        if xb >= w:
                            continue
                        for ci in range(cin):
                            acc += x[ya, xb, ci] * wt[co, a, b, ci]
                out[y, xx, co] = acc


def conv_bwd_input_loop(dpre, wt, din):
    # gather adjoint: din[y,x,ci] = sum dpre[y-a, x-b, co] * w[co,ci,a,b]
    # wt layout (a, b, ci, co)
    h, w, cin = din.shape
    k = wt.shape[0]
    cout = wt.shape[3]
    for y in prange(h):
        for xx in range(w):
            for ci in range(cin):
                acc = 0.0
                for a in range(k):
                    ya = y - a
                    if ya < 0:
                        continue
                    for b in range(k):
                        xb = xx - b
                        if xb < 0:
                            continue
                        for co in range(cout):
                            acc += dpre[ya, xb, co] * wt[a, b, ci, co]
                din[y, xx, ci] = acc


def conv_bwd_weights_loop(dpre, x, k, dw):
    # dw[co,ci,a,b] = sum_yx dpre[y,x,co] * x[y+a, x+b, ci]
    # parallel over co, fixed pixel order: thread-count independent
    h, w, cin = x.shape
    cout = dpre.shape[2]
    for co in prange(cout):
        local = np.zeros((k, k, cin))
        for y in range(h):
            for xx in range(w):
                s = dpre[y, xx, co]
                for a in range(k):
                    ya = y + a
                    if ya >= h:
                        continue
                    for b in range(k):
                        xb = xx + b
                        if xb >= w:
                            continue
                        for ci in range(cin):
                            local[a, b, ci] += s * x[ya, xb, ci]
        for ci in range(cin):
            for a in range(k):
                for b in range(k):
                    dw[co, ci, a, b] = local[a, b, ci]


_jitted = {}


def _jit(name, fn):
    if name not in _jitted:
        import numba

        _jitted[name] = numba.njit(cache=True, parallel=True, fastmath=True)(fn)
    return _jitted[name]


def conv_fwd(x, weights, bias):
    """Linear (pre-activation) convolution output, same resolution."""
    h, w, cin = x.shape
    cout, cin_w, kh, kw = weights.shape
    if cin_w != cin:
        raise ValueError(f"input has {cin} channels, layer expects {cin_w}")
    if backend.use_numba():
        out = np.empty((h, w, cout))
        wt = np.ascontiguousarray(weights.transpose(0, 2, 3, 1))
        _jit("fwd", conv_fwd_loop)(x, wt, bias, out)
        return out
    xp = np.zeros((h + kh - 1, w + kw - 1, cin))
    xp[:h, :w] = x
    out = np.tile(bias, (h, w, 1))
    for a in range(kh):
        for b in range(kw):
            out += (xp[a : a + h, b : b + w].reshape(-1, cin) @ weights[:, :, a, b].T).reshape(
                h, w, cout
            )
    return out


def conv_bwd_input(dpre, weights, h, w, cin_limit=None):
    """Gradient w.r.t. the layer input given the pre-activation gradient.

    ``cin_limit`` restricts the result to the first channels (callers that
    only consume a prefix of the input gradient skip the rest).
    """
    cout, cin, kh, kw = weights.shape
    if cin_limit is not None:
        cin = min(cin, cin_limit)
        weights = weights[:, :cin]
    if backend.use_numba():
        din = np.empty((h, w, cin))
        wt = np.ascontiguousarray(weights.transpose(2, 3, 1, 0))
        _jit("bwd_in", conv_bwd_input_loop)(dpre, wt, din)
        return din
    din = np.zeros((h, w, cin))
    for a in range(kh):
        for b in range(kw):
            # output (y, x) drew on input (y+a, x+b)
            ha, wb = h - a, w - b
            din[a:, b:] += (
                dpre[:ha, :wb].reshape(-1, cout) @ weights[:, :, a, b]
            ).reshape(ha, wb, cin)
    return din


def conv_bwd_weights(dpre, x, kh, kw):
    """Gradient w.r.t. weights and bias."""
    h, w, cin = x.shape
    cout = dpre.shape[2]
    db = dpre.sum(axis=(0, 1))
    if backend.use_numba():
        dw = np.empty((cout, cin, kh, kw))
        _jit("bwd_w", conv_bwd_weights_loop)(dpre, x, kh, dw)
        return dw, db
    dw = np.zeros((cout, cin, kh, kw))
    for a in range(kh):
        for b in range(kw):
            dw[:, :, a, b] = np.einsum("hwo,hwi->oi", dpre[: h - a, : w - b], x[a:, b:])
    return dw, db
