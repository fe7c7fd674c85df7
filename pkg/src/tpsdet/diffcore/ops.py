"""Forward/backward pairs for the 1-D layers the reconstruction network uses.

Every ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
takes ``(dout, cache)``.  Tensors are ``(B, C, L)``; convolutions use the
cross-correlation convention (no kernel flip) and zero padding.  Arithmetic
follows the dtype of the inputs, so the same code runs in float32 for
training and float64 for gradient checks.

Internally activations live in channel-major ``(C, B, L)`` buffers and the
``(B, C, L)`` arrays handed around are transposed views of them.  With that
layout every channel is one contiguous row, so im2col is a handful of slab
copies and each convolution is a single large GEMM.  Callers may pass plain
C-ordered arrays too; they are converted once on entry.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .. import kernels
from ..errors import ConfigError, StructuralError


def _check3(x, name="x"):
    if x.ndim != 3:
        raise StructuralError(f"{name} must be (B, C, L), got shape {x.shape}")


def _cm(x):
    """Channel-major ``(C, B, L)`` buffer behind a ``(B, C, L)`` array (no copy if already so)."""
    return np.ascontiguousarray(x.transpose(1, 0, 2))


def _bcl(buf):
    return buf.transpose(1, 0, 2)


def _padded_rows(xc, pad, lp, extra):
    """Zero-padded ``(C, B*lp + extra)`` rows; sample ``b`` occupies ``[b*lp, (b+1)*lp)``."""
    C, B, L = xc.shape
    flat = np.zeros((C, B * lp + extra), dtype=xc.dtype)
    flat[:, : B * lp].reshape(C, B, lp)[:, :, pad : pad + L] = xc
    return flat


def _slab_cols(flat, C, k, stride, n):
    """Stack the ``k`` shifted views of ``flat`` into ``(k*C, n)``; row order is (j, c)."""
    cols = np.empty((k * C, n), dtype=flat.dtype)
    for j in range(k):
        cols[j * C : (j + 1) * C] = flat[:, j : j + stride * (n - 1) + 1 : stride]
    return cols


def _geometry(L, k, stride, pad):
    l_out = (L + 2 * pad - k) // stride + 1
    # per-sample segment length, rounded up so that output column b*seg + l
    # lines up with sample b, position l
    lp = L + 2 * pad
    lp += (-lp) % stride
    return l_out, lp, lp // stride


# ------------------------------------------------------------------ conv1d

def conv1d_forward(x, w, b, stride=1, pad=0):
    """Cross-correlation of ``x`` with ``w`` of shape ``(C_out, C_in, k)``."""
    _check3(x)
    B, C, L = x.shape
    c_out, c_in, k = w.shape
    if c_in != C:
        raise StructuralError(f"conv1d: input has {C} channels, kernel expects {c_in}")
    if b is not None and b.shape != (c_out,):
        raise StructuralError(f"conv1d: bias shape {b.shape} != ({c_out},)")
    l_out, lp, seg = _geometry(L, k, stride, pad)
    if l_out < 1:
        raise StructuralError(f"conv1d: output length {l_out} < 1 (L={L}, k={k}, pad={pad}, stride={stride})")
    xc = _cm(x)
    w2 = w.transpose(0, 2, 1).reshape(c_out, k * C)
    if k == 1 and stride == 1 and pad == 0:
        out = (w2 @ xc.reshape(C, B * L)).reshape(c_out, B, L)
        flat = None
    else:
        flat = _padded_rows(xc, pad, lp, k)
        cols = _slab_cols(flat, C, k, stride, B * seg)
        full = (w2 @ cols).reshape(c_out, B, seg)
        out = np.ascontiguousarray(full[:, :, :l_out]) if seg != l_out else full
    if b is not None:
        out += b[:, None, None]
    return _bcl(out), (xc, flat, w, b is not None, stride, pad, l_out)


def conv1d_backward(dout, cache):
    xc, flat, w, has_bias, stride, pad, l_out = cache
    C, B, L = xc.shape
    c_out, _, k = w.shape
    g = _cm(dout)
    db = g.sum(axis=(1, 2)) if has_bias else None
    w2 = w.transpose(0, 2, 1).reshape(c_out, k * C)
    if flat is None:
        g2 = g.reshape(c_out, B * L)
        x2 = xc.reshape(C, B * L)
        dw = (g2 @ x2.T).reshape(c_out, C, 1)
        dx = (w2.T @ g2).reshape(C, B, L)
        return _bcl(dx), dw, db
    _, lp, seg = _geometry(L, k, stride, pad)
    n = B * seg
    if seg != l_out:
        gf = np.zeros((c_out, B, seg), dtype=g.dtype)
        gf[:, :, :l_out] = g
        g2 = gf.reshape(c_out, n)
    else:
        g2 = g.reshape(c_out, n)
    cols = _slab_cols(flat, C, k, stride, n)
    dw = (g2 @ cols.T).reshape(c_out, k, C).transpose(0, 2, 1)
    dcols = w2.T @ g2
    dflat = np.zeros_like(flat, dtype=g.dtype)
    for j in range(k):
        dflat[:, j : j + stride * (n - 1) + 1 : stride] += dcols[j * C : (j + 1) * C]
    dx = np.ascontiguousarray(dflat[:, : B * lp].reshape(C, B, lp)[:, :, pad : pad + L])
    return _bcl(dx), np.ascontiguousarray(dw), db


# -------------------------------------------------------- conv_transpose1d

def conv_transpose1d_forward(x, w, b, stride=1, pad=0):
    """Adjoint of :func:`conv1d_forward`; ``w`` has shape ``(C_in, C_out, k)``.

    Output length is ``(L - 1) * stride - 2 * pad + k``.
    """
    _check3(x)
    B, C, L = x.shape
    c_in, c_out, k = w.shape
    if c_in != C:
        raise StructuralError(f"conv_transpose1d: input has {C} channels, kernel expects {c_in}")
    if b is not None and b.shape != (c_out,):
        raise StructuralError(f"conv_transpose1d: bias shape {b.shape} != ({c_out},)")
    l_full = (L - 1) * stride + k
    l_out = l_full - 2 * pad
    if l_out < 1:
        raise StructuralError(f"conv_transpose1d: output length {l_out} < 1")
    xc = _cm(x)
    w2 = w.transpose(1, 2, 0).reshape(c_out * k, C)
    cols = (w2 @ xc.reshape(C, B * L)).reshape(c_out, k, B, L)
    if k == stride and pad == 0:
        out = np.ascontiguousarray(cols.transpose(0, 2, 3, 1)).reshape(c_out, B, l_full)
    else:
        full = np.zeros((c_out, B, l_full), dtype=cols.dtype)
        span = stride * (L - 1) + 1
        for j in range(k):
            full[:, :, j : j + span : stride] += cols[:, j]
        out = np.ascontiguousarray(full[:, :, pad : pad + l_out])
    if b is not None:
        out += b[:, None, None]
    return _bcl(out), (xc, w, b is not None, stride, pad)


def conv_transpose1d_backward(dout, cache):
    xc, w, has_bias, stride, pad = cache
    C, B, L = xc.shape
    _, c_out, k = w.shape
    g = _cm(dout)
    db = g.sum(axis=(1, 2)) if has_bias else None
    l_full = (L - 1) * stride + k
    if k == stride and pad == 0:
        gcols = np.ascontiguousarray(g.reshape(c_out, B, L, k).transpose(0, 3, 1, 2))
    else:
        gfull = np.zeros((c_out, B, l_full), dtype=g.dtype)
        gfull[:, :, pad : l_full - pad] = g
        span = stride * (L - 1) + 1
        gcols = np.empty((c_out, k, B, L), dtype=g.dtype)
        for j in range(k):
            gcols[:, j] = gfull[:, :, j : j + span : stride]
    gcols = gcols.reshape(c_out * k, B * L)
    w2 = w.transpose(1, 2, 0).reshape(c_out * k, C)
    x2 = xc.reshape(C, B * L)
    dx = (w2.T @ gcols).reshape(C, B, L)
    dw = (gcols @ x2.T).reshape(c_out, k, C).transpose(2, 0, 1)
    return _bcl(dx), np.ascontiguousarray(dw), db


# --------------------------------------------------------- depthwise conv

def depthwise_conv1d_forward(x, w, b, pad):
    """Per-channel cross-correlation, ``w`` of shape ``(C, k)``, stride 1."""
    _check3(x)
    B, C, L = x.shape
    if w.ndim != 2 or w.shape[0] != C:
        raise StructuralError(f"depthwise kernel shape {w.shape} does not match {C} channels")
    k = w.shape[1]
    l_out = L + 2 * pad - k + 1
    if l_out < 1:
        raise StructuralError("depthwise conv: output length < 1")
    xc = _cm(x)
    out = kernels.depthwise_forward(xc, np.ascontiguousarray(w), pad, l_out)
    if b is not None:
        out += b[:, None, None]
    return _bcl(out), (xc, w, b is not None, pad)


def depthwise_conv1d_backward(dout, cache):
    xc, w, has_bias, pad = cache
    g = _cm(dout)
    dx, dw = kernels.depthwise_backward(xc, np.ascontiguousarray(w), g, pad)
    db = g.sum(axis=(1, 2)) if has_bias else None
    return _bcl(dx), dw, db


# ------------------------------------------------------------- linear

def linear_forward(x, w, b):
    """``x @ w.T + b`` for ``x`` of shape ``(B, D)`` and ``w`` of shape ``(M, D)``."""
    if x.ndim != 2 or w.shape[1] != x.shape[1]:
        raise StructuralError(f"linear: cannot apply {w.shape} weight to {x.shape} input")
    out = x @ w.T
    if b is not None:
        out = out + b
    return out, (x, w, b is not None)


def linear_backward(dout, cache):
    x, w, has_bias = cache
    return dout @ w, dout.T @ x, (dout.sum(axis=0) if has_bias else None)


# --------------------------------------------------------- batch norm

def batch_norm1d_forward(x, gamma, beta, mode, running_mean, running_var, eps=1e-5, momentum=0.1):
    """Per-channel normalisation over ``(B, L)``.

    In ``"train"`` mode the running statistics are updated in place with
    exponential ``momentum`` (unbiased variance, as the usual convention).
    """
    _check3(x)
    xc = _cm(x)
    C = xc.shape[0]
    x2 = xc.reshape(C, -1)
    if mode == "train":
        n = x2.shape[1]
        if n < 2:
            raise StructuralError("batch norm in train mode needs B*L > 1")
        mu = x2.mean(axis=1)
        xhat = x2 - mu[:, None]
        var = np.einsum("cn,cn->c", xhat, xhat) / n
        inv = 1.0 / np.sqrt(var + eps)
        xhat *= inv[:, None]
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (n / (n - 1))
    elif mode == "eval":
        inv = 1.0 / np.sqrt(running_var + eps)
        xhat = (x2 - running_mean[:, None]) * inv[:, None]
    else:
        raise ConfigError(f"batch norm mode must be 'train' or 'eval', got {mode!r}")
    out = xhat * gamma[:, None]
    out += beta[:, None]
    return _bcl(out.reshape(xc.shape)), (xhat, gamma, inv, mode, xc.shape)


def batch_norm1d_backward(dout, cache):
    xhat, gamma, inv, mode, shape = cache
    C = shape[0]
    g = _cm(dout).reshape(C, -1)
    dgamma = np.einsum("cn,cn->c", g, xhat)
    dbeta = g.sum(axis=1)
    if mode == "eval":
        dx = g * (gamma * inv)[:, None]
        return _bcl(dx.reshape(shape)), dgamma, dbeta
    n = xhat.shape[1]
    # dxhat = g * gamma; sums over dxhat are gamma times the sums over g
    dx = g * (gamma * inv)[:, None]
    dx -= ((gamma * inv / n) * dbeta)[:, None]
    dx -= xhat * ((gamma * inv / n) * dgamma)[:, None]
    return _bcl(dx.reshape(shape)), dgamma, dbeta


# -------------------------------------------------------------- pooling

def max_pool1d_forward(x, k=2, stride=2):
    _check3(x)
    B, C, L = x.shape
    l_out = (L - k) // stride + 1
    if l_out < 1:
        raise StructuralError("max_pool1d: output length < 1")
    xc = _cm(x)
    if k == stride:
        win = xc[:, :, : l_out * k].reshape(C, B, l_out, k)
    else:
        win = sliding_window_view(xc, k, axis=2)[:, :, : stride * (l_out - 1) + 1 : stride, :]
    idx = win.argmax(axis=-1)  # first index on ties
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return _bcl(out), (xc.shape, idx, k, stride)


def max_pool1d_backward(dout, cache):
    shape, idx, k, stride = cache
    g = _cm(dout)
    dx = np.zeros(shape, dtype=g.dtype)
    l_out = idx.shape[-1]
    span = stride * (l_out - 1) + 1
    for j in range(k):
        dx[:, :, j : j + span : stride] += np.where(idx == j, g, 0)
    return _bcl(dx)


def global_avg_pool_forward(x):
    _check3(x)
    return x.mean(axis=2), x.shape


def global_avg_pool_backward(dout, cache):
    B, C, L = cache
    g = np.ascontiguousarray((dout / L).T)
    return _bcl(np.repeat(g[:, :, None], L, axis=2))


# --------------------------------------------------------- activations

def relu_forward(x):
    return np.maximum(x, 0), x


def relu_backward(dout, cache):
    return np.where(cache > 0, dout, 0)


def sigmoid_forward(x):
    out = expit(x)
    return out, out


def sigmoid_backward(dout, cache):
    return dout * cache * (1 - cache)


def softmax_forward(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return out, (out, axis)


def softmax_backward(dout, cache):
    out, axis = cache
    return out * (dout - (dout * out).sum(axis=axis, keepdims=True))


def dropout_forward(x, rate, mode, rng=None):
    """Inverted dropout: identity in eval mode, keep-and-scale by ``1/(1-rate)`` in train mode."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if mode == "eval" or rate == 0.0:
        return x, None
    if rng is None:
        raise ConfigError("train-mode dropout needs a random generator")
    if x.ndim == 3:
        B, C, L = x.shape
        keep = _bcl(rng.random((C, B, L))) >= rate
    else:
        keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) / x.dtype.type(1.0 - rate)
    return x * mask, mask


def dropout_backward(dout, cache):
    return dout if cache is None else dout * cache


# ------------------------------------------------------ fusion helpers

def weighted_sum_forward(feats, weights):
    """``sum_i weights[:, i] * feats[i]`` for per-sample scale weights ``(B, n)``."""
    out = np.zeros_like(feats[0])
    for i, f in enumerate(feats):
        out += weights[:, i, None, None] * f
    return out, (feats, weights)


def weighted_sum_backward(dout, cache):
    feats, weights = cache
    dfeats = [weights[:, i, None, None] * dout for i in range(len(feats))]
    dweights = np.stack([np.einsum("bcl,bcl->b", dout, f) for f in feats], axis=1)
    return dfeats, dweights
