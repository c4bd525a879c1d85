"""Differentiable layers used by the detector.

Activations are laid out ``(batch, time, channels)``.  Convolution, layer norm,
LSTM and the loss are fused ops with hand-written backward passes; attention
is composed from autograd primitives.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import ArgumentError, ConfigError, ShapeError
from .autograd import (
    Tensor,
    _accumulate,
    _sigmoid,

    concat,
    flip,
    make_result,
    matmul,
    relu,
    reshape,
    softmax,
    transpose,
)

def affine(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ W.T + b`` over the last axis; W is (D_out, D_in)."""
    if x.shape[-1] != W.shape[1]:
        raise ShapeError(f"affine: input width {x.shape[-1]} != weight width {W.shape[1]}")
    if b is not None and b.shape != (W.shape[0],):
        raise ShapeError(f"affine: bias shape {b.shape} != ({W.shape[0]},)")
    out = x.data @ W.data.T
    if b is not None:
        out = out + b.data
    parents = (x, W) if b is None else (x, W, b)

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        if x.requires_grad:
            _accumulate(x, g @ W.data)
        if W.requires_grad:
            _accumulate(W, g2.T @ x.data.reshape(-1, x.shape[-1]))
        if b is not None and b.requires_grad:
            _accumulate(b, g2.sum(axis=0))

    return make_result(out, parents, backward)

def conv1d(x: Tensor, W: Tensor, b: Tensor | None = None, padding: int = 0, stride: int = 1) -> Tensor:
    """Cross-correlation along time.  x: (B, T, C_in), W: (C_out, C_in, K)."""
    if stride < 1:
        raise ArgumentError("stride must be >= 1")
    C_out, C_in, K = W.shape
    if K < 1:
        raise ArgumentError("kernel size must be >= 1")
    if x.ndim != 3 or x.shape[2] != C_in:
        raise ShapeError(f"conv1d: input {x.shape} does not have {C_in} channels")
    B, T, _ = x.shape
    if K == 1 and padding == 0 and stride == 1:
        return affine(x, reshape(W, (C_out, C_in)), b)
    T_out = (T + 2 * padding - K) // stride + 1
    if T_out < 1:
        raise ShapeError(f"conv1d: input of length {T} too short for kernel {K}")
    xp = np.pad(x.data, ((0, 0), (padding, padding), (0, 0))) if padding else x.data
    # windows: (B, T_out, C_in, K)
    windows = np.lib.stride_tricks.sliding_window_view(xp, K, axis=1)[:, ::stride]
    Wm = W.data.reshape(C_out, C_in * K)
    cols = windows.reshape(B * T_out, C_in * K)
    out = (cols @ Wm.T).reshape(B, T_out, C_out)
    if b is not None:
        out = out + b.data
    parents = (x, W) if b is None else (x, W, b)

    def backward(g):
        g2 = g.reshape(B * T_out, C_out)
        if W.requires_grad:
            _accumulate(W, (g2.T @ cols).reshape(C_out, C_in, K))
        if b is not None and b.requires_grad:
            _accumulate(b, g2.sum(axis=0))
        if x.requires_grad:
            dcols = (g2 @ Wm).reshape(B, T_out, C_in, K)
            dxp = np.zeros_like(xp)
            span = stride * (T_out - 1) + 1
            for k in range(K):
                dxp[:, k:k + span:stride, :] += dcols[..., k]
            _accumulate(x, dxp[:, padding:padding + T, :] if padding else dxp)

    return make_result(out, parents, backward)

def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise each frame over its features, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def backward(g):
        if gain.requires_grad:
            _accumulate(gain, (g * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0))
        if bias.requires_grad:
            _accumulate(bias, g.reshape(-1, g.shape[-1]).sum(axis=0))
        if x.requires_grad:
            gh = g * gain.data
            n = xhat.shape[-1]
            dx = inv / n * (n * gh - gh.sum(-1, keepdims=True) - xhat * (gh * xhat).sum(-1, keepdims=True))
            _accumulate(x, dx)

    return make_result(xhat * gain.data + bias.data, (x, gain, bias), backward)

def bce_with_logits(logits: Tensor, targets, mask=None) -> Tensor:
    """Mean binary cross-entropy computed from logits without overflow.

    ``mask`` (same shape, 0/1) restricts the mean to selected positions.
    """
    y = np.asarray(targets)
    if y.shape != logits.shape:
        raise ShapeError(f"targets {y.shape} do not match logits {logits.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ArgumentError("targets must be 0 or 1")
    y = y.astype(logits.dtype)
    z = logits.data
    per = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    w = np.ones_like(z) if mask is None else np.asarray(mask, dtype=z.dtype)
    count = max(float(w.sum()), 1.0)
    loss = (per * w).sum() / count

    def backward(g):
        _accumulate(logits, g * (_sigmoid(z) - y) * w / count)

    return make_result(np.asarray(loss, dtype=z.dtype), (logits,), backward)

# -- recurrent ------------------------------------------------------------

def lstm(x: Tensor, W_ih: Tensor, W_hh: Tensor, b: Tensor) -> Tensor:
    """Single-direction LSTM from zero state; gate order (input, forget, cell, output).

    x: (B, T, D), W_ih: (4H, D), W_hh: (4H, H), b: (4H,).  Returns (B, T, H).
    """
    B, T, D = x.shape
    H = W_hh.shape[1]
    if W_ih.shape != (4 * H, D) or W_hh.shape != (4 * H, H) or b.shape != (4 * H,):
        raise ShapeError("lstm: weight shapes do not agree with input and hidden size")
    dt = x.dtype
    xw = x.data @ W_ih.data.T + b.data  # (B, T, 4H)
    gates = np.empty((T, B, 4 * H), dtype=dt)  # post-activation
    cs = np.zeros((T + 1, B, H), dtype=dt)
    hs = np.zeros((T + 1, B, H), dtype=dt)
    tcs = np.empty((T, B, H), dtype=dt)
    Whh_T = W_hh.data.T
    for t in range(T):
        pre = xw[:, t] + hs[t] @ Whh_T
        act = gates[t]
        act[:, :2 * H] = _sigmoid(pre[:, :2 * H])
        act[:, 2 * H:3 * H] = np.tanh(pre[:, 2 * H:3 * H])
        act[:, 3 * H:] = _sigmoid(pre[:, 3 * H:])
        i, f, c_hat, o = act[:, :H], act[:, H:2 * H], act[:, 2 * H:3 * H], act[:, 3 * H:]
        cs[t + 1] = f * cs[t] + i * c_hat
        tcs[t] = np.tanh(cs[t + 1])
        hs[t + 1] = o * tcs[t]
    out = np.ascontiguousarray(hs[1:].transpose(1, 0, 2))

    def backward(g):
        dpre = np.empty((T, B, 4 * H), dtype=dt)
        dh_next = np.zeros((B, H), dtype=dt)
        dc_next = np.zeros((B, H), dtype=dt)
        W = W_hh.data
        for t in range(T - 1, -1, -1):
            act = gates[t]
            i, f, c_hat, o = act[:, :H], act[:, H:2 * H], act[:, 2 * H:3 * H], act[:, 3 * H:]
            dh = g[:, t] + dh_next
            dc = dc_next + dh * o * (1.0 - tcs[t] ** 2)
            d = dpre[t]
            d[:, :H] = dc * c_hat * i * (1.0 - i)
            d[:, H:2 * H] = dc * cs[t] * f * (1.0 - f)
            d[:, 2 * H:3 * H] = dc * i * (1.0 - c_hat ** 2)
            d[:, 3 * H:] = dh * tcs[t] * o * (1.0 - o)
            dc_next = dc * f
            dh_next = d @ W
        flat = dpre.reshape(T * B, 4 * H)
        if W_hh.requires_grad:
            _accumulate(W_hh, flat.T @ hs[:-1].reshape(T * B, H))
        if b.requires_grad:
            _accumulate(b, flat.sum(axis=0))
        dpre_bt = dpre.transpose(1, 0, 2)
        if W_ih.requires_grad:
            _accumulate(W_ih, dpre_bt.reshape(B * T, 4 * H).T @ x.data.reshape(B * T, D))
        if x.requires_grad:
            _accumulate(x, dpre_bt @ W_ih.data)

    return make_result(out, (x, W_ih, W_hh, b), backward)

def bilstm(x: Tensor, fwd: tuple, bwd: tuple) -> Tensor:
    """Forward and time-reversed LSTM outputs concatenated per frame."""
    forward_out = lstm(x, *fwd)
    backward_out = flip(lstm(flip(x, 1), *bwd), 1)
    return concat([forward_out, backward_out], axis=-1)

# -- attention ------------------------------------------------------------

def sinusoidal_positions(T: int, d: int, dtype=np.float64) -> np.ndarray:
    pos = np.arange(T)[:, None]
    i = np.arange(0, d, 2)[None, :]
    angle = pos / np.power(10000.0, i / d)
    pe = np.zeros((T, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d // 2])
    return pe.astype(dtype)

def multi_head_self_attention(x: Tensor, p: dict, heads: int) -> Tensor:
    """Unmasked scaled dot-product attention.

    ``p`` maps ``q/k/v/o`` + ``.weight``/``.bias`` to tensors of shape (d, d)/(d,).
    """
    B, T, d = x.shape
    if d % heads:
        raise ConfigError(f"model width {d} is not divisible by {heads} heads")
    dh = d // heads

    def split(t):
        return transpose(reshape(t, (B, T, heads, dh)), (0, 2, 1, 3))

    q = split(affine(x, p["q.weight"], p["q.bias"]))
    k = split(affine(x, p["k.weight"], p["k.bias"]))
    v = split(affine(x, p["v.weight"], p["v.bias"]))
    scores = matmul(q, transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(dh))
    ctx = matmul(softmax(scores, axis=-1), v)
    ctx = reshape(transpose(ctx, (0, 2, 1, 3)), (B, T, d))
    return affine(ctx, p["o.weight"], p["o.bias"])

def transformer_encoder_layer(x: Tensor, p: dict, heads: int) -> Tensor:
    """Post-norm layer: x -> LN(x + MHA(x)) -> LN(h + FFN(h))."""
    sub = lambda prefix: {k[len(prefix):]: v for k, v in p.items() if k.startswith(prefix)}
    h = layer_norm(x + multi_head_self_attention(x, sub("attn."), heads), p["norm1.gain"], p["norm1.bias"])
    ff = affine(relu(affine(h, p["ffn1.weight"], p["ffn1.bias"])), p["ffn2.weight"], p["ffn2.bias"])
    return layer_norm(h + ff, p["norm2.gain"], p["norm2.bias"])
