"""Differentiable kernels used by the projectors and the toy language model."""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, add_flops, as_tensor, make_op, matmul, sigmoid

_GELU_C = math.sqrt(2.0 / math.pi)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` laid out as [in, out]."""
    out = matmul(x, weight)
    return out if bias is None else out + bias


def gelu(x: Tensor) -> Tensor:
    # tanh approximation
    a = x.data
    inner = _GELU_C * (a + 0.044715 * a ** 3)
    t = np.tanh(inner)
    out = 0.5 * a * (1.0 + t)

    def back(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * a * a)
        return (g * (0.5 * (1.0 + t) + 0.5 * a * (1.0 - t * t) * dinner),)

    return make_op(out, (x,), back)


def silu(x: Tensor) -> Tensor:
    return x * sigmoid(x)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make_op(s, (x,), back)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def back(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make_op(out, (x,), back)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    a = x.data
    mu = a.mean(axis=-1, keepdims=True)
    xc = a - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data
    lead = tuple(range(a.ndim - 1))

    def back(g):
        gx = g * gain.data
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return make_op(out, (x, gain, bias), back)


def masked_nll(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of ``targets`` over positions where ``mask``.

    ``logits`` is [..., V]; ``targets`` and ``mask`` share the leading shape.
    """
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        raise ValueError("no positions selected for the loss")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    loss = -(picked * mask).sum() / count

    def back(g):
        p = np.exp(logp)
        np.put_along_axis(p, targets[..., None],
                          np.take_along_axis(p, targets[..., None], axis=-1) - 1.0, axis=-1)
        return (g * p * (mask[..., None] / count),)

    return make_op(np.asarray(loss), (logits,), back)


# -- convolution ------------------------------------------------------------

def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0, groups: int = 1) -> Tensor:
    """Cross-correlation of x [B,C,H,W] with weight [C',C/groups,k,k]."""
    if x.ndim != 4:
        raise ValueError(f"conv2d input must be [B,C,H,W], got {x.shape}")
    if weight.ndim != 4:
        raise ValueError(f"conv2d weight must be [C',C,k,k], got {weight.shape}")
    B, C, H, W = x.shape
    Co, Cg, k, k2 = weight.shape
    if k != k2:
        raise ValueError(f"conv2d kernel axis mismatch: {k}x{k2} is not square")
    if k % 2 == 0:
        raise ValueError(f"conv2d kernel axis must be odd, got k={k}")
    if padding < 0 or stride < 1:
        raise ValueError("conv2d needs padding >= 0 and stride >= 1")
    if C != Cg * groups:
        raise ValueError(f"conv2d channel axis mismatch: input has C={C}, "
                         f"weight expects {Cg}x{groups} groups")
    if Co % groups:
        raise ValueError(f"conv2d output channel axis {Co} not divisible by groups={groups}")
    for axis, n in (("H", H), ("W", W)):
        span = n + 2 * padding - k
        if span < 0 or span % stride:
            raise ValueError(f"conv2d {axis} axis: ({n}+2*{padding}-{k})/{stride}+1 is not a "
                             "positive integer")
    Ho = (H + 2 * padding - k) // stride + 1
    Wo = (W + 2 * padding - k) // stride + 1
    G, Og = groups, Co // groups

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    # [B,G,Ho*Wo,Cg*k*k]
    cols = (win.reshape(B, G, Cg, Ho, Wo, k, k)
               .transpose(0, 1, 3, 4, 2, 5, 6)
               .reshape(B, G, Ho * Wo, Cg * k * k))
    wmat = weight.data.reshape(G, Og, Cg * k * k).transpose(0, 2, 1)  # [G,Cgkk,Og]
    out = cols @ wmat  # [B,G,HoWo,Og]
    add_flops(2 * B * Co * Ho * Wo * Cg * k * k)
    out = out.transpose(0, 1, 3, 2).reshape(B, Co, Ho, Wo)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def back(g):
        gm = g.reshape(B, G, Og, Ho * Wo).transpose(0, 1, 3, 2)  # [B,G,HoWo,Og]
        gw = gx = gb = None
        if weight.requires_grad:
            gw = np.einsum("bglc,bglo->goc", cols, gm).reshape(weight.shape)
        if x.requires_grad:
            dcols = (gm @ wmat.transpose(0, 2, 1)).reshape(B, G, Ho, Wo, Cg, k, k)
            dcols = dcols.transpose(0, 1, 4, 2, 3, 5, 6).reshape(B, C, Ho, Wo, k, k)
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += dcols[..., i, j]
            gx = gxp[:, :, padding:padding + H, padding:padding + W]
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_op(out, parents, back)


# -- resampling -------------------------------------------------------------

def _pool_matrix(n_in: int, n_out: int) -> np.ndarray:
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo = (i * n_in) // n_out
        hi = -((-(i + 1) * n_in) // n_out)
        m[i, lo:hi] = 1.0 / (hi - lo)
    return m


def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    # cell-center convention, border clamped
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        pos = min(max((i + 0.5) * n_in / n_out - 0.5, 0.0), n_in - 1.0)
        lo = min(int(math.floor(pos)), max(n_in - 2, 0))
        frac = pos - lo
        m[i, lo] += 1.0 - frac
        if frac > 0:
            m[i, lo + 1] += frac
    return m


def resize_matrices(H: int, W: int, h: int, w: int, allow_upsample: bool = False):
    if h <= 0 or w <= 0:
        raise ValueError(f"adaptive pooling target extents must be positive, got ({h}, {w})")
    if (h > H or w > W) and not allow_upsample:
        raise ValueError(f"pooling target ({h}, {w}) exceeds input ({H}, {W}); "
                         "set allow_upsample to interpolate")
    mh = _pool_matrix(H, h) if h <= H else _interp_matrix(H, h)
    mw = _pool_matrix(W, w) if w <= W else _interp_matrix(W, w)
    return mh, mw


def adaptive_avg_pool2d(x: Tensor, out: tuple[int, int], allow_upsample: bool = False) -> Tensor:
    """Average x [...,H,W] over floor/ceil windows to [...,h,w].

    Targets larger than the input are produced by bilinear interpolation, but
    only when ``allow_upsample`` is set.
    """
    H, W = x.shape[-2:]
    h, w = out
    mh, mw = resize_matrices(H, W, h, w, allow_upsample)
    data = mh @ x.data @ mw.T
    return make_op(data, (x,), lambda g: (mh.T @ g @ mw,))


def bilinear_sample(x: Tensor, pts: Tensor) -> Tensor:
    """Sample x [C,H,W] (or [B,C,H,W]) at normalized points [Q,2] (or [B,Q,2]).

    ``pts[..., 0]`` runs along H and ``pts[..., 1]`` along W.  Coordinate u maps
    to pixel position u*H - 0.5; positions are clamped to the border.
    Returns [Q,C] (or [B,Q,C]).
    """
    pts = as_tensor(pts)
    batched = x.ndim == 4
    if x.ndim not in (3, 4):
        raise ValueError(f"bilinear_sample input must be [C,H,W] or [B,C,H,W], got {x.shape}")
    if pts.ndim != x.ndim - 1 or pts.shape[-1] != 2:
        raise ValueError(f"points shape {pts.shape} does not match input {x.shape}")
    xd = x.data if batched else x.data[None]
    pd = pts.data if batched else pts.data[None]
    if xd.shape[0] != pd.shape[0]:
        raise ValueError(f"batch axis mismatch: {xd.shape[0]} vs {pd.shape[0]}")
    B, C, H, W = xd.shape
    Q = pd.shape[1]

    def axis_coords(u, n):
        raw = u * n - 0.5
        pos = np.clip(raw, 0.0, n - 1.0)
        inside = (raw >= 0.0) & (raw <= n - 1.0)
        lo = np.minimum(np.floor(pos).astype(np.int64), max(n - 2, 0))
        frac = pos - lo
        hi = np.minimum(lo + 1, n - 1)
        return lo, hi, frac, inside

    y0, y1, fy, iny = axis_coords(pd[..., 0], H)
    x0, x1, fx, inx = axis_coords(pd[..., 1], W)
    bidx = np.broadcast_to(np.arange(B)[:, None], (B, Q))
    xt = xd.transpose(0, 2, 3, 1)  # [B,H,W,C]
    v00, v01 = xt[bidx, y0, x0], xt[bidx, y0, x1]
    v10, v11 = xt[bidx, y1, x0], xt[bidx, y1, x1]
    w00 = (1 - fy) * (1 - fx)
    w01 = (1 - fy) * fx
    w10 = fy * (1 - fx)
    w11 = fy * fx
    out = (w00[..., None] * v00 + w01[..., None] * v01
           + w10[..., None] * v10 + w11[..., None] * v11)

    def back(g):
        gb = g if batched else g[None]
        gx = gp = None
        if x.requires_grad:
            gxt = np.zeros_like(xt)
            for yy, xx, ww in ((y0, x0, w00), (y0, x1, w01), (y1, x0, w10), (y1, x1, w11)):
                np.add.at(gxt, (bidx, yy, xx), gb * ww[..., None])
            gx = gxt.transpose(0, 3, 1, 2)
            if not batched:
                gx = gx[0]
        if pts.requires_grad:
            dy = (1 - fx)[..., None] * (v10 - v00) + fx[..., None] * (v11 - v01)
            dx = (1 - fy)[..., None] * (v01 - v00) + fy[..., None] * (v11 - v10)
            gu = (gb * dy).sum(-1) * H * iny
            gv = (gb * dx).sum(-1) * W * inx
            gp = np.stack([gu, gv], axis=-1)
            if not batched:
                gp = gp[0]
        return gx, gp

    return make_op(out if batched else out[0], (x, pts), back)


def bilinear_weights(pts: np.ndarray, H: int, W: int) -> np.ndarray:
    """Dense [..., H, W] map of the bilinear weights each point spreads on the grid."""
    pts = np.asarray(pts, dtype=np.float64)
    flat = pts.reshape(-1, 2)
    out = np.zeros((flat.shape[0], H, W))

    def axis_coords(u, n):
        pos = np.clip(u * n - 0.5, 0.0, n - 1.0)
        lo = np.minimum(np.floor(pos).astype(np.int64), max(n - 2, 0))
        return lo, np.minimum(lo + 1, n - 1), pos - lo

    y0, y1, fy = axis_coords(flat[:, 0], H)
    x0, x1, fx = axis_coords(flat[:, 1], W)
    rows = np.arange(flat.shape[0])
    np.add.at(out, (rows, y0, x0), (1 - fy) * (1 - fx))
    np.add.at(out, (rows, y0, x1), (1 - fy) * fx)
    np.add.at(out, (rows, y1, x0), fy * (1 - fx))
    np.add.at(out, (rows, y1, x1), fy * fx)
    return out.reshape(pts.shape[:-1] + (H, W))


# -- attention --------------------------------------------------------------

def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, heads: int,
                         mask: np.ndarray | None = None) -> tuple[Tensor, np.ndarray]:
    """Scaled dot-product attention over already-projected q [...,Lq,D], k/v [...,Lk,D].

    ``mask`` is an additive constant broadcastable to [..., heads, Lq, Lk]
    (use -inf to block).  Returns the merged output and the attention weights
    as an array [..., heads, Lq, Lk].
    """
    D = q.shape[-1]
    if D % heads:
        raise ValueError(f"head count {heads} does not divide width {D}")
    if k.shape[-1] != D or v.shape[-1] != D:
        raise ValueError("q, k and v must share their width")
    d = D // heads
    lead = q.shape[:-2]

    def split(t: Tensor) -> Tensor:
        return t.reshape(t.shape[:-1] + (heads, d)).swapaxes(-3, -2)

    qh, kh, vh = split(q), split(k), split(v)
    scores = matmul(qh, kh.swapaxes(-1, -2)) * (1.0 / math.sqrt(d))
    if mask is not None:
        scores = scores + mask
    weights = softmax(scores, axis=-1)
    out = matmul(weights, vh).swapaxes(-3, -2)
    return out.reshape(lead + (q.shape[-2], D)), weights.data
