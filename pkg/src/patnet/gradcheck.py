"""Analytic reverse-mode derivatives for the three attention blocks, checked
against central finite differences.

The scalar objective is always <upstream, block(x)>. Analytic gradients are
computed in the probe dtype (float32 by default, float64 for the tight
check); the numeric side always runs the forward in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .blocks import (
    PartialSplit,
    PatChParams,
    PatSfParams,
    PatSpParams,
    pat_ch_forward,
    pat_sf_forward,
    pat_sp_forward,
    relative_index_grid,
    se_hidden_width,
)
from .tensor_ops import ConvParams, channel_stats, conv2d, hard_sigmoid, sigmoid

BLOCK_KINDS = ("pat_ch", "pat_sp", "pat_sf")
KINK_MARGIN = 1e-2


@dataclass
class GradReport:
    """Per-tensor max relative error between analytic and numeric gradients."""

    block: str
    seed: int
    sizes: dict[str, int]
    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)
    passed: bool = True

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

def finite_diff_grad(f, x: np.ndarray, h: float) -> np.ndarray:
    """Central differences (f(x+h e_i) - f(x-h e_i)) / 2h in float64."""
    if h <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


# ---------------------------------------------------------------------------
# primitive vjps
# ---------------------------------------------------------------------------

def conv2d_vjp(x, p: ConvParams, upstream):
    """Gradients of <upstream, conv2d(x, p)> for a stride-1 convolution."""
    assert p.stride == 1 and p.groups == 1
    # input gradient: correlate upstream with the flipped, transposed kernel
    w_flip = p.weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    back = ConvParams(np.ascontiguousarray(w_flip), None,
                      padding=p.kh - 1 - p.padding)
    gx = conv2d(upstream, back)

    pad = p.padding
    xp = np.pad(x, ((0, 0), (0, 0), (pad,) * 2, (pad,) * 2)) if pad else x
    win = sliding_window_view(xp, (p.kh, p.kw), axis=(2, 3))
    gw = np.einsum("nayx,nbyxhw->abhw", upstream, win)
    gb = upstream.sum(axis=(0, 2, 3)) if p.bias is not None else None
    return gx, gw.astype(x.dtype), gb


def softmax_vjp(softmax_out, upstream):
    """Backprop through a row softmax given its output."""
    inner = (upstream * softmax_out).sum(axis=-1, keepdims=True)
    return softmax_out * (upstream - inner)


def _stats_vjp(x_u, mean, std, g_mean, g_std):
    hw = x_u.shape[2] * x_u.shape[3]
    gx = np.broadcast_to(g_mean[:, :, None, None] / hw, x_u.shape).copy()
    gx += g_std[:, :, None, None] * (x_u - mean[:, :, None, None]) / (hw * std[:, :, None, None])
    return gx


# ---------------------------------------------------------------------------
# per-block forward / vjp over flat parameter dicts
# ---------------------------------------------------------------------------

def _as_params(kind: str, params: dict[str, np.ndarray], split: PartialSplit,
               rpe_hw, heads: int):
    if kind == "pat_ch":
        conv = ConvParams(params["conv3.weight"], None, padding=1) \
            if split.c_p > 0 else None
        return PatChParams(conv, params["se.w1"], params["se.b1"],
                           params["se.w2"], params["se.b2"])
    if kind == "pat_sp":
        return PatSpParams(ConvParams(params["map.weight"], params["map.bias"]))
    conv = ConvParams(params["conv3.weight"], None, padding=1) \
        if split.c_p > 0 else None
    return PatSfParams(conv, params["wq"], params["bq"], params["wk"],
                       params["bk"], params["wv"], params["bv"], params["wo"],
                       params["bo"], heads=heads, rpe_table=params["rpe"],
                       rpe_hw=rpe_hw)


def block_apply(kind: str, params: dict[str, np.ndarray], x: np.ndarray,
                split: PartialSplit, rpe_hw=None, heads: int | None = None):
    p = _as_params(kind, params, split, rpe_hw, heads)
    if kind == "pat_ch":
        return pat_ch_forward(x, p, split)
    if kind == "pat_sp":
        return pat_sp_forward(x, p, split)
    return pat_sf_forward(x, p, split)


def _pat_ch_vjp(params, x, split, up):
    cp = split.c_p
    x_p, x_u = x[:, :cp], x[:, cp:]
    up_p, up_u = up[:, :cp], up[:, cp:]
    grads = {}
    gx = np.zeros_like(x)
    if cp > 0:
        conv = ConvParams(params["conv3.weight"], None, padding=1)
        gxp, gw, _ = conv2d_vjp(x_p, conv, up_p)
        gx[:, :cp] = gxp
        grads["conv3.weight"] = gw

    mean, std = channel_stats(x_u)
    z = np.concatenate([mean, std], axis=1)
    h_pre = z @ params["se.w1"].T + params["se.b1"]
    h = np.maximum(h_pre, 0)
    g_pre = h @ params["se.w2"].T + params["se.b2"]
    gate = sigmoid(g_pre)

    gx[:, cp:] = up_u * gate[:, :, None, None]
    d_gate = (up_u * x_u).sum(axis=(2, 3))
    d_gpre = d_gate * gate * (1.0 - gate)
    grads["se.b2"] = d_gpre.sum(axis=0)
    grads["se.w2"] = d_gpre.T @ h
    d_h = d_gpre @ params["se.w2"]
    d_hpre = d_h * (h_pre > 0)
    grads["se.b1"] = d_hpre.sum(axis=0)
    grads["se.w1"] = d_hpre.T @ z
    d_z = d_hpre @ params["se.w1"]
    c_u = split.c_u
    gx[:, cp:] += _stats_vjp(x_u, mean, std, d_z[:, :c_u], d_z[:, c_u:])
    return gx, grads


def _pat_sp_vjp(params, x, split, up):
    cp = split.c_p
    x_u = x[:, cp:]
    up_u = up[:, cp:]
    map_conv = ConvParams(params["map.weight"], params["map.bias"])
    a_pre = conv2d(x, map_conv)
    a = hard_sigmoid(a_pre)

    gx = up.copy()
    gx[:, cp:] = up_u * a
    d_a = (up_u * x_u).sum(axis=1, keepdims=True)
    inside = (a_pre > -3.0) & (a_pre < 3.0)
    d_apre = d_a * inside.astype(d_a.dtype) / 6.0
    gx_map, gw, gb = conv2d_vjp(x, map_conv, d_apre)
    gx += gx_map
    return gx, {"map.weight": gw, "map.bias": gb}


def _pat_sf_vjp(params, x, split, up, rpe_hw, heads):
    cp = split.c_p
    x_p, x_u = x[:, :cp], x[:, cp:]
    up_p, up_u = up[:, :cp], up[:, cp:]
    grads = {}
    gx = np.zeros_like(x)
    if cp > 0:
        conv = ConvParams(params["conv3.weight"], None, padding=1)
        gxp, gw, _ = conv2d_vjp(x_p, conv, up_p)
        gx[:, :cp] = gxp
        grads["conv3.weight"] = gw

    n, c_u, hh, ww = x_u.shape
    L = hh * ww
    d = c_u // heads
    t = x_u.reshape(n, c_u, L).transpose(0, 2, 1)
    q = t @ params["wq"].T + params["bq"]
    k = t @ params["wk"].T + params["bk"]
    v = t @ params["wv"].T + params["bv"]

    def hview(m):
        return m.reshape(n, L, heads, d).transpose(0, 2, 1, 3)

    qh, kh, vh = hview(q), hview(k), hview(v)
    scale = 1.0 / np.sqrt(d)
    idx = relative_index_grid(hh, ww)
    bias = params["rpe"][:, idx]
    logits = np.matmul(qh, kh.transpose(0, 1, 3, 2)) * scale + bias[None]
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    attn = e / e.sum(axis=-1, keepdims=True)
    ctx = np.matmul(attn, vh)
    ctx_m = ctx.transpose(0, 2, 1, 3).reshape(n, L, c_u)

    d_out = up_u.reshape(n, c_u, L).transpose(0, 2, 1)
    grads["bo"] = d_out.sum(axis=(0, 1))
    grads["wo"] = np.einsum("nlo,nli->oi", d_out, ctx_m)
    d_ctx = (d_out @ params["wo"]).reshape(n, L, heads, d).transpose(0, 2, 1, 3)

    d_attn = np.matmul(d_ctx, vh.transpose(0, 1, 3, 2))
    d_vh = np.matmul(attn.transpose(0, 1, 3, 2), d_ctx)
    d_logits = softmax_vjp(attn, d_attn)

    g_rpe = np.zeros_like(params["rpe"])
    d_bias = d_logits.sum(axis=0)  # (heads, L, L)
    for hi in range(heads):
        np.add.at(g_rpe[hi], idx.reshape(-1), d_bias[hi].reshape(-1))
    grads["rpe"] = g_rpe

    d_qh = np.matmul(d_logits, kh) * scale
    d_kh = np.matmul(d_logits.transpose(0, 1, 3, 2), qh) * scale

    def merge(m):
        return m.transpose(0, 2, 1, 3).reshape(n, L, c_u)

    d_q, d_k, d_v = merge(d_qh), merge(d_kh), merge(d_vh)
    d_t = np.zeros_like(t)
    for nm, dm in (("wq", d_q), ("wk", d_k), ("wv", d_v)):
        grads[nm] = np.einsum("nlo,nli->oi", dm, t)
        grads[f"b{nm[1]}"] = dm.sum(axis=(0, 1))
        d_t += dm @ params[nm]
    gx[:, cp:] = d_t.transpose(0, 2, 1).reshape(n, c_u, hh, ww)
    return gx, grads


def block_vjp(kind: str, params: dict[str, np.ndarray], x: np.ndarray,
              split: PartialSplit, upstream: np.ndarray,
              rpe_hw=None, heads: int | None = None):
    """Exact gradients of <upstream, block(x)> wrt the input and every
    parameter tensor. The hard-sigmoid uses subgradient 1/6 strictly inside
    (-3, 3) and 0 outside."""
    if kind not in BLOCK_KINDS:
        raise ValueError(f"unknown block kind {kind!r}")
    if upstream.shape != x.shape:
        raise ValueError(f"upstream shape {upstream.shape} != input {x.shape}")
    if kind == "pat_ch":
        return _pat_ch_vjp(params, x, split, upstream)
    if kind == "pat_sp":
        return _pat_sp_vjp(params, x, split, upstream)
    return _pat_sf_vjp(params, x, split, upstream, rpe_hw, heads)


# ---------------------------------------------------------------------------
# probe construction and the checker
# ---------------------------------------------------------------------------

DEFAULT_SIZES = {
    "pat_ch": dict(channels=8, c_p=2, hw=4),
    "pat_sp": dict(channels=8, c_p=2, hw=4),
    "pat_sf": dict(channels=16, c_p=4, hw=3, heads=2),
}


def _draw_params(kind: str, rng, sizes) -> dict[str, np.ndarray]:
    c, cp = sizes["channels"], sizes["c_p"]
    cu = c - cp

    def normal(*shape, fan):
        return (rng.standard_normal(shape) / np.sqrt(fan)).astype(np.float32)

    params = {}
    if kind in ("pat_ch", "pat_sf") and cp > 0:
        params["conv3.weight"] = normal(cp, cp, 3, 3, fan=cp * 9)
    if kind == "pat_ch":
        hid = se_hidden_width(cu)
        params["se.w1"] = normal(hid, 2 * cu, fan=2 * cu)
        params["se.b1"] = normal(hid, fan=4)
        params["se.w2"] = normal(cu, hid, fan=hid)
        params["se.b2"] = normal(cu, fan=4)
    elif kind == "pat_sp":
        params["map.weight"] = normal(1, c, 1, 1, fan=c)
        params["map.bias"] = normal(1, fan=4)
    else:
        for nm in ("wq", "wk", "wv", "wo"):
            params[nm] = normal(cu, cu, fan=cu)
            params[f"b{nm[1]}"] = normal(cu, fan=4)
        hw = sizes["hw"]
        bins = (2 * hw - 1) ** 2
        params["rpe"] = normal(sizes["heads"], bins, fan=4)
    return params


def _kink_distance(kind: str, params, x, split) -> float:
    """Distance of the probe's pre-activation values to the nearest relu or
    hard-sigmoid kink; large when the block has no kinks."""
    if kind == "pat_sp":
        a_pre = conv2d(x, ConvParams(params["map.weight"], params["map.bias"]))
        return float(np.abs(np.abs(a_pre) - 3.0).min())
    if kind == "pat_ch":
        x_u = x[:, split.c_p :]
        mean, std = channel_stats(x_u)
        z = np.concatenate([mean, std], axis=1)
        h_pre = z @ params["se.w1"].T + params["se.b1"]
        return float(np.abs(h_pre).min())
    return np.inf


def make_probe(kind: str, seed: int, sizes: dict | None = None):
    """Seeded probe (x, split, params, upstream); resamples anything that
    lands within the kink margin of relu or hard-sigmoid."""
    sizes = dict(DEFAULT_SIZES[kind], **(sizes or {}))
    hw = sizes["hw"]
    split = PartialSplit(sizes["channels"], sizes["c_p"])
    for attempt in range(64):
        rng = np.random.default_rng((seed, attempt))
        x = rng.standard_normal((1, sizes["channels"], hw, hw)).astype(np.float32)
        params = _draw_params(kind, rng, sizes)
        if _kink_distance(kind, params, x, split) > KINK_MARGIN:
            break
    upstream = rng.standard_normal(x.shape).astype(np.float32)
    return x, split, params, upstream, sizes


def gradcheck_block(kind: str, seed: int = 0, sizes: dict | None = None,
                    dtype=np.float32, tolerance: float = 1e-3,
                    corrupt: float | None = None) -> GradReport:
    """Compare the analytic block gradients against central differences.

    ``corrupt`` scales the largest analytic gradient entry by (1 + corrupt);
    the checker is expected to flag it, which is its own self test.
    """
    x, split, params, upstream, sizes = make_probe(kind, seed, sizes)
    h = 1e-3 if dtype == np.float32 else 1e-5
    heads = sizes.get("heads")
    rpe_hw = (sizes["hw"], sizes["hw"]) if kind == "pat_sf" else None

    xd = x.astype(dtype)
    pd = {k: v.astype(dtype) for k, v in params.items()}
    upd = upstream.astype(dtype)
    gx, gparams = block_vjp(kind, pd, xd, split, upd, rpe_hw=rpe_hw, heads=heads)
    analytic = {"input": gx, **gparams}

    if corrupt is not None:
        flat_max = max(analytic, key=lambda k: np.abs(analytic[k]).max())
        t = analytic[flat_max].copy()
        i = np.unravel_index(np.abs(t).argmax(), t.shape)
        t[i] *= 1.0 + corrupt
        analytic[flat_max] = t

    p64 = {k: v.astype(np.float64) for k, v in params.items()}
    x64 = x.astype(np.float64)
    up64 = upstream.astype(np.float64)

    def objective(tensors: dict[str, np.ndarray], xin: np.ndarray) -> float:
        y = block_apply(kind, tensors, xin, split, rpe_hw=rpe_hw, heads=heads)
        return float((up64 * y).sum())

    report = GradReport(block=kind, seed=seed, sizes=sizes, tolerance=tolerance)
    numeric = {"input": finite_diff_grad(lambda v: objective(p64, v), x64, h)}
    for name in params:
        def f(v, _n=name):
            t = dict(p64)
            t[_n] = v
            return objective(t, x64)
        numeric[name] = finite_diff_grad(f, p64[name], h)

    for name, num in numeric.items():
        ana = analytic[name].astype(np.float64)
        err = np.abs(ana - num) / np.maximum(1.0, np.abs(num))
        report.errors[name] = float(err.max())
    report.passed = all(e < tolerance for e in report.errors.values())
    return report
