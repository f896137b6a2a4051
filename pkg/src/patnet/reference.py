"""Naive reference implementations used to cross-check the fast kernels.

Everything here is written as plain loops over scalars (or arbitrary-precision
accumulation where it matters) and is intentionally independent of the GEMM
paths in ``tensor_ops``. Only run these at toy sizes.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor_ops import BnParams, ConvParams, conv_out_hw


def conv2d_naive(x: np.ndarray, p: ConvParams) -> np.ndarray:
    n, c, h, w = x.shape
    assert c == p.in_ch
    oh, ow = conv_out_hw(h, w, p)
    g = p.groups
    cg = c // g
    og = p.out_ch // g
    out = np.zeros((n, p.out_ch, oh, ow), dtype=x.dtype)
    for ni in range(n):
        for oc in range(p.out_ch):
            grp = oc // og
            for oy in range(oh):
                for ox in range(ow):
                    acc = x.dtype.type(0.0)
                    for ic in range(cg):
                        for ky in range(p.kh):
                            for kx in range(p.kw):
                                iy = oy * p.stride + ky - p.padding
                                ix = ox * p.stride + kx - p.padding
                                if 0 <= iy < h and 0 <= ix < w:
                                    acc += (x[ni, grp * cg + ic, iy, ix]
                                            * p.weight[oc, ic, ky, kx])
                    if p.bias is not None:
                        acc += p.bias[oc]
                    out[ni, oc, oy, ox] = acc
    return out


def batch_norm_naive(x: np.ndarray, p: BnParams) -> np.ndarray:
    out = np.empty_like(x)
    for ci in range(x.shape[1]):
        denom = math.sqrt(float(p.running_var[ci]) + p.eps)
        out[:, ci] = (p.gamma[ci] * (x[:, ci] - p.running_mean[ci]) / denom
                      + p.beta[ci])
    return out


def global_avg_pool_naive(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    out = np.zeros((n, c), dtype=x.dtype)
    for ni in range(n):
        for ci in range(c):
            total = 0.0
            for yi in range(h):
                for xi in range(w):
                    total += float(x[ni, ci, yi, xi])
            out[ni, ci] = total / (h * w)
    return out


def channel_stats_naive(x: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Two-pass mean / population-variance computation."""
    n, c, h, w = x.shape
    mean = np.zeros((n, c), dtype=np.float64)
    std = np.zeros((n, c), dtype=np.float64)
    for ni in range(n):
        for ci in range(c):
            vals = [float(x[ni, ci, yi, xi]) for yi in range(h) for xi in range(w)]
            m = sum(vals) / len(vals)
            var = sum((v - m) ** 2 for v in vals) / len(vals)
            mean[ni, ci] = m
            std[ni, ci] = math.sqrt(var + eps)
    return mean, std


def softmax_rows_naive(m: np.ndarray) -> np.ndarray:
    """Row softmax accumulated in extended precision."""
    m2 = m.reshape(-1, m.shape[-1]).astype(np.longdouble)
    out = np.zeros_like(m2)
    for r in range(m2.shape[0]):
        mx = m2[r].max()
        e = np.exp(m2[r] - mx)
        out[r] = e / e.sum()
    return out.reshape(m.shape).astype(np.float64)


def matmul_naive(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    r, k = a.shape
    k2, c = b.shape
    assert k == k2
    out = np.zeros((r, c), dtype=a.dtype)
    for i in range(r):
        for j in range(c):
            acc = a.dtype.type(0.0)
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out
