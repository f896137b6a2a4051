"""Parameter store, deterministic initialization and the end-to-end forward
pass.

Block layout inside a stage:

* stages 1-3 (single residual):  y = x + gate(mlp(mixer(x)))
* stage 4   (double residual):   y1 = x + mixer(x); y = y1 + gate(mlp(y1))

where ``mixer`` is the block's spatial-mixing operator, ``mlp`` is
conv1x1 -> BN -> activation -> conv1x1, and ``gate`` is the trailing
spatial-attention reweighting (absent in some study configurations).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor_ops as T
from .blocks import (
    PartialSplit,
    PatChParams,
    PatSfParams,
    PatSpParams,
    apply_spatial_gate,
    pat_ch_forward,
    pat_sf_forward,
    pat_sp_forward,
    pconv_forward,
)
from .config import BlockSpec, ModelSpec, iter_param_schema
from .tensor_ops import BnParams, ConvParams, ShapeError

BN_EPS = 1e-5


@dataclass
class ParamStore:
    """Named tensors of one built model. Treat as immutable once created."""

    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    fused: bool = False

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self) -> list[str]:
        return list(self.tensors)

    def total_elements(self) -> int:
        return sum(t.size for t in self.tensors.values())


def init_params(spec: ModelSpec, seed: int) -> ParamStore:
    """Deterministic store: normal(0, 1/sqrt(fan_in)) weights, identity BN,
    zero biases and zero relative-position tables."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for d in iter_param_schema(spec, fused=False):
        if d.init == "normal":
            t = rng.standard_normal(d.shape, dtype=np.float32)
            t /= np.float32(np.sqrt(d.fan_in))
        elif d.init == "ones":
            t = np.ones(d.shape, dtype=np.float32)
        else:
            t = np.zeros(d.shape, dtype=np.float32)
        tensors[d.name] = t
    return ParamStore(tensors=tensors, fused=False)


# ---------------------------------------------------------------------------
# store -> typed parameter bundles
# ---------------------------------------------------------------------------

def _conv_from(store: ParamStore, name: str, stride: int = 1, padding: int = 0,
               groups: int = 1) -> ConvParams:
    bias = store[f"{name}.bias"] if f"{name}.bias" in store else None
    return ConvParams(store[f"{name}.weight"], bias, stride, padding, groups)


def _bn_from(store: ParamStore, name: str) -> BnParams:
    return BnParams(store[f"{name}.gamma"], store[f"{name}.beta"],
                    store[f"{name}.mean"], store[f"{name}.var"], BN_EPS)


def patch_params_from(store: ParamStore, prefix: str, b: BlockSpec) -> PatChParams:
    conv = (_conv_from(store, f"{prefix}.patch.conv3", padding=1)
            if b.mixer_cp > 0 else None)
    if b.channels - b.mixer_cp > 0:
        return PatChParams(conv,
                           store[f"{prefix}.patch.se.w1"],
                           store[f"{prefix}.patch.se.b1"],
                           store[f"{prefix}.patch.se.w2"],
                           store[f"{prefix}.patch.se.b2"])
    return PatChParams(conv)


def patsf_params_from(store: ParamStore, prefix: str, b: BlockSpec,
                      rpe_hw: tuple[int, int]) -> PatSfParams:
    conv = (_conv_from(store, f"{prefix}.patsf.conv3", padding=1)
            if b.mixer_cp > 0 else None)
    g = lambda k: store[f"{prefix}.patsf.{k}"]
    return PatSfParams(conv, g("wq"), g("bq"), g("wk"), g("bk"),
                       g("wv"), g("bv"), g("wo"), g("bo"),
                       heads=b.heads, rpe_table=g("rpe"), rpe_hw=rpe_hw)


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------

def _mixer_forward(x, store: ParamStore, prefix: str, b: BlockSpec,
                   rpe_hw: tuple[int, int]):
    split = PartialSplit(b.channels, b.mixer_cp)
    if b.mixer == "pat_ch":
        return pat_ch_forward(x, patch_params_from(store, prefix, b), split)
    if b.mixer == "pat_sf":
        return pat_sf_forward(x, patsf_params_from(store, prefix, b, rpe_hw), split)
    if b.mixer == "pconv":
        return pconv_forward(x, _conv_from(store, f"{prefix}.pconv.conv3", padding=1),
                             split)
    if b.mixer == "conv_dense":
        return T.conv2d(x, _conv_from(store, f"{prefix}.conv.conv3", padding=1))
    if b.mixer == "conv_dw":
        return T.conv2d(x, _conv_from(store, f"{prefix}.dwconv.conv3", padding=1,
                                      groups=b.channels))
    raise ValueError(f"unknown mixer {b.mixer!r}")


def _mlp_and_gate(x, store: ParamStore, prefix: str, b: BlockSpec, act: str):
    h = T.conv2d(x, _conv_from(store, f"{prefix}.mlp.conv1"))
    if not store.fused:
        h = T.batch_norm_infer(h, _bn_from(store, f"{prefix}.mlp.bn"))
    h = T.activation(h, act)

    if store.fused and b.sp_cp is not None:
        out = T.conv2d(h, _conv_from(store, f"{prefix}.mlp.conv2m"))
        m, logit = out[:, : b.channels], out[:, b.channels :]
        gate = T.hard_sigmoid(logit)
        return apply_spatial_gate(m, gate, PartialSplit(b.channels, b.sp_cp))

    m = T.conv2d(h, _conv_from(store, f"{prefix}.mlp.conv2"))
    if b.sp_cp is None:
        return m
    sp = PatSpParams(_conv_from(store, f"{prefix}.patsp.map"))
    return pat_sp_forward(m, sp, PartialSplit(b.channels, b.sp_cp))


def block_forward(x, store: ParamStore, prefix: str, b: BlockSpec, act: str,
                  rpe_hw: tuple[int, int]):
    if b.double_residual:
        y1 = x + _mixer_forward(x, store, prefix, b, rpe_hw)
        return y1 + _mlp_and_gate(y1, store, prefix, b, act)
    return x + _mlp_and_gate(_mixer_forward(x, store, prefix, b, rpe_hw),
                             store, prefix, b, act)


def model_forward(spec: ModelSpec, store: ParamStore, x: np.ndarray) -> np.ndarray:
    """Run the classifier end to end; returns (n, num_classes) logits."""
    T.check_tensor4(x, "model input")
    n, c, h, w = x.shape
    if c != 3:
        raise ShapeError(f"model input must have 3 channels, got {c}")
    if h % 32 != 0 or w % 32 != 0:
        raise ShapeError(f"input extent {h}x{w} not divisible by 32")
    if (h, w) != spec.input_hw:
        raise ShapeError(
            f"input extent {h}x{w} does not match the {spec.input_hw[0]}x"
            f"{spec.input_hw[1]} extent this spec (and its position tables) "
            f"was built for")
    x = np.ascontiguousarray(x, dtype=np.float32)

    x = T.conv2d(x, _conv_from(store, "embed.conv", stride=4))
    if not store.fused:
        x = T.batch_norm_infer(x, _bn_from(store, "embed.bn"))

    rpe_hw = spec.final_hw
    for si, blocks in enumerate(spec.stages, start=1):
        if si > 1:
            x = T.conv2d(x, _conv_from(store, f"merge{si - 1}.conv", stride=2))
            if not store.fused:
                x = T.batch_norm_infer(x, _bn_from(store, f"merge{si - 1}.bn"))
        for bi, b in enumerate(blocks):
            x = block_forward(x, store, f"stage{si}.block{bi}", b,
                              spec.activation, rpe_hw)

    pooled = T.global_avg_pool(x)  # (n, c4)
    wc = store["head.conv.weight"].reshape(spec.config.classifier_hidden, -1)
    hidden = T.matmul(pooled, wc.T) + store["head.conv.bias"]
    hidden = T.activation(hidden, spec.activation)
    logits = T.matmul(hidden, store["head.fc.weight"].T) + store["head.fc.bias"]
    return logits
