"""Hierarchical feature aggregation within one modality.

The three backbone maps are brought to F3's resolution by
non-overlapping max pooling, compressed to a common channel count by
1x1 convolutions, rectified, normalized with cross-channel LRN, and
concatenated along channels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers
from .backbone import ConvParams


@dataclass(frozen=True)
class LRNConfig:
    n: int = 5
    k: float = 2.0
    alpha: float = 1e-4
    beta: float = 0.75

    def __post_init__(self):
        if self.n < 1 or self.k <= 0 or self.alpha <= 0 or self.beta <= 0:
            raise ValueError("LRN constants must be positive")


@dataclass
class HFAParams:
    """Per-layer 1x1 compression kernels; all map to the same C_agg."""

    compress: list[ConvParams] = field(default_factory=list)
    lrn: LRNConfig = field(default_factory=LRNConfig)

    @property
    def c_agg(self) -> int:
        return self.compress[0].w.shape[0]

    def named_arrays(self, prefix: str = "hfa"):
        for i, cp in enumerate(self.compress, start=1):
            yield f"{prefix}.compress{i}.w", cp.w
            yield f"{prefix}.compress{i}.b", cp.b


def init_hfa_params(
    in_channels,
    c_agg: int,
    rng: np.random.Generator,
    lrn: LRNConfig | None = None,
    dtype=np.float64,
) -> HFAParams:
    params = HFAParams(lrn=lrn or LRNConfig())
    for cin in in_channels:
        w = layers.fan_in_uniform(rng, (c_agg, cin, 1, 1), cin, dtype)
        b = np.zeros(c_agg, dtype=dtype)
        params.compress.append(ConvParams(w, b))
    return params


def unify_resolution(f1, f2, f3):
    """Max-pool F1/F2 down to F3's spatial size; F3 passes through.

    Each map's spatial size must be an integer multiple of F3's;
    the pooling kernel and stride both equal that ratio.
    """
    target = f3.shape[-2:]
    outs = []
    caches = []
    for f in (f1, f2, f3):
        h, w = f.shape[-2:]
        if h % target[0] or w % target[1]:
            raise ValueError(f"resolution {h}x{w} is not an integer multiple of {target}")
        rh, rw = h // target[0], w // target[1]
        if rh != rw:
            raise ValueError(f"anisotropic resolution ratio {rh}x{rw} unsupported")
        y, cache = layers.blockmax_forward(f, rh)
        outs.append(y)
        caches.append(cache)
    return tuple(outs), caches


def aggregate(f1, f2, f3, params: HFAParams, lrn_first: bool = False):
    """Aggregate three maps into X_m with 3*C_agg channels at F3 resolution.

    Per level: unify -> 1x1 conv -> ReLU -> LRN (the default order;
    ``lrn_first`` swaps LRN ahead of the conv). Levels are concatenated
    along channels. Returns (x_m, cache).
    """
    (u1, u2, u3), pool_caches = unify_resolution(f1, f2, f3)
    outs = []
    level_caches = []
    for u, cp in zip((u1, u2, u3), params.compress):
        if lrn_first:
            ln, lrn_cache = layers.lrn_forward(u, params.lrn.n, params.lrn.k, params.lrn.alpha, params.lrn.beta)
            z, conv_cache = layers.conv2d_forward(ln, cp.w, cp.b)
            r, relu_cache = layers.relu_forward(z)
            outs.append(r)
        else:
            z, conv_cache = layers.conv2d_forward(u, cp.w, cp.b)
            r, relu_cache = layers.relu_forward(z)
            ln, lrn_cache = layers.lrn_forward(r, params.lrn.n, params.lrn.k, params.lrn.alpha, params.lrn.beta)
            outs.append(ln)
        level_caches.append((conv_cache, relu_cache, lrn_cache))
    x_m = np.concatenate(outs, axis=1)
    cache = (pool_caches, level_caches, params.c_agg, lrn_first)
    return x_m, cache


def backward(dxm, cache, params: HFAParams):
    """Gradients of aggregate: returns ((df1, df2, df3), HFAParams grads)."""
    pool_caches, level_caches, c_agg, lrn_first = cache
    grads = HFAParams(
        compress=[ConvParams(np.zeros_like(cp.w), np.zeros_like(cp.b)) for cp in params.compress],
        lrn=params.lrn,
    )
    dfeats = []
    for lvl in range(3):
        d = dxm[:, lvl * c_agg:(lvl + 1) * c_agg]
        conv_cache, relu_cache, lrn_cache = level_caches[lvl]
        if lrn_first:
            dr = layers.relu_backward(d, relu_cache)
            du_conv, dw, db = layers.conv2d_backward(dr, conv_cache, params.compress[lvl].w)
            du = layers.lrn_backward(du_conv, lrn_cache)
        else:
            dln = layers.lrn_backward(d, lrn_cache)
            dr = layers.relu_backward(dln, relu_cache)
            du, dw, db = layers.conv2d_backward(dr, conv_cache, params.compress[lvl].w)
        grads.compress[lvl].w += dw
        grads.compress[lvl].b += db
        dfeats.append(layers.blockmax_backward(du, pool_caches[lvl]))
    return tuple(dfeats), grads
