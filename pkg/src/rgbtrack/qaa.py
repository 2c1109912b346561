"""Quality-aware cross-modality aggregation.

The two per-modality maps are concatenated along channels, squeezed to a
channel descriptor by global average pooling, embedded through a
fully connected layer, and turned into per-channel modality weights by
two per-modality fully connected layers followed by a two-way softmax.
The fused map is the per-channel convex combination of the inputs.

All operations accept a single map (C, H, W) or a batch (N, C, H, W);
vector quantities gain the matching leading batch axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers


@dataclass
class QAAParams:
    """Embedding and attention matrices.

    w embeds the 2*C'-channel descriptor into d dims; w21/w22 map the
    embedding back to C' per-modality attention logits. Bias vectors are
    optional and default to absent.
    """

    w: np.ndarray  # (d, 2*C')
    w21: np.ndarray  # (C', d)
    w22: np.ndarray  # (C', d)
    b: np.ndarray | None = None
    b21: np.ndarray | None = None
    b22: np.ndarray | None = None

    @property
    def d(self) -> int:
        return self.w.shape[0]

    @property
    def channels(self) -> int:
        return self.w21.shape[0]

    def named_arrays(self, prefix: str = "qaa"):
        yield f"{prefix}.w", self.w
        yield f"{prefix}.w21", self.w21
        yield f"{prefix}.w22", self.w22
        for nm, arr in (("b", self.b), ("b21", self.b21), ("b22", self.b22)):
            if arr is not None:
                yield f"{prefix}.{nm}", arr


def init_qaa_params(
    channels: int,
    d: int,
    rng: np.random.Generator,
    use_bias: bool = False,
    dtype=np.float64,
) -> QAAParams:
    """channels is C', the per-modality channel count; the squeeze sees 2*C'."""
    c2 = 2 * channels
    w = layers.fan_in_uniform(rng, (d, c2), c2, dtype)
    w21 = layers.fan_in_uniform(rng, (channels, d), d, dtype)
    w22 = layers.fan_in_uniform(rng, (channels, d), d, dtype)
    if use_bias:
        zeros = lambda k: np.zeros(k, dtype=dtype)
        return QAAParams(w, w21, w22, zeros(d), zeros(channels), zeros(channels))
    return QAAParams(w, w21, w22)


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """Squeeze spatial information: f_c = mean over (H, W) of channel c."""
    if x.ndim < 3 or x.shape[-1] == 0 or x.shape[-2] == 0:
        raise ValueError(f"expected a nonempty (..., C, H, W) map, got {x.shape}")
    return x.mean(axis=(-2, -1))


def embed(f: np.ndarray, params: QAAParams) -> np.ndarray:
    """z = ReLU(W f) (plus bias when configured)."""
    if f.shape[-1] != params.w.shape[1]:
        raise ValueError(f"descriptor length {f.shape[-1]} != {params.w.shape[1]}")
    z = f @ params.w.T
    if params.b is not None:
        z = z + params.b
    return np.maximum(z, 0.0)


def pair_softmax(v_rgb: np.ndarray, v_t: np.ndarray):
    """Per-channel two-way softmax, (a, b) with a + b = 1.

    Computed as the sigmoid of the logit difference, so it is exactly
    shift-invariant and cannot overflow.
    """
    diff = np.asarray(v_rgb - v_t, dtype=np.float64)
    a = np.empty_like(diff)
    pos = diff >= 0
    a[pos] = 1.0 / (1.0 + np.exp(-diff[pos]))
    e = np.exp(diff[~pos])
    a[~pos] = e / (1.0 + e)
    return a, 1.0 - a


def modality_attention(z: np.ndarray, params: QAAParams):
    """Per-channel modality weights (a, b) from the embedding.

    V_rgb = ReLU(W21 z), V_t = ReLU(W22 z); per channel,
    a = exp(V_rgb) / (exp(V_rgb) + exp(V_t)). Returns (a, b).
    """
    if z.shape[-1] != params.w21.shape[1]:
        raise ValueError(f"embedding length {z.shape[-1]} != {params.w21.shape[1]}")
    v_rgb = z @ params.w21.T
    v_t = z @ params.w22.T
    if params.b21 is not None:
        v_rgb = v_rgb + params.b21
    if params.b22 is not None:
        v_t = v_t + params.b22
    return pair_softmax(np.maximum(v_rgb, 0.0), np.maximum(v_t, 0.0))


def fuse(x_rgb: np.ndarray, x_t: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Per-channel convex combination F_c = a_c X_rgb^c + (1 - a_c) X_t^c.

    Computed as X_t + a * (X_rgb - X_t) and clamped to the elementwise
    [min, max] envelope of the two inputs, so the convexity bound holds
    exactly despite last-ulp rounding.
    """
    if x_rgb.shape != x_t.shape:
        raise ValueError(f"modality shapes differ: {x_rgb.shape} vs {x_t.shape}")
    if a.shape[-1] != x_rgb.shape[-3]:
        raise ValueError(f"attention length {a.shape[-1]} != channels {x_rgb.shape[-3]}")
    aa = a[..., :, None, None]
    f = x_t + aa * (x_rgb - x_t)
    lo = np.minimum(x_rgb, x_t)
    hi = np.maximum(x_rgb, x_t)
    return np.minimum(np.maximum(f, lo), hi)


def qaa_forward(x_rgb: np.ndarray, x_t: np.ndarray, params: QAAParams):
    """Full pipeline: concat -> squeeze -> embed -> attention -> fuse.

    Returns (F, (a, b), cache); the attention vectors are exposed for
    logging and the quality-awareness experiments.
    """
    x = np.concatenate([x_rgb, x_t], axis=-3)
    f = global_avg_pool(x)
    z_pre = f @ params.w.T
    if params.b is not None:
        z_pre = z_pre + params.b
    z = np.maximum(z_pre, 0.0)
    vr_pre = z @ params.w21.T
    vt_pre = z @ params.w22.T
    if params.b21 is not None:
        vr_pre = vr_pre + params.b21
    if params.b22 is not None:
        vt_pre = vt_pre + params.b22
    a, b = pair_softmax(np.maximum(vr_pre, 0.0), np.maximum(vt_pre, 0.0))
    fused = fuse(x_rgb, x_t, a)
    cache = (x_rgb, x_t, f, z_pre, z, vr_pre, vt_pre, a)
    return fused, (a, b), cache


def qaa_backward(dfused, cache, params: QAAParams):
    """Gradients of qaa_forward. Returns (dx_rgb, dx_t, QAAParams grads).

    The convexity clamp in fuse is treated as identity (it is only ever
    active at rounding scale).
    """
    x_rgb, x_t, f, z_pre, z, vr_pre, vt_pre, a = cache
    batched = x_rgb.ndim == 4
    if not batched:
        x_rgb, x_t = x_rgb[None], x_t[None]
        f, z_pre, z = f[None], z_pre[None], z[None]
        vr_pre, vt_pre, a = vr_pre[None], vt_pre[None], a[None]
        dfused = dfused[None]

    aa = a[:, :, None, None]
    dx_rgb = dfused * aa
    dx_t = dfused * (1.0 - aa)
    da = (dfused * (x_rgb - x_t)).sum(axis=(-2, -1))  # (N, C')

    ddiff = da * a * (1.0 - a)  # sigmoid of diff
    dvr = np.where(vr_pre > 0, ddiff, 0.0)
    dvt = np.where(vt_pre > 0, -ddiff, 0.0)

    dw21 = dvr.T @ z
    dw22 = dvt.T @ z
    dz = dvr @ params.w21 + dvt @ params.w22
    dz_pre = np.where(z_pre > 0, dz, 0.0)
    dw = dz_pre.T @ f
    df = dz_pre @ params.w

    hw = x_rgb.shape[-2] * x_rgb.shape[-1]
    dx = df[:, :, None, None] / hw  # spread the pooled gradient
    c = x_rgb.shape[1]
    dx_rgb = dx_rgb + dx[:, :c]
    dx_t = dx_t + dx[:, c:]

    grads = QAAParams(w=dw, w21=dw21, w22=dw22)
    if params.b is not None:
        grads.b = dz_pre.sum(axis=0)
    if params.b21 is not None:
        grads.b21 = dvr.sum(axis=0)
    if params.b22 is not None:
        grads.b22 = dvt.sum(axis=0)
    if not batched:
        dx_rgb, dx_t = dx_rgb[0], dx_t[0]
    return dx_rgb, dx_t, grads
