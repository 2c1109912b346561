"""Network assembly: variant wiring, parameter containers, composite
forward/backward, and the training loss.

Variants (see the ablation module for the harness):

* ``full``  - shared backbone per modality -> per-modality hierarchical
  aggregation -> quality-aware cross-modality fusion.
* ``fa``    - hierarchical aggregation only; modalities concatenated.
* ``ma``    - quality-aware fusion of the raw conv3 maps only.
* ``early`` - the two modalities stacked into a 6-channel input, one stream.
* ``mid``   - per-modality conv1 (independent parameters), concatenated,
  then a single conv2/conv3 trunk.
* ``late``  - two independent full streams, conv3 maps concatenated.

The trainer and tracker only see this module's interface, so every
variant runs through them unmodified.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import backbone as bb
from . import hfa as hfa_mod
from . import qaa as qaa_mod
from . import head as head_mod
from . import losses
from .backbone import BackboneConfig, BackboneParams, ConvParams
from .hfa import HFAParams, LRNConfig
from .qaa import QAAParams
from .head import HeadConfig, HeadParams

VARIANTS = ("full", "fa", "ma", "early", "mid", "late")


@dataclass(frozen=True)
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=bb.paper_backbone)
    variant: str = "full"
    c_agg: int = 128
    d_embed: int = 256
    lrn: LRNConfig = field(default_factory=LRNConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    hfa_lrn_first: bool = False
    qaa_bias: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}, valid: {VARIANTS}")

    @property
    def total_stride(self) -> int:
        return self.backbone.total_stride

    @property
    def feature_channels(self) -> int:
        """Channel count of the fused map the head consumes."""
        c3 = self.backbone.layers[2].out_channels
        return {
            "full": 3 * self.c_agg,
            "fa": 6 * self.c_agg,
            "ma": c3,
            "early": c3,
            "mid": c3,
            "late": 2 * c3,
        }[self.variant]

    @property
    def head_in_features(self) -> int:
        return self.feature_channels * self.head.roi_size ** 2

    @property
    def uses_qaa(self) -> bool:
        return self.variant in ("full", "ma")


def toy_model_config(variant: str = "full") -> ModelConfig:
    """Desk-scale preset: 16/32/64 backbone, C_agg=32, d=64."""
    return ModelConfig(backbone=bb.toy_backbone(), variant=variant, c_agg=32, d_embed=64)


def paper_model_config(variant: str = "full") -> ModelConfig:
    """Full-width preset: 96/256/512 backbone, C_agg=128, d=256."""
    return ModelConfig(backbone=bb.paper_backbone(), variant=variant, c_agg=128, d_embed=256)


@dataclass
class ModelParams:
    """All learnable parameters of one model instance.

    ``backbone`` is the (shared) primary stream; ``backbone_t`` exists
    only for the unshared baseline variants (mid: thermal conv1, late:
    full thermal stream).
    """

    backbone: BackboneParams
    head: HeadParams
    backbone_t: BackboneParams | None = None
    hfa_rgb: HFAParams | None = None
    hfa_t: HFAParams | None = None
    qaa: QAAParams | None = None

    def named_arrays(self):
        yield from self.backbone.named_arrays("backbone")
        if self.backbone_t is not None:
            yield from self.backbone_t.named_arrays("backbone_t")
        if self.hfa_rgb is not None:
            yield from self.hfa_rgb.named_arrays("hfa_rgb")
        if self.hfa_t is not None:
            yield from self.hfa_t.named_arrays("hfa_t")
        if self.qaa is not None:
            yield from self.qaa.named_arrays("qaa")
        yield from self.head.named_arrays("head")


def param_group(name: str) -> str:
    """Learning-rate group: convolutional vs fully connected parameters."""
    return "conv" if name.startswith(("backbone", "hfa")) else "fc"


def named_params(params: ModelParams):
    """Yields (name, array, group) over every learnable tensor."""
    for name, arr in params.named_arrays():
        yield name, arr, param_group(name)


def zero_grads(params: ModelParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in params.named_arrays()}


def effective_backbone_config(cfg: ModelConfig) -> BackboneConfig:
    if cfg.variant == "early":
        return bb.with_in_channels(cfg.backbone, 2 * cfg.backbone.in_channels)
    return cfg.backbone


def init_model_params(
    cfg: ModelConfig,
    k_domains: int,
    rng: np.random.Generator,
    dtype=np.float64,
) -> ModelParams:
    bcfg = effective_backbone_config(cfg)
    c1 = cfg.backbone.layers[0].out_channels
    if cfg.variant == "mid":
        # rgb conv1, then a trunk whose conv2 consumes both streams
        trunk_cfg = bb.with_in_channels(cfg.backbone, cfg.backbone.in_channels)
        main = bb.init_backbone_params(trunk_cfg, rng, dtype)
        k2 = cfg.backbone.layers[1].kernel
        c2 = cfg.backbone.layers[1].out_channels
        main.convs[1] = ConvParams(
            w=bb.layers.fan_in_uniform(rng, (c2, 2 * c1, k2, k2), 2 * c1 * k2 * k2, dtype),
            b=np.zeros(c2, dtype=dtype),
        )
        backbone_t = BackboneParams(convs=[
            ConvParams(
                w=bb.layers.fan_in_uniform(
                    rng, main.convs[0].w.shape, int(np.prod(main.convs[0].w.shape[1:])), dtype
                ),
                b=np.zeros(c1, dtype=dtype),
            )
        ])
    else:
        main = bb.init_backbone_params(bcfg, rng, dtype)
        backbone_t = bb.init_backbone_params(bcfg, rng, dtype) if cfg.variant == "late" else None

    hfa_rgb = hfa_t = None
    if cfg.variant in ("full", "fa"):
        chans = cfg.backbone.out_channels
        hfa_rgb = hfa_mod.init_hfa_params(chans, cfg.c_agg, rng, cfg.lrn, dtype)
        hfa_t = hfa_mod.init_hfa_params(chans, cfg.c_agg, rng, cfg.lrn, dtype)

    qaa = None
    if cfg.uses_qaa:
        qaa_channels = 3 * cfg.c_agg if cfg.variant == "full" else cfg.backbone.layers[2].out_channels
        qaa = qaa_mod.init_qaa_params(qaa_channels, cfg.d_embed, rng, cfg.qaa_bias, dtype)

    head = head_mod.init_head_params(cfg.head_in_features, k_domains, cfg.head, rng, dtype)
    return ModelParams(
        backbone=main, head=head, backbone_t=backbone_t,
        hfa_rgb=hfa_rgb, hfa_t=hfa_t, qaa=qaa,
    )


# ---------------------------------------------------------------------------
# fused-feature forward / backward per variant
# ---------------------------------------------------------------------------

def features_forward(params: ModelParams, cfg: ModelConfig, rgb: np.ndarray, t: np.ndarray):
    """Fused feature map for batched inputs (N, 3, H, W) per modality.

    Returns (fused (N, C', h, w), attention (N, C') or None, cache).
    """
    v = cfg.variant
    bcfg = cfg.backbone
    if v in ("full", "fa"):
        feats_r, _, caches_r = bb.forward(rgb, params.backbone, bcfg)
        feats_t, _, caches_t = bb.forward(t, params.backbone, bcfg)
        xm_r, hc_r = hfa_mod.aggregate(*feats_r, params.hfa_rgb, cfg.hfa_lrn_first)
        xm_t, hc_t = hfa_mod.aggregate(*feats_t, params.hfa_t, cfg.hfa_lrn_first)
        if v == "full":
            fused, (a, _), qc = qaa_mod.qaa_forward(xm_r, xm_t, params.qaa)
            return fused, a, ("full", caches_r, caches_t, hc_r, hc_t, qc)
        fused = np.concatenate([xm_r, xm_t], axis=1)
        return fused, None, ("fa", caches_r, caches_t, hc_r, hc_t, xm_r.shape[1])
    if v == "ma":
        feats_r, _, caches_r = bb.forward(rgb, params.backbone, bcfg)
        feats_t, _, caches_t = bb.forward(t, params.backbone, bcfg)
        fused, (a, _), qc = qaa_mod.qaa_forward(feats_r[2], feats_t[2], params.qaa)
        return fused, a, ("ma", caches_r, caches_t, qc)
    if v == "early":
        x = np.concatenate([rgb, t], axis=1)
        feats, _, caches = bb.forward(x, params.backbone, bcfg)
        return feats[2], None, ("early", caches)
    if v == "mid":
        p_r = BackboneParams(convs=[params.backbone.convs[0]])
        _, out_r, caches_r = bb.forward(rgb, p_r, bcfg, 0, 1)
        _, out_t, caches_t = bb.forward(t, params.backbone_t, bcfg, 0, 1)
        merged = np.concatenate([out_r, out_t], axis=1)
        feats, _, caches_m = bb.forward(merged, params.backbone, bcfg, 1, 3)
        return feats[1], None, ("mid", caches_r, caches_t, caches_m, out_r.shape[1])
    if v == "late":
        feats_r, _, caches_r = bb.forward(rgb, params.backbone, bcfg)
        feats_t, _, caches_t = bb.forward(t, params.backbone_t, bcfg)
        fused = np.concatenate([feats_r[2], feats_t[2]], axis=1)
        return fused, None, ("late", caches_r, caches_t, feats_r[2].shape[1])
    raise ValueError(f"unknown variant {v!r}")


def _add_backbone_grads(grads: dict, bgrads: BackboneParams, prefix: str, offset: int = 0):
    for i, cp in enumerate(bgrads.convs, start=1 + offset):
        grads[f"{prefix}.conv{i}.w"] += cp.w
        grads[f"{prefix}.conv{i}.b"] += cp.b


def _add_hfa_grads(grads: dict, hgrads: HFAParams, prefix: str):
    for i, cp in enumerate(hgrads.compress, start=1):
        grads[f"{prefix}.compress{i}.w"] += cp.w
        grads[f"{prefix}.compress{i}.b"] += cp.b


def features_backward(dfused: np.ndarray, cache, params: ModelParams, cfg: ModelConfig, grads: dict):
    """Accumulate gradients of the fused map into ``grads`` (in place)."""
    v = cache[0]
    bcfg = cfg.backbone
    if v == "full":
        _, caches_r, caches_t, hc_r, hc_t, qc = cache
        dxm_r, dxm_t, qg = qaa_mod.qaa_backward(dfused, qc, params.qaa)
        grads["qaa.w"] += qg.w
        grads["qaa.w21"] += qg.w21
        grads["qaa.w22"] += qg.w22
        if params.qaa.b is not None:
            grads["qaa.b"] += qg.b
            grads["qaa.b21"] += qg.b21
            grads["qaa.b22"] += qg.b22
        df_r, hg_r = hfa_mod.backward(dxm_r, hc_r, params.hfa_rgb)
        df_t, hg_t = hfa_mod.backward(dxm_t, hc_t, params.hfa_t)
        _add_hfa_grads(grads, hg_r, "hfa_rgb")
        _add_hfa_grads(grads, hg_t, "hfa_t")
        _, bg_r = bb.backward(list(df_r), None, caches_r, params.backbone, bcfg)
        _, bg_t = bb.backward(list(df_t), None, caches_t, params.backbone, bcfg)
        _add_backbone_grads(grads, bg_r, "backbone")
        _add_backbone_grads(grads, bg_t, "backbone")
        return
    if v == "fa":
        _, caches_r, caches_t, hc_r, hc_t, c_half = cache
        df_r, hg_r = hfa_mod.backward(dfused[:, :c_half], hc_r, params.hfa_rgb)
        df_t, hg_t = hfa_mod.backward(dfused[:, c_half:], hc_t, params.hfa_t)
        _add_hfa_grads(grads, hg_r, "hfa_rgb")
        _add_hfa_grads(grads, hg_t, "hfa_t")
        _, bg_r = bb.backward(list(df_r), None, caches_r, params.backbone, bcfg)
        _, bg_t = bb.backward(list(df_t), None, caches_t, params.backbone, bcfg)
        _add_backbone_grads(grads, bg_r, "backbone")
        _add_backbone_grads(grads, bg_t, "backbone")
        return
    if v == "ma":
        _, caches_r, caches_t, qc = cache
        df3_r, df3_t, qg = qaa_mod.qaa_backward(dfused, qc, params.qaa)
        grads["qaa.w"] += qg.w
        grads["qaa.w21"] += qg.w21
        grads["qaa.w22"] += qg.w22
        _, bg_r = bb.backward([None, None, df3_r], None, caches_r, params.backbone, bcfg)
        _, bg_t = bb.backward([None, None, df3_t], None, caches_t, params.backbone, bcfg)
        _add_backbone_grads(grads, bg_r, "backbone")
        _add_backbone_grads(grads, bg_t, "backbone")
        return
    if v == "early":
        _, caches = cache
        _, bg = bb.backward([None, None, dfused], None, caches, params.backbone, bcfg)
        _add_backbone_grads(grads, bg, "backbone")
        return
    if v == "mid":
        _, caches_r, caches_t, caches_m, c_half = cache
        dmerged, bg_m = bb.backward(
            [None, dfused], None, caches_m, params.backbone, bcfg, 1, 3, need_dx=True
        )
        _add_backbone_grads(grads, bg_m, "backbone", offset=1)
        p_r = BackboneParams(convs=[params.backbone.convs[0]])
        _, bg_r = bb.backward([None], dmerged[:, :c_half], caches_r, p_r, bcfg, 0, 1)
        _, bg_t = bb.backward([None], dmerged[:, c_half:], caches_t, params.backbone_t, bcfg, 0, 1)
        _add_backbone_grads(grads, bg_r, "backbone")
        _add_backbone_grads(grads, bg_t, "backbone_t")
        return
    if v == "late":
        _, caches_r, caches_t, c_half = cache
        _, bg_r = bb.backward([None, None, dfused[:, :c_half]], None, caches_r, params.backbone, bcfg)
        _, bg_t = bb.backward([None, None, dfused[:, c_half:]], None, caches_t, params.backbone_t, bcfg)
        _add_backbone_grads(grads, bg_r, "backbone")
        _add_backbone_grads(grads, bg_t, "backbone_t")
        return
    raise ValueError(f"unknown variant {v!r}")


# ---------------------------------------------------------------------------
# frame preparation
# ---------------------------------------------------------------------------

def _axis_ok(cfg: BackboneConfig, n: int) -> bool:
    shapes, _ = bb.output_shapes(cfg, (n, n))
    (_, h1, _), (_, h2, _), (_, h3, _) = shapes
    if h3 < 3:
        return False
    return h1 % h3 == 0 and h2 % h3 == 0


def pad_target(cfg: ModelConfig, n: int) -> int:
    """Smallest n' >= n for which the backbone/HFA shape contract holds."""
    bcfg = effective_backbone_config(cfg)
    for nn in range(n, n + 128):
        if _axis_ok(bcfg, nn):
            return nn
    raise ValueError(f"no feasible padded size near {n}")


def frames_to_batch(frames, cfg: ModelConfig, dtype=np.float64) -> np.ndarray:
    """List of (H, W, 3) uint8 frames -> padded (N, 3, H', W') float batch.

    Frames are scaled to [0, 1] and edge-padded on the bottom/right so the
    aggregation resolution contract holds for any frame size.
    """
    arr = np.stack([np.asarray(f) for f in frames])
    if arr.dtype == np.uint8:
        arr = arr.astype(dtype) / 255.0
    else:
        arr = arr.astype(dtype)
    n, h, w, c = arr.shape
    th, tw = pad_target(cfg, h), pad_target(cfg, w)
    if (th, tw) != (h, w):
        arr = np.pad(arr, ((0, 0), (0, th - h), (0, tw - w), (0, 0)), mode="edge")
    return arr.transpose(0, 3, 1, 2)


# ---------------------------------------------------------------------------
# composite loss (features -> RoIAlign -> head -> Eq. 7)
# ---------------------------------------------------------------------------

def loss_and_grads(
    params: ModelParams,
    cfg: ModelConfig,
    rgb: np.ndarray,
    t: np.ndarray,
    boxes: np.ndarray,
    frame_idx: np.ndarray,
    labels: np.ndarray,
    domain: int,
    alpha: float = 0.1,
    train: bool = True,
    rng: np.random.Generator | None = None,
    compute_grads: bool = True,
):
    """One full forward (and optional backward) over a minibatch.

    Returns (total, l_cls, l_inst, grads_or_None, logits).
    """
    labels = np.asarray(labels)
    fused, _, fcache = features_forward(params, cfg, rgb, t)
    feats, rcache = head_mod.roi_align(
        fused, boxes, cfg.total_stride, cfg.head.roi_size, cfg.head.roi_samples, frame_idx
    )
    m = feats.shape[0]
    flat = feats.reshape(m, -1)
    h2d, tcache = head_mod.trunk_forward(flat, params.head, train, rng)
    logits, brcache = head_mod.branch_forward(h2d, params.head, domain)
    l_cls, dlogits = losses.bce_loss_grad(logits, labels)

    pos = labels == 1
    n_domains = params.head.n_branches
    l_inst = 0.0
    dscores = None
    if n_domains > 1 and pos.any():
        pos_scores = head_mod.all_branch_positive(h2d[pos], params.head)
        l_inst, dscores = losses.instance_embedding_loss_grad(
            pos_scores, np.full(int(pos.sum()), domain)
        )
    total = losses.total_loss(l_cls, l_inst, alpha)
    if not np.isfinite(total):
        raise FloatingPointError(f"non-finite loss {total} (cls={l_cls}, inst={l_inst})")
    if not compute_grads:
        return total, l_cls, l_inst, None, logits

    grads = zero_grads(params)
    dh2d, dw3, db3 = head_mod.branch_backward(dlogits, brcache, params.head, domain)
    grads[f"head.fc3.{domain}.w"] += dw3
    grads[f"head.fc3.{domain}.b"] += db3
    if dscores is not None:
        dh2d_pos, dws, dbs = head_mod.all_branch_positive_backward(
            alpha * dscores, h2d[pos], params.head
        )
        dh2d[pos] += dh2d_pos
        for k in range(n_domains):
            grads[f"head.fc3.{k}.w"][1] += dws[k]
            grads[f"head.fc3.{k}.b"][1] += dbs[k]
    dflat, (dw1, db1, dw2, db2) = head_mod.trunk_backward(dh2d, tcache, params.head, need_dx=True)
    grads["head.fc1.w"] += dw1
    grads["head.fc1.b"] += db1
    grads["head.fc2.w"] += dw2
    grads["head.fc2.b"] += db2
    dfeat = dflat.reshape(feats.shape)
    dfused = head_mod.roi_align_backward(dfeat, rcache)
    features_backward(dfused, fcache, params, cfg, grads)
    return total, l_cls, l_inst, grads, logits


def score_boxes(
    params: ModelParams,
    cfg: ModelConfig,
    fused: np.ndarray,
    boxes: np.ndarray,
    domain: int = 0,
    frame_idx=None,
):
    """Evaluation-mode scores for boxes on a precomputed fused map.

    Returns (f_plus (M,), logits (M, 2), flat RoI features (M, D)).
    """
    feats, _ = head_mod.roi_align(
        fused, boxes, cfg.total_stride, cfg.head.roi_size, cfg.head.roi_samples, frame_idx
    )
    flat = feats.reshape(feats.shape[0], -1)
    h2d, _ = head_mod.trunk_forward(flat, params.head, train=False)
    logits, _ = head_mod.branch_forward(h2d, params.head, domain)
    return logits[:, 1], logits, flat
