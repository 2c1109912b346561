"""RoIAlign feature extraction and the multi-domain FC classifier.

RoIAlign pools a fixed P x P grid from the fused feature map for each
box by averaging 2x2 bilinear samples per bin, without any coordinate
rounding. The classifier is fc1 -> ReLU -> dropout -> fc2 -> ReLU ->
dropout -> fc3[domain]; fc3 has one two-unit branch per training domain
and the positive score f+ is the raw logit at index 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers


@dataclass(frozen=True)
class HeadConfig:
    roi_size: int = 3  # P
    roi_samples: int = 2  # bilinear samples per bin axis
    fc1_units: int = 1024
    fc2_units: int = 512
    dropout: float = 0.5


@dataclass
class LinearParams:
    w: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)


@dataclass
class HeadParams:
    fc1: LinearParams
    fc2: LinearParams
    branches: list[LinearParams] = field(default_factory=list)
    dropout: float = 0.5

    @property
    def n_branches(self) -> int:
        return len(self.branches)

    def named_arrays(self, prefix: str = "head"):
        yield f"{prefix}.fc1.w", self.fc1.w
        yield f"{prefix}.fc1.b", self.fc1.b
        yield f"{prefix}.fc2.w", self.fc2.w
        yield f"{prefix}.fc2.b", self.fc2.b
        for k, br in enumerate(self.branches):
            yield f"{prefix}.fc3.{k}.w", br.w
            yield f"{prefix}.fc3.{k}.b", br.b


def _init_linear(rng, n_out, n_in, dtype):
    return LinearParams(
        w=layers.fan_in_uniform(rng, (n_out, n_in), n_in, dtype),
        b=np.zeros(n_out, dtype=dtype),
    )


def init_head_params(
    in_features: int,
    k_domains: int,
    config: HeadConfig,
    rng: np.random.Generator,
    dtype=np.float64,
) -> HeadParams:
    if k_domains < 1:
        raise ValueError("need at least one domain branch")
    return HeadParams(
        fc1=_init_linear(rng, config.fc1_units, in_features, dtype),
        fc2=_init_linear(rng, config.fc2_units, config.fc1_units, dtype),
        branches=[_init_linear(rng, 2, config.fc2_units, dtype) for _ in range(k_domains)],
        dropout=config.dropout,
    )


def replace_branches(params: HeadParams, k_new: int, rng: np.random.Generator) -> HeadParams:
    """Fresh fc3 branches; fc1/fc2 arrays are carried over untouched."""
    if k_new < 1:
        raise ValueError("k_new must be >= 1")
    dtype = params.fc1.w.dtype
    n_in = params.fc2.w.shape[0]
    return HeadParams(
        fc1=params.fc1,
        fc2=params.fc2,
        branches=[_init_linear(rng, 2, n_in, dtype) for _ in range(k_new)],
        dropout=params.dropout,
    )


# ---------------------------------------------------------------------------
# RoIAlign
# ---------------------------------------------------------------------------

def _bilinear_corners(coord, limit):
    """Clamp continuous coords to [0, limit-1] and split into lo/hi/frac."""
    c = np.clip(coord, 0.0, limit - 1.0)
    lo = np.minimum(np.floor(c).astype(np.int64), limit - 1)
    hi = np.minimum(lo + 1, limit - 1)
    frac = c - lo
    return lo, hi, frac


def _project_boxes(boxes, stride, fh, fw):
    boxes = np.asarray(boxes, dtype=np.float64)
    x1 = np.clip(boxes[:, 0] / stride, 0.0, fw)
    y1 = np.clip(boxes[:, 1] / stride, 0.0, fh)
    x2 = np.clip((boxes[:, 0] + boxes[:, 2]) / stride, 0.0, fw)
    y2 = np.clip((boxes[:, 1] + boxes[:, 3]) / stride, 0.0, fh)
    if np.any(x2 - x1 <= 0.0) or np.any(y2 - y1 <= 0.0):
        bad = np.where((x2 - x1 <= 0) | (y2 - y1 <= 0))[0]
        raise ValueError(f"boxes {bad.tolist()} project to zero area on the feature map")
    return x1, y1, x2, y2


def _sample_coords(lo, span, p, s):
    """Sample coordinates along one axis: (M,) box extent -> (M, P, S)."""
    bins = span[:, None] / p  # (M, 1)
    offs = (np.arange(s) + 0.5) / s  # (S,)
    grid = lo[:, None, None] + bins[:, :, None] * (np.arange(p)[None, :, None] + offs[None, None, :])
    return grid  # (M, P, S)


def roi_align(fmap: np.ndarray, boxes, stride: int, p: int = 3, samples: int = 2, frame_idx=None, chunk: int = 1024):
    """Pool P x P bins from fmap for each box.

    fmap (N, C, Hf, Wf); boxes (M, 4) as (x, y, w, h) in image pixels;
    frame_idx (M,) maps boxes to batch elements (defaults to all zero).
    Out-of-map boxes are clamped; zero-area projections raise.
    Returns (features (M, C, P, P), cache).
    """
    n, c, fh, fw = fmap.shape
    boxes = np.asarray(boxes, dtype=np.float64)
    m = boxes.shape[0]
    if frame_idx is None:
        frame_idx = np.zeros(m, dtype=np.int64)
    else:
        frame_idx = np.asarray(frame_idx, dtype=np.int64)
    x1, y1, x2, y2 = _project_boxes(boxes, stride, fh, fw)
    sy = _sample_coords(y1, y2 - y1, p, samples)  # (M, P, S)
    sx = _sample_coords(x1, x2 - x1, p, samples)

    yl, yh, fy = _bilinear_corners(sy, fh)
    xl, xh, fx = _bilinear_corners(sx, fw)

    fm_flat = fmap.reshape(n, c, fh * fw)
    out = np.empty((m, c, p, p), dtype=fmap.dtype)
    for s0 in range(0, m, chunk):
        sl = slice(s0, min(s0 + chunk, m))
        acc = _gather_chunk(fm_flat, frame_idx[sl], yl[sl], yh[sl], fy[sl], xl[sl], xh[sl], fx[sl], fw, p, samples)
        out[sl] = acc
    cache = (fmap.shape, frame_idx, yl, yh, fy, xl, xh, fx, p, samples, chunk)
    return out, cache


def _corner_terms(yl, yh, fy, xl, xh, fx, fw):
    """Flat indices and weights of the 4 bilinear corners per sample.

    Axis fractions are (M, P, S); results broadcast to (M, P, P, S, S)
    with dims (box, bin_y, bin_x, sample_y, sample_x).
    """
    ylb = yl[:, :, None, :, None]
    yhb = yh[:, :, None, :, None]
    fyb = fy[:, :, None, :, None]
    xlb = xl[:, None, :, None, :]
    xhb = xh[:, None, :, None, :]
    fxb = fx[:, None, :, None, :]
    one = np.ones_like(fyb * fxb)
    return (
        (ylb * fw + xlb, (1 - fyb) * (1 - fxb) * one),
        (ylb * fw + xhb, (1 - fyb) * fxb * one),
        (yhb * fw + xlb, fyb * (1 - fxb) * one),
        (yhb * fw + xhb, fyb * fxb * one),
    )


def _gather_chunk(fm_flat, fidx, yl, yh, fy, xl, xh, fx, fw, p, s):
    mc = yl.shape[0]
    c = fm_flat.shape[1]
    acc = np.zeros((mc, p, p, s, s, c), dtype=fm_flat.dtype)
    fb = fidx[:, None, None, None, None]
    for idx, wgt in _corner_terms(yl, yh, fy, xl, xh, fx, fw):
        idx_b = np.broadcast_to(idx, (mc, p, p, s, s))
        vals = fm_flat[fb, :, idx_b]  # (mc, P, P, S, S, C)
        acc += wgt[..., None] * vals
    bins = acc.mean(axis=(3, 4))  # average the S*S samples
    return bins.transpose(0, 3, 1, 2)


def roi_align_backward(dfeat: np.ndarray, cache) -> np.ndarray:
    """Gradient of roi_align with respect to the feature map."""
    fmap_shape, frame_idx, yl, yh, fy, xl, xh, fx, p, samples, chunk = cache
    n, c, fh, fw = fmap_shape
    m = dfeat.shape[0]
    buf = np.zeros((n * fh * fw, c), dtype=dfeat.dtype)
    scale = 1.0 / (samples * samples)
    for s0 in range(0, m, chunk):
        sl = slice(s0, min(s0 + chunk, m))
        dbin = dfeat[sl].transpose(0, 2, 3, 1) * scale  # (mc, P, P, C)
        dsamp = dbin[:, :, :, None, None, :]  # broadcast over samples
        base = frame_idx[sl][:, None, None, None, None] * (fh * fw)
        mc = dbin.shape[0]
        for idx, wgt in _corner_terms(yl[sl], yh[sl], fy[sl], xl[sl], xh[sl], fx[sl], fw):
            gidx = np.broadcast_to(base + idx, (mc, p, p, samples, samples)).reshape(-1)
            vals = (wgt[..., None] * dsamp).reshape(-1, c)
            np.add.at(buf, gidx, vals)
    return buf.reshape(n, fh, fw, c).transpose(0, 3, 1, 2)


# ---------------------------------------------------------------------------
# FC stack
# ---------------------------------------------------------------------------

def trunk_forward(feats: np.ndarray, params: HeadParams, train: bool, rng=None):
    """Flattened RoI features (M, D) -> shared fc1/fc2 activations (M, 512)."""
    h1_pre, c1 = layers.linear_forward(feats, params.fc1.w, params.fc1.b)
    h1, r1 = layers.relu_forward(h1_pre)
    h1d, m1 = layers.dropout_forward(h1, params.dropout, train, rng)
    h2_pre, c2 = layers.linear_forward(h1d, params.fc2.w, params.fc2.b)
    h2, r2 = layers.relu_forward(h2_pre)
    h2d, m2 = layers.dropout_forward(h2, params.dropout, train, rng)
    return h2d, (c1, r1, m1, c2, r2, m2)


def trunk_backward(dh2d, cache, params: HeadParams, need_dx: bool = False):
    c1, r1, m1, c2, r2, m2 = cache
    dh2 = layers.dropout_backward(dh2d, m2)
    dh2_pre = layers.relu_backward(dh2, r2)
    dh1d, dw2, db2 = layers.linear_backward(dh2_pre, c2, params.fc2.w)
    dh1 = layers.dropout_backward(dh1d, m1)
    dh1_pre = layers.relu_backward(dh1, r1)
    dfeat, dw1, db1 = layers.linear_backward(dh1_pre, c1, params.fc1.w, need_dx=need_dx)
    return dfeat, (dw1, db1, dw2, db2)


def branch_forward(h2d: np.ndarray, params: HeadParams, domain: int):
    if not 0 <= domain < params.n_branches:
        raise ValueError(f"domain {domain} out of range, have {params.n_branches} branches")
    br = params.branches[domain]
    logits, cache = layers.linear_forward(h2d, br.w, br.b)
    return logits, cache


def branch_backward(dlogits, cache, params: HeadParams, domain: int):
    br = params.branches[domain]
    dh2d, dw, db = layers.linear_backward(dlogits, cache, br.w)
    return dh2d, dw, db


def all_branch_positive(h2d: np.ndarray, params: HeadParams):
    """Positive logit of every branch: (M, K). Used by the instance loss."""
    ws = np.stack([br.w[1] for br in params.branches])  # (K, 512)
    bs = np.array([br.b[1] for br in params.branches])
    return h2d @ ws.T + bs


def all_branch_positive_backward(dscores, h2d, params: HeadParams):
    """Gradients of all_branch_positive: per-branch (dw, db) rows and dh2d."""
    ws = np.stack([br.w[1] for br in params.branches])
    dh2d = dscores @ ws
    dws = dscores.T @ h2d  # (K, 512), gradient of each branch's positive row
    dbs = dscores.sum(axis=0)
    return dh2d, dws, dbs


def fc_forward(
    feat: np.ndarray,
    params: HeadParams,
    domain: int,
    train_mode: bool = False,
    rng=None,
):
    """RoI feature(s) -> raw two-unit logits for one domain branch.

    feat may be (C, P, P) for a single sample or (M, C*P*P)/(M, C, P, P)
    batched. f+ is logits[..., 1], a raw pre-softmax score.
    """
    arr = np.asarray(feat)
    single = arr.ndim == 3
    flat = arr.reshape(1, -1) if single else arr.reshape(arr.shape[0], -1)
    h2d, _ = trunk_forward(flat, params, train_mode, rng)
    logits, _ = branch_forward(h2d, params, domain)
    return logits[0] if single else logits
