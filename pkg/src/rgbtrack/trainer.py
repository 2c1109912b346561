"""Offline multi-domain training.

Each iteration builds a minibatch from one domain (8 frames, 32
positive / 96 negative boxes per frame), runs the full network, and
takes an Adam step with per-group learning rates and weight decay.
Domains are visited round-robin: iteration t trains domain t mod K, for
200*K iterations total at the defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry, model
from .data import RGBTSequence
from .model import ModelConfig, ModelParams
from .optim import Adam
from .utils import write_csv


@dataclass(frozen=True)
class TrainConfig:
    frames_per_batch: int = 8
    pos_per_frame: int = 32
    neg_per_frame: int = 96
    iterations_per_domain: int = 200
    lr_conv: float = 1e-4
    lr_fc: float = 1e-3
    weight_decay: float = 5e-4
    alpha: float = 0.1
    seed: int = 0
    decoupled_weight_decay: bool = True
    qaa_lr_group: str = "fc"  # QAA matrices are fully connected layers

    def __post_init__(self):
        for f in ("frames_per_batch", "pos_per_frame", "neg_per_frame", "iterations_per_domain"):
            if getattr(self, f) < 1:
                raise ValueError(f"{f} must be positive")
        if self.lr_conv < 0 or self.lr_fc < 0 or self.weight_decay < 0:
            raise ValueError("rates must be nonnegative")
        if self.qaa_lr_group not in ("fc", "conv"):
            raise ValueError("qaa_lr_group must be 'fc' or 'conv'")


@dataclass
class MiniBatch:
    rgb: np.ndarray  # (F, 3, H, W)
    t: np.ndarray
    boxes: np.ndarray  # (M, 4)
    frame_idx: np.ndarray  # (M,)
    labels: np.ndarray  # (M,)
    domain: int


@dataclass
class TraceRow:
    iteration: int
    domain: int
    l_cls: float
    l_inst: float
    total: float


def build_minibatch(
    dataset: list[RGBTSequence],
    domain: int,
    cfg: TrainConfig,
    rng: np.random.Generator,
    model_cfg: ModelConfig,
) -> MiniBatch:
    """Choose frames (with replacement if the sequence is short) and draw
    the per-frame positive/negative boxes."""
    seq = dataset[domain]
    n = len(seq)
    if n >= cfg.frames_per_batch:
        frame_ids = rng.choice(n, size=cfg.frames_per_batch, replace=False)
    else:
        frame_ids = rng.integers(0, n, size=cfg.frames_per_batch)
    boxes, frame_idx, labels = [], [], []
    for slot, fi in enumerate(frame_ids):
        drawn = geometry.sample_training_boxes(
            seq.gt_box(int(fi)), cfg.pos_per_frame, cfg.neg_per_frame, seq.frame_size, rng
        )
        for b, lab in drawn:
            boxes.append(b.as_array())
            frame_idx.append(slot)
            labels.append(lab)
    rgb = model.frames_to_batch(seq.rgb[frame_ids], model_cfg)
    t = model.frames_to_batch(seq.t[frame_ids], model_cfg)
    return MiniBatch(
        rgb=rgb,
        t=t,
        boxes=np.stack(boxes),
        frame_idx=np.array(frame_idx),
        labels=np.array(labels),
        domain=domain,
    )


def make_optimizer(params: ModelParams, cfg: TrainConfig) -> Adam:
    specs = []
    for name, arr, group in model.named_params(params):
        if name.startswith("qaa"):
            group = cfg.qaa_lr_group
        specs.append((name, arr, group))
    return Adam(
        specs,
        lr={"conv": cfg.lr_conv, "fc": cfg.lr_fc},
        weight_decay=cfg.weight_decay,
        decoupled=cfg.decoupled_weight_decay,
    )


def train_offline(
    dataset: list[RGBTSequence],
    cfg: TrainConfig,
    model_cfg: ModelConfig,
    params: ModelParams | None = None,
    callback=None,
) -> tuple[ModelParams, list[TraceRow]]:
    """Run iterations_per_domain * K iterations round-robin over domains.

    Returns the trained parameters and the per-iteration loss trace.
    A non-finite loss aborts with the iteration and domain in the message.
    """
    k = len(dataset)
    if k < 1:
        raise ValueError("need at least one training sequence")
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = model.init_model_params(model_cfg, k, rng)
    if params.head.n_branches != k:
        raise ValueError(f"head has {params.head.n_branches} branches for {k} domains")
    opt = make_optimizer(params, cfg)
    trace: list[TraceRow] = []
    total_iters = cfg.iterations_per_domain * k
    for it in range(total_iters):
        domain = it % k
        batch = build_minibatch(dataset, domain, cfg, rng, model_cfg)
        try:
            total, l_cls, l_inst, grads, _ = model.loss_and_grads(
                params, model_cfg, batch.rgb, batch.t, batch.boxes, batch.frame_idx,
                batch.labels, domain, alpha=cfg.alpha, train=True, rng=rng,
            )
        except FloatingPointError as e:
            raise FloatingPointError(f"iteration {it}, domain {domain}: {e}") from e
        opt.step(grads)
        trace.append(TraceRow(it, domain, l_cls, l_inst, total))
        if callback is not None:
            callback(it, trace[-1])
    return params, trace


def batch_accuracy(params: ModelParams, model_cfg: ModelConfig, batch: MiniBatch) -> float:
    """Fraction of batch samples whose argmax logit matches the label."""
    _, _, _, _, logits = model.loss_and_grads(
        params, model_cfg, batch.rgb, batch.t, batch.boxes, batch.frame_idx,
        batch.labels, batch.domain, train=False, compute_grads=False,
    )
    return float((logits.argmax(axis=1) == batch.labels).mean())


def write_trace(path, trace: list[TraceRow]) -> None:
    write_csv(
        path,
        ["iteration", "domain", "l_cls", "l_inst", "total"],
        [(r.iteration, r.domain, repr(r.l_cls), repr(r.l_inst), repr(r.total)) for r in trace],
    )


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, params: ModelParams, model_cfg: ModelConfig, opt: Adam | None = None) -> None:
    """npz archive: param.<name> arrays (float64) plus optimizer state."""
    arrays = {f"param.{name}": arr for name, arr in params.named_arrays()}
    arrays["meta.variant"] = np.array(model_cfg.variant)
    arrays["meta.n_branches"] = np.array(params.head.n_branches)
    if opt is not None:
        arrays.update(dict(opt.state_arrays()))
        arrays["meta.adam_t"] = np.array(opt.t)
    np.savez(path, **arrays)


def load_checkpoint(path, model_cfg: ModelConfig) -> ModelParams:
    """Rebuild ModelParams from a checkpoint; shapes define the layout."""
    with np.load(path) as z:
        variant = str(z["meta.variant"])
        if variant != model_cfg.variant:
            raise ValueError(f"checkpoint is for variant {variant!r}, config says {model_cfg.variant!r}")
        k = int(z["meta.n_branches"])
        arrays = {key[len("param."):]: z[key] for key in z.files if key.startswith("param.")}
    rng = np.random.default_rng(0)
    params = model.init_model_params(model_cfg, k, rng)
    for name, arr in params.named_arrays():
        if name not in arrays:
            raise ValueError(f"checkpoint missing tensor {name}")
        if arr.shape != arrays[name].shape:
            raise ValueError(f"checkpoint tensor {name} has shape {arrays[name].shape}, expected {arr.shape}")
        arr[...] = arrays[name]
    return params
