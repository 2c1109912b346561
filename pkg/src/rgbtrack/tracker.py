"""Online tracking: first-frame adaptation, per-frame candidate scoring,
bounding-box regression, and short/long-term model updates.

Only the head's fully connected layers ever change online; backbone,
aggregation, and attention parameters are frozen for the whole run, so
RoI features of fixed boxes can be cached and reused by the updates.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import geometry, head as head_mod, model
from .data import RGBTSequence
from .geometry import Box, SamplingBudgetError, TargetState
from .losses import bce_loss_grad
from .model import ModelConfig, ModelParams
from .optim import Adam


class InsufficientSamplesError(RuntimeError):
    """Too few qualifying samples to fit the box regressor."""


@dataclass(frozen=True)
class OnlineConfig:
    n_candidates: int = 256
    init_pos: int = 500
    init_neg: int = 5000
    init_iterations: int = 30
    lr_last_fc: float = 1e-3
    lr_other_fc: float = 1e-4
    regression_gate: float = 0.5
    short_term_gate: float = 0.0
    long_term_interval: int = 10
    update_iterations: int = 10
    update_pos: int = 20
    update_neg: int = 40
    short_term_capacity: int = 20  # positive frames
    long_term_capacity: int = 100  # positive frames
    neg_capacity: int = 20  # frames
    batch_pos: int = 32
    batch_neg: int = 96
    xy_var_factor: float = 0.09
    s_var: float = 0.25
    candidate_r_mode: str = "size-mean"  # or "position-mean" (literal reading)
    advance_on_failure: bool = True
    bbreg_samples: int = 500
    bbreg_iou: float = 0.6
    bbreg_lambda: float = 1000.0
    weight_decay: float = 5e-4
    seed: int = 0

    def __post_init__(self):
        if self.init_pos < 1 or self.init_neg < 1 or self.n_candidates < 1:
            raise ValueError("sample counts must be positive")
        if self.candidate_r_mode not in ("size-mean", "position-mean"):
            raise ValueError("candidate_r_mode must be 'size-mean' or 'position-mean'")
        if not (np.isfinite(self.regression_gate) and np.isfinite(self.short_term_gate)):
            raise ValueError("gates must be finite")


@dataclass
class SampleMemory:
    """Frame-stamped feature groups with oldest-first eviction."""

    capacity: int
    entries: list[tuple[int, np.ndarray]] = field(default_factory=list)

    def push(self, frame: int, feats: np.ndarray) -> None:
        self.entries.append((frame, feats))
        while len(self.entries) > self.capacity:
            self.entries.pop(0)

    def features(self, last: int | None = None) -> np.ndarray:
        chunk = self.entries if last is None else self.entries[-last:]
        return np.concatenate([f for _, f in chunk], axis=0)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class BBoxRegressor:
    """Four independent ridge regressions from RoI features to box deltas."""

    w: np.ndarray  # (D, 4)
    b: np.ndarray  # (4,)

    def predict(self, feat: np.ndarray) -> np.ndarray:
        return feat @ self.w + self.b

    @classmethod
    def identity(cls, dim: int) -> "BBoxRegressor":
        return cls(w=np.zeros((dim, 4)), b=np.zeros(4))


def train_bbox_regressor(
    features: np.ndarray,
    boxes: np.ndarray,
    gt: Box,
    lam: float = 1000.0,
    min_samples: int = 8,
) -> BBoxRegressor:
    """Ridge fit (no intercept) to box deltas; lam -> inf gives zero
    weights and therefore identity behavior."""
    if features.shape[0] < min_samples:
        raise InsufficientSamplesError(
            f"need at least {min_samples} qualifying samples, got {features.shape[0]}"
        )
    y = geometry.boxes_to_deltas_array(boxes, gt)
    a = features.T @ features + lam * np.eye(features.shape[1], dtype=features.dtype)
    w = np.linalg.solve(a, features.T @ y)
    return BBoxRegressor(w=w, b=np.zeros(4, dtype=features.dtype))


@dataclass
class TrackerState:
    params: ModelParams  # single-branch head
    model_cfg: ModelConfig
    cfg: OnlineConfig
    rng: np.random.Generator
    optimizer: Adam
    base_size: tuple[float, float]
    frame_size: tuple[int, int]
    prev: TargetState
    regressor: BBoxRegressor | None
    pos_memory: SampleMemory
    neg_memory: SampleMemory
    frame_index: int = 0


def _fc_optimizer(params: ModelParams, cfg: OnlineConfig) -> Adam:
    specs = []
    for name, arr in params.head.named_arrays("head"):
        group = "last" if ".fc3." in name else "other"
        specs.append((name, arr, group))
    return Adam(specs, lr={"last": cfg.lr_last_fc, "other": cfg.lr_other_fc},
                weight_decay=cfg.weight_decay)


def _frame_features(params: ModelParams, mcfg: ModelConfig, rgb_img, t_img):
    rgb = model.frames_to_batch([rgb_img], mcfg)
    t = model.frames_to_batch([t_img], mcfg)
    fused, att, _ = model.features_forward(params, mcfg, rgb, t)
    return fused, (None if att is None else att[0])


def _roi_features(params: ModelParams, mcfg: ModelConfig, fused, boxes) -> np.ndarray:
    feats, _ = head_mod.roi_align(
        fused, boxes, mcfg.total_stride, mcfg.head.roi_size, mcfg.head.roi_samples
    )
    return feats.reshape(feats.shape[0], -1)


def _fine_tune(state: TrackerState, pos_feats, neg_feats, iterations: int) -> None:
    """Train fc layers on cached RoI features with 32/96 minibatches."""
    cfg = state.cfg
    rng = state.rng
    for _ in range(iterations):
        pi = rng.choice(pos_feats.shape[0], size=min(cfg.batch_pos, pos_feats.shape[0]),
                        replace=pos_feats.shape[0] < cfg.batch_pos)
        ni = rng.choice(neg_feats.shape[0], size=min(cfg.batch_neg, neg_feats.shape[0]),
                        replace=neg_feats.shape[0] < cfg.batch_neg)
        feats = np.concatenate([pos_feats[pi], neg_feats[ni]], axis=0)
        labels = np.concatenate([np.ones(len(pi), dtype=int), np.zeros(len(ni), dtype=int)])
        h2d, tcache = head_mod.trunk_forward(feats, state.params.head, train=True, rng=rng)
        logits, brcache = head_mod.branch_forward(h2d, state.params.head, 0)
        _, dlogits = bce_loss_grad(logits, labels)
        dh2d, dw3, db3 = head_mod.branch_backward(dlogits, brcache, state.params.head, 0)
        _, (dw1, db1, dw2, db2) = head_mod.trunk_backward(dh2d, tcache, state.params.head)
        grads = {
            "head.fc1.w": dw1, "head.fc1.b": db1,
            "head.fc2.w": dw2, "head.fc2.b": db2,
            "head.fc3.0.w": dw3, "head.fc3.0.b": db3,
        }
        state.optimizer.step(grads)


def init_first_frame(
    frame_pair: tuple[np.ndarray, np.ndarray],
    gt: Box,
    offline_params: ModelParams,
    model_cfg: ModelConfig,
    cfg: OnlineConfig,
    frame_size: tuple[int, int] | None = None,
) -> TrackerState:
    """Install a fresh single branch, fine-tune it on first-frame samples,
    fit the box regressor, and seed the memories."""
    rgb_img, t_img = frame_pair
    if frame_size is None:
        frame_size = (rgb_img.shape[1], rgb_img.shape[0])
    rng = np.random.default_rng(cfg.seed)
    params = copy.deepcopy(offline_params)
    params.head = head_mod.replace_branches(params.head, 1, rng)
    state = TrackerState(
        params=params,
        model_cfg=model_cfg,
        cfg=cfg,
        rng=rng,
        optimizer=_fc_optimizer(params, cfg),
        base_size=(gt.w, gt.h),
        frame_size=frame_size,
        prev=TargetState(gt.cx, gt.cy, 0.0),
        regressor=None,
        pos_memory=SampleMemory(cfg.long_term_capacity),
        neg_memory=SampleMemory(cfg.neg_capacity),
    )
    fused, _ = _frame_features(params, model_cfg, rgb_img, t_img)
    drawn = geometry.sample_training_boxes(gt, cfg.init_pos, cfg.init_neg, frame_size, rng)
    boxes = np.stack([b.as_array() for b, _ in drawn])
    labels = np.array([lab for _, lab in drawn])
    feats = _roi_features(params, model_cfg, fused, boxes)
    pos_feats = feats[labels == 1]
    neg_feats = feats[labels == 0]
    _fine_tune(state, pos_feats, neg_feats, cfg.init_iterations)

    try:
        reg_drawn = geometry.sample_training_boxes(
            gt, cfg.bbreg_samples, 0, frame_size, rng, pos_iou=cfg.bbreg_iou
        )
        reg_boxes = np.stack([b.as_array() for b, _ in reg_drawn])
        reg_feats = _roi_features(params, model_cfg, fused, reg_boxes)
        state.regressor = train_bbox_regressor(reg_feats, reg_boxes, gt, cfg.bbreg_lambda)
    except (SamplingBudgetError, InsufficientSamplesError):
        state.regressor = None  # identity behavior

    state.pos_memory.push(0, pos_feats)
    state.neg_memory.push(0, neg_feats)
    return state


def short_term_update(state: TrackerState) -> TrackerState:
    """Fine-tune fc layers on the short-term memory window."""
    pos = state.pos_memory.features(last=state.cfg.short_term_capacity)
    neg = state.neg_memory.features(last=state.cfg.neg_capacity)
    _fine_tune(state, pos, neg, state.cfg.update_iterations)
    return state


def long_term_update(state: TrackerState) -> TrackerState:
    """Fine-tune fc layers on the long-term memory window."""
    pos = state.pos_memory.features(last=state.cfg.long_term_capacity)
    neg = state.neg_memory.features(last=state.cfg.neg_capacity)
    _fine_tune(state, pos, neg, state.cfg.update_iterations)
    return state


def _ref_scale(state: TrackerState) -> float:
    w0, h0 = state.base_size
    scale = geometry.SCALE_BASE ** state.prev.s
    if state.cfg.candidate_r_mode == "size-mean":
        return float((w0 * scale + h0 * scale) / 2.0)
    return float((state.prev.cx + state.prev.cy) / 2.0)


def track_frame(state: TrackerState, frame_pair: tuple[np.ndarray, np.ndarray]):
    """Process one frame; returns (Box, f_plus, diagnostics dict)."""
    cfg = state.cfg
    state.frame_index += 1
    rgb_img, t_img = frame_pair
    fused, att = _frame_features(state.params, state.model_cfg, rgb_img, t_img)

    states = geometry.sample_candidate_states(
        state.prev, _ref_scale(state), cfg.n_candidates, state.rng,
        cfg.xy_var_factor, cfg.s_var,
    )
    boxes = geometry.states_to_boxes(states, state.base_size, state.frame_size)
    f_plus, _, flat_feats = model.score_boxes(state.params, state.model_cfg, fused, boxes)
    best = int(np.argmax(f_plus))  # ties resolve to the lowest index
    best_box = geometry.box_from_array(boxes[best])
    score = float(f_plus[best])
    success = score > cfg.regression_gate

    out_box = best_box
    if success and state.regressor is not None:
        deltas = state.regressor.predict(flat_feats[best])
        adjusted = geometry.deltas_to_box(best_box, deltas)
        out_arr = geometry.clip_box_array(adjusted.as_array()[None], state.frame_size)[0]
        out_box = geometry.box_from_array(out_arr)

    if success or cfg.advance_on_failure:
        w0 = state.base_size[0]
        s_eff = float(np.log(best_box.w / w0) / np.log(geometry.SCALE_BASE))
        state.prev = TargetState(best_box.cx, best_box.cy, s_eff)

    did_collect = False
    if success:
        try:
            drawn = geometry.sample_training_boxes(
                best_box, cfg.update_pos, cfg.update_neg, state.frame_size, state.rng
            )
            upd_boxes = np.stack([b.as_array() for b, _ in drawn])
            upd_labels = np.array([lab for _, lab in drawn])
            upd_feats = _roi_features(state.params, state.model_cfg, fused, upd_boxes)
            state.pos_memory.push(state.frame_index, upd_feats[upd_labels == 1])
            state.neg_memory.push(state.frame_index, upd_feats[upd_labels == 0])
            did_collect = True
        except SamplingBudgetError:
            pass  # skip collection when the frame leaves no room

    did_short = score < cfg.short_term_gate
    if did_short:
        short_term_update(state)
    did_long = state.frame_index % cfg.long_term_interval == 0
    if did_long:
        long_term_update(state)

    diagnostics = {
        "f_plus": score,
        "success": success,
        "collected": did_collect,
        "short_term_update": did_short,
        "long_term_update": did_long,
        "mean_attention_rgb": None if att is None else float(att.mean()),
    }
    return out_box, score, diagnostics


def track_sequence(
    seq: RGBTSequence,
    offline_params: ModelParams,
    model_cfg: ModelConfig,
    cfg: OnlineConfig,
):
    """Track a whole sequence from its first-frame ground truth.

    Returns (boxes (T, 4) with row 0 the given gt, attention rows, diags).
    """
    state = init_first_frame(
        (seq.rgb[0], seq.t[0]), seq.gt_box(0), offline_params, model_cfg, cfg,
        frame_size=seq.frame_size,
    )
    results = np.empty((len(seq), 4), dtype=np.float64)
    results[0] = seq.gt[0]
    att_rows = []
    diags = []
    if model_cfg.uses_qaa:
        _, att0 = _frame_features(state.params, model_cfg, seq.rgb[0], seq.t[0])
        att_rows.append((0, float(att0.mean()), 1.0 - float(att0.mean())))
    for i in range(1, len(seq)):
        box, _, diag = track_frame(state, (seq.rgb[i], seq.t[i]))
        results[i] = box.as_array()
        diags.append(diag)
        if diag["mean_attention_rgb"] is not None:
            a = diag["mean_attention_rgb"]
            att_rows.append((i, a, 1.0 - a))
    return results, att_rows, diags


# ---------------------------------------------------------------------------
# results files: one "x,y,w,h" line per frame, frame order, LF endings
# ---------------------------------------------------------------------------

def write_results(path, boxes: np.ndarray) -> None:
    from .data import _format_number
    with open(path, "w", newline="\n") as fh:
        for row in boxes:
            fh.write(",".join(_format_number(v) for v in row) + "\n")


def read_results(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rows.append([float(v) for v in line.strip().split(",")])
    return np.array(rows, dtype=np.float64)


def write_attention_log(path, rows) -> None:
    from .utils import write_csv
    write_csv(path, ["frame", "mean_a", "mean_b"], [(f, repr(a), repr(b)) for f, a, b in rows])
