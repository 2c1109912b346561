"""Boxes, overlap, candidate sampling and box-delta parameterization.

Boxes are axis-aligned (x, y, w, h) in pixel units, x/y the top-left
corner. The candidate state is (cx, cy, s) with s a log-scale offset:
a state maps to a box of size base_size * 1.05**s centered at (cx, cy).

Everything here is a pure function of its inputs plus an explicitly
passed ``numpy.random.Generator``; callers own their random sources.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SCALE_BASE = 1.05
MIN_BOX_SIDE = 2.0


class SamplingBudgetError(RuntimeError):
    """Raised when rejection sampling exhausts its attempt budget."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned box; w and h must be positive and all fields finite."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.x, self.y, self.w, self.h)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError(f"box fields must be finite, got {vals}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box sides must be positive, got w={self.w}, h={self.h}")

    @property
    def cx(self) -> float:
        return self.x + self.w / 2.0

    @property
    def cy(self) -> float:
        return self.y + self.h / 2.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.w, self.h], dtype=np.float64)


@dataclass(frozen=True)
class TargetState:
    """Candidate-sampling state: center plus log-scale offset."""

    cx: float
    cy: float
    s: float

    def __post_init__(self):
        if not all(np.isfinite(v) for v in (self.cx, self.cy, self.s)):
            raise ValueError("state fields must be finite")


def box_from_array(a) -> Box:
    x, y, w, h = (float(v) for v in a)
    return Box(x, y, w, h)


def iou(a: Box, b: Box) -> float:
    """Intersection-over-union of two boxes, in [0, 1]."""
    return float(iou_many(a.as_array(), b.as_array()[None])[0])


def iou_many(ref: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    """IoU of one reference (4,) against boxes (N, 4), continuous areas."""
    boxes = np.asarray(boxes, dtype=np.float64)
    ix = np.maximum(ref[0], boxes[:, 0])
    iy = np.maximum(ref[1], boxes[:, 1])
    ix2 = np.minimum(ref[0] + ref[2], boxes[:, 0] + boxes[:, 2])
    iy2 = np.minimum(ref[1] + ref[3], boxes[:, 1] + boxes[:, 3])
    inter = np.clip(ix2 - ix, 0.0, None) * np.clip(iy2 - iy, 0.0, None)
    union = ref[2] * ref[3] + boxes[:, 2] * boxes[:, 3] - inter
    # rounding in (x + w) - x can push the ratio an ulp above 1
    return np.clip(inter / union, 0.0, 1.0)


def clip_box_array(boxes: np.ndarray, frame_size, min_side: float = MIN_BOX_SIDE) -> np.ndarray:
    """Clip (N, 4) boxes to the frame, keeping at least ``min_side`` pixels.

    frame_size is (width, height). Boxes whose clipped extent would fall
    below min_side are pushed inward instead of shrunk to nothing.
    """
    fw, fh = float(frame_size[0]), float(frame_size[1])
    out = np.array(boxes, dtype=np.float64, copy=True)
    out[:, 2] = np.clip(out[:, 2], min_side, fw)
    out[:, 3] = np.clip(out[:, 3], min_side, fh)
    out[:, 0] = np.clip(out[:, 0], 0.0, fw - out[:, 2])
    out[:, 1] = np.clip(out[:, 1], 0.0, fh - out[:, 3])
    return out


def sample_candidate_states(
    prev: TargetState,
    ref_scale: float,
    n: int,
    rng: np.random.Generator,
    xy_var_factor: float = 0.09,
    s_var: float = 0.25,
) -> np.ndarray:
    """Draw n candidate states around ``prev``.

    Centers are Normal(prev center, xy_var_factor * ref_scale**2) per axis
    and the scale offset is Normal(0, s_var), i.e. covariance
    diag{0.09 r^2, 0.09 r^2, 0.25} at the defaults. Setting both variance
    factors to 0 reproduces the previous state exactly (test hook).
    Returns an (n, 3) array of (cx, cy, s).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if ref_scale <= 0:
        raise ValueError("ref_scale must be positive")
    xy_std = np.sqrt(xy_var_factor) * ref_scale
    s_std = np.sqrt(s_var)
    states = np.empty((n, 3), dtype=np.float64)
    states[:, 0] = rng.normal(prev.cx, xy_std, size=n)
    states[:, 1] = rng.normal(prev.cy, xy_std, size=n)
    states[:, 2] = prev.s + rng.normal(0.0, s_std, size=n)
    return states


def states_to_boxes(
    states: np.ndarray,
    base_size,
    frame_size,
    min_side: float = MIN_BOX_SIDE,
) -> np.ndarray:
    """Convert (n, 3) states to clipped (n, 4) boxes.

    base_size is the initial target (w0, h0); a state s gives size
    (w0, h0) * 1.05**s. Aspect ratio is fixed by construction.
    """
    states = np.asarray(states, dtype=np.float64)
    scale = SCALE_BASE ** states[:, 2]
    w = base_size[0] * scale
    h = base_size[1] * scale
    boxes = np.stack([states[:, 0] - w / 2.0, states[:, 1] - h / 2.0, w, h], axis=1)
    return clip_box_array(boxes, frame_size, min_side)


def sample_candidates(
    prev: TargetState,
    ref_scale: float,
    n: int,
    rng: np.random.Generator,
    base_size,
    frame_size,
    xy_var_factor: float = 0.09,
    s_var: float = 0.25,
) -> list[Box]:
    """Draw n candidate boxes around the previous target state."""
    states = sample_candidate_states(prev, ref_scale, n, rng, xy_var_factor, s_var)
    boxes = states_to_boxes(states, base_size, frame_size)
    return [box_from_array(b) for b in boxes]


def _positive_proposals(gt: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    dx = rng.uniform(-0.08, 0.08, size=n) * gt[2]
    dy = rng.uniform(-0.08, 0.08, size=n) * gt[3]
    scale = SCALE_BASE ** rng.uniform(-0.5, 0.5, size=n)
    w = gt[2] * scale
    h = gt[3] * scale
    cx = gt[0] + gt[2] / 2.0 + dx
    cy = gt[1] + gt[3] / 2.0 + dy
    return np.stack([cx - w / 2.0, cy - h / 2.0, w, h], axis=1)


def _negative_proposals(gt: np.ndarray, n: int, frame_size, rng: np.random.Generator) -> np.ndarray:
    fw, fh = float(frame_size[0]), float(frame_size[1])
    n_uniform = n // 2
    n_ring = n - n_uniform
    scale_u = 2.0 ** rng.uniform(-1.0, 1.0, size=n_uniform)
    wu = gt[2] * scale_u
    hu = gt[3] * scale_u
    xu = rng.uniform(0.0, fw, size=n_uniform) - wu / 2.0
    yu = rng.uniform(0.0, fh, size=n_uniform) - hu / 2.0
    uniform = np.stack([xu, yu, wu, hu], axis=1)

    mean_side = (gt[2] + gt[3]) / 2.0
    dx = rng.uniform(-2.0, 2.0, size=n_ring) * mean_side
    dy = rng.uniform(-2.0, 2.0, size=n_ring) * mean_side
    scale_r = 2.0 ** rng.uniform(-1.0, 1.0, size=n_ring)
    wr = gt[2] * scale_r
    hr = gt[3] * scale_r
    cx = gt[0] + gt[2] / 2.0 + dx
    cy = gt[1] + gt[3] / 2.0 + dy
    ring = np.stack([cx - wr / 2.0, cy - hr / 2.0, wr, hr], axis=1)
    return np.concatenate([uniform, ring], axis=0)


def sample_training_boxes(
    gt: Box,
    n_pos: int,
    n_neg: int,
    frame_size,
    rng: np.random.Generator,
    pos_iou: float = 0.7,
    neg_iou: float = 0.5,
    max_rounds: int = 100,
) -> list[tuple[Box, int]]:
    """Draw labeled training boxes around a ground-truth box.

    Positives are perturb-and-reject samples with IoU >= pos_iou against
    gt (label 1); negatives mix uniform placement with ring perturbations
    and satisfy IoU < neg_iou (label 0). All boxes are clipped to the
    frame before the IoU filter is applied, so the returned overlaps are
    those of the boxes actually handed out.

    Raises SamplingBudgetError if either pool cannot be filled within
    ``max_rounds`` proposal rounds (e.g. a gt box nearly filling the
    frame leaves no room for negatives).
    """
    g = gt.as_array()
    pos: list[np.ndarray] = [np.empty((0, 4))]
    neg: list[np.ndarray] = [np.empty((0, 4))]
    for kind, want, store in (("positive", n_pos, pos), ("negative", n_neg, neg)):
        rounds = 0
        while sum(len(a) for a in store) < want:
            if rounds >= max_rounds:
                raise SamplingBudgetError(
                    f"could not draw {want} {kind} boxes in {max_rounds} rounds "
                    f"(gt={tuple(g)}, frame={tuple(frame_size)})"
                )
            batch = max(want, 32)
            if kind == "positive":
                prop = _positive_proposals(g, batch, rng)
            else:
                prop = _negative_proposals(g, batch, frame_size, rng)
            prop = clip_box_array(prop, frame_size)
            ov = iou_many(g, prop)
            keep = ov >= pos_iou if kind == "positive" else ov < neg_iou
            store.append(prop[keep])
            rounds += 1

    pos_arr = np.concatenate(pos, axis=0)[:n_pos]
    neg_arr = np.concatenate(neg, axis=0)[:n_neg]
    out = [(box_from_array(b), 1) for b in pos_arr]
    out += [(box_from_array(b), 0) for b in neg_arr]
    return out


def box_to_deltas(anchor: Box, target: Box) -> np.ndarray:
    """Regression deltas (dx, dy, dw, dh) mapping anchor onto target."""
    return np.array(
        [
            (target.cx - anchor.cx) / anchor.w,
            (target.cy - anchor.cy) / anchor.h,
            np.log(target.w / anchor.w),
            np.log(target.h / anchor.h),
        ],
        dtype=np.float64,
    )


def deltas_to_box(anchor: Box, d) -> Box:
    """Exact inverse of :func:`box_to_deltas`."""
    dx, dy, dw, dh = (float(v) for v in d)
    w = anchor.w * np.exp(dw)
    h = anchor.h * np.exp(dh)
    cx = anchor.cx + dx * anchor.w
    cy = anchor.cy + dy * anchor.h
    return Box(cx - w / 2.0, cy - h / 2.0, w, h)


def boxes_to_deltas_array(anchors: np.ndarray, target: Box) -> np.ndarray:
    """Vectorized box_to_deltas for (N, 4) anchors against one target."""
    anchors = np.asarray(anchors, dtype=np.float64)
    acx = anchors[:, 0] + anchors[:, 2] / 2.0
    acy = anchors[:, 1] + anchors[:, 3] / 2.0
    return np.stack(
        [
            (target.cx - acx) / anchors[:, 2],
            (target.cy - acy) / anchors[:, 3],
            np.log(target.w / anchors[:, 2]),
            np.log(target.h / anchors[:, 3]),
        ],
        axis=1,
    )
