"""Classification and instance-embedding losses.

Both losses operate on raw logits; probabilities exist only inside the
loss computations, via shift-invariant softmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import log_softmax, softmax

PROB_EPS = 1e-7  # clamp for log arguments; well below test tolerances


@dataclass
class BatchScores:
    """Per-sample two-unit logits with binary labels and domain indices."""

    logits: np.ndarray  # (N, 2)
    labels: np.ndarray  # (N,), values in {0, 1}
    domains: np.ndarray  # (N,)
    n_domains: int = 1

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        self.domains = np.asarray(self.domains)
        if self.logits.ndim != 2 or self.logits.shape[1] != 2:
            raise ValueError(f"logits must be (N, 2), got {self.logits.shape}")
        if self.logits.shape[0] < 1:
            raise ValueError("need at least one sample")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        if self.domains.size and self.domains.max() >= self.n_domains:
            raise ValueError("domain index out of range")


def bce_loss(batch: BatchScores) -> float:
    """Mean binary cross entropy of the two-way softmax positive probability."""
    return bce_loss_grad(batch.logits, batch.labels)[0]


def bce_loss_grad(logits: np.ndarray, labels: np.ndarray):
    """Returns (loss, dloss/dlogits). Probabilities are clamped to
    [eps, 1-eps] inside the logs; the gradient is the standard
    softmax-cross-entropy form, exact wherever the clamp is inactive."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n = logits.shape[0]
    logp = log_softmax(logits, axis=1)
    p_pos = np.exp(logp[:, 1])
    p_c = np.clip(p_pos, PROB_EPS, 1.0 - PROB_EPS)
    y = labels.astype(np.float64)
    loss = float(-np.mean(y * np.log(p_c) + (1.0 - y) * np.log(1.0 - p_c)))
    probs = np.exp(logp)
    onehot = np.stack([1.0 - y, y], axis=1)
    dlogits = (probs - onehot) / n
    return loss, dlogits


def instance_embedding_loss(
    domain_pos_logits: np.ndarray,
    domains: np.ndarray,
    labels: np.ndarray | None = None,
) -> float:
    """Cross-entropy over domains of each positive sample's branch scores.

    domain_pos_logits (N, D) holds the positive logit of every branch for
    each sample; domains (N,) is each sample's own domain. Only positive
    samples may be passed: if labels are supplied, any 0 label raises.
    """
    return instance_embedding_loss_grad(domain_pos_logits, domains, labels)[0]


def instance_embedding_loss_grad(
    domain_pos_logits: np.ndarray,
    domains: np.ndarray,
    labels: np.ndarray | None = None,
):
    scores = np.asarray(domain_pos_logits, dtype=np.float64)
    domains = np.asarray(domains)
    if labels is not None and np.any(np.asarray(labels) == 0):
        raise ValueError("instance embedding loss accepts positive samples only")
    if scores.ndim != 2:
        raise ValueError(f"expected (N, D) scores, got {scores.shape}")
    n, d = scores.shape
    logp = log_softmax(scores, axis=1)
    rows = np.arange(n)
    loss = float(-logp[rows, domains].mean())
    dscores = softmax(scores, axis=1)
    dscores[rows, domains] -= 1.0
    return loss, dscores / n


def total_loss(l_cls: float, l_inst: float, alpha: float = 0.1) -> float:
    """Weighted sum of the classification and instance terms."""
    return l_cls + alpha * l_inst
