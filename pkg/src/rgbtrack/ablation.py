"""Network variants for comparison experiments.

``full`` is the complete pipeline; ``fa`` keeps hierarchical aggregation
but fuses modalities by plain concatenation (no attention); ``ma`` keeps
attention but applies it to the raw conv3 maps (no hierarchical
aggregation); ``early``/``mid``/``late`` are the single-stream baselines
that concatenate at the input, after conv1, and after conv3.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import data, metrics, model, tracker, trainer
from .model import VARIANTS, ModelConfig
from .utils import write_csv


@dataclass(frozen=True)
class VariantSpec:
    name: str
    wiring: str


VARIANT_TABLE = {
    "full": VariantSpec("full", "shared backbone -> per-modality HFA -> QAA fusion"),
    "fa": VariantSpec("fa", "shared backbone -> per-modality HFA -> channel concat"),
    "ma": VariantSpec("ma", "shared backbone -> QAA fusion of raw conv3 maps"),
    "early": VariantSpec("early", "6-channel input stack -> single stream -> conv3"),
    "mid": VariantSpec("mid", "per-modality conv1 (own params) -> concat -> conv2/conv3"),
    "late": VariantSpec("late", "two independent streams -> conv3 concat"),
}


def build_variant(name: str, base_config: ModelConfig) -> ModelConfig:
    """Return the base config rewired for the named variant.

    The result runs through the trainer and tracker unmodified; channel
    counts adjust per wiring (see ModelConfig.feature_channels).
    """
    if name not in VARIANT_TABLE:
        raise ValueError(f"unknown variant {name!r}; valid: {sorted(VARIANT_TABLE)}")
    return replace(base_config, variant=name)


def extraction_parameter_count(cfg: ModelConfig, rng=None) -> int:
    """Parameters of the feature-extraction network (everything ahead of
    the fc head, whose size is fixed by the feature width elsewhere)."""
    params = model.init_model_params(cfg, 1, rng or np.random.default_rng(0))
    return sum(
        arr.size for name, arr in params.named_arrays() if not name.startswith("head")
    )


def total_parameter_count(cfg: ModelConfig, k_domains: int = 1, rng=None) -> int:
    params = model.init_model_params(cfg, k_domains, rng or np.random.default_rng(0))
    return sum(arr.size for _, arr in params.named_arrays())


@dataclass
class VariantResult:
    variant: str
    pr: float
    sr: float
    mean_iou: float
    final_loss: float
    n_params: int


def run_variant(
    variant: str,
    base_config: ModelConfig,
    train_seqs: list[data.RGBTSequence],
    test_seq: data.RGBTSequence,
    train_cfg: trainer.TrainConfig,
    online_cfg: tracker.OnlineConfig,
    mode: str = "gtot",
) -> VariantResult:
    """Train, track, and evaluate one variant on the synthetic suite."""
    cfg = build_variant(variant, base_config)
    params, trace = trainer.train_offline(train_seqs, train_cfg, cfg)
    boxes, _, _ = tracker.track_sequence(test_seq, params, cfg, online_cfg)
    report = metrics.evaluate({test_seq.name: boxes}, {test_seq.name: test_seq.gt}, mode)
    mean_iou = float(metrics.overlaps(boxes, test_seq.gt).mean())
    return VariantResult(
        variant=variant,
        pr=report.pr,
        sr=report.sr,
        mean_iou=mean_iou,
        final_loss=trace[-1].total,
        n_params=total_parameter_count(cfg, len(train_seqs)),
    )


def run_ablation(
    variants,
    base_config: ModelConfig,
    train_seqs,
    test_seq,
    train_cfg: trainer.TrainConfig,
    online_cfg: tracker.OnlineConfig,
    out_csv=None,
    mode: str = "gtot",
) -> list[VariantResult]:
    """Run the comparison harness and optionally emit the table CSV."""
    results = [
        run_variant(v, base_config, train_seqs, test_seq, train_cfg, online_cfg, mode)
        for v in variants
    ]
    if out_csv is not None:
        Path(out_csv).parent.mkdir(parents=True, exist_ok=True)
        write_csv(
            out_csv,
            ["variant", "pr", "sr", "mean_iou", "final_loss", "n_params"],
            [(r.variant, repr(r.pr), repr(r.sr), repr(r.mean_iou), repr(r.final_loss), r.n_params)
             for r in results],
        )
    return results
