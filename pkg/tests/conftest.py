import numpy as np
import pytest

from rgbtrack import data, model
from rgbtrack.backbone import BackboneConfig, ConvLayerSpec
from rgbtrack.head import HeadConfig


def tiny_backbone() -> BackboneConfig:
    """Small enough for finite-difference sweeps."""
    return BackboneConfig(
        layers=(
            ConvLayerSpec(4, 3, 2),
            ConvLayerSpec(6, 3, 1),
            ConvLayerSpec(8, 3, 1, dilation=3),
        )
    )


def tiny_model_config(variant: str = "full") -> model.ModelConfig:
    return model.ModelConfig(
        backbone=tiny_backbone(),
        variant=variant,
        c_agg=4,
        d_embed=8,
        head=HeadConfig(fc1_units=16, fc2_units=12),
    )


def jitter_biases(params, rng, scale=0.05):
    """Move biases off zero so no ReLU sits exactly at its kink, where
    central differences measure a half-slope that no subgradient matches."""
    for name, arr, _ in model.named_params(params):
        if name.endswith(".b"):
            arr += rng.normal(0.0, scale, arr.shape)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def toy_cfg():
    return model.toy_model_config()


@pytest.fixture(scope="session")
def mini_sequence():
    return data.generate_synthetic(
        data.SynthConfig(frames=10, frame_size=(64, 48), target_size=(12, 12), seed=5)
    )


@pytest.fixture(scope="session")
def mini_dataset():
    return [
        data.generate_synthetic(
            data.SynthConfig(frames=10, frame_size=(64, 48), target_size=(12, 12),
                             velocity=(1.2 + 0.3 * s, 0.7), seed=s)
        )
        for s in (1, 2)
    ]


@pytest.fixture(scope="session")
def trained_toy(toy_cfg, mini_dataset):
    """Briefly trained toy model: enough structure in the features for the
    quality-dependent oracles (box regression, first-frame separability)."""
    from rgbtrack import trainer
    params, _ = trainer.train_offline(
        mini_dataset, trainer.TrainConfig(iterations_per_domain=10, seed=0), toy_cfg
    )
    return params
