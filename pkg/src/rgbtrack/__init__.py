"""rgbtrack: quality-aware RGB-thermal fusion tracking in pure numpy.

A desk-scale RGBT tracker: a shared convolutional backbone feeds
per-modality hierarchical feature aggregation, a channel-attention
module fuses the modalities by their estimated reliability, and an
RoIAlign + multi-domain FC head scores candidate boxes. Offline
multi-domain training and the full online tracking loop are included,
along with synthetic RGBT sequence generation and precision/success
evaluation.
"""

__version__ = "0.1.0"

from .geometry import Box, TargetState, iou  # noqa: F401
from .model import ModelConfig, ModelParams, toy_model_config, paper_model_config  # noqa: F401
