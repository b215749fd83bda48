"""Utility-aware contrastive learning at desk scale."""

from .contrastive import (
    Batch,
    LossBreakdown,
    TrainConfig,
    UtilityConfig,
    bidirectional_loss,
    infonce_t2v,
    infonce_v2t,
    loss_gradients,
    score_matrix,
    train,
    utility_aware_t2v,
    utility_aware_v2t,
)
from .encoder import EncoderDims, EncoderParams, cosine_similarity, init_params
from .imaging import RasterImage, load_image

__version__ = "0.1.0"
