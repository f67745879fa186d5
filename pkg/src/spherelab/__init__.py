"""Angular metric-learning numerics: losses, norm regularizers, optimizers and checks."""

from .core import (EmbeddingBatch, NormStats, UnitEmbedding, batch_norm_stats, cosine_distance,
                   l2_normalize, normalized_euclidean)
from .losses import ClassTemplates, LossConfig, LossOutput, PairGradient, compute_loss
from .optimizers import OptimizerConfig, OptimizerState, optimizer_step
from .regularizers import RegularizerConfig, RegularizerState, eta_schedule, l2_reg_loss, sec_loss

__version__ = "0.1.0"
