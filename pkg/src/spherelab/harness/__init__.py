"""Synthetic data, models, training loop and evaluation metrics."""

from .data import BatchSpec, SyntheticDataset, gen_synthetic, load_dataset_csv, sample_batch, save_dataset_csv
from .gradcheck import finite_diff_check, numeric_gradient
from .metrics import kmeans, nmi, nmi_f1, pairwise_f1, recall_at_k
from .model import MLP, FreeTable, ModelConfig, build_model
from .runlog import IterRecord, MetricRecord, RunLog, SnapshotRecord
from .train import row_angles, train

__all__ = [
    "BatchSpec", "FreeTable", "IterRecord", "MLP", "MetricRecord", "ModelConfig", "RunLog",
    "SnapshotRecord", "SyntheticDataset", "build_model", "finite_diff_check", "gen_synthetic",
    "kmeans", "load_dataset_csv", "nmi", "nmi_f1", "numeric_gradient", "pairwise_f1",
    "recall_at_k", "row_angles", "sample_batch", "save_dataset_csv", "train",
]
