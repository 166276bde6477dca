"""Objective, optimizer, stage schedule, and checkpoints."""

from .checkpoint import (
    CheckpointError,
    CorruptManifestError,
    TruncatedBlobError,
    VersionMismatchError,
    load_checkpoint,
    save_checkpoint,
)
from .objective import contrastive_loss, in_batch_loss, score_matrix, similarity
from .optim import AdamW, adamw_step, decays, linear_lr
from .stages import STAGES, MetricsLog, StageResult, TrainConfig, as_single_round, run_stage, train_step
