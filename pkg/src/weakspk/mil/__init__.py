"""Multi-instance core: embedding network, cluster aggregation, AAM loss, weak training."""

from .aam import AamConfig, aam_loss, margin_map
from .aggregation import AggregationConfig, aggregate, aggregate_with_weights
from .network import ClassificationHead, EmbeddingNet, model_params
from .objective import loss_gradients, supervised_objective, weak_objective
from .optim import OptState, sgd_step
from .sampling import Minibatch, crop_segment, plan_epoch, sample_minibatch
from .training import Stage1Config, WeakDataset, WeakTrainer, forward_backward, train_stage1

__all__ = [
    "AamConfig",
    "AggregationConfig",
    "ClassificationHead",
    "EmbeddingNet",
    "Minibatch",
    "OptState",
    "Stage1Config",
    "WeakDataset",
    "WeakTrainer",
    "aam_loss",
    "aggregate",
    "aggregate_with_weights",
    "crop_segment",
    "forward_backward",
    "loss_gradients",
    "margin_map",
    "model_params",
    "plan_epoch",
    "sample_minibatch",
    "sgd_step",
    "supervised_objective",
    "train_stage1",
    "weak_objective",
]
