"""Delayed-feedback conversion-rate prediction sandbox.

Synthetic delayed-feedback click logs with exact ground truth, an
unbiased label-corrected training objective driven by a counterfactually
trained correction model, and the evaluation protocol (AUC/PRAUC/log loss,
relative improvement, delay-stratified analysis) around it.
"""

from .domain import (
    DAY,
    ClickEvent,
    ExperimentConfig,
    FeatureSchema,
    LcSample,
    ObservedSample,
    OracleLabel,
    validate_dataset,
)
from .logsim import GroundTruthWorld, SimConfig, build_world, simulate_log
from .losses import bce_loss, lc_loss, lc_weights, oracle_loss, vanilla_loss
from .metrics import (
    MetricsReport,
    auc,
    delay_stratified_eval,
    lc_delay_eval,
    logloss,
    prauc,
    relative_improvement,
)
from .nnet import ModelParams, OptimizerState, adam_step, forward, grad, transfer_embeddings
from .snapshot import counterfactual_label, labeling_recall, observe
from .trainer import alternative_train, apply_strategy, train_model

__version__ = "0.1.0"

__all__ = [
    "DAY",
    "ClickEvent",
    "ObservedSample",
    "OracleLabel",
    "LcSample",
    "ExperimentConfig",
    "FeatureSchema",
    "validate_dataset",
    "GroundTruthWorld",
    "SimConfig",
    "build_world",
    "simulate_log",
    "observe",
    "counterfactual_label",
    "labeling_recall",
    "ModelParams",
    "OptimizerState",
    "forward",
    "grad",
    "adam_step",
    "transfer_embeddings",
    "oracle_loss",
    "vanilla_loss",
    "lc_loss",
    "bce_loss",
    "lc_weights",
    "auc",
    "prauc",
    "logloss",
    "relative_improvement",
    "delay_stratified_eval",
    "lc_delay_eval",
    "MetricsReport",
    "train_model",
    "alternative_train",
    "apply_strategy",
]
