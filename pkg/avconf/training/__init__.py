"""Optimizer, schedule, weight averaging, toy task, training and evaluation."""

from avconf.training.evaluation import DecodeConfig, EvalReport, evaluate, snr_sweep
from avconf.training.optim import Adam, OptState, adam_step, noam_lr
from avconf.training.swa import recalibrate_batch_norm, swa_average
from avconf.training.toy import ToyDataset, ToyTaskSpec, make_toy_batch
from avconf.training.trainer import TrainConfig, Trainer, load_model, train

__all__ = [
    "Adam",
    "DecodeConfig",
    "EvalReport",
    "OptState",
    "ToyDataset",
    "ToyTaskSpec",
    "TrainConfig",
    "Trainer",
    "adam_step",
    "evaluate",
    "load_model",
    "make_toy_batch",
    "noam_lr",
    "recalibrate_batch_norm",
    "snr_sweep",
    "swa_average",
    "train",
]
