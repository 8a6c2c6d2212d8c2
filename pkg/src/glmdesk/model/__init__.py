from .blank_infill import BlankInfillSample, make_blank_infill, sample_spans
from .config import ModelConfig
from .network import Model, backward, forward, init_params, param_shapes
from .training import OptimizerState, batch_loss, loss, loss_and_grads, train_step

__all__ = [
    "BlankInfillSample",
    "Model",
    "ModelConfig",
    "OptimizerState",
    "backward",
    "batch_loss",
    "forward",
    "init_params",
    "loss",
    "loss_and_grads",
    "make_blank_infill",
    "param_shapes",
    "sample_spans",
    "train_step",
]
