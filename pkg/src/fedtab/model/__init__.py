from .network import (
    ForwardTrace,
    attentive_transformer,
    backward,
    cross_entropy,
    feature_importance,
    forward,
    gradients,
    loss,
    predict,
)
from .params import (
    ModelParams,
    ParamTensor,
    TabNetConfig,
    dump_checkpoint,
    init_params,
    load_checkpoint,
    param_shapes,
    read_checkpoint,
    save_checkpoint,
)
from .sparsemax import sparsemax, sparsemax_backward
from .training import AdamState, adam_step, train_epochs

__all__ = [
    "AdamState",
    "ForwardTrace",
    "ModelParams",
    "ParamTensor",
    "TabNetConfig",
    "adam_step",
    "attentive_transformer",
    "backward",
    "cross_entropy",
    "dump_checkpoint",
    "feature_importance",
    "forward",
    "gradients",
    "init_params",
    "load_checkpoint",
    "loss",
    "param_shapes",
    "predict",
    "read_checkpoint",
    "save_checkpoint",
    "sparsemax",
    "sparsemax_backward",
    "train_epochs",
]
