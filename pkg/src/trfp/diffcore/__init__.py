"""Minimal reverse-mode differentiation engine over float64 arrays."""

from trfp.diffcore.graph import (
    GraphError,
    Node,
    add,
    affine,
    backward,
    clip,
    concat_cols,
    exp,
    log,
    logistic,
    mean_all,
    minimum,
    mish,
    mul,
    neg,
    scale,
    square,
    stop_gradient,
    sub,
    sum_all,
    sum_rows,
)
from trfp.diffcore.nn import Mlp, mish_np, logistic_np
from trfp.diffcore.optim import Adam, TrainingFault, adam_update
from trfp.diffcore.checkpoint import CheckpointError, load_arrays, save_arrays

__all__ = [
    "Adam",
    "CheckpointError",
    "GraphError",
    "Mlp",
    "Node",
    "TrainingFault",
    "adam_update",
    "add",
    "affine",
    "backward",
    "clip",
    "concat_cols",
    "exp",
    "load_arrays",
    "log",
    "logistic",
    "logistic_np",
    "mean_all",
    "minimum",
    "mish",
    "mish_np",
    "mul",
    "neg",
    "save_arrays",
    "scale",
    "square",
    "stop_gradient",
    "sub",
    "sum_all",
    "sum_rows",
]
