"""Truncated rectified-flow policy framework for maximum-entropy RL."""

from trfp.config import TrainConfig
from trfp.critic import CriticEnsemble
from trfp.envs import make_env
from trfp.evaluate import (EvalReport, evaluate, evaluate_parallel,
                           flow_diagnostics, mode_coverage, q_guided_select)
from trfp.flow_policy import FlowPolicy, LatentChain, surrogate_logp
from trfp.trainer import (ReplayBuffer, Temperature, Trainer,
                          load_checkpoint, save_checkpoint)

__version__ = "0.1.0"

__all__ = [
    "CriticEnsemble",
    "EvalReport",
    "FlowPolicy",
    "LatentChain",
    "ReplayBuffer",
    "Temperature",
    "TrainConfig",
    "Trainer",
    "evaluate",
    "evaluate_parallel",
    "flow_diagnostics",
    "load_checkpoint",
    "make_env",
    "mode_coverage",
    "q_guided_select",
    "save_checkpoint",
    "surrogate_logp",
]
