"""Structured sparse coding: exact solvers, unrolled encoders and online modeling."""

from .core import (
    Dictionary,
    GroupStructure,
    NonFiniteError,
    ProblemInstance,
    SparseCode,
    StepScale,
    eval_objective,
    eval_objective_batch,
    step_scale,
)
from .modeling import DictStats, OnlineConfig, dict_update, online_run
from .network import EncoderParams, forward, forward_batch, init_from_dictionary
from .prox import ThresholdPair, prox_group, prox_hilasso, soft_threshold
from .solvers import SolverConfig, bcofb_solve, cod_solve, ista_solve, optimality_residual
from .training import DescentConfig, LossSpec, backward, train

__version__ = "0.1.0"

__all__ = [
    "DescentConfig", "DictStats", "Dictionary", "EncoderParams", "GroupStructure",
    "LossSpec", "NonFiniteError", "OnlineConfig", "ProblemInstance", "SolverConfig",
    "SparseCode", "StepScale", "ThresholdPair", "backward", "bcofb_solve", "cod_solve",
    "dict_update", "eval_objective", "eval_objective_batch", "forward", "forward_batch",
    "init_from_dictionary", "ista_solve", "online_run", "optimality_residual", "prox_group",
    "prox_hilasso", "soft_threshold", "step_scale", "train",
]
