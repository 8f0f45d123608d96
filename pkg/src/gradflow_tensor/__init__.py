"""Gradient-flow tensor decomposition with deflation diagnostics."""
from .tensor_core import (
    Component,
    ComponentModel,
    DenseSymTensor4,
    GroundTruth,
    contract4,
    contract31,
    pairwise_inner,
    per_direction_residual,
    residual_frobenius,
    sum_sq_norms,
    to_dense,
)
from .flow_dynamics import LossSpec, StepperConfig, component_gradient, euler_step, loss
from .modified_flow import AlgoParams, EpochSchedule, run_full

__all__ = [
    "Component", "ComponentModel", "DenseSymTensor4", "GroundTruth", "contract4", "contract31",
    "pairwise_inner", "per_direction_residual", "residual_frobenius", "sum_sq_norms",
    "to_dense", "LossSpec", "StepperConfig", "component_gradient", "euler_step", "loss",
    "AlgoParams", "EpochSchedule", "run_full",
]
