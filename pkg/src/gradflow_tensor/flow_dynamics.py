"""Loss, gradients and forward-Euler gradient descent in factored coordinates.

For a component ``w = sqrt(s) * v`` with unit ``v``, gradient flow on

    L(W) = 1/2 |T - T*|_F^2 + lam/2 |W|_F^2

gives ``dw/dt = |w| * g(v)`` with the scale-free velocity

    g(v) = 4 R(v^3, I) - 2 R(v^4) v - lam v,      R = T* - T.

One Euler step ``w <- w + eta dw/dt`` is therefore
``s <- s * |v + eta g|^2`` and ``v <- (v + eta g) / |v + eta g|``, which is
exactly raw-vector gradient descent but never forms ``w`` itself.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor_core import (
    ComponentModel,
    GroundTruth,
    DimensionError,
    contract_pair_many,
    residual,
    residual_frobenius,
    sum_sq_norms,
)


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, index: int):
        super().__init__(f"non-finite gradient for component {index}")
        self.index = index


@dataclass(frozen=True)
class LossSpec:
    truth: GroundTruth
    lam: float = 0.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")


@dataclass(frozen=True)
class StepperConfig:
    step_size: float
    max_steps: int = 1

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")


@dataclass(frozen=True)
class FactoredGradient:
    """Gradient of one component split into norm and direction rates.

    ``radial_rate`` is ``(1 / (2 s)) ds/dt`` for ``s = |w|^2``; ``tangent_rate``
    is ``dv/dt`` for the unit direction ``v``.  Both are scale-free.
    """

    radial_rate: float
    tangent_rate: np.ndarray

    def to_raw(self, direction: np.ndarray, sq_norm: float) -> np.ndarray:
        """``grad_w L`` as a raw vector (``-dw/dt``)."""
        return -np.sqrt(sq_norm) * (self.radial_rate * direction + self.tangent_rate)


def _check(spec: LossSpec, model: ComponentModel):
    if spec.truth.dim != model.dim:
        raise DimensionError(f"truth dim {spec.truth.dim} != model dim {model.dim}")


def loss(spec: LossSpec, model: ComponentModel) -> float:
    _check(spec, model)
    res = residual_frobenius(spec.truth, model)
    return 0.5 * res * res + 0.5 * spec.lam * sum_sq_norms(model)


def residual_terms(spec: LossSpec, model: ComponentModel):
    """``R(v^4)`` of shape (m,) and ``R(v^3, I)`` of shape (m, d) at every direction."""
    _check(spec, model)
    R = residual(spec.truth, model)
    V = model.directions
    return contract_pair_many(R, V)


def velocities(spec: LossSpec, model: ComponentModel) -> np.ndarray:
    """Scale-free velocity ``g`` for every component, shape (m, d)."""
    if model.m == 0:
        return np.zeros((0, model.dim))
    r4, r31 = residual_terms(spec, model)
    V = model.directions
    return 4.0 * r31 - (2.0 * r4 + spec.lam)[:, None] * V


def component_gradient(spec: LossSpec, model: ComponentModel, j: int) -> FactoredGradient:
    if not 0 <= j < model.m:
        raise IndexError(f"component index {j} out of range for m={model.m}")
    r4, r31 = residual_terms(spec, model)
    v = model.directions[j]
    tangent = 4.0 * (r31[j] - r4[j] * v)
    return FactoredGradient(2.0 * r4[j] - spec.lam, tangent)


def raw_gradient(spec: LossSpec, model: ComponentModel) -> np.ndarray:
    """``grad_W L`` with one row per component; requires representable norms."""
    return -np.sqrt(model.sq_norms)[:, None] * velocities(spec, model)


def apply_velocity(model: ComponentModel, g: np.ndarray, eta: float) -> ComponentModel:
    """Euler update of every component given its scale-free velocity."""
    if model.m == 0:
        return model
    bad = np.flatnonzero(~np.all(np.isfinite(g), axis=1))
    if bad.size:
        raise NonFiniteGradientError(int(bad[0]))
    new = model.directions + eta * g
    nrm2 = np.sum(new * new, axis=1)
    # |v + eta g| = 0 needs g = -v/eta exactly; keep the old direction then
    collapsed = nrm2 <= 0
    if np.any(collapsed):
        new[collapsed] = model.directions[collapsed]
        nrm2[collapsed] = 1.0
    sq = model.sq_norms * nrm2
    sq = np.maximum(sq, np.finfo(float).tiny)
    dirs = new / np.sqrt(nrm2)[:, None]
    return ComponentModel(dirs, sq, model.dim)


def euler_step(spec: LossSpec, model: ComponentModel, cfg: StepperConfig) -> ComponentModel:
    return apply_velocity(model, velocities(spec, model), cfg.step_size)


def raw_euler_step(spec: LossSpec, W: np.ndarray, eta: float) -> np.ndarray:
    """Gradient-descent step on raw vectors (oracle for moderate scales)."""
    model = ComponentModel.from_vectors(W)
    return W - eta * raw_gradient(spec, model)


def analytic_direction_rate(spec: LossSpec, model: ComponentModel, j: int, k: int) -> float:
    """``d[v_k^2]/dt = 8 v_k [R(v^3, I) - R(v^4) v]_k`` for component ``j``."""
    if not 0 <= j < model.m:
        raise IndexError(f"component index {j} out of range for m={model.m}")
    if not 0 <= k < model.dim:
        raise IndexError(f"coordinate {k} out of range for d={model.dim}")
    r4, r31 = residual_terms(spec, model)
    v = model.directions[j]
    return float(8.0 * v[k] * (r31[j, k] - r4[j] * v[k]))


def direction_rates(spec: LossSpec, model: ComponentModel, U: np.ndarray) -> np.ndarray:
    """``d<v, u_i>^2/dt`` for every component (rows) and probe ``u_i`` (cols)."""
    r4, r31 = residual_terms(spec, model)
    V = model.directions
    tangent = 4.0 * (r31 - r4[:, None] * V)
    P = V @ U.T
    return 2.0 * P * (tangent @ U.T)


def run_gradient_descent(spec: LossSpec, model: ComponentModel, cfg: StepperConfig,
                         callback=None) -> ComponentModel:
    """Run ``cfg.max_steps`` Euler steps; ``callback(step, model)`` sees each new iterate."""
    for step in range(1, cfg.max_steps + 1):
        model = euler_step(spec, model, cfg)
        if callback is not None:
            callback(step, model)
    return model
