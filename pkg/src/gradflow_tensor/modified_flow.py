"""Multi-epoch modified gradient flow with threshold reinitialization.

Each epoch runs Phase 1 (discovery), reinitializes every component whose
norm is below ``delta1``, runs Phase 2 (fitting), then shrinks the target
level ``beta`` geometrically.  Phase lengths scale as ``1/beta``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import diagnostics as diag
from .flow_dynamics import LossSpec, StepperConfig, euler_step
from .tensor_core import (
    ComponentModel,
    GroundTruth,
    residual_frobenius,
    sample_sphere,
)
from .trajectory import TrajectoryRecord, snapshot, standard_columns


class EpochCapExceeded(RuntimeError):
    def __init__(self, result: "RunResult"):
        super().__init__(f"no convergence within {result.epochs_used} epochs")
        self.result = result


@dataclass(frozen=True)
class AlgoParams:
    """Hyperparameters of the modified flow; defaults are the d=10 desk preset."""

    m: int = 50
    epsilon: float = 0.05
    gamma: float = 0.3
    lam: float = 1e-3
    alpha: float = 1e-3
    delta1: float = 1e-4
    delta0: float = 1e-6
    c_t1a: float = 1.0
    c_t1b: float = 1.0
    c_t1c: float = 4.0
    c_t2: float = 4.0
    eta: float = 0.05
    c_rho: float = 0.005
    lemma1_slack: float = 10.0

    def __post_init__(self):
        for name in ("lam", "alpha", "delta1", "delta0", "epsilon"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not self.delta0 < self.delta1:
            raise ValueError("delta0 must be below delta1")
        if self.m <= 0 or self.eta <= 0:
            raise ValueError("m and eta must be positive")
        if min(self.c_t1a, self.c_t1b, self.c_t1c, self.c_t2) <= 0:
            raise ValueError("phase constants must be positive")

    def theorem_warnings(self, d: int) -> list[str]:
        """Parameter orderings the convergence guarantee needs, ignoring constant factors."""
        logd = math.log(d)
        out = []
        lam_max = min(logd / d, self.epsilon / math.sqrt(d))
        if self.lam > lam_max:
            out.append(f"lam={self.lam:g} exceeds min(log d/d, eps/sqrt d)={lam_max:g}")
        alpha_max = min(self.lam / d ** 1.5, self.lam ** 2, self.epsilon ** 2 / d ** 4)
        if self.alpha > alpha_max:
            out.append(f"alpha={self.alpha:g} exceeds {alpha_max:g}")
        d1_max = self.alpha ** 1.5 / math.sqrt(self.m)
        if self.delta1 > d1_max:
            out.append(f"delta1={self.delta1:g} exceeds alpha^1.5/sqrt(m)={d1_max:g}")
        d0 = self.delta1 * self.alpha / math.sqrt(logd)
        if not 0.1 * d0 <= self.delta0 <= 10 * d0:
            out.append(f"delta0={self.delta0:g} is not of order delta1*alpha/sqrt(log d)={d0:g}")
        return out


@dataclass(frozen=True)
class EpochSchedule:
    beta: float
    t1_a: float
    t1_b: float
    t1_c: float
    t2_minus_t1: float

    @classmethod
    def from_beta(cls, beta: float, params: AlgoParams, d: int) -> "EpochSchedule":
        logd = math.log(d)
        return cls(
            beta=beta,
            t1_a=params.c_t1a * d / (beta * logd),
            t1_b=params.c_t1b * d / (beta * logd ** 3),
            t1_c=params.c_t1c * math.log(d / params.alpha) / beta,
            t2_minus_t1=params.c_t2 * (math.log(1 / params.delta1)
                                       + math.log(1 / params.lam)) / beta,
        )

    @property
    def t1(self) -> float:
        return self.t1_a + self.t1_b + self.t1_c

    def phase_steps(self, eta: float) -> tuple[int, int]:
        return math.ceil(self.t1 / eta), math.ceil(self.t2_minus_t1 / eta)


@dataclass
class RunState:
    model: ComponentModel
    rng: np.random.Generator
    trajectory: TrajectoryRecord
    discovery: diag.DiscoverySets
    epoch: int = 0
    phase: str = "one"
    step: int = 0
    continuous_time: float = 0.0
    partitions: list = field(default_factory=list)
    induction: list = field(default_factory=list)
    warnings: list = field(default_factory=list)


@dataclass
class RunResult:
    model: ComponentModel
    trajectory: TrajectoryRecord
    epochs_used: int
    converged: bool
    betas: list[float]
    state: RunState


def trajectory_columns(r: int, m: int) -> list[str]:
    extra = [f"a_hat_{k}" for k in range(r)]
    extra += ["margin_a", "margin_b", "margin_c_lower", "margin_c_upper", "margin_d",
              "delta_frobenius", "beta"]
    return standard_columns(r, m, extra)


def init_model(params: AlgoParams, d: int, rng) -> ComponentModel:
    rng = np.random.default_rng(rng)
    return ComponentModel(sample_sphere(rng, params.m, d), np.full(params.m, params.delta0 ** 2), d)


def small_mask(model: ComponentModel, params: AlgoParams) -> np.ndarray:
    return model.sq_norms < params.delta1 ** 2


def reinitialize_small(model: ComponentModel, params: AlgoParams,
                       rng) -> tuple[ComponentModel, int]:
    """Resample every component with norm below ``delta1`` at scale ``delta0``."""
    mask = small_mask(model, params)
    count = int(mask.sum())
    if count == 0:
        return model, 0
    dirs = np.array(model.directions)
    sq = np.array(model.sq_norms)
    dirs[mask] = sample_sphere(rng, count, model.dim)
    sq[mask] = params.delta0 ** 2
    return ComponentModel(dirs, sq, model.dim), count


def _record(state: RunState, truth: GroundTruth, params: AlgoParams, beta: float):
    model = state.model
    row = snapshot(truth, model, params.lam)
    a_hat = diag.fitted_mass(state.discovery, model).a_hat
    rep = diag.check_induction(state.discovery, model, params, truth, state.epoch, beta)
    state.induction.append((state.step, rep))
    mins = rep.minimum()
    for k in range(truth.r):
        row[f"a_hat_{k}"] = a_hat[k]
    row.update(
        step=state.step, continuous_time=state.continuous_time, epoch=state.epoch,
        phase=state.phase, margin_a=mins["a"], margin_b=mins["b"],
        margin_c_lower=mins["c_lower"], margin_c_upper=mins["c_upper"], margin_d=mins["d"],
        delta_frobenius=diag.delta_frobenius(truth, model, a_hat), beta=beta,
    )
    if state.trajectory.rows and state.trajectory.rows[-1][0] == state.step:
        return
    state.trajectory.append(row)


def _advance(state: RunState, spec: LossSpec, params: AlgoParams, n_steps: int,
             beta: float, record_every: int):
    cfg = StepperConfig(params.eta)
    truth = spec.truth
    for _ in range(n_steps):
        before = state.model
        state.model = euler_step(spec, before, cfg)
        state.step += 1
        state.continuous_time = state.step * params.eta
        diag.update_discovery(state.discovery, before, state.model, params.alpha,
                              params.delta1, truth, state.epoch, state.step)
        if state.step % record_every == 0:
            _record(state, truth, params, beta)


def run_epoch(state: RunState, params: AlgoParams, schedule: EpochSchedule,
              truth: GroundTruth, record_every: int = 10) -> RunState:
    spec = LossSpec(truth, params.lam)
    state.partitions.append(
        (state.epoch,
         diag.classify_partition(state.model, state.discovery, params, schedule, truth)))
    n1, n2 = schedule.phase_steps(params.eta)
    state.phase = "one"
    state.trajectory.mark(state.step, "phase1_start", epoch=state.epoch, beta=schedule.beta)
    _advance(state, spec, params, n1, schedule.beta, record_every)
    _record(state, truth, params, schedule.beta)

    mask = small_mask(state.model, params)
    state.model, count = reinitialize_small(state.model, params, state.rng)
    diag.forget_reinitialized(state.discovery, np.flatnonzero(mask))
    state.trajectory.mark(state.step, "reinitialize", epoch=state.epoch, count=count)

    state.phase = "two"
    state.trajectory.mark(state.step, "phase2_start", epoch=state.epoch)
    _advance(state, spec, params, n2, schedule.beta, record_every)
    _record(state, truth, params, schedule.beta)
    state.trajectory.mark(state.step, "epoch_end", epoch=state.epoch)
    return state


def epoch_cap(params: AlgoParams, d: int) -> int:
    return 10 * math.ceil(math.log(d / params.epsilon) / params.gamma)


def _monitor(state: RunState, truth: GroundTruth, params: AlgoParams, fitted_at: dict,
             first_found: dict):
    """Epoch-boundary checks: fitted directions stay fitted; discovery follows weight order."""
    a_hat = diag.fitted_mass(state.discovery, state.model).a_hat
    gap = truth.weights - a_hat
    drift = state.epoch * params.m * params.delta1 ** 2
    for k in range(truth.r):
        if k in fitted_at and gap[k] > 2 * params.lam:
            state.warnings.append(
                f"direction {k} fitted at epoch {fitted_at[k]} but a-a_hat={gap[k]:.3e} "
                f"> 2 lam at epoch {state.epoch} (t={state.continuous_time:g})")
        if k not in fitted_at and gap[k] <= params.lam + drift:
            fitted_at[k] = state.epoch
        if k not in first_found and state.discovery.sets[k]:
            first_found[k] = state.epoch
    order = [first_found.get(k, math.inf) for k in range(truth.r)]
    for k in range(1, truth.r):
        if truth.weights[k] < truth.weights[k - 1] and order[k] < order[k - 1]:
            msg = f"direction {k} discovered before direction {k - 1}"
            if msg not in state.warnings:
                state.warnings.append(msg)


def run_full(params: AlgoParams, truth: GroundTruth, rng=None, record_every: int = 10,
             init: ComponentModel | None = None, raise_on_cap: bool = False) -> RunResult:
    """Run epochs until the residual is at most ``epsilon`` or the epoch cap is hit."""
    rng = np.random.default_rng(rng)
    d = truth.dim
    for msg in params.theorem_warnings(d):
        warnings.warn(msg, stacklevel=2)
    model = init if init is not None else init_model(params, d, rng)
    state = RunState(model, rng, TrajectoryRecord(trajectory_columns(truth.r, model.m)),
                     diag.DiscoverySets(truth.r))
    beta = residual_frobenius(truth, model)
    betas = []
    cap = epoch_cap(params, d)
    fitted_at: dict = {}
    first_found: dict = {}
    _record(state, truth, params, beta)
    converged = residual_frobenius(truth, state.model) <= params.epsilon
    while not converged and state.epoch < cap:
        betas.append(beta)
        schedule = EpochSchedule.from_beta(beta, params, d)
        run_epoch(state, params, schedule, truth, record_every)
        state.epoch += 1
        _monitor(state, truth, params, fitted_at, first_found)
        beta *= 1.0 - params.gamma
        converged = residual_frobenius(truth, state.model) <= params.epsilon
    result = RunResult(state.model, state.trajectory, state.epoch, converged, betas, state)
    if not converged and raise_on_cap:
        raise EpochCapExceeded(result)
    return result


def discovery_epochs(state: RunState) -> dict[int, int]:
    out: dict[int, int] = {}
    for ev in state.discovery.log:
        out.setdefault(ev.direction, ev.epoch)
    return out


def seeded_at_truth(truth: GroundTruth, params: AlgoParams, rng) -> ComponentModel:
    """Model equal to ``T*`` plus ``delta0``-scale dust (for sanity runs)."""
    rng = np.random.default_rng(rng)
    dust = init_model(replace(params, m=max(params.m - truth.r, 1)), truth.dim, rng)
    return ComponentModel(np.vstack([truth.directions, dust.directions]),
                          np.concatenate([truth.weights, dust.sq_norms]), truth.dim)
