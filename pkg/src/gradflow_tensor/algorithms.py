"""Classical baselines: power iteration, deflation, rank-one search and GLRL."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .flow_dynamics import LossSpec, StepperConfig, euler_step
from .tensor_core import (
    ComponentModel,
    GroundTruth,
    SymTensor,
    as_symtensor,
    contract4_many,
    contract31_many,
    difference,
    frobenius,
    frobenius_distance,
    residual,
    sample_sphere,
)
from .trajectory import TrajectoryRecord, snapshot, standard_columns


class DegenerateStartError(ValueError):
    """The start point is an exact critical point of the contraction map."""


@dataclass(frozen=True)
class PowerConfig:
    max_iters: int = 200
    tol: float = 1e-13
    restarts: int = 50
    step_size: float = 0.3

    def __post_init__(self):
        if self.max_iters <= 0 or self.tol <= 0 or self.restarts <= 0 or self.step_size <= 0:
            raise ValueError("PowerConfig fields must be positive")


@dataclass(frozen=True)
class GlrlConfig:
    epochs: int = 5
    seed_norm: float = 1e-60
    rank1_restarts: int = 50
    step_size: float = 0.3
    iters_per_epoch: int = 2000

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.seed_norm <= 0 or self.rank1_restarts <= 0 or self.step_size <= 0 \
                or self.iters_per_epoch <= 0:
            raise ValueError("GlrlConfig fields must be positive")

    def iters(self, s: int) -> int:
        """Iterations used in epoch ``s`` (1-based), for both the search and the descent."""
        return s * self.iters_per_epoch


@dataclass
class SaddleLibrary:
    saddles: list[ComponentModel] = field(default_factory=list)

    def losses(self, truth: GroundTruth) -> np.ndarray:
        return np.array([0.5 * frobenius_distance(s, truth) ** 2 for s in self.saddles])

    def __len__(self) -> int:
        return len(self.saddles)


def _canonical_sign(w: np.ndarray) -> np.ndarray:
    i = np.argmax(np.abs(w))
    return -w if w[i] < 0 else w


def power_iterate(target, w0, cfg: PowerConfig = PowerConfig(), history: list | None = None):
    """Tensor power method ``w <- x(w^3, I) / |x(w^3, I)|``.

    The returned vector has its largest-magnitude coordinate positive.  If
    ``history`` is a list, every iterate is appended to it.
    """
    w = np.asarray(w0, dtype=float)
    w = w / np.linalg.norm(w)
    if history is not None:
        history.append(w.copy())
    for _ in range(cfg.max_iters):
        g = contract31_many(target, w[None, :])[0]
        n = np.linalg.norm(g)
        if n == 0:
            raise DegenerateStartError("contraction vanished; start is an exact saddle")
        w_new = g / n
        # even order: w and -w are the same point
        change = min(np.linalg.norm(w_new - w), np.linalg.norm(w_new + w))
        w = w_new
        if history is not None:
            history.append(w.copy())
        if change < cfg.tol:
            break
    return _canonical_sign(w)


def rank1_ascent(R, W0: np.ndarray, step_size: float, iters: int, tol: float = 0.0):
    """Projected gradient ascent of ``R(u^4)`` on the sphere from every row of ``W0``.

    Returns the final directions and their correlations ``R(u^4)``.
    """
    W = np.array(W0, dtype=float)
    for _ in range(iters):
        G = 4.0 * contract31_many(R, W)
        W_new = W + step_size * G
        W_new /= np.linalg.norm(W_new, axis=1, keepdims=True)
        change = np.max(np.linalg.norm(W_new - W, axis=1))
        W = W_new
        if change < tol:
            break
    return W, contract4_many(R, W)


def best_rank1(R, cfg: PowerConfig = PowerConfig(), rng=None, iters: int | None = None):
    """Best direction for the residual ``R`` over ``cfg.restarts`` random starts.

    ``R`` is any tensor-like, or a ``(truth, model)`` pair meaning ``truth - model``.
    Ties between restarts go to the lowest restart index.
    """
    if isinstance(R, tuple):
        R = difference(*R)
    R = as_symtensor(R)
    rng = np.random.default_rng(rng)
    W0 = sample_sphere(rng, cfg.restarts, R.dim)
    g0 = np.linalg.norm(contract31_many(R, W0), axis=1)
    if np.all(g0 == 0):
        raise DegenerateStartError("every restart started at a critical point")
    W, corr = rank1_ascent(R, W0, cfg.step_size, cfg.max_iters if iters is None else iters,
                           cfg.tol)
    best = int(np.argmax(corr))
    return _canonical_sign(W[best]), float(corr[best])


def tensor_deflation(target, stop_norm: float, cfg: PowerConfig = PowerConfig(), rng=None,
                     max_components: int = 100) -> ComponentModel:
    """Greedy deflation: fit the best rank-one term of the residual, subtract, repeat.

    The coefficient of each term is the exact 1-D least-squares fit
    ``max(0, R(u^4))``.  Stops when ``|R|_F <= stop_norm``; warns if a round
    makes no progress.
    """
    target = as_symtensor(target)
    if not np.all(np.isfinite(target.coeffs)):
        raise ValueError("target must be finite")
    rng = np.random.default_rng(rng)
    model = ComponentModel.empty(target.dim)
    res_norm = frobenius(target)
    while res_norm > stop_norm and model.m < max_components:
        R = difference(target, model)
        u, corr = best_rank1(R, cfg, rng)
        coeff = max(0.0, corr)
        if coeff == 0.0:
            warnings.warn("deflation stalled: no direction with positive correlation")
            break
        candidate = model.append(u, coeff)
        new_norm = frobenius_distance(target, candidate)
        if res_norm - new_norm < 1e-14:
            warnings.warn(f"deflation stalled at residual {res_norm:.3e}")
            break
        model, res_norm = candidate, new_norm
    return model


def saddle_distance(model: ComponentModel, library: SaddleLibrary) -> tuple[int, float]:
    if not library.saddles:
        raise ValueError("saddle library is empty")
    dists = [frobenius_distance(model, s) for s in library.saddles]
    i = int(np.argmin(dists))
    return i, float(dists[i])


def glrl_run(truth: GroundTruth, cfg: GlrlConfig = GlrlConfig(), rng=None,
             record_every: int = 10):
    """Greedy low-rank learning.

    Each epoch adds one component of norm ``cfg.seed_norm`` along the best
    rank-one direction of the residual, then runs plain gradient descent.
    Returns the final model, the saddle library (zero tensor first) and the
    trajectory.
    """
    rng = np.random.default_rng(rng)
    spec = LossSpec(truth, 0.0)
    step_cfg = StepperConfig(cfg.step_size)
    model = ComponentModel.empty(truth.dim)
    library = SaddleLibrary([model])
    traj = TrajectoryRecord(standard_columns(truth.r, cfg.epochs, ["rank1_corr"]))
    step = 0
    time = 0.0

    def record(epoch, corr):
        row = snapshot(truth, model, slots=cfg.epochs)
        row.update(step=step, continuous_time=time, epoch=epoch, phase="gd", rank1_corr=corr)
        traj.append(row)

    record(0, float("nan"))
    search = PowerConfig(max_iters=1, tol=1e-15, restarts=cfg.rank1_restarts,
                         step_size=cfg.step_size)
    for s in range(1, cfg.epochs + 1):
        n_iter = cfg.iters(s)
        u, corr = best_rank1(residual(truth, model), search, rng, iters=n_iter)
        model = model.append(u, cfg.seed_norm ** 2)
        traj.mark(step, "add_component", epoch=s, correlation=corr)
        for _ in range(n_iter):
            model = euler_step(spec, model, step_cfg)
            step += 1
            time += cfg.step_size
            if step % record_every == 0:
                record(s, corr)
        if traj.rows[-1][0] != step:
            record(s, corr)
        library.saddles.append(model)
        traj.mark(step, "saddle", epoch=s)
    return model, library, traj
