"""Runtime monitors for the deflation analysis of the modified gradient flow.

Discovery sets latch a component to ground-truth direction ``k`` when its
norm crosses ``delta1`` while ``<v, u_k>^2 >= 1 - alpha``.  From these sets
we track the fitted mass, the induction conditions, the initialization
partition and the local-stability rates.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .flow_dynamics import LossSpec, analytic_direction_rate, residual_terms
from .tensor_core import (
    ComponentModel,
    GroundTruth,
    SymTensor,
    frobenius,
    frobenius_distance,
    sum_sq_norms,
)


@dataclass(frozen=True)
class LatchEvent:
    epoch: int
    step: int
    component: int
    direction: int
    correlation: float


@dataclass
class DiscoverySets:
    """Mutable per-run record of which components discovered which direction.

    Owned by a single run; ``update_discovery`` mutates it in place.
    """

    r: int
    sets: dict[int, set[int]] = field(default_factory=dict)
    log: list[LatchEvent] = field(default_factory=list)

    def __post_init__(self):
        for k in range(self.r):
            self.sets.setdefault(k, set())

    def owner(self, j: int) -> int | None:
        for k, members in self.sets.items():
            if j in members:
                return k
        return None

    def members(self) -> set[int]:
        return set().union(*self.sets.values()) if self.sets else set()

    def unassigned(self, m: int) -> list[int]:
        taken = self.members()
        return [j for j in range(m) if j not in taken]

    def discovered(self) -> list[int]:
        return [k for k in range(self.r) if self.sets[k]]

    def copy(self) -> "DiscoverySets":
        return DiscoverySets(self.r, {k: set(v) for k, v in self.sets.items()}, list(self.log))


def update_discovery(sets: DiscoverySets, before: ComponentModel, after: ComponentModel,
                     alpha: float, delta1: float, truth: GroundTruth,
                     epoch: int = 0, step: int = 0) -> DiscoverySets:
    """Latch components whose norm crossed ``delta1`` from below during this step."""
    crossed = (before.sq_norms < delta1 ** 2) & (after.sq_norms >= delta1 ** 2)
    if not np.any(crossed):
        return sets
    idx = np.flatnonzero(crossed)
    corr = (after.directions[idx] @ truth.directions.T) ** 2
    for j, row in zip(idx, corr):
        j = int(j)
        if sets.owner(j) is not None:
            continue
        k = int(np.argmax(row))
        if row[k] >= 1.0 - alpha:
            sets.sets[k].add(j)
            sets.log.append(LatchEvent(epoch, step, j, k, float(row[k])))
    return sets


def forget_reinitialized(sets: DiscoverySets, indices) -> DiscoverySets:
    for j in indices:
        for members in sets.sets.values():
            members.discard(int(j))
    return sets


@dataclass(frozen=True)
class FittedMass:
    a_hat: np.ndarray


def fitted_mass(sets: DiscoverySets, model: ComponentModel) -> FittedMass:
    a_hat = np.zeros(sets.r)
    for k, members in sets.sets.items():
        if members:
            a_hat[k] = float(np.sum(model.sq_norms[sorted(members)]))
    return FittedMass(a_hat)


def delta_frobenius(truth: GroundTruth, model: ComponentModel, a_hat: np.ndarray) -> float:
    """``|Delta|_F`` in ``T* - T = sum_i (a_i - a_hat_i) u_i^4 + Delta``."""
    fitted = SymTensor(a_hat, truth.directions)
    return frobenius_distance(fitted, model)


@dataclass(frozen=True)
class InductionReport:
    """Margins (positive = satisfied) for the four induction conditions.

    Each array has one entry per ground-truth direction; vacuous conditions
    get margin 1.0.
    """

    epoch: int
    individual: np.ndarray
    average: np.ndarray
    residual_lower: np.ndarray
    residual_upper: np.ndarray
    unassigned_norm: float

    def minimum(self) -> dict[str, float]:
        return {
            "a": float(np.min(self.individual)),
            "b": float(np.min(self.average)),
            "c_lower": float(np.min(self.residual_lower)),
            "c_upper": float(np.min(self.residual_upper)),
            "d": float(self.unassigned_norm),
        }


def check_induction(sets: DiscoverySets, model: ComponentModel, params, truth: GroundTruth,
                    epoch: int, beta: float) -> InductionReport:
    r = truth.r
    alpha, lam, delta1, gamma = params.alpha, params.lam, params.delta1, params.gamma
    drift = epoch * params.m * delta1 ** 2
    corr = (model.directions @ truth.directions.T) ** 2 if model.m else np.zeros((0, r))
    a_hat = fitted_mass(sets, model).a_hat
    ind = np.ones(r)
    avg = np.ones(r)
    for k, members in sets.sets.items():
        if not members:
            continue
        idx = sorted(members)
        ck = corr[idx, k]
        ind[k] = float(np.min(ck) - (1.0 - alpha))
        w = model.sq_norms[idx]
        avg[k] = float(np.sum(w * ck) / np.sum(w) - (1.0 - alpha ** 2 - 4 * drift))
    gap = truth.weights - a_hat
    lower = gap - (lam / 6.0 - drift)
    upper = np.where(truth.weights >= beta / (1.0 - gamma), (lam + drift) - gap, 1.0)
    rest = sets.unassigned(model.m)
    d_margin = 1.0
    if rest:
        d_margin = float(delta1 - np.sqrt(np.max(model.sq_norms[rest])))
    return InductionReport(epoch, ind, avg, lower, upper, d_margin)


@dataclass(frozen=True)
class PartitionReport:
    gamma_thresholds: np.ndarray
    rho: np.ndarray
    labels: list[str]

    def good(self, i: int) -> list[int]:
        return [j for j, lab in enumerate(self.labels) if lab == f"good({i})"]

    def bad(self) -> list[int]:
        return [j for j, lab in enumerate(self.labels) if lab == "bad"]

    def pot(self, i: int) -> list[int]:
        return [j for j, lab in enumerate(self.labels)
                if lab in (f"good({i})", f"pot({i})")]


def partition_thresholds(sets: DiscoverySets, params, t1_a: float, truth: GroundTruth,
                         c_rho: float):
    a = truth.weights
    scale = np.where([bool(sets.sets[i]) for i in range(truth.r)], params.lam, a)
    with np.errstate(divide="ignore"):
        gamma = np.where(scale > 0, 1.0 / (8.0 * scale * t1_a), np.inf)
    return gamma, c_rho * gamma


def classify_partition(model: ComponentModel, sets: DiscoverySets, params, schedule,
                       truth: GroundTruth) -> PartitionReport:
    """Label each component good(i), pot(i), bad or none by its squared correlations.

    A component that clears the lower threshold of two or more directions is
    bad; otherwise it is pot(i) for the single direction it clears, and
    good(i) if it also clears the upper threshold for ``i`` while staying
    below the lower-minus threshold everywhere else.
    """
    gamma, rho = partition_thresholds(sets, params, schedule.t1_a, truth, params.c_rho)
    corr = (model.directions @ truth.directions.T) ** 2
    labels = []
    for row in corr:
        above = np.flatnonzero(row >= gamma - rho)
        if len(above) >= 2:
            labels.append("bad")
        elif len(above) == 1:
            i = int(above[0])
            others = np.delete(np.arange(truth.r), i)
            if row[i] >= gamma[i] + rho[i] and np.all(row[others] <= gamma[others] - rho[others]):
                labels.append(f"good({i})")
            else:
                labels.append(f"pot({i})")
        else:
            labels.append("none")
    return PartitionReport(gamma, rho, labels)


def lemma1_rates(sets: DiscoverySets, model: ComponentModel, truth: GroundTruth, params,
                 k: int) -> tuple[float, float]:
    """Smallest individual rate of ``<v,u_k>^2`` in ``S_k``, and the rate of its weighted mean.

    The weighted mean is ``E = sum_j s_j c_j / sum_j s_j`` with ``c_j = <v_j, u_k>^2``;
    its derivative includes the norm changes ``ds_j/dt``.
    """
    members = sorted(sets.sets.get(k, ()))
    if not members:
        raise ValueError(f"S_{k} is empty")
    spec = LossSpec(truth, params.lam)
    r4, r31 = residual_terms(spec, model)
    u = truth.directions[k]
    V = model.directions[members]
    s = model.sq_norms[members]
    p = V @ u
    tangent = 4.0 * (r31[members] - r4[members, None] * V)
    c = p * p
    c_dot = 2.0 * p * (tangent @ u)
    s_dot = 2.0 * s * (2.0 * r4[members] - params.lam)
    total = np.sum(s)
    mean = np.sum(s * c) / total
    mean_dot = (np.sum(s_dot * c + s * c_dot) - mean * np.sum(s_dot)) / total
    return float(np.min(c_dot)), float(mean_dot)


def lemma1_bounds(truth: GroundTruth, a_hat: np.ndarray, k: int, alpha: float,
                  individual_c: float, average_c: float, slack: float = 10.0):
    """Lower bounds ``8 (a_k - a_hat_k)(1 - c) - slack * alpha^1.5`` (and ``alpha^3``)."""
    gap = truth.weights[k] - a_hat[k]
    return (8.0 * gap * (1.0 - individual_c) - slack * alpha ** 1.5,
            8.0 * gap * (1.0 - average_c) - slack * alpha ** 3)


def claim1_configuration(alpha: float, v_sq_norm: float, total_sq_norm: float, d: int,
                         k: int = 0):
    """Two nearly parallel components mirrored off ``e_k`` under ``T* = e_k^4``.

    Component 0 is ``v`` with ``<v, e_k>^2 = 1 - alpha``; component 1 is ``w``
    with ``w_k = v_k`` and ``w_{-k} = -v_{-k}``.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if not 2.0 / 3.0 <= total_sq_norm <= 1.0:
        raise ValueError("total squared norm must lie in [2/3, 1]")
    if not 0.0 < v_sq_norm < total_sq_norm:
        raise ValueError("need 0 < |v|^2 < total squared norm")
    if d < 2 or not 0 <= k < d:
        raise ValueError("need d >= 2 and 0 <= k < d")
    perp = np.ones(d)
    perp[k] = 0.0
    perp /= np.linalg.norm(perp)
    e = np.zeros(d)
    e[k] = 1.0
    v = np.sqrt(1.0 - alpha) * e + np.sqrt(alpha) * perp
    w = np.sqrt(1.0 - alpha) * e - np.sqrt(alpha) * perp
    truth = GroundTruth([1.0], e[None, :], orthonormal=True)
    model = ComponentModel(np.stack([v, w]), [v_sq_norm, total_sq_norm - v_sq_norm], d)
    return truth, model


def claim1_check(alpha: float, v_sq_norm: float, total_sq_norm: float, d: int) -> float:
    """``d<v, e_k>^2/dt`` for the mirrored two-component configuration."""
    truth, model = claim1_configuration(alpha, v_sq_norm, total_sq_norm, d)
    return analytic_direction_rate(LossSpec(truth, 0.0), model, 0, 0)


def norm_bound_check(model: ComponentModel) -> float:
    """``d |T|_F - sum |w|^2``; never negative beyond round-off."""
    return model.dim * frobenius(model) - sum_sq_norms(model)
