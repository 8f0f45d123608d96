"""Symmetric 4th-order tensors stored as weighted sums of rank-one terms.

Every tensor here has the form ``sum_j c_j * u_j^{(x)4}`` with unit vectors
``u_j``.  A learned component ``w`` contributes ``w^{(x)4} / |w|^2``, which is
the same as ``|w|^2 * (w/|w|)^{(x)4}``, so it is stored as the pair
(unit direction, squared norm).  All contractions work on normalized inner
products, which keeps them finite for squared norms as small as 1e-200.

The dense ``d x d x d x d`` form exists only as a test oracle.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

UNIT_TOL = 1e-12
DENSE_MAX_DIM = 32
ORACLE_DTYPE = np.longdouble

NORMALIZATIONS = ("sum_weights_one", "frobenius_one", "none")


class DimensionError(ValueError):
    """Operands live in different ambient dimensions."""


def normalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n == 0) or not np.all(np.isfinite(n)):
        raise ValueError("cannot normalize a zero or non-finite vector")
    return v / n


def unit_vector(entries: Sequence[float]) -> np.ndarray:
    """Return ``entries`` as a float array with unit Euclidean norm."""
    return normalize(np.asarray(entries, dtype=float).reshape(-1))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Component:
    direction: np.ndarray
    sq_norm: float

    def __post_init__(self):
        if not (np.isfinite(self.sq_norm) and self.sq_norm > 0):
            raise ValueError(f"sq_norm must be positive and finite, got {self.sq_norm}")
        d = np.asarray(self.direction, dtype=float)
        if abs(np.linalg.norm(d) - 1.0) > UNIT_TOL:
            raise ValueError("direction must be a unit vector")
        object.__setattr__(self, "direction", _frozen(d))

    @property
    def vector(self) -> np.ndarray:
        """Raw parameter ``w``; only meaningful when ``|w|`` is representable."""
        return np.sqrt(self.sq_norm) * self.direction


@dataclass(frozen=True)
class SymTensor:
    """Signed rank-one sum ``sum_j coeffs[j] * dirs[j]^{(x)4}``.

    Used for residuals and other differences where coefficients may be negative.
    """

    coeffs: np.ndarray
    dirs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float).reshape(-1)
        u = np.asarray(self.dirs, dtype=float)
        if u.ndim != 2 or u.shape[0] != c.shape[0]:
            raise ValueError(f"coeffs {c.shape} and dirs {u.shape} do not line up")
        object.__setattr__(self, "coeffs", _frozen(c))
        object.__setattr__(self, "dirs", _frozen(u))

    @property
    def dim(self) -> int:
        return self.dirs.shape[1]

    def __len__(self) -> int:
        return self.coeffs.shape[0]


@dataclass(frozen=True, init=False)
class ComponentModel:
    """The learned tensor ``T = sum_j sq_norms[j] * directions[j]^{(x)4}``."""

    directions: np.ndarray
    sq_norms: np.ndarray
    dim: int

    def __init__(self, directions, sq_norms, dim: int | None = None):
        sq = np.asarray(sq_norms, dtype=float).reshape(-1)
        u = np.asarray(directions, dtype=float)
        if u.size == 0:
            if dim is None:
                raise ValueError("dim is required for an empty model")
            u = u.reshape(0, dim)
        if u.ndim != 2 or u.shape[0] != sq.shape[0]:
            raise ValueError(f"directions {u.shape} and sq_norms {sq.shape} do not line up")
        if dim is not None and u.shape[1] != dim:
            raise DimensionError(f"directions have dim {u.shape[1]}, expected {dim}")
        if np.any(~np.isfinite(sq)) or np.any(sq <= 0):
            raise ValueError("every sq_norm must be positive and finite")
        norms = np.linalg.norm(u, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_TOL):
            raise ValueError("every direction must be a unit vector")
        object.__setattr__(self, "directions", _frozen(u))
        object.__setattr__(self, "sq_norms", _frozen(sq))
        object.__setattr__(self, "dim", int(u.shape[1]))

    @classmethod
    def empty(cls, dim: int) -> "ComponentModel":
        return cls(np.zeros((0, dim)), np.zeros(0), dim)

    @classmethod
    def from_components(cls, comps: Sequence[Component], dim: int) -> "ComponentModel":
        if not comps:
            return cls.empty(dim)
        return cls(np.stack([c.direction for c in comps]), [c.sq_norm for c in comps], dim)

    @classmethod
    def from_vectors(cls, W: np.ndarray) -> "ComponentModel":
        """Build from raw component vectors given as rows of ``W``."""
        W = np.atleast_2d(np.asarray(W, dtype=float))
        sq = np.sum(W * W, axis=1)
        return cls(W / np.sqrt(sq)[:, None], sq, W.shape[1])

    @property
    def m(self) -> int:
        return self.sq_norms.shape[0]

    def __len__(self) -> int:
        return self.m

    @property
    def components(self) -> list[Component]:
        return [Component(u, float(s)) for u, s in zip(self.directions, self.sq_norms)]

    def __iter__(self) -> Iterator[Component]:
        return iter(self.components)

    @property
    def coeffs(self) -> np.ndarray:
        return self.sq_norms

    @property
    def dirs(self) -> np.ndarray:
        return self.directions

    def vectors(self) -> np.ndarray:
        return np.sqrt(self.sq_norms)[:, None] * self.directions

    def append(self, direction, sq_norm: float) -> "ComponentModel":
        u = unit_vector(direction)
        return ComponentModel(
            np.vstack([self.directions, u[None, :]]),
            np.append(self.sq_norms, sq_norm),
            self.dim,
        )

    def replace(self, directions=None, sq_norms=None) -> "ComponentModel":
        return ComponentModel(
            self.directions if directions is None else directions,
            self.sq_norms if sq_norms is None else sq_norms,
            self.dim,
        )


@dataclass(frozen=True, init=False)
class GroundTruth:
    """Target ``T* = sum_i weights[i] * directions[i]^{(x)4}``, weights nonincreasing."""

    weights: np.ndarray
    directions: np.ndarray
    orthonormal: bool
    normalization: str

    def __init__(self, weights, directions, orthonormal: bool | None = None,
                 normalization: str = "none"):
        a = np.asarray(weights, dtype=float).reshape(-1)
        u = np.atleast_2d(np.asarray(directions, dtype=float))
        if u.shape[0] != a.shape[0]:
            raise ValueError("one direction per weight is required")
        if np.any(a < 0) or np.any(~np.isfinite(a)):
            raise ValueError("weights must be nonnegative and finite")
        if normalization not in NORMALIZATIONS:
            raise ValueError(f"unknown normalization {normalization!r}")
        u = normalize(u)
        order = np.argsort(-a, kind="stable")
        a, u = a[order], u[order]
        gram = u @ u.T
        is_orth = bool(np.all(np.abs(gram - np.eye(len(a))) <= 1e-12))
        if orthonormal is None:
            orthonormal = is_orth
        elif orthonormal and not is_orth:
            raise ValueError("directions are not orthonormal")
        object.__setattr__(self, "weights", _frozen(a))
        object.__setattr__(self, "directions", _frozen(u))
        object.__setattr__(self, "orthonormal", bool(orthonormal))
        object.__setattr__(self, "normalization", normalization)
        if normalization == "sum_weights_one" and abs(a.sum() - 1.0) > 1e-12:
            raise ValueError("weights must sum to one")
        if normalization == "frobenius_one" and abs(frobenius(self) - 1.0) > 1e-10:
            raise ValueError("Frobenius norm must be one")

    @classmethod
    def normalized(cls, weights, directions, normalization: str,
                   orthonormal: bool | None = None) -> "GroundTruth":
        """Rescale ``weights`` so the requested normalization holds, then build."""
        a = np.asarray(weights, dtype=float)
        raw = cls(a, directions, orthonormal, "none")
        if normalization == "sum_weights_one":
            a = a / a.sum()
        elif normalization == "frobenius_one":
            a = a / frobenius(raw)
        return cls(a, directions, orthonormal, normalization)

    @property
    def r(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.directions.shape[1]

    @property
    def coeffs(self) -> np.ndarray:
        return self.weights

    @property
    def dirs(self) -> np.ndarray:
        return self.directions

    def __len__(self) -> int:
        return self.r

    def rotated(self, Q: np.ndarray) -> "GroundTruth":
        return GroundTruth(self.weights, self.directions @ Q.T, None, "none")


# -- contractions -----------------------------------------------------------

def _check_dim(x, d: int):
    if x.dim != d:
        raise DimensionError(f"dimension mismatch: {x.dim} vs {d}")


def as_symtensor(x) -> SymTensor:
    if isinstance(x, SymTensor):
        return x
    return SymTensor(x.coeffs, x.dirs)


def difference(a, b) -> SymTensor:
    """Signed representation of ``a - b``."""
    _check_dim(a, b.dim)
    return SymTensor(np.concatenate([a.coeffs, -np.asarray(b.coeffs)]),
                     np.vstack([a.dirs, b.dirs]))


def residual(truth: GroundTruth, model: ComponentModel) -> SymTensor:
    """``R = T* - T``."""
    return difference(truth, model)


def contract4_many(x, V: np.ndarray) -> np.ndarray:
    """``x(v^{(x)4})`` for every row ``v`` of ``V``."""
    return contract_pair_many(x, V)[0]


def contract31_many(x, V: np.ndarray) -> np.ndarray:
    """``x(v^{(x)3}, I)`` for every row ``v`` of ``V``; returns shape ``(n, d)``."""
    return contract_pair_many(x, V)[1]


def contract_pair_many(x, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Both ``x(v^4)`` (shape ``(n,)``) and ``x(v^3, I)`` (shape ``(n, d)``) from one Gram pass."""
    V = np.atleast_2d(np.asarray(V, dtype=float))
    _check_dim(x, V.shape[1])
    if len(x.coeffs) == 0:
        return np.zeros(V.shape[0]), np.zeros_like(V)
    P = V @ x.dirs.T
    P3c = P * P * P * x.coeffs
    # numpy's sum over the contiguous last axis is pairwise
    return np.sum(P3c * P, axis=1), P3c @ x.dirs


def contract4(x, v) -> float:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise DimensionError("expected a single vector")
    return float(contract4_many(x, v[None, :])[0])


def contract31(x, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise DimensionError("expected a single vector")
    return contract31_many(x, v[None, :])[0]


def pairwise_inner(A, B) -> float:
    """Frobenius inner product ``<A, B>`` via the Gram matrix of directions."""
    _check_dim(A, B.dim)
    if len(A.coeffs) == 0 or len(B.coeffs) == 0:
        return 0.0
    G = A.dirs @ B.dirs.T
    return float(np.sum(((G * G) ** 2 @ B.coeffs) * A.coeffs))


def frobenius(x) -> float:
    c = np.asarray(x.coeffs)
    scale = float(np.max(np.abs(c))) if c.size else 0.0
    if scale == 0.0:
        return 0.0
    # rescale so squared norms near 1e-200 do not underflow in the Gram sum
    scaled = SymTensor(c / scale, x.dirs)
    return scale * float(np.sqrt(max(pairwise_inner(scaled, scaled), 0.0)))


def frobenius_distance(A, B) -> float:
    """``|A - B|_F``; small negative round-off under the root is clamped to 0."""
    sq = pairwise_inner(A, A) - 2.0 * pairwise_inner(A, B) + pairwise_inner(B, B)
    return float(np.sqrt(max(sq, 0.0)))


def residual_frobenius(truth: GroundTruth, model: ComponentModel) -> float:
    return frobenius_distance(model, truth)


def per_direction_residual(truth: GroundTruth, model: ComponentModel, i: int) -> float:
    """``(T* - T)(u_i^{(x)4})`` probed along the i-th ground-truth direction."""
    if not 0 <= i < truth.r:
        raise IndexError(f"direction index {i} out of range for r={truth.r}")
    u = truth.directions[i]
    return contract4(truth, u) - contract4(model, u)


def per_direction_residuals(truth: GroundTruth, model: ComponentModel) -> np.ndarray:
    U = truth.directions
    return contract4_many(truth, U) - contract4_many(model, U)


def sum_sq_norms(model: ComponentModel) -> float:
    return float(np.sum(model.sq_norms))


# -- dense oracle -----------------------------------------------------------

@dataclass(frozen=True)
class DenseSymTensor4:
    """Explicit ``d x d x d x d`` array, held in extended precision.

    Dense contractions add O(1) entries with mixed signs, so values far
    below the entry scale lose digits in double precision; the oracle keeps
    ``np.longdouble`` throughout and rounds only the final result.
    """

    entries: np.ndarray

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def contract4(self, v) -> float:
        v = np.asarray(v, dtype=ORACLE_DTYPE)
        return float(np.einsum("abce,a,b,c,e->", self.entries, v, v, v, v))

    def contract31(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=ORACLE_DTYPE)
        return np.einsum("abce,a,b,c->e", self.entries, v, v, v).astype(float)

    def inner(self, other: "DenseSymTensor4") -> float:
        return float(np.sum(self.entries * other.entries))

    def frobenius(self) -> float:
        return float(np.sqrt(np.sum(self.entries ** 2)))

    def __sub__(self, other: "DenseSymTensor4") -> "DenseSymTensor4":
        return DenseSymTensor4(self.entries - other.entries)

    def is_symmetric(self, rtol: float = 1e-12) -> bool:
        scale = max(np.max(np.abs(self.entries)), 1e-300)
        return all(
            np.max(np.abs(self.entries - self.entries.transpose(p))) <= rtol * scale
            for p in itertools.permutations(range(4))
        )


def to_dense(x) -> DenseSymTensor4:
    d = x.dim
    if d > DENSE_MAX_DIM:
        raise ValueError(f"dense form limited to d <= {DENSE_MAX_DIM}, got {d}")
    if len(x.coeffs) == 0:
        return DenseSymTensor4(np.zeros((d, d, d, d), dtype=ORACLE_DTYPE))
    U = np.asarray(x.dirs, dtype=ORACLE_DTYPE)
    c = np.asarray(x.coeffs, dtype=ORACLE_DTYPE)
    return DenseSymTensor4(np.einsum("j,ja,jb,jc,je->abce", c, U, U, U, U))


def sample_sphere(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    """``n`` i.i.d. uniform points on the unit sphere in R^d (normalized Gaussians)."""
    return normalize(rng.standard_normal((n, d)))
