"""Shared types and distance kernels.

All distances are squared Euclidean; square roots are only taken when
reporting.  Stored coordinates are float32, reductions accumulate in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

# Above this dimensionality leaf distances go through the dot-product kernel.
DOT_KERNEL_MIN_DIM = 100


class UsageError(ValueError):
    """Invalid argument or parameter combination."""


class FormatError(ValueError):
    """Malformed index or vector file.

    ``offset`` is the byte position where parsing failed.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class Dataset:
    """Immutable n x d point matrix with cached squared norms."""

    __slots__ = ("points", "sq_norms")

    def __init__(self, points):
        points = np.array(points, dtype=np.float32, order="C", copy=True)
        if points.ndim != 2:
            raise UsageError(f"points must be a 2-d array, got shape {points.shape}")
        n, d = points.shape
        if n < 1 or d < 1:
            raise UsageError(f"dataset must be non-empty, got shape {points.shape}")
        points.setflags(write=False)
        sq_norms = np.einsum("ij,ij->i", points, points, dtype=np.float64)
        sq_norms.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "sq_norms", sq_norms)

    def __setattr__(self, name, value):
        raise AttributeError("Dataset is immutable")

    def __reduce__(self):
        return (Dataset, (self.points,))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.n

    def __repr__(self):
        return f"Dataset(n={self.n}, d={self.d})"


@dataclass(frozen=True)
class ForestParams:
    """Build and search knobs for a forest.

    m: number of trees; t: number of high-variance dimensions split on;
    p: max points per leaf; c: max leaf checks per query; epsilon: the
    approximation factor, which shrinks the leaf budget to c / (1 + epsilon).
    """

    m: int = 8
    t: int = 8
    p: int = 64
    c: int = 256
    epsilon: float = 0.0
    use_rotation: bool = False
    use_split_perturbation: bool = False
    use_shuffling: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("m", "t", "p", "c"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise UsageError(f"{name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if not np.isfinite(self.epsilon) or self.epsilon < 0:
            raise UsageError(f"epsilon must be >= 0, got {self.epsilon!r}")
        object.__setattr__(self, "epsilon", float(self.epsilon))
        if not 0 <= int(self.seed) < 2**64:
            raise UsageError(f"seed must fit in 64 unsigned bits, got {self.seed!r}")
        object.__setattr__(self, "seed", int(self.seed))

    def check_against(self, d):
        if self.t > d:
            raise UsageError(f"t={self.t} exceeds dimensionality d={d}")


@dataclass(frozen=True)
class HouseholderTransform:
    """Reflection P = I - 2 u u^T across the hyperplane normal to ``u``."""

    u: np.ndarray = field(repr=False)

    def __post_init__(self):
        u = np.array(self.u, dtype=np.float64)
        if u.ndim != 1 or u.size < 1:
            raise UsageError("Householder vector must be a non-empty 1-d array")
        if abs(np.linalg.norm(u) - 1.0) > 1e-9:
            raise UsageError("Householder vector must have unit norm")
        u.setflags(write=False)
        object.__setattr__(self, "u", u)

    @property
    def d(self) -> int:
        return self.u.size

    def apply(self, x):
        return householder_apply(self, x)

    def apply_rows(self, X):
        """Reflect every row of ``X``."""
        X = np.asarray(X, dtype=np.float64)
        return X - 2.0 * np.outer(X @ self.u, self.u)


class Neighbor(NamedTuple):
    index: int
    sq_dist: float


def _as_vector(x, name="vector"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise UsageError(f"{name} must be 1-d, got shape {x.shape}")
    return x


def squared_distance(q, x) -> float:
    q = _as_vector(q, "q")
    x = _as_vector(x, "x")
    if q.shape != x.shape:
        raise UsageError(f"dimension mismatch: {q.size} vs {x.size}")
    diff = q - x
    return float(diff @ diff)


def squared_distance_via_dot(q_sq_norm, x_sq_norm, dot_qx):
    """||q||^2 + ||x||^2 - 2 q.x, clamped at zero.

    Works elementwise on arrays, so a whole leaf can be scored at once.
    """
    out = np.maximum(np.add(q_sq_norm, x_sq_norm) - 2.0 * np.asarray(dot_qx), 0.0)
    return float(out) if out.ndim == 0 else out


def householder_apply(h: HouseholderTransform, x):
    x = _as_vector(x, "x")
    if x.shape != h.u.shape:
        raise UsageError(f"dimension mismatch: {x.size} vs {h.u.size}")
    return x - 2.0 * (h.u @ x) * h.u


def sample_unit_vector(rng: np.random.Generator, d: int) -> HouseholderTransform:
    """Uniform direction on the unit sphere (normalized isotropic Gaussian)."""
    if d < 1:
        raise UsageError(f"d must be >= 1, got {d}")
    while True:
        g = rng.standard_normal(d)
        norm = np.linalg.norm(g)
        if norm > 0.0:
            return HouseholderTransform(g / norm)


def leaf_sq_distances(dataset: Dataset, q, q_sq_norm, indices):
    """Squared distances from ``q`` to the dataset rows ``indices``."""
    rows = dataset.points[indices]
    if dataset.d > DOT_KERNEL_MIN_DIM:
        return squared_distance_via_dot(q_sq_norm, dataset.sq_norms[indices], rows @ q)
    diff = rows - q
    return np.einsum("ij,ij->i", diff, diff)
