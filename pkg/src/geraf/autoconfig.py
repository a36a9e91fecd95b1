"""Automatic choice of m, t, p, c from n, d, epsilon and the variance profile.

Values are powers of two taken from a small piecewise-constant table.  The
table below is a policy, not a law: swap ``DEFAULT_TABLE`` to experiment.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import math

import numpy as np

from .core import ForestParams, UsageError


@dataclass(frozen=True)
class ConfigInput:
    n: int
    d: int
    epsilon: float
    top5_variances: tuple = field(default=(1.0, 1.0, 1.0, 1.0, 1.0))

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise UsageError("n and d must be >= 1")
        if not self.epsilon >= 0:
            raise UsageError(f"epsilon must be >= 0, got {self.epsilon!r}")
        top = [float(v) for v in self.top5_variances][:5]
        top += [0.0] * (5 - len(top))
        if any(v < 0 for v in top) or any(a < b for a, b in zip(top, top[1:])):
            raise UsageError("top5_variances must be nonnegative and nonincreasing")
        object.__setattr__(self, "top5_variances", tuple(top))

    @classmethod
    def from_variances(cls, n, variances, epsilon):
        variances = np.asarray(variances, dtype=np.float64)
        top = np.sort(variances)[::-1][:5]
        return cls(n, variances.size, epsilon, tuple(top))


@dataclass(frozen=True)
class ConfigTable:
    # (upper bound on d, trees)
    trees: tuple = ((1024, 8), (math.inf, 16))
    # (upper bound on d, split dimensions)
    split_dims: tuple = ((256, 8), (math.inf, 16))
    # A variance profile is flat when the 5th largest is at least this
    # fraction of the largest; flat profiles get more split dimensions.
    flat_ratio: float = 0.5
    flat_split_factor: int = 4
    # (exclusive upper bound on n, points per leaf)
    leaf_size: tuple = ((2**12, 16), (2**20, 64), (math.inf, 128))
    # epsilon step that halves the leaf size once
    leaf_halving_step: float = 1.0
    # (exclusive upper bound on n, leaf checks)
    checks: tuple = ((2**12, 64), (2**20, 256), (math.inf, 512))


DEFAULT_TABLE = ConfigTable()


def floor_pow2(x) -> int:
    """Largest power of two <= x (x >= 1)."""
    x = int(x)
    if x < 1:
        raise UsageError("floor_pow2 needs x >= 1")
    return 1 << (x.bit_length() - 1)


def _lookup(bands, key, inclusive):
    for bound, value in bands:
        if (key <= bound) if inclusive else (key < bound):
            return value
    return bands[-1][1]


def configure(cfg: ConfigInput, table: ConfigTable = DEFAULT_TABLE, **overrides) -> ForestParams:
    """Forest parameters for ``cfg``; keyword overrides win over the table."""
    n, d, eps = cfg.n, cfg.d, cfg.epsilon
    top = cfg.top5_variances

    m = _lookup(table.trees, d, inclusive=True)

    t = _lookup(table.split_dims, d, inclusive=True)
    if top[0] > 0 and top[4] >= table.flat_ratio * top[0]:
        t *= table.flat_split_factor
    t = min(t, floor_pow2(d))

    p = _lookup(table.leaf_size, n, inclusive=False)
    halvings = int(math.floor(eps / table.leaf_halving_step + 1e-12))
    p = max(1, p >> min(halvings, 62))
    p = min(p, floor_pow2(n))

    c = min(_lookup(table.checks, n, inclusive=False), floor_pow2(n))

    params = ForestParams(m=m, t=t, p=p, c=c, epsilon=eps)
    return replace(params, **overrides) if overrides else params
