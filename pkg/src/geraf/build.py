"""Randomized k-d forest construction."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
import multiprocessing

import numpy as np

from .core import (
    Dataset,
    ForestParams,
    HouseholderTransform,
    UsageError,
    sample_unit_vector,
)

# Below this size quickselect just sorts what is left.
_SORT_CUTOFF = 32


@dataclass(frozen=True)
class SplitNode:
    split_dim: int
    split_value: float


@dataclass(frozen=True)
class Leaf:
    point_indices: np.ndarray


class Tree:
    """Array-backed k-d tree in preorder layout.

    Node ``i`` is a split node when ``dims[i] >= 0``; its left child is
    ``i + 1`` and its right child is ``right[i]``.  Every node owns the slice
    ``indices[start[i]:stop[i]]`` of the tree's point permutation, so a leaf's
    points are that slice.
    """

    def __init__(self, dims, values, right, start, stop, indices, transform=None, tree_seed=0):
        self.dims = np.asarray(dims, dtype=np.int32)
        self.values = np.asarray(values, dtype=np.float32)
        self.right = np.asarray(right, dtype=np.int32)
        self.start = np.asarray(start, dtype=np.int64)
        self.stop = np.asarray(stop, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.transform = transform
        self.tree_seed = int(tree_seed)

    @property
    def n_nodes(self) -> int:
        return self.dims.size

    @property
    def leaf_ids(self):
        return np.flatnonzero(self.dims < 0)

    @property
    def n_leaves(self) -> int:
        return int(np.count_nonzero(self.dims < 0))

    def is_leaf(self, node) -> bool:
        return self.dims[node] < 0

    def node(self, i):
        if self.dims[i] < 0:
            return Leaf(self.indices[self.start[i]:self.stop[i]])
        return SplitNode(int(self.dims[i]), float(self.values[i]))

    def leaf_points(self, node):
        return self.indices[self.start[node]:self.stop[node]]

    def __eq__(self, other):
        if not isinstance(other, Tree):
            return NotImplemented
        same_transform = (self.transform is None) == (other.transform is None) and (
            self.transform is None or np.array_equal(self.transform.u, other.transform.u)
        )
        return (
            same_transform
            and self.tree_seed == other.tree_seed
            and np.array_equal(self.dims, other.dims)
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.right, other.right)
            and np.array_equal(self.start, other.start)
            and np.array_equal(self.stop, other.stop)
            and np.array_equal(self.indices, other.indices)
        )

    def __repr__(self):
        return f"Tree(nodes={self.n_nodes}, leaves={self.n_leaves}, rotated={self.transform is not None})"


class Forest:
    """m trees over one dataset, sharing the global split-dimension set."""

    def __init__(self, trees, dataset: Dataset, top_dims, params: ForestParams):
        self.trees = list(trees)
        self.dataset = dataset
        self.top_dims = np.asarray(top_dims, dtype=np.int64)
        self.params = params
        if len(self.trees) != params.m:
            raise UsageError(f"expected {params.m} trees, got {len(self.trees)}")
        if self.top_dims.size != params.t:
            raise UsageError(f"expected {params.t} split dimensions, got {self.top_dims.size}")

    @property
    def m(self) -> int:
        return len(self.trees)

    @property
    def total_leaves(self) -> int:
        return sum(tree.n_leaves for tree in self.trees)

    def __eq__(self, other):
        if not isinstance(other, Forest):
            return NotImplemented
        return (
            self.params == other.params
            and np.array_equal(self.top_dims, other.top_dims)
            and self.trees == other.trees
        )

    def __repr__(self):
        return f"Forest(m={self.m}, leaves={self.total_leaves}, dataset={self.dataset!r})"


def compute_variances(dataset: Dataset):
    """Per-dimension sample variance by a single streaming pass.

    Knuth's online update, run on whole vectors at once, with the mean
    update done as a multiplication by 1/k.
    """
    X = dataset.points
    n, d = X.shape
    if n < 2:
        return np.zeros(d)
    mu = np.zeros(d)
    v = np.zeros(d)
    delta = np.empty(d)
    resid = np.empty(d)
    for k in range(n):
        x = X[k]
        alpha = 1.0 / (k + 1)
        np.subtract(x, mu, out=delta)
        mu += alpha * delta
        np.subtract(x, mu, out=resid)
        resid *= delta
        v += resid
    return v / (n - 1)


def top_t_dimensions(variances, t):
    """Indices of the ``t`` largest variances, largest first, ties to lower index."""
    variances = np.asarray(variances, dtype=np.float64)
    d = variances.size
    if not 1 <= t <= d:
        raise UsageError(f"t must be in [1, {d}], got {t}")
    order = np.lexsort((np.arange(d), -variances))
    return order[:t]


def quickselect(values, rank, rng: np.random.Generator):
    """Element of the given 0-based ``rank`` in sorted order, random pivots."""
    a = np.asarray(values)
    if a.size == 0:
        raise UsageError("cannot select from an empty sequence")
    if not 0 <= rank < a.size:
        raise UsageError(f"rank {rank} out of range for {a.size} values")
    while a.size > _SORT_CUTOFF:
        pivot = a[rng.integers(a.size)]
        below = a[a < pivot]
        if rank < below.size:
            a = below
            continue
        n_equal = np.count_nonzero(a == pivot)
        if rank < below.size + n_equal:
            return pivot
        rank -= below.size + n_equal
        a = a[a > pivot]
    return np.sort(a)[rank]


def quickselect_median(values, rng: np.random.Generator):
    """Element of rank floor(len/2) (the upper median for even lengths)."""
    a = np.asarray(values)
    if a.size == 0:
        raise UsageError("median of an empty sequence")
    return quickselect(a, a.size // 2, rng)


def approximate_diameter(point_indices, dataset: Dataset, transform=None, rng=None):
    """Double-sweep diameter estimate, within a factor two of the exact one.

    Works on the original coordinates; ``transform`` is accepted for symmetry
    with the other per-node helpers but an isometry does not change the result.
    """
    idx = np.asarray(point_indices)
    if idx.size <= 1:
        return 0.0
    rng = np.random.default_rng() if rng is None else rng
    P = dataset.points[idx].astype(np.float64)
    a = P[rng.integers(idx.size)]
    b = P[np.argmax(np.einsum("ij,ij->i", P - a, P - a))]
    sq = np.einsum("ij,ij->i", P - b, P - b)
    return float(np.sqrt(sq.max()))


def perturbed_split_value(median, delta_diam, d, rng: np.random.Generator):
    """Median shifted by a uniform draw in [-3*delta/sqrt(d), 3*delta/sqrt(d)]."""
    if delta_diam < 0 or d < 1:
        raise UsageError("diameter must be >= 0 and d >= 1")
    half_width = 3.0 * delta_diam / np.sqrt(d)
    if half_width == 0.0:
        return float(median)
    return float(median + rng.uniform(-half_width, half_width))


def _threshold_mask(coords, split_value):
    left = coords < split_value
    n_left = np.count_nonzero(left)
    if n_left == 0 or n_left == coords.size:
        left = np.zeros(coords.size, dtype=bool)
        left[: coords.size // 2] = True
    return left


def _median_mask(coords, median):
    # Points below the median go left, then equal points in working order
    # until the left side holds floor(n/2); this keeps trees balanced under ties.
    half = coords.size // 2
    left = coords < median
    missing = half - np.count_nonzero(left)
    if missing > 0:
        equal = coords == median
        left |= equal & (np.cumsum(equal) <= missing)
    return left


def split_points(point_indices, dataset: Dataset, transform, split_dim, split_value):
    """Partition indices by ``coordinate < split_value`` (left) vs ``>=`` (right).

    Relative order is kept on both sides.  If one side would be empty the
    indices are halved by position instead.
    """
    idx = np.asarray(point_indices)
    if idx.size == 0:
        raise UsageError("cannot split an empty index set")
    if not 0 <= split_dim < dataset.d:
        raise UsageError(f"split dimension {split_dim} out of range")
    coords = _coordinates(dataset, transform, idx, split_dim)
    left = _threshold_mask(coords, np.float32(split_value))
    return idx[left], idx[~left]


def _coordinates(dataset, transform, idx, dim):
    if transform is None:
        return dataset.points[idx, dim]
    rows = dataset.points[idx].astype(np.float64)
    return (rows[:, dim] - 2.0 * (rows @ transform.u) * transform.u[dim]).astype(np.float32)


def split_coordinates(dataset: Dataset, transform, dims):
    """Coordinates of every point in ``dims`` under ``transform``, one row per dim.

    Stored as float32 so split values compare exactly against them.
    """
    dims = np.asarray(dims)
    X = dataset.points
    if transform is None:
        return np.ascontiguousarray(X[:, dims].T)
    proj = X @ transform.u
    cols = X[:, dims].T.astype(np.float64) - 2.0 * np.outer(transform.u[dims], proj)
    return np.ascontiguousarray(cols, dtype=np.float32)


def build_tree(dataset: Dataset, top_dims, params: ForestParams, tree_seed) -> Tree:
    """Build one randomized tree; the result depends only on ``tree_seed``."""
    top_dims = np.asarray(top_dims, dtype=np.int64)
    if top_dims.size == 0:
        raise UsageError("need at least one split dimension")
    rng = np.random.default_rng(int(tree_seed))
    n, d = dataset.n, dataset.d
    p = params.p

    transform = sample_unit_vector(rng, d) if params.use_rotation else None
    cols = split_coordinates(dataset, transform, top_dims)
    perm = rng.permutation(n) if params.use_shuffling else np.arange(n)

    dims, values, right, start, stop = [], [], [], [], []
    # (lo, hi, parent whose right child this is, or -1)
    stack = [(0, n, -1)]
    while stack:
        lo, hi, parent = stack.pop()
        node = len(dims)
        if parent >= 0:
            right[parent] = node
        start.append(lo)
        stop.append(hi)
        right.append(-1)
        if hi - lo <= p:
            dims.append(-1)
            values.append(0.0)
            continue

        j = int(rng.integers(top_dims.size))
        seg = perm[lo:hi]
        coords = cols[j][seg]
        median = quickselect_median(coords, rng)
        if params.use_split_perturbation:
            diam = approximate_diameter(seg, dataset, transform, rng)
            value = np.float32(perturbed_split_value(float(median), diam, d, rng))
            left = _threshold_mask(coords, value)
        else:
            value = median
            left = _median_mask(coords, median)

        n_left = int(np.count_nonzero(left))
        perm[lo:hi] = np.concatenate((seg[left], seg[~left]))
        dims.append(int(top_dims[j]))
        values.append(float(value))
        stack.append((lo + n_left, hi, node))
        stack.append((lo, lo + n_left, -1))

    return Tree(dims, values, right, start, stop, perm, transform, tree_seed)


def tree_seeds(master_seed, m):
    """Per-tree 64-bit seeds hashed from (master_seed, tree index)."""
    return [
        int(np.random.SeedSequence(int(master_seed), spawn_key=(i,)).generate_state(1, np.uint64)[0])
        for i in range(m)
    ]


def default_jobs():
    """Worker count: ``GERAF_THREADS`` if set, else the number of usable CPUs."""
    env = os.environ.get("GERAF_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"GERAF_THREADS must be an integer, got {env!r}") from None
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


_worker_state = {}


def _init_worker(dataset, top_dims, params):
    _worker_state["args"] = (dataset, top_dims, params)


def _build_in_worker(tree_seed):
    dataset, top_dims, params = _worker_state["args"]
    return build_tree(dataset, top_dims, params, tree_seed)


def build_forest(dataset: Dataset, params: ForestParams, n_jobs=None, variances=None) -> Forest:
    """Build ``params.m`` trees, optionally in worker processes.

    Trees are seeded from ``(params.seed, tree index)``, so the forest is
    identical for any ``n_jobs``.  The cap from ``GERAF_THREADS`` applies
    on top of an explicit ``n_jobs``.
    """
    if dataset is None or dataset.n == 0:
        raise UsageError("cannot build a forest on an empty dataset")
    params.check_against(dataset.d)
    if variances is None:
        variances = compute_variances(dataset)
    top_dims = top_t_dimensions(variances, params.t)
    seeds = tree_seeds(params.seed, params.m)

    if n_jobs is None:
        n_jobs = default_jobs()
    elif os.environ.get("GERAF_THREADS"):
        n_jobs = min(int(n_jobs), default_jobs())
    n_jobs = max(1, min(int(n_jobs), params.m))

    if n_jobs == 1:
        trees = [build_tree(dataset, top_dims, params, s) for s in seeds]
    else:
        methods = multiprocessing.get_all_start_methods()
        ctx = multiprocessing.get_context("fork" if "fork" in methods else None)
        with ProcessPoolExecutor(
            max_workers=n_jobs,
            mp_context=ctx,
            initializer=_init_worker,
            initargs=(dataset, top_dims, params),
        ) as pool:
            trees = list(pool.map(_build_in_worker, seeds))
    return Forest(trees, dataset, top_dims, params)
