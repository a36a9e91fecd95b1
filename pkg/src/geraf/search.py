"""Simultaneous priority search over all trees of a forest."""

from __future__ import annotations

import heapq
import math
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from .build import Forest, SplitNode
from .core import Neighbor, UsageError, householder_apply, leaf_sq_distances


class QueueEntry(NamedTuple):
    key: float
    tree_id: int
    node_id: int


class NodeQueue:
    """Min-priority queue of tree nodes keyed by hyperplane distance."""

    __slots__ = ("_heap",)

    def __init__(self):
        self._heap = []

    def push(self, key, tree_id, node_id):
        heapq.heappush(self._heap, (key, tree_id, node_id))

    def pop(self) -> QueueEntry:
        return QueueEntry(*heapq.heappop(self._heap))

    def clear(self):
        self._heap.clear()

    def __len__(self):
        return len(self._heap)

    def __bool__(self):
        return bool(self._heap)


class ResultSet:
    """The ``k`` nearest distinct candidates offered so far."""

    def __init__(self, k):
        if k < 1:
            raise UsageError(f"k must be >= 1, got {k}")
        self.k = int(k)
        self.clear()

    def clear(self):
        self._idx = np.empty(0, dtype=np.int64)
        self._dist = np.empty(0, dtype=np.float64)

    def __len__(self):
        return self._idx.size

    @property
    def worst(self):
        """Distance a new candidate must beat once the set is full."""
        return self._dist[-1] if self._idx.size == self.k else math.inf

    def offer(self, index, sq_dist):
        self.offer_many(np.array([index]), np.array([sq_dist]))

    def offer_many(self, indices, sq_dists, distinct=False):
        """Merge a batch of candidates; ``distinct`` promises no repeats in it."""
        indices = np.asarray(indices, dtype=np.int64)
        sq_dists = np.asarray(sq_dists, dtype=np.float64)
        if indices.size == 0:
            return
        if distinct and indices.size > self.k:
            # Anything beyond the k-th smallest value cannot survive the merge.
            kth = np.partition(sq_dists, self.k - 1)[self.k - 1]
            keep = sq_dists <= kth
            indices, sq_dists = indices[keep], sq_dists[keep]
        fresh = ~np.isin(indices, self._idx)
        idx = np.concatenate((self._idx, indices[fresh]))
        dist = np.concatenate((self._dist, sq_dists[fresh]))
        idx, first = np.unique(idx, return_index=True)
        dist = dist[first]
        order = np.lexsort((idx, dist))[: self.k]
        self._idx = idx[order]
        self._dist = dist[order]

    def neighbors(self):
        return [Neighbor(int(i), float(d)) for i, d in zip(self._idx, self._dist)]


def _search_view(forest):
    # Plain Python lists make the per-node walk several times faster than
    # indexing numpy arrays; split dims are remapped to positions in top_dims.
    view = getattr(forest, "_search_view", None)
    if view is None:
        pos = {int(dim): i for i, dim in enumerate(forest.top_dims)}
        view = []
        for tree in forest.trees:
            dims = [pos[int(dim)] if dim >= 0 else -1 for dim in tree.dims]
            view.append((dims, tree.values.astype(np.float64).tolist(), tree.right.tolist()))
        forest._search_view = view
    return view


class QueryScratch:
    """Per-query working state, reusable across queries on one thread.

    Points seen by the query are stamped with the current epoch, so clearing
    the visited set between queries is a counter bump.
    """

    def __init__(self, forest: Forest, k=1):
        n = forest.dataset.n
        self.forest = forest
        self.queue = NodeQueue()
        self.results = ResultSet(k)
        self.visited = np.zeros(n, dtype=np.int64)
        self._slot = np.zeros(n, dtype=np.int64)
        self.epoch = 0
        self.leaves_checked = 0
        self.distance_computations = 0
        self.transformed_queries = []
        self._split_coords = []
        self._pending = []
        self.query = None
        self._q_sq_norm = 0.0

    def reset(self, q, k=None):
        q = np.asarray(q, dtype=np.float64)
        if q.ndim != 1 or q.size != self.forest.dataset.d:
            raise UsageError(f"query must have length {self.forest.dataset.d}, got shape {q.shape}")
        if k is not None and k != self.results.k:
            self.results = ResultSet(k)
        else:
            self.results.clear()
        self.queue.clear()
        self._pending.clear()
        self.epoch += 1
        self.leaves_checked = 0
        self.distance_computations = 0
        self.query = q
        self._q_sq_norm = float(q @ q)
        self.transformed_queries = transform_query(self.forest, q)
        dims = self.forest.top_dims
        self._split_coords = [qt[dims].tolist() for qt in self.transformed_queries]

    def add_leaf(self, indices):
        self._pending.append(indices)

    def flush(self):
        """Score every pending leaf point not seen earlier in this query."""
        if not self._pending:
            return
        cand = np.concatenate(self._pending) if len(self._pending) > 1 else self._pending[0]
        self._pending.clear()
        cand = cand[self.visited[cand] != self.epoch]
        if cand.size == 0:
            return
        # Keep one copy of each repeated index: whichever write survives owns it.
        pos = np.arange(cand.size)
        self._slot[cand] = pos
        cand = cand[self._slot[cand] == pos]
        self.visited[cand] = self.epoch
        dists = leaf_sq_distances(self.forest.dataset, self.query, self._q_sq_norm, cand)
        self.distance_computations += cand.size
        self.results.offer_many(cand, dists, distinct=True)


def transform_query(forest: Forest, q):
    """The query as seen by each tree (reflected for trees with a transform)."""
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1 or q.size != forest.dataset.d:
        raise UsageError(f"query must have length {forest.dataset.d}, got shape {q.shape}")
    return [q if tree.transform is None else householder_apply(tree.transform, q) for tree in forest.trees]


def signed_distance(node: SplitNode, q_t) -> float:
    return float(q_t[node.split_dim] - node.split_value)


def leaf_check_budget(c, epsilon) -> int:
    """Number of leaf checks allowed: integers l >= 0 with l < c / (1 + epsilon).

    epsilon is taken at its shortest decimal repr, so 0.3 means 3/10.
    """
    if c < 1 or epsilon < 0:
        raise UsageError("need c >= 1 and epsilon >= 0")
    bound = Fraction(int(c)) / (1 + Fraction(repr(float(epsilon))))
    return math.ceil(bound)


def descend(forest: Forest, tree_id, node_id, scratch: QueryScratch, check, flush=True):
    """Walk to a leaf, queueing every sibling not taken.

    With ``check`` the leaf's points are scored against the original query;
    ``flush=False`` defers the scoring to the next ``scratch.flush()``.
    Returns the leaf's node id.
    """
    dims, values, right = _search_view(forest)[tree_id]
    qt = scratch._split_coords[tree_id]
    heap = scratch.queue._heap
    push = heapq.heappush
    node = node_id
    while dims[node] >= 0:
        diff = qt[dims[node]] - values[node]
        if diff < 0:
            push(heap, (-diff, tree_id, right[node]))
            node += 1
        else:
            push(heap, (diff, tree_id, node + 1))
            node = right[node]
    if check:
        scratch.add_leaf(forest.trees[tree_id].leaf_points(node))
        if flush:
            scratch.flush()
    return node


def search(forest: Forest, q, k=1, c_override=None, epsilon_override=None, scratch=None):
    """Approximate k nearest neighbours of ``q``, nearest first.

    Every tree is descended once without checking leaves, then queued nodes
    (the landing leaves first) are expanded in order of hyperplane distance
    until the leaf budget ``c / (1 + epsilon)`` is spent or the queue runs dry.
    """
    if forest is None or forest.m == 0:
        raise UsageError("cannot search an empty forest")
    if k < 1:
        raise UsageError(f"k must be >= 1, got {k}")
    c = forest.params.c if c_override is None else c_override
    eps = forest.params.epsilon if epsilon_override is None else epsilon_override
    budget = leaf_check_budget(c, eps)

    if scratch is None:
        scratch = QueryScratch(forest, k)
    scratch.reset(q, k)

    # The leaf a tree's first descent lands in sits on the query's side of
    # every hyperplane, so it is queued at key 0 and checked first.
    for tree_id in range(forest.m):
        leaf = descend(forest, tree_id, 0, scratch, False)
        scratch.queue.push(0.0, tree_id, leaf)

    heap = scratch.queue._heap
    pop = heapq.heappop
    checked = 0
    while heap and checked < budget:
        _, tree_id, node_id = pop(heap)
        descend(forest, tree_id, node_id, scratch, True, flush=False)
        checked += 1
    scratch.leaves_checked = checked
    scratch.flush()
    return scratch.results.neighbors()
