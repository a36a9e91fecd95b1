"""Exact ground truth and accuracy/latency evaluation of a forest."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .build import Forest
from .core import Dataset, Neighbor, UsageError
from .search import QueryScratch, search

CSV_COLUMNS = (
    "dataset", "n", "d", "m", "t", "p", "c", "epsilon", "miss_pct", "approx_miss_pct",
    "build_s", "query_us_mean", "query_us_median", "leaf_checks_mean", "dist_comps_mean",
)

_ROW_BLOCK = 8192


class BruteForceResult(NamedTuple):
    neighbors: list
    nearest_ties: np.ndarray


def _exact_sq_dists(points, q, idx=None):
    rows = points if idx is None else points[idx]
    out = np.empty(rows.shape[0])
    for lo in range(0, rows.shape[0], _ROW_BLOCK):
        diff = rows[lo:lo + _ROW_BLOCK].astype(np.float64) - q
        out[lo:lo + _ROW_BLOCK] = np.einsum("ij,ij->i", diff, diff)
    return out


def _top_k(idx, dist, k):
    order = np.lexsort((idx, dist))[:k]
    return [Neighbor(int(idx[i]), float(dist[i])) for i in order]


def brute_force_knn(dataset: Dataset, q, k=1) -> BruteForceResult:
    """Exact k nearest neighbours by a full scan, plus every index tied for first."""
    if k < 1:
        raise UsageError(f"k must be >= 1, got {k}")
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (dataset.d,):
        raise UsageError(f"query must have length {dataset.d}")
    dist = _exact_sq_dists(dataset.points, q)
    ties = np.flatnonzero(dist == dist.min())
    return BruteForceResult(_top_k(np.arange(dataset.n), dist, k), ties)


@dataclass
class GroundTruth:
    nearest_sq_dist: np.ndarray
    nearest_ties: list
    topk_indices: np.ndarray = None
    topk_sq_dists: np.ndarray = None

    def __len__(self):
        return self.nearest_sq_dist.size

    def is_hit(self, i, index) -> bool:
        return bool(np.any(self.nearest_ties[i] == index))


def compute_ground_truth(dataset: Dataset, queries, k=1, block=256) -> GroundTruth:
    """Exact answers for many queries.

    A Gram-matrix pass shortlists candidates with a safety margin; the
    shortlist is then rescored with the direct formula, so distances and tie
    sets match ``brute_force_knn``.
    """
    queries = np.asarray(queries, dtype=np.float64)
    if queries.ndim != 2 or queries.shape[1] != dataset.d:
        raise UsageError(f"queries must be an (nq, {dataset.d}) array")
    X = dataset.points
    X64 = X.astype(np.float64)
    x_sq = dataset.sq_norms
    nq = queries.shape[0]
    nearest = np.empty(nq)
    ties = []
    top_idx = np.full((nq, k), -1, dtype=np.int64)
    top_dist = np.full((nq, k), np.inf)
    kk = min(k, dataset.n)
    for lo in range(0, nq, block):
        Q = queries[lo:lo + block]
        q_sq = np.einsum("ij,ij->i", Q, Q)
        approx = q_sq[:, None] + x_sq[None, :] - 2.0 * (Q @ X64.T)
        kth = np.partition(approx, kk - 1, axis=1)[:, kk - 1]
        margin = 1e-9 * (q_sq + x_sq.max()) + 1e-9
        for j in range(Q.shape[0]):
            cand = np.flatnonzero(approx[j] <= kth[j] + margin[j])
            dist = _exact_sq_dists(X, Q[j], cand)
            i = lo + j
            nearest[i] = dist.min()
            ties.append(cand[dist == nearest[i]])
            best = _top_k(cand, dist, kk)
            top_idx[i, :kk] = [nb.index for nb in best]
            top_dist[i, :kk] = [nb.sq_dist for nb in best]
    return GroundTruth(nearest, ties, top_idx, top_dist)


@dataclass
class EvalReport:
    miss_rate: float
    approx_miss_rate: float
    build_time: float
    mean_query_time: float
    median_query_time: float
    leaf_checks_mean: float
    distance_computations_mean: float
    recall_at_k: float = float("nan")
    n_queries: int = 0
    epsilon: float = 0.0
    c: int = 0
    params: dict = field(default_factory=dict)

    def csv_row(self, dataset_name, n, d):
        P = self.params
        return {
            "dataset": dataset_name, "n": n, "d": d,
            "m": P.get("m"), "t": P.get("t"), "p": P.get("p"), "c": self.c,
            "epsilon": self.epsilon,
            "miss_pct": round(self.miss_rate, 4),
            "approx_miss_pct": round(self.approx_miss_rate, 4),
            "build_s": round(self.build_time, 6),
            "query_us_mean": round(self.mean_query_time * 1e6, 3),
            "query_us_median": round(self.median_query_time * 1e6, 3),
            "leaf_checks_mean": round(self.leaf_checks_mean, 3),
            "dist_comps_mean": round(self.distance_computations_mean, 3),
        }


def evaluate(forest: Forest, queries, ground_truth: GroundTruth, k=1, epsilon=None, c=None,
             build_time=0.0, warmup=100) -> EvalReport:
    """Run every query through ``search`` and score the first reported neighbour.

    A miss is a first neighbour outside the exact tie set; an approximate
    miss is a miss whose distance also exceeds (1 + epsilon) times the exact
    nearest distance.  The first ``warmup`` queries are run once untimed.
    """
    queries = np.asarray(queries, dtype=np.float64)
    if queries.ndim != 2 or queries.shape[1] != forest.dataset.d:
        raise UsageError(f"queries must be an (nq, {forest.dataset.d}) array")
    if len(ground_truth) != queries.shape[0]:
        raise UsageError("ground truth does not cover the query set")
    eps = forest.params.epsilon if epsilon is None else float(epsilon)
    c = forest.params.c if c is None else int(c)
    scratch = QueryScratch(forest, k)
    for q in queries[:warmup]:
        search(forest, q, k, c, eps, scratch)

    points = forest.dataset.points
    nq = queries.shape[0]
    times = np.empty(nq)
    checks = np.empty(nq)
    comps = np.empty(nq)
    misses = approx_misses = 0
    recall_hits = 0
    for i, q in enumerate(queries):
        t0 = time.perf_counter()
        found = search(forest, q, k, c, eps, scratch)
        times[i] = time.perf_counter() - t0
        checks[i] = scratch.leaves_checked
        comps[i] = scratch.distance_computations
        if not found or not ground_truth.is_hit(i, found[0].index):
            misses += 1
            if not found:
                approx_misses += 1
            else:
                diff = points[found[0].index].astype(np.float64) - q
                if diff @ diff > (1.0 + eps) ** 2 * ground_truth.nearest_sq_dist[i]:
                    approx_misses += 1
        if ground_truth.topk_indices is not None:
            truth = ground_truth.topk_indices[i, :k]
            recall_hits += np.isin([nb.index for nb in found], truth[truth >= 0]).sum()

    recall = recall_hits / (nq * min(k, forest.dataset.n)) if ground_truth.topk_indices is not None else float("nan")
    return EvalReport(
        miss_rate=100.0 * misses / nq,
        approx_miss_rate=100.0 * approx_misses / nq,
        build_time=build_time,
        mean_query_time=float(times.mean()),
        median_query_time=float(np.median(times)),
        leaf_checks_mean=float(checks.mean()),
        distance_computations_mean=float(comps.mean()),
        recall_at_k=float(recall),
        n_queries=nq,
        epsilon=eps,
        c=c,
        params={k_: v for k_, v in asdict(forest.params).items() if k_ not in ("epsilon", "c")},
    )


def reports_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def reports_to_gnuplot(rows) -> str:
    """Whitespace-separated columns with a commented header, one row per line."""
    cols = [col for col in CSV_COLUMNS if col != "dataset"]
    lines = ["# " + " ".join(cols)]
    for row in rows:
        lines.append(" ".join(str(row[col]) for col in cols))
    return "\n".join(lines) + "\n"
