import csv
import io

import numpy as np
import pytest

from geraf.bench import (
    CSV_COLUMNS,
    GroundTruth,
    brute_force_knn,
    compute_ground_truth,
    evaluate,
    reports_to_csv,
    reports_to_gnuplot,
)
from geraf.build import build_forest
from geraf.core import Dataset, ForestParams, UsageError


def test_brute_force_self_and_ties():
    ds = Dataset([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [5.0, 5.0]])
    res = brute_force_knn(ds, [1.0, 0.0], 2)
    assert res.neighbors[0] == (1, 0.0)
    # from (0, 1): origin at 1, (+-1, 0) both at 2
    assert brute_force_knn(ds, [0.0, 1.0], 1).nearest_ties.tolist() == [0]
    two = brute_force_knn(Dataset([[1.0, 0.0], [-1.0, 0.0]]), [0.0, 3.0], 1)
    assert sorted(two.nearest_ties.tolist()) == [0, 1]
    with pytest.raises(UsageError):
        brute_force_knn(ds, [0.0, 0.0], 0)


def test_ground_truth_matches_brute_force(rng):
    X = rng.integers(0, 4, (400, 6)).astype(float)  # many exact ties
    ds = Dataset(X)
    Q = rng.integers(0, 4, (60, 6)).astype(float) + 0.5 * rng.integers(0, 2, (60, 6))
    gt = compute_ground_truth(ds, Q, k=3, block=16)
    for i, q in enumerate(Q):
        bf = brute_force_knn(ds, q, 3)
        assert gt.nearest_sq_dist[i] == bf.neighbors[0].sq_dist
        assert sorted(gt.nearest_ties[i].tolist()) == sorted(bf.nearest_ties.tolist())
        assert gt.topk_indices[i].tolist() == [nb.index for nb in bf.neighbors]


def _forest(rng, n=400, d=8, **kw):
    ds = Dataset(rng.standard_normal((n, d)))
    return build_forest(ds, ForestParams(**{"m": 4, "t": 4, "p": 8, **kw}), n_jobs=1)


def test_self_queries_exact_mode_zero_miss(rng):
    forest = _forest(rng)
    Q = forest.dataset.points[:100].astype(np.float64)
    gt = compute_ground_truth(forest.dataset, Q)
    rep = evaluate(forest, Q, gt, c=forest.total_leaves, warmup=5)
    assert rep.miss_rate == 0.0 and rep.approx_miss_rate == 0.0
    assert rep.n_queries == 100


def test_one_wrong_answer_in_hundred(rng):
    forest = _forest(rng)
    Q = forest.dataset.points[:100].astype(np.float64)
    gt = compute_ground_truth(forest.dataset, Q)
    wrong = GroundTruth(gt.nearest_sq_dist.copy(), list(gt.nearest_ties))
    wrong.nearest_ties[7] = np.array([(7 + 1) % 400])
    rep = evaluate(forest, Q, wrong, c=forest.total_leaves, warmup=0)
    assert rep.miss_rate == 1.0


def test_approx_miss_never_exceeds_miss(rng):
    forest = _forest(rng, n=2000, d=20, t=8)
    Q = rng.standard_normal((200, 20))
    gt = compute_ground_truth(forest.dataset, Q)
    for eps in (0.0, 0.1, 0.5, 2.0):
        rep = evaluate(forest, Q, gt, epsilon=eps, c=4, warmup=0)
        assert 0 <= rep.approx_miss_rate <= rep.miss_rate <= 100
        assert rep.leaf_checks_mean <= 4


def test_evaluate_rejects_mismatch(rng):
    forest = _forest(rng)
    gt = compute_ground_truth(forest.dataset, np.zeros((3, 8)))
    with pytest.raises(UsageError):
        evaluate(forest, np.zeros((3, 9)), gt)
    with pytest.raises(UsageError):
        evaluate(forest, np.zeros((4, 8)), gt)


def test_report_tables(rng):
    forest = _forest(rng)
    Q = rng.standard_normal((20, 8))
    gt = compute_ground_truth(forest.dataset, Q, k=2)
    rows = [evaluate(forest, Q, gt, k=2, epsilon=e, warmup=0).csv_row("toy", 400, 8) for e in (0.0, 0.5)]
    parsed = list(csv.DictReader(io.StringIO(reports_to_csv(rows))))
    assert tuple(parsed[0].keys()) == CSV_COLUMNS
    assert [r["epsilon"] for r in parsed] == ["0.0", "0.5"]
    table = reports_to_gnuplot(rows).splitlines()
    assert table[0].startswith("# n d m")
    assert len(table) == 3 and len(table[1].split()) == len(CSV_COLUMNS) - 1
