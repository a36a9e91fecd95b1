import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from geraf.estimator import GeRaFNeighbors


def test_get_params_and_clone():
    est = GeRaFNeighbors(3, n_trees=4, epsilon=0.5, rotation=True)
    params = est.get_params()
    assert params["n_neighbors"] == 3 and params["n_trees"] == 4 and params["rotation"] is True
    assert clone(est).get_params() == params
    est.set_params(leaf_size=8)
    assert est.leaf_size == 8


def test_fit_kneighbors_exact(rng):
    X = rng.standard_normal((500, 12))
    est = GeRaFNeighbors(4, max_checks=10_000, random_state=3).fit(X)
    assert est.n_features_in_ == 12
    Q = rng.standard_normal((10, 12))
    dist, ind = est.kneighbors(Q)
    assert dist.shape == ind.shape == (10, 4)
    for q, row, drow in zip(Q, ind, dist):
        exact = np.argsort(((X.astype(np.float32) - q) ** 2).sum(1), kind="stable")[:4]
        assert set(row) == set(exact)
        np.testing.assert_allclose(drow, np.linalg.norm(X[row].astype(np.float32) - q, axis=1), rtol=1e-5)
    assert est.kneighbors(Q, 2, return_distance=False).shape == (10, 2)


def test_auto_fills_unset_params(rng):
    est = GeRaFNeighbors(n_trees=2).fit(rng.standard_normal((300, 6)))
    assert est.params_.m == 2
    assert est.params_.t <= 6 and est.params_.p >= 1


def test_padding_when_fewer_points(rng):
    est = GeRaFNeighbors(n_trees=1).fit(rng.standard_normal((3, 2)))
    dist, ind = est.kneighbors(np.zeros((1, 2)), 5)
    assert (ind[0, 3:] == -1).all() and np.isinf(dist[0, 3:]).all()


def test_errors(rng):
    with pytest.raises(NotFittedError):
        GeRaFNeighbors().kneighbors(np.zeros((1, 3)))
    est = GeRaFNeighbors().fit(rng.standard_normal((50, 3)))
    with pytest.raises(ValueError):
        est.kneighbors(np.zeros((1, 4)))
    with pytest.raises(ValueError):
        GeRaFNeighbors().fit(np.array([[np.nan, 1.0]]))
