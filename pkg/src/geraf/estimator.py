"""scikit-learn style front end."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .autoconfig import ConfigInput, configure
from .build import build_forest, compute_variances
from .core import Dataset, ForestParams
from .search import QueryScratch, search


class GeRaFNeighbors(BaseEstimator):
    """Approximate nearest neighbours with a randomized k-d forest.

    Any of ``n_trees``, ``n_split_dims``, ``leaf_size`` and ``max_checks``
    left as ``None`` is filled in by the automatic configuration from the
    training data and ``epsilon``.

    Parameters
    ----------
    n_neighbors : int
        Default number of neighbours for :meth:`kneighbors`.
    n_trees, n_split_dims, leaf_size, max_checks : int or None
        Forest size m, split-dimension count t, max points per leaf p and
        max leaf checks per query c.
    epsilon : float
        Approximation factor; the leaf budget becomes c / (1 + epsilon).
    rotation, split_perturbation, shuffling : bool
        Randomization factors applied per tree.
    random_state : int
        Master seed; the fitted forest is a pure function of it.
    n_jobs : int or None
        Worker processes for building trees.
    """

    def __init__(self, n_neighbors=1, *, n_trees=None, n_split_dims=None, leaf_size=None,
                 max_checks=None, epsilon=0.0, rotation=False, split_perturbation=False,
                 shuffling=True, random_state=0, n_jobs=None):
        self.n_neighbors = n_neighbors
        self.n_trees = n_trees
        self.n_split_dims = n_split_dims
        self.leaf_size = leaf_size
        self.max_checks = max_checks
        self.epsilon = epsilon
        self.rotation = rotation
        self.split_perturbation = split_perturbation
        self.shuffling = shuffling
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _resolve_params(self, n, variances) -> ForestParams:
        explicit = {
            "m": self.n_trees, "t": self.n_split_dims, "p": self.leaf_size, "c": self.max_checks,
        }
        auto = configure(ConfigInput.from_variances(n, variances, self.epsilon))
        chosen = {key: auto_val if explicit[key] is None else explicit[key]
                  for key, auto_val in (("m", auto.m), ("t", auto.t), ("p", auto.p), ("c", auto.c))}
        return ForestParams(
            **chosen,
            epsilon=self.epsilon,
            use_rotation=self.rotation,
            use_split_perturbation=self.split_perturbation,
            use_shuffling=self.shuffling,
            seed=self.random_state,
        )

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float32)
        dataset = Dataset(X)
        variances = compute_variances(dataset)
        self.params_ = self._resolve_params(dataset.n, variances)
        self.forest_ = build_forest(dataset, self.params_, n_jobs=self.n_jobs, variances=variances)
        self.n_features_in_ = dataset.d
        self.n_samples_fit_ = dataset.n
        return self

    def kneighbors(self, X, n_neighbors=None, return_distance=True):
        """Neighbour indices (and Euclidean distances) for each row of ``X``.

        Rows that reach fewer than ``n_neighbors`` points within the leaf
        budget are padded with index -1 and distance inf.
        """
        check_is_fitted(self, "forest_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        k = self.n_neighbors if n_neighbors is None else n_neighbors
        ind = np.full((X.shape[0], k), -1, dtype=np.int64)
        dist = np.full((X.shape[0], k), np.inf)
        scratch = QueryScratch(self.forest_, k)
        for i, q in enumerate(X):
            found = search(self.forest_, q, k, scratch=scratch)
            ind[i, :len(found)] = [nb.index for nb in found]
            dist[i, :len(found)] = np.sqrt([nb.sq_dist for nb in found])
        return (dist, ind) if return_distance else ind
