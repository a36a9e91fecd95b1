"""Randomized k-d forests for approximate nearest neighbour search."""

from .autoconfig import ConfigInput, ConfigTable, configure
from .bench import EvalReport, GroundTruth, brute_force_knn, compute_ground_truth, evaluate
from .build import Forest, Tree, build_forest, build_tree, compute_variances, quickselect_median
from .core import (
    Dataset,
    ForestParams,
    FormatError,
    HouseholderTransform,
    Neighbor,
    UsageError,
    householder_apply,
    squared_distance,
    squared_distance_via_dot,
)
from .datasets import generate_klein_bottle, generate_sphere, load_bvecs, load_fvecs
from .estimator import GeRaFNeighbors
from .persist import load_forest, save_forest
from .search import leaf_check_budget, search

__version__ = "0.1.0"
