import re
import sys

import numpy as np
import pytest

from geraf.core import Dataset


def walk_tree(tree, n, p, top_dims, balanced):
    """Exhaustively validate one tree; returns the list of leaf index arrays.

    Recomputes the partition from the root by following child links rather
    than trusting start/stop bookkeeping.
    """
    dim_set = set(int(x) for x in top_dims)
    leaves = []
    seen_nodes = set()
    stack = [0]
    while stack:
        node = stack.pop()
        assert node not in seen_nodes, "node reached twice"
        seen_nodes.add(node)
        owned = tree.indices[tree.start[node]:tree.stop[node]]
        assert owned.size > 0
        if tree.dims[node] < 0:
            assert owned.size <= p
            leaves.append(owned)
            continue
        assert owned.size > p
        assert int(tree.dims[node]) in dim_set
        left, right = node + 1, int(tree.right[node])
        assert right > left
        assert tree.start[left] == tree.start[node]
        assert tree.stop[left] == tree.start[right]
        assert tree.stop[right] == tree.stop[node]
        n_left = tree.stop[left] - tree.start[left]
        n_right = tree.stop[right] - tree.start[right]
        if balanced:
            assert abs(n_left - n_right) <= 1
        stack.extend((right, left))
    assert seen_nodes == set(range(tree.n_nodes))
    allpts = np.concatenate(leaves)
    assert allpts.size == n
    assert np.array_equal(np.sort(allpts), np.arange(n))
    return leaves


def split_sides(tree, dataset):
    """(left coords, right coords, split value) for every split of an unrotated tree."""
    X = dataset.points
    for node in range(tree.n_nodes):
        dim = int(tree.dims[node])
        if dim < 0:
            continue
        r = int(tree.right[node])
        left = tree.indices[tree.start[node + 1]:tree.stop[node + 1]]
        right = tree.indices[tree.start[r]:tree.stop[r]]
        yield X[left, dim], X[right, dim], tree.values[node]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_dataset(rng):
    return Dataset(rng.standard_normal((300, 12)))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None:
        return
    lines = mod.summary_lines()
    reported = {int(line.split()[2].rstrip(":")) for line in lines}
    # criteria whose test died before reporting
    for rep in terminalreporter.stats.get("failed", []) + terminalreporter.stats.get("error", []):
        m = re.search(r"test_criterion_(\d+)", rep.nodeid)
        if m and int(m.group(1)) not in reported:
            lines.append(f"FAIL criterion {m.group(1)}: {rep.nodeid} failed before reporting")
            reported.add(int(m.group(1)))
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
