"""Binary index files.

Layout (all little-endian)::

    header   "GERF" u32 version, u32 n, d, m, t, p, c, u32 flags,
             f64 epsilon, u64 seed
    dims     t x u32  (split-dimension set, descending variance)
    per tree u64 tree_seed, u8 has_transform, [d x f64 u], u32 node_count,
             node_count tagged nodes in preorder:
               0x00 split: u32 dim, f32 value
               0x01 leaf:  u32 count, count x u32 point index

Preorder means a split's left child is the next node, so no child links are
stored.  The point matrix itself is not part of the file.
"""

from __future__ import annotations

import struct

import numpy as np

from .build import Forest, Tree
from .core import Dataset, ForestParams, FormatError, HouseholderTransform, UsageError

MAGIC = b"GERF"
FORMAT_VERSION = 1

FLAG_ROTATION = 1
FLAG_PERTURBATION = 2
FLAG_SHUFFLING = 4

_HEADER = struct.Struct("<4s8IdQ")
_TREE_HEAD = struct.Struct("<QB")
_U32 = struct.Struct("<I")
_SPLIT = struct.Struct("<BIf")
_LEAF = struct.Struct("<BI")
_TAG = struct.Struct("<B")
_SPLIT_BODY = struct.Struct("<If")
TAG_SPLIT = 0
TAG_LEAF = 1


def _flags(params):
    return (
        (FLAG_ROTATION if params.use_rotation else 0)
        | (FLAG_PERTURBATION if params.use_split_perturbation else 0)
        | (FLAG_SHUFFLING if params.use_shuffling else 0)
    )


def dumps(forest: Forest) -> bytes:
    P = forest.params
    n, d = forest.dataset.n, forest.dataset.d
    out = [
        _HEADER.pack(MAGIC, FORMAT_VERSION, n, d, P.m, P.t, P.p, P.c, _flags(P), P.epsilon, P.seed),
        np.asarray(forest.top_dims, dtype="<u4").tobytes(),
    ]
    for tree in forest.trees:
        out.append(_TREE_HEAD.pack(tree.tree_seed, tree.transform is not None))
        if tree.transform is not None:
            out.append(tree.transform.u.astype("<f8").tobytes())
        out.append(_U32.pack(tree.n_nodes))
        for i in range(tree.n_nodes):
            dim = int(tree.dims[i])
            if dim >= 0:
                out.append(_SPLIT.pack(TAG_SPLIT, dim, tree.values[i]))
            else:
                pts = tree.leaf_points(i)
                out.append(_LEAF.pack(TAG_LEAF, pts.size))
                out.append(pts.astype("<u4").tobytes())
    return b"".join(out)


def save_forest(forest: Forest, path):
    with open(path, "wb") as fh:
        fh.write(dumps(forest))


class _Reader:
    def __init__(self, buf):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, nbytes, what):
        if self.pos + nbytes > len(self.buf):
            raise FormatError(f"truncated index: expected {nbytes} bytes of {what}", offset=self.pos)
        chunk = self.buf[self.pos:self.pos + nbytes]
        self.pos += nbytes
        return chunk

    def unpack(self, st, what):
        return st.unpack(self.take(st.size, what))

    def array(self, dtype, count, what):
        dtype = np.dtype(dtype)
        return np.frombuffer(self.take(dtype.itemsize * count, what), dtype=dtype)


def _read_tree(r: _Reader, n, d, dim_set):
    tree_at = r.pos
    tree_seed, has_transform = r.unpack(_TREE_HEAD, "tree header")
    if has_transform not in (0, 1):
        raise FormatError(f"bad transform flag {has_transform}", offset=r.pos - 1)
    transform = None
    if has_transform:
        u_at = r.pos
        u = r.array("<f8", d, "Householder vector").astype(np.float64)
        try:
            transform = HouseholderTransform(u)
        except UsageError as exc:
            raise FormatError(str(exc), offset=u_at) from None
    (count,) = r.unpack(_U32, "node count")
    if count < 1:
        raise FormatError("tree has no nodes", offset=r.pos - 4)

    dims = np.full(count, -1, dtype=np.int32)
    values = np.zeros(count, dtype=np.float32)
    right = np.full(count, -1, dtype=np.int32)
    start = np.zeros(count, dtype=np.int64)
    stop = np.zeros(count, dtype=np.int64)
    leaves = []
    offset = 0
    # Stack of split nodes still waiting for their right child.
    open_splits = []
    for i in range(count):
        node_at = r.pos
        (tag,) = r.unpack(_TAG, "node tag")
        start[i] = offset
        if tag == TAG_SPLIT:
            dim, value = r.unpack(_SPLIT_BODY, "split node")
            if dim not in dim_set:
                raise FormatError(f"split dimension {dim} is not a split-set dimension", offset=node_at)
            dims[i] = dim
            values[i] = value
            open_splits.append([i, False])
            continue
        if tag != TAG_LEAF:
            raise FormatError(f"unknown node tag {tag}", offset=node_at)
        (size,) = r.unpack(_U32, "leaf size")
        if size < 1:
            raise FormatError("empty leaf", offset=node_at)
        pts = r.array("<u4", size, "leaf indices")
        if pts.max() >= n:
            raise FormatError(f"leaf index {int(pts.max())} out of range for n={n}", offset=node_at)
        leaves.append(pts)
        offset += size
        stop[i] = offset
        # Close finished subtrees; the next node is the right child of the
        # nearest split whose left subtree just ended.
        while open_splits and open_splits[-1][1]:
            j, _ = open_splits.pop()
            stop[j] = offset
        if open_splits:
            open_splits[-1][1] = True
            if i + 1 < count:
                right[open_splits[-1][0]] = i + 1
        elif i + 1 < count:
            raise FormatError("nodes after a complete tree", offset=r.pos)
    if open_splits:
        raise FormatError("tree ends inside an unfinished split", offset=r.pos)

    indices = np.concatenate(leaves).astype(np.int64)
    if indices.size != n or np.bincount(indices, minlength=n).max() != 1:
        raise FormatError("leaves do not partition the point set exactly once", offset=tree_at)
    return Tree(dims, values, right, start, stop, indices, transform, tree_seed)


def loads(buf, dataset: Dataset) -> Forest:
    r = _Reader(buf)
    magic, version, n, d, m, t, p, c, flags, eps, seed = r.unpack(_HEADER, "header")
    if magic != MAGIC:
        raise FormatError(f"bad magic {bytes(magic)!r}", offset=0)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}", offset=4)
    if dataset.n != n or dataset.d != d:
        raise UsageError(f"index was built for n={n}, d={d}; dataset has n={dataset.n}, d={dataset.d}")
    if flags & ~(FLAG_ROTATION | FLAG_PERTURBATION | FLAG_SHUFFLING):
        raise FormatError(f"unknown flag bits {flags:#x}", offset=32)
    try:
        params = ForestParams(
            m=m, t=t, p=p, c=c, epsilon=eps, seed=seed,
            use_rotation=bool(flags & FLAG_ROTATION),
            use_split_perturbation=bool(flags & FLAG_PERTURBATION),
            use_shuffling=bool(flags & FLAG_SHUFFLING),
        )
    except UsageError as exc:
        raise FormatError(f"invalid parameters in header: {exc}", offset=0) from None
    dims_at = r.pos
    top_dims = r.array("<u4", t, "split dimensions").astype(np.int64)
    if t and (top_dims.max() >= d or np.unique(top_dims).size != t):
        raise FormatError("invalid split-dimension set", offset=dims_at)
    dim_set = set(top_dims.tolist())
    trees = [_read_tree(r, n, d, dim_set) for _ in range(m)]
    if r.pos != len(r.buf):
        raise FormatError(f"{len(r.buf) - r.pos} trailing bytes", offset=r.pos)
    return Forest(trees, dataset, top_dims, params)


def load_forest(path, dataset: Dataset) -> Forest:
    with open(path, "rb") as fh:
        return loads(fh.read(), dataset)
