"""Vector-file I/O (fvecs, bvecs) and synthetic point sets."""

from __future__ import annotations

import os

import numpy as np

from .core import Dataset, FormatError, UsageError

SPHERE_NOISE = 0.1
KLEIN_NOISE = 0.05
KLEIN_MAJOR_RADIUS = 2.0
KLEIN_MINOR_RADIUS = 1.0


def _read_vecs(path, dtype):
    raw = np.fromfile(path, dtype=np.uint8)
    itemsize = np.dtype(dtype).itemsize
    if raw.size == 0:
        return np.empty((0, 0), dtype=dtype)
    if raw.size < 4:
        raise FormatError(f"{path}: truncated dimension header", offset=0)
    d = int(raw[:4].view("<i4")[0])
    if d < 1:
        raise FormatError(f"{path}: invalid dimension {d}", offset=0)
    record = 4 + d * itemsize
    if raw.size % record:
        n_full = raw.size // record
        raise FormatError(
            f"{path}: file size {raw.size} is not a multiple of the record size {record} (d={d})",
            offset=n_full * record,
        )
    records = raw.reshape(-1, record)
    dims = records[:, :4].copy().view("<i4").ravel()
    bad = np.flatnonzero(dims != d)
    if bad.size:
        i = int(bad[0])
        raise FormatError(f"{path}: record {i} has dimension {int(dims[i])}, expected {d}", offset=i * record)
    body = np.ascontiguousarray(records[:, 4:])
    return body.view(np.dtype(dtype).newbyteorder("<")).reshape(-1, d)


def read_fvecs(path):
    """Raw float32 matrix from an fvecs file; shape (0, 0) when empty."""
    return _read_vecs(path, np.float32).astype(np.float32, copy=False)


def read_bvecs(path):
    return _read_vecs(path, np.uint8)


def load_fvecs(path) -> Dataset:
    X = read_fvecs(path)
    if X.shape[0] == 0:
        raise UsageError(f"{path}: no vectors")
    return Dataset(X)


def load_bvecs(path) -> Dataset:
    X = read_bvecs(path)
    if X.shape[0] == 0:
        raise UsageError(f"{path}: no vectors")
    return Dataset(X.astype(np.float32))


def _write_vecs(path, X, dtype):
    X = np.asarray(X)
    if X.ndim != 2:
        raise UsageError("expected a 2-d array")
    n, d = X.shape
    header = np.full((n, 1), d, dtype="<i4").view(np.uint8)
    body = np.ascontiguousarray(X, dtype=np.dtype(dtype).newbyteorder("<")).view(np.uint8).reshape(n, -1)
    with open(path, "wb") as fh:
        fh.write(np.hstack((header, body)).tobytes())


def write_fvecs(path, X):
    if isinstance(X, Dataset):
        X = X.points
    _write_vecs(path, X, np.float32)


def write_bvecs(path, X):
    if isinstance(X, Dataset):
        X = X.points
    X = np.asarray(X)
    if X.size and (X.min() < 0 or X.max() > 255 or not np.array_equal(X, np.round(X))):
        raise UsageError("bvecs holds integers in [0, 255]")
    _write_vecs(path, X, np.uint8)


def load_vectors(path) -> Dataset:
    """Load by extension: ``.bvecs`` as bytes, anything else as fvecs."""
    if os.fspath(path).endswith(".bvecs"):
        return load_bvecs(path)
    return load_fvecs(path)


def sphere_points(n, d, rng: np.random.Generator, noise=SPHERE_NOISE):
    if n < 1 or d < 2:
        raise UsageError("sphere needs n >= 1 and d >= 2")
    g = rng.standard_normal((n, d))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    while np.any(norms == 0):
        zero = np.flatnonzero(norms[:, 0] == 0)
        g[zero] = rng.standard_normal((zero.size, d))
        norms = np.linalg.norm(g, axis=1, keepdims=True)
    X = g / norms
    if noise:
        X += rng.normal(0.0, noise, size=X.shape)
    return X


def generate_sphere(n, d, rng: np.random.Generator, noise=SPHERE_NOISE) -> Dataset:
    """Unit-sphere samples in R^d plus Gaussian noise on every coordinate."""
    return Dataset(sphere_points(n, d, rng, noise))


def klein_embedding(theta, phi, d, R=KLEIN_MAJOR_RADIUS, r=KLEIN_MINOR_RADIUS):
    """Klein bottle in R^4, zero-padded to R^d."""
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    X = np.zeros(theta.shape + (d,))
    ring = R + r * np.cos(phi)
    X[..., 0] = ring * np.cos(theta)
    X[..., 1] = ring * np.sin(theta)
    X[..., 2] = r * np.sin(phi) * np.cos(theta / 2)
    X[..., 3] = r * np.sin(phi) * np.sin(theta / 2)
    return X


def klein_points(n, d, rng: np.random.Generator, noise=KLEIN_NOISE):
    if n < 1:
        raise UsageError("n must be >= 1")
    if d < 4:
        raise UsageError(f"Klein bottle needs d >= 4, got {d}")
    theta = rng.uniform(0.0, 2 * np.pi, n)
    phi = rng.uniform(0.0, 2 * np.pi, n)
    X = klein_embedding(theta, phi, d)
    if noise:
        X += rng.normal(0.0, noise, size=X.shape)
    return X


def generate_klein_bottle(n, d, rng: np.random.Generator, noise=KLEIN_NOISE) -> Dataset:
    """Uniform-parameter Klein bottle samples plus Gaussian noise."""
    return Dataset(klein_points(n, d, rng, noise))


def sift_like_points(n, rng: np.random.Generator, d=128, n_clusters=256, latent=8, seed=None):
    """Byte-quantized, clustered descriptors shaped like SIFT vectors.

    Cluster centres and their sparse latent bases come from ``seed`` (or
    ``rng`` when seed is None), so queries drawn with another ``rng`` and the
    same seed share the clusters.  Normalize, clip at 0.2, renormalize and
    scale by 512, as SIFT extractors do.
    """
    if n < 1 or d < 1:
        raise UsageError("need n >= 1 and d >= 1")
    crng = rng if seed is None else np.random.default_rng(seed)
    C = crng.gamma(0.6, 1.0, (n_clusters, d))
    B = crng.gamma(0.6, 1.0, (n_clusters, latent, d)) * (crng.random((n_clusters, latent, d)) < 0.3)
    lab = rng.integers(n_clusters, size=n)
    z = np.abs(rng.standard_normal((n, latent)))
    X = C[lab] + rng.gamma(0.8, 1.0, (n, d))
    for lo in range(0, n, 8192):
        sl = slice(lo, lo + 8192)
        X[sl] += np.einsum("nl,nld->nd", z[sl], B[lab[sl]])
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    X = np.minimum(X, 0.2)
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    return np.minimum(np.floor(512 * X), 255).astype(np.uint8)


def generate_sift_like(n, d, rng: np.random.Generator, seed=0) -> Dataset:
    return Dataset(sift_like_points(n, rng, d=d, seed=seed))


GENERATORS = {"sphere": generate_sphere, "klein": generate_klein_bottle}


def synthetic_rngs(seed):
    """Independent streams for the base set and the query set of one seed."""
    base, queries = np.random.SeedSequence(int(seed)).spawn(2)
    return np.random.default_rng(base), np.random.default_rng(queries)
