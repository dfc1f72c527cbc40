"""Exact l1/l2/l-inf distances, a ball-tree index, and a k-NN table cache.

Every distance in the package goes through :func:`pairwise`, so a given
(point, point) pair always yields the same double regardless of which caller
asks or how the work is batched. Ties in distance are broken by ascending
dataset index.
"""

from __future__ import annotations

import enum
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist

from .errors import FormatError, ParameterError


class Metric(str, enum.Enum):
    L1 = "l1"
    L2 = "l2"
    LINF = "linf"

    @classmethod
    def parse(cls, value) -> "Metric":
        if isinstance(value, Metric):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ParameterError(f"unknown metric {value!r}; expected one of l1, l2, linf") from None


_CDIST_NAME = {Metric.L1: "cityblock", Metric.L2: "euclidean", Metric.LINF: "chebyshev"}
_METRIC_CODE = {Metric.L1: 1, Metric.L2: 2, Metric.LINF: 3}


def pairwise(a, b, metric) -> np.ndarray:
    """Distance matrix between the rows of ``a`` and the rows of ``b``."""
    metric = Metric.parse(metric)
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise ParameterError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    return cdist(a, b, _CDIST_NAME[metric])


def distance(a, b, metric) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ParameterError(f"dimension mismatch: {a.size} vs {b.size}")
    return float(pairwise(a[None, :], b[None, :], metric)[0, 0])


def _exclude_mask(exclude, m: int) -> np.ndarray:
    mask = np.zeros(m, dtype=bool)
    if exclude is None:
        return mask
    if isinstance(exclude, np.ndarray) and exclude.dtype == bool:
        if exclude.shape != (m,):
            raise ParameterError("boolean exclude mask has the wrong length")
        return exclude.copy()
    idx = np.fromiter(exclude, dtype=np.intp) if not isinstance(exclude, np.ndarray) else exclude
    mask[np.asarray(idx, dtype=np.intp)] = True
    return mask


# --------------------------------------------------------------------------- ball tree


@dataclass
class _Node:
    pivot: np.ndarray
    radius: float
    start: int
    end: int
    left: int = -1
    right: int = -1

    @property
    def is_leaf(self):
        return self.left < 0


# pruning slack: a rounded triangle-inequality bound is loosened by this
# fraction of the magnitudes involved before it may discard a subtree
_SLACK = 1e-9


def _lower_bound(d_pivot: float, radius: float) -> float:
    return d_pivot - radius - _SLACK * (d_pivot + radius)


@dataclass
class MetricTree:
    """Ball tree over a fixed point set. Immutable after :func:`build`."""

    points: np.ndarray
    metric: Metric
    order: np.ndarray
    nodes: list = field(default_factory=list)
    leaf_size: int = 16

    @property
    def m(self) -> int:
        return self.points.shape[0]

    def leaf_indices(self):
        for node in self.nodes:
            if node.is_leaf:
                yield self.order[node.start:node.end]


def build(dataset, metric, leaf_size: int = 16) -> MetricTree:
    points = dataset.points if hasattr(dataset, "points") else np.atleast_2d(np.asarray(dataset, float))
    metric = Metric.parse(metric)
    if points.shape[0] < 1:
        raise ParameterError("cannot index an empty point set")
    tree = MetricTree(points=points, metric=metric, order=np.arange(points.shape[0]), leaf_size=leaf_size)
    _build_node(tree, 0, points.shape[0])
    return tree


def _build_node(tree: MetricTree, start: int, end: int) -> int:
    idx = tree.order[start:end]
    pts = tree.points[idx]
    pivot = pts.mean(axis=0)
    radius = float(pairwise(pivot[None, :], pts, tree.metric).max())
    node_id = len(tree.nodes)
    tree.nodes.append(_Node(pivot, radius, start, end))
    count = end - start
    if count <= tree.leaf_size:
        return node_id
    spread = pts.max(axis=0) - pts.min(axis=0)
    dim = int(np.argmax(spread))
    half = count // 2
    if spread[dim] > 0:
        # stable sort keeps the layout deterministic
        local = np.argsort(pts[:, dim], kind="stable")
        tree.order[start:end] = idx[local]
    left = _build_node(tree, start, start + half)
    right = _build_node(tree, start + half, end)
    tree.nodes[node_id].left = left
    tree.nodes[node_id].right = right
    return node_id


def knn(tree: MetricTree, query, k: int, exclude=None) -> list[tuple[int, float]]:
    """The ``k`` nearest non-excluded points, ascending by (distance, index)."""
    query = np.asarray(query, dtype=np.float64).ravel()
    if query.size != tree.points.shape[1]:
        raise ParameterError("query dimension does not match the index")
    mask = _exclude_mask(exclude, tree.m)
    available = tree.m - int(mask.sum())
    if k < 1 or k > available:
        raise ParameterError(f"k={k} outside [1, {available}] (non-excluded points)")

    best_d = np.empty(0)
    best_i = np.empty(0, dtype=np.intp)
    stack = [(0.0, 0)]
    while stack:
        lower, node_id = stack.pop()
        if best_d.size == k and lower > best_d[-1]:
            continue
        node = tree.nodes[node_id]
        if node.is_leaf:
            idx = tree.order[node.start:node.end]
            idx = idx[~mask[idx]]
            if idx.size == 0:
                continue
            d = pairwise(query[None, :], tree.points[idx], tree.metric)[0]
            all_d = np.concatenate([best_d, d])
            all_i = np.concatenate([best_i, idx])
            sel = np.lexsort((all_i, all_d))[:k]
            best_d, best_i = all_d[sel], all_i[sel]
            continue
        children = []
        for child_id in (node.left, node.right):
            child = tree.nodes[child_id]
            dc = pairwise(query[None, :], child.pivot[None, :], tree.metric)[0, 0]
            children.append((max(0.0, _lower_bound(dc, child.radius)), child_id))
        # push the farther child first so the nearer one is explored first
        children.sort(reverse=True)
        stack.extend(children)
    return [(int(i), float(d)) for i, d in zip(best_i, best_d)]


def range_count(tree: MetricTree, query, radius: float, exclude=None) -> tuple[int, list[int]]:
    """Non-excluded points within the closed ball of ``radius`` around ``query``."""
    if radius < 0:
        raise ParameterError("radius must be non-negative")
    query = np.asarray(query, dtype=np.float64).ravel()
    if query.size != tree.points.shape[1]:
        raise ParameterError("query dimension does not match the index")
    mask = _exclude_mask(exclude, tree.m)
    found = []
    stack = [0]
    while stack:
        node = tree.nodes[stack.pop()]
        dp = pairwise(query[None, :], node.pivot[None, :], tree.metric)[0, 0]
        if _lower_bound(dp, node.radius) > radius:
            continue
        if node.is_leaf:
            idx = tree.order[node.start:node.end]
            idx = idx[~mask[idx]]
            if idx.size:
                d = pairwise(query[None, :], tree.points[idx], tree.metric)[0]
                found.append(idx[d <= radius])
            continue
        stack.extend((node.left, node.right))
    hits = np.sort(np.concatenate(found)) if found else np.empty(0, dtype=np.intp)
    return int(hits.size), [int(i) for i in hits]


# --------------------------------------------------------------------------- k-NN tables


def knn_table(points, k: int, metric, exclude_self: bool = True, block: int = 512):
    """Exact ``k`` nearest neighbours of every point, by blocked brute force.

    Returns ``(indices, distances)``, both of shape ``(m, k)``, rows ascending
    by (distance, index). With ``exclude_self`` a point's own index is skipped;
    duplicates at distance zero still count.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    metric = Metric.parse(metric)
    m = points.shape[0]
    pool = m - 1 if exclude_self else m
    if k < 1 or k > pool:
        raise ParameterError(f"k={k} outside [1, {pool}]")
    out_i = np.empty((m, k), dtype=np.int64)
    out_d = np.empty((m, k), dtype=np.float64)
    for lo in range(0, m, block):
        hi = min(m, lo + block)
        d = pairwise(points[lo:hi], points, metric)
        if exclude_self:
            d[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        out_i[lo:hi], out_d[lo:hi] = _smallest_k(d, k)
    return out_i, out_d


def _smallest_k(d: np.ndarray, k: int):
    """Row-wise k smallest entries with ties broken by column index."""
    kth = np.partition(d, k - 1, axis=1)[:, k - 1]
    rows, cols = np.nonzero(d <= kth[:, None])
    vals = d[rows, cols]
    order = np.lexsort((cols, vals, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    counts = np.bincount(rows, minlength=d.shape[0])
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    take = (starts[:, None] + np.arange(k)[None, :]).ravel()
    return cols[take].reshape(-1, k), vals[take].reshape(-1, k)


_CACHE_MAGIC = b"KNNTBL01"
_HEADER = struct.Struct("<8sQQB")


def write_knn_cache(path, indices: np.ndarray, distances: np.ndarray, metric) -> None:
    """Binary layout: magic, m, k (uint64 LE), metric code (uint8), then
    ``m*k`` records of (int64 index, float64 distance), little-endian."""
    metric = Metric.parse(metric)
    m, k = indices.shape
    rec = np.empty((m, k), dtype=[("i", "<i8"), ("d", "<f8")])
    rec["i"] = indices
    rec["d"] = distances
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(_CACHE_MAGIC, m, k, _METRIC_CODE[metric]))
        fh.write(rec.tobytes())
    os.replace(tmp, path)


def read_knn_cache(path):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError("truncated k-NN cache header", offset=len(raw))
    magic, m, k, code = _HEADER.unpack_from(raw)
    if magic != _CACHE_MAGIC:
        raise FormatError("bad k-NN cache magic", offset=0)
    metric = {v: key for key, v in _METRIC_CODE.items()}.get(code)
    if metric is None:
        raise FormatError(f"unknown metric code {code}", offset=24)
    need = _HEADER.size + m * k * 16
    if len(raw) != need:
        raise FormatError(f"k-NN cache payload should end at {need}", offset=len(raw))
    rec = np.frombuffer(raw, dtype=[("i", "<i8"), ("d", "<f8")], offset=_HEADER.size).reshape(m, k)
    return rec["i"].astype(np.int64), rec["d"].astype(np.float64), metric


def cache_dir() -> Optional[Path]:
    value = os.environ.get("CONC_CACHE_DIR")
    return Path(value) if value else None


def cached_knn_table(dataset, k: int, metric, directory=None):
    """:func:`knn_table` (self excluded) memoised on disk by dataset content hash.

    With no directory (argument or ``CONC_CACHE_DIR``) this is a plain call.
    """
    metric = Metric.parse(metric)
    directory = Path(directory) if directory is not None else cache_dir()
    if directory is None:
        return knn_table(dataset.points, k, metric)
    path = directory / f"{dataset.content_hash()[:32]}-{metric.value}-k{k}.knn"
    if path.exists():
        idx, dist, cached_metric = read_knn_cache(path)
        if cached_metric == metric and idx.shape == (dataset.m, k):
            return idx, dist
    idx, dist = knn_table(dataset.points, k, metric)
    write_knn_cache(path, idx, dist, metric)
    return idx, dist

