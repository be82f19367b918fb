"""k-means partitioning of the embedding space.

Clustering always runs in squared-euclidean space. Under the cosine metric the
rows are first normalised to unit length (spherical k-means); there
``1 - cos`` is a monotone function of euclidean distance, so nearest-centroid
assignment is the same under either reading.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import kernels
from .data import EmbeddingDataset
from .errors import ArgumentError, FormatError, ShapeError


@dataclass(frozen=True, eq=False)
class Partition:
    centroids: np.ndarray
    assignment: np.ndarray
    metric: str = "euclidean"
    objective_history: tuple = field(default=(), compare=False)

    def __post_init__(self):
        c = np.ascontiguousarray(self.centroids, dtype=np.float64)
        a = np.ascontiguousarray(self.assignment, dtype=np.int64)
        if c.ndim != 2:
            raise ShapeError("centroids must be 2-D")
        if a.size and (a.min() < 0 or a.max() >= c.shape[0]):
            raise ShapeError("assignment: part index out of range")
        c.setflags(write=False)
        a.setflags(write=False)
        object.__setattr__(self, "centroids", c)
        object.__setattr__(self, "assignment", a)

    @property
    def s(self) -> int:
        return self.centroids.shape[0]

    @property
    def d(self) -> int:
        return self.centroids.shape[1]

    @property
    def part_sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.s)

    def assign(self, points) -> np.ndarray:
        """Part index of each row of ``points`` (already in distance space)."""
        pts = np.ascontiguousarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != self.d:
            raise ShapeError(f"points: expected dimension {self.d}, got shape {pts.shape}")
        labels, _ = kernels.assign_nearest(pts, self.centroids)
        return labels

    def to_dict(self) -> dict:
        return {
            "s": self.s,
            "metric": self.metric,
            "centroids": self.centroids.tolist(),
            "assignment": self.assignment.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Partition":
        try:
            centroids = np.asarray(doc["centroids"], dtype=np.float64)
            part = cls(centroids, np.asarray(doc["assignment"], dtype=np.int64), doc["metric"])
        except KeyError as exc:
            raise FormatError(f"{exc.args[0]}: missing from partition document") from None
        if part.s != int(doc["s"]):
            raise FormatError(f"s: document says {doc['s']} but has {part.s} centroids")
        return part


def store_partition(part: Partition, path) -> None:
    Path(path).write_text(json.dumps(part.to_dict()) + "\n")


def load_partition(path) -> Partition:
    return Partition.from_dict(json.loads(Path(path).read_text()))


def _kmeans_pp(X: np.ndarray, s: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    closest = np.sum((X - X[chosen[0]]) ** 2, axis=1)
    for _ in range(1, s):
        total = closest.sum()
        if total <= 0:
            # every remaining point coincides with a centre; take the lowest unused index
            unused = np.setdiff1d(np.arange(n), chosen)
            nxt = int(unused[0])
        else:
            u = rng.random() * total
            nxt = int(np.searchsorted(np.cumsum(closest), u, side="right"))
            nxt = min(nxt, n - 1)
        chosen.append(nxt)
        closest = np.minimum(closest, np.sum((X - X[nxt]) ** 2, axis=1))
    return X[chosen].copy()


def _repair_empty(X, centroids, labels, sq):
    """Move the point farthest from its centroid into each empty cluster.

    The last return value tells whether anything moved.
    """
    s = centroids.shape[0]
    counts = np.bincount(labels, minlength=s)
    if np.all(counts > 0):
        return centroids, labels, sq, False
    taken = set()
    for j in np.nonzero(counts == 0)[0]:
        order = np.argsort(-sq, kind="stable")
        for i in order:
            if counts[labels[i]] > 1 and i not in taken:
                break
        else:  # pragma: no cover - impossible when s <= n
            raise RuntimeError("cannot repair empty cluster")
        counts[labels[i]] -= 1
        counts[j] += 1
        labels[i] = j
        sq[i] = 0.0
        centroids[j] = X[i]
        taken.add(int(i))
    return centroids, labels, sq, True


def lloyd(X: np.ndarray, init: np.ndarray, max_iters: int = 100, tol: float = 1e-6):
    """Run Lloyd iterations from ``init``.

    Stops when the Frobenius norm of the centroid update falls below
    ``tol`` times the norm of the previous centroids, or after ``max_iters``
    updates. Returns ``(centroids, labels, objective_history)``.
    """
    centroids = np.array(init, dtype=np.float64)
    s = centroids.shape[0]
    labels, sq = kernels.assign_nearest(X, centroids)
    centroids, labels, sq, _ = _repair_empty(X, centroids, labels, sq)
    history = [float(sq.sum())]
    for _ in range(max_iters):
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, X)
        counts = np.bincount(labels, minlength=s)
        new = sums / counts[:, None]
        shift = np.linalg.norm(new - centroids)
        scale = max(np.linalg.norm(centroids), np.finfo(float).tiny)
        centroids = new
        labels, sq = kernels.assign_nearest(X, centroids)
        centroids, labels, sq, repaired = _repair_empty(X, centroids, labels, sq)
        history.append(float(sq.sum()))
        # a repair moves a centroid after assignment, so run another update
        if shift < tol * scale and not repaired:
            break
    return centroids, labels, tuple(history)


def kmeans_fit(
    emb: EmbeddingDataset,
    s: int,
    seed: int,
    max_iters: int = 100,
    tol: float = 1e-6,
) -> Partition:
    """k-means++ seeded Lloyd clustering of ``emb`` into ``s`` non-empty parts."""
    if s < 1:
        raise ArgumentError(f"s: must be >= 1, got {s}")
    if s > emb.n:
        raise ArgumentError(f"s: {s} parts requested for {emb.n} points")
    X = emb.points()
    rng = np.random.default_rng(seed)
    init = _kmeans_pp(X, s, rng)
    centroids, labels, hist = lloyd(X, init, max_iters, tol)
    return Partition(centroids, labels, emb.metric, hist)


def partition_from_labels(emb: EmbeddingDataset, groups, s: Optional[int] = None) -> Partition:
    """Partition with a given assignment; centroids are the per-part means."""
    groups = np.asarray(groups, dtype=np.int64)
    if groups.shape[0] != emb.n:
        raise ShapeError(f"groups: expected {emb.n} entries, got {groups.shape[0]}")
    s = int(groups.max()) + 1 if s is None else s
    X = emb.points()
    sums = np.zeros((s, emb.d))
    np.add.at(sums, groups, X)
    counts = np.bincount(groups, minlength=s)
    if np.any(counts == 0):
        raise ArgumentError("groups: every part must be non-empty")
    return Partition(sums / counts[:, None], groups, emb.metric)


def assign_part(part: Partition, point) -> int:
    """Index of the centroid nearest to ``point`` (raw embedding coordinates)."""
    p = np.asarray(point, dtype=np.float64).reshape(-1)
    if p.shape[0] != part.d:
        raise ShapeError(f"point: expected dimension {part.d}, got {p.shape[0]}")
    if part.metric == "cosine":
        p = p / np.linalg.norm(p)
    return int(part.assign(p[None, :])[0])


def part_diameters(emb: EmbeddingDataset, part: Partition):
    """Exact per-part diameters and their mass-weighted mean ``(diams, average)``."""
    if part.assignment.shape[0] != emb.n:
        raise ShapeError("partition and embeddings disagree on n")
    X = emb.points()
    cosine = emb.metric == "cosine"
    diams = np.zeros(part.s)
    for j in range(part.s):
        rows = np.ascontiguousarray(X[part.assignment == j])
        if rows.shape[0] > 1:
            diams[j] = kernels.max_pairwise_distance(rows, cosine)
    weights = part.part_sizes / emb.n
    return diams, float(np.dot(weights, diams))
