"""Empirical smoothness curves of an embedding space.

* label curve -- mean fraction of a point's neighbours with a different label;
* coverage curve -- same for each source's abstain indicator, averaged over sources;
* PL curve -- fraction of a source's support points that have an off-support,
  differently-labelled point within the neighbourhood, averaged over sources.

Neighbourhoods are either all other points within radius ``r`` or the ``k``
nearest other points (ties to the lower index). Points whose neighbourhood is
empty are left out of the averages.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .data import EmbeddingDataset, as_label_array, as_vote_array
from .errors import ArgumentError, ShapeError


@dataclass(frozen=True)
class NeighborhoodSpec:
    kind: str
    values: tuple

    def __post_init__(self):
        if self.kind not in ("radius", "knn"):
            raise ArgumentError(f"neighborhood kind must be 'radius' or 'knn', got {self.kind!r}")
        if len(self.values) == 0:
            raise ArgumentError("neighborhood grid is empty")
        if self.kind == "knn" and any(int(k) != k or k < 1 for k in self.values):
            raise ArgumentError("knn grid values must be positive integers")
        if self.kind == "radius" and any(not (r >= 0) for r in self.values):
            raise ArgumentError("radius grid values must be non-negative")

    @classmethod
    def radius(cls, values: Sequence[float]) -> "NeighborhoodSpec":
        return cls("radius", tuple(float(v) for v in values))

    @classmethod
    def knn(cls, values: Sequence[int]) -> "NeighborhoodSpec":
        return cls("knn", tuple(int(v) for v in values))


@dataclass(frozen=True)
class SmoothnessReport:
    spec: NeighborhoodSpec
    label_curve: Optional[np.ndarray]
    coverage_curve: Optional[np.ndarray]
    pl_curve: Optional[np.ndarray]

    def to_csv(self) -> str:
        def cell(curve, g):
            return "" if curve is None else repr(float(curve[g]))

        lines = ["grid_value,label_curve,coverage_curve,pl_curve"]
        for g, v in enumerate(self.spec.values):
            lines.append(
                f"{v!r},{cell(self.label_curve, g)},{cell(self.coverage_curve, g)},{cell(self.pl_curve, g)}"
            )
        return "\n".join(lines) + "\n"


def _as_spec(spec) -> NeighborhoodSpec:
    if isinstance(spec, NeighborhoodSpec):
        return spec
    return NeighborhoodSpec.radius(spec)


def _disagreement(emb: EmbeddingDataset, vals: np.ndarray, spec: NeighborhoodSpec) -> np.ndarray:
    """Per grid value and column: mean over points of the differing-neighbour fraction."""
    X = emb.points()
    cosine = emb.metric == "cosine"
    vals = np.ascontiguousarray(vals, dtype=np.int8)
    G = len(spec.values)
    out = np.zeros((G, vals.shape[1]))
    n = emb.n
    if n < 2:
        return out
    if spec.kind == "radius":
        grid = np.asarray(spec.values, dtype=np.float64)
        order = np.argsort(grid, kind="stable")
        nbr, diff = kernels.radius_counts(X, vals, np.ascontiguousarray(grid[order]), cosine)
        for pos, g in enumerate(order):
            has = nbr[:, pos] > 0
            if np.any(has):
                frac = diff[has, pos, :] / nbr[has, pos][:, None]
                out[g] = frac.mean(axis=0)
        return out
    kmax = min(max(spec.values), n - 1)
    nbrs = kernels.knn_indices(X, kmax, cosine)
    differ = vals[nbrs] != vals[:, None, :]  # n x kmax x c
    cum = np.cumsum(differ, axis=1)
    for g, k in enumerate(spec.values):
        k = min(k, kmax)
        out[g] = (cum[:, k - 1, :] / k).mean(axis=0)
    return out


def label_lipschitz_curve(emb: EmbeddingDataset, labels, spec) -> np.ndarray:
    spec = _as_spec(spec)
    y = as_label_array(labels)
    if y.shape[0] != emb.n:
        raise ShapeError(f"labels: {y.shape[0]} rows but embeddings have {emb.n}")
    return _disagreement(emb, y.reshape(-1, 1), spec)[:, 0]


def coverage_lipschitz_curve(emb: EmbeddingDataset, votes, spec) -> np.ndarray:
    spec = _as_spec(spec)
    V = as_vote_array(votes)
    if V.shape[0] != emb.n:
        raise ShapeError(f"votes: {V.shape[0]} rows but embeddings have {emb.n}")
    if V.shape[1] == 0:
        return np.zeros(len(spec.values))
    return _disagreement(emb, (V != 0), spec).mean(axis=1)


def local_pl_curve(emb: EmbeddingDataset, labels, votes, radius_grid) -> np.ndarray:
    """Probabilistic-Lipschitz curve; monotone non-decreasing in the radius by construction."""
    spec = _as_spec(radius_grid)
    y = np.ascontiguousarray(as_label_array(labels), dtype=np.int8)
    V = as_vote_array(votes)
    if y.shape[0] != emb.n or V.shape[0] != emb.n:
        raise ShapeError("labels, votes and embeddings disagree on n")
    support = np.ascontiguousarray(V != 0)
    has_support = support.any(axis=0)
    G = len(spec.values)
    if not np.any(has_support) or emb.n < 2:
        return np.zeros(G)
    X = emb.points()
    cosine = emb.metric == "cosine"
    per_source = np.zeros((G, support.shape[1]))
    if spec.kind == "radius":
        W = kernels.witness_distance(X, y, support, cosine)
        for g, r in enumerate(spec.values):
            hit = (W <= r) & support
            per_source[g] = hit.sum(axis=0) / np.maximum(support.sum(axis=0), 1)
    else:
        kmax = min(max(spec.values), emb.n - 1)
        nbrs = kernels.knn_indices(X, kmax, cosine)
        differ = y[nbrs] != y[:, None]  # n x kmax
        off = ~support[nbrs]  # n x kmax x m
        witness = np.cumsum(differ[:, :, None] & off, axis=1) > 0
        for g, k in enumerate(spec.values):
            hit = witness[:, min(k, kmax) - 1, :] & support
            per_source[g] = hit.sum(axis=0) / np.maximum(support.sum(axis=0), 1)
    return per_source[:, has_support].mean(axis=1)


def smoothness_report(emb: EmbeddingDataset, spec, labels=None, votes=None) -> SmoothnessReport:
    spec = _as_spec(spec)
    label_curve = label_lipschitz_curve(emb, labels, spec) if labels is not None else None
    cov_curve = coverage_lipschitz_curve(emb, votes, spec) if votes is not None else None
    pl = None
    if labels is not None and votes is not None:
        pl = local_pl_curve(emb, labels, votes, spec)
    return SmoothnessReport(spec, label_curve, cov_curve, pl)
