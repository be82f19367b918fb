"""Nearest-neighbour extension of weak sources into regions where they abstain.

An abstained point inherits the vote of the closest point the source *did*
vote on, provided that point lies within the source's radius. Only original
votes act as donors: extensions never chain.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import kernels
from .data import EmbeddingDataset, VoteMatrix, as_vote_array, format_votes
from .errors import ArgumentError, ShapeError

ABSTAIN, ORIGINAL, EXTENDED = 0, 1, 2
_PROV_CHARS = {ABSTAIN: "A", ORIGINAL: "O", EXTENDED: "E"}


@dataclass(frozen=True, eq=False)
class ExtendedVoteMatrix:
    votes: np.ndarray
    provenance: np.ndarray
    radii: np.ndarray

    def __post_init__(self):
        for name in ("votes", "provenance", "radii"):
            arr = np.ascontiguousarray(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.votes.shape[0]

    @property
    def m(self) -> int:
        return self.votes.shape[1]

    def as_vote_matrix(self) -> VoteMatrix:
        return VoteMatrix(self.votes)


@dataclass(frozen=True)
class CoverageDelta:
    before: float
    after: float
    delta: float
    per_source_before: np.ndarray
    per_source_after: np.ndarray


@dataclass(frozen=True, eq=False)
class DonorTable:
    """Nearest original donor of every abstained (point, source) entry.

    Distances do not depend on the radius, so one table serves a whole radius
    sweep. ``donor_vote`` is 0 and ``donor_dist`` is ``inf`` where the entry
    already votes or the source has no support.
    """

    query_votes: np.ndarray
    donor_vote: np.ndarray
    donor_dist: np.ndarray
    donor_index: np.ndarray

    def extend(self, radii) -> "ExtendedVoteMatrix":
        radii = np.asarray(radii, dtype=np.float64).reshape(-1)
        V = self.query_votes
        if radii.shape[0] != V.shape[1]:
            raise ShapeError(f"radii: expected {V.shape[1]} values, got {radii.shape[0]}")
        if np.any(~(radii >= 0)):
            raise ArgumentError("radii: every radius must be non-negative")
        # r = 0 never extends, even onto duplicate embeddings at distance 0
        hit = (V == 0) & (self.donor_vote != 0) & (self.donor_dist <= radii) & (radii > 0)
        out = np.where(hit, self.donor_vote, V).astype(np.int8)
        prov = np.where(V != 0, ORIGINAL, np.where(hit, EXTENDED, ABSTAIN)).astype(np.int8)
        return ExtendedVoteMatrix(out, prov, radii.copy())


def donor_table(support_emb: EmbeddingDataset, support_votes, query_emb=None, query_votes=None):
    """Build a :class:`DonorTable`; query defaults to the support set itself."""
    S_votes = as_vote_array(support_votes).astype(np.int8)
    if query_emb is None:
        query_emb, Q_votes = support_emb, S_votes
    else:
        Q_votes = as_vote_array(query_votes).astype(np.int8)
    if S_votes.shape[0] != support_emb.n or Q_votes.shape[0] != query_emb.n:
        raise ShapeError("votes and embeddings disagree on n")
    if Q_votes.shape[1] != S_votes.shape[1]:
        raise ShapeError(f"query votes have m={Q_votes.shape[1]}, support has m={S_votes.shape[1]}")
    if query_emb.d != support_emb.d:
        raise ShapeError(f"embedding dimension {query_emb.d} != training dimension {support_emb.d}")
    Xs = support_emb.points()
    Xq = Xs if query_emb is support_emb else query_emb.points()
    cosine = support_emb.metric == "cosine"
    n, m = Q_votes.shape
    dvote = np.zeros((n, m), dtype=np.int8)
    ddist = np.full((n, m), np.inf)
    didx = np.full((n, m), -1, dtype=np.int64)
    for i in range(m):
        donors = np.nonzero(S_votes[:, i] != 0)[0]
        targets = np.nonzero(Q_votes[:, i] == 0)[0]
        if donors.size == 0 or targets.size == 0:
            continue
        # targets abstain and donors vote, so a point is never its own donor
        exclude = np.full(targets.size, -1, dtype=np.int64)
        idx, dist = kernels.nearest_in_support(
            np.ascontiguousarray(Xq[targets]), np.ascontiguousarray(Xs[donors]), exclude, cosine
        )
        ok = idx >= 0
        didx[targets[ok], i] = donors[idx[ok]]
        ddist[targets[ok], i] = dist[ok]
        dvote[targets[ok], i] = S_votes[donors[idx[ok]], i]
    return DonorTable(Q_votes, dvote, ddist, didx)


def nearest_covered_neighbor(emb: EmbeddingDataset, votes, source: int, point: int):
    """Closest other point on which ``source`` votes: ``(index, distance)`` or ``None``."""
    V = as_vote_array(votes)
    if not 0 <= source < V.shape[1]:
        raise ArgumentError(f"source: {source} out of range for m={V.shape[1]}")
    donors = np.nonzero(V[:, source] != 0)[0]
    X = emb.points()
    S = np.ascontiguousarray(X[donors])
    hit = np.nonzero(donors == point)[0]
    exclude = np.array([hit[0] if hit.size else -1], dtype=np.int64)
    idx, dist = kernels.nearest_in_support(
        np.ascontiguousarray(X[point : point + 1]), S, exclude, emb.metric == "cosine"
    )
    if idx[0] < 0:
        return None
    return int(donors[idx[0]]), float(dist[0])


def extend_source(emb: EmbeddingDataset, votes, source: int, r: float):
    """Extended column for one source: ``(votes, provenance)`` arrays of length n."""
    if not r >= 0:
        raise ArgumentError(f"r: must be non-negative, got {r}")
    V = as_vote_array(votes)
    if not 0 <= source < V.shape[1]:
        raise ArgumentError(f"source: {source} out of range for m={V.shape[1]}")
    ext = donor_table(emb, V[:, source : source + 1]).extend([r])
    return ext.votes[:, 0].copy(), ext.provenance[:, 0].copy()


def extend_all(emb: EmbeddingDataset, votes, radii) -> ExtendedVoteMatrix:
    V = as_vote_array(votes)
    radii = np.asarray(radii, dtype=np.float64).reshape(-1)
    if radii.shape[0] != V.shape[1]:
        raise ShapeError(f"radii: expected {V.shape[1]} values, got {radii.shape[0]}")
    return donor_table(emb, V).extend(radii)


def extend_against(support_emb, support_votes, query_emb, query_votes, radii) -> ExtendedVoteMatrix:
    """Extend ``query_votes`` using donors from the *training* votes ``support_votes``."""
    return donor_table(support_emb, support_votes, query_emb, query_votes).extend(radii)


def coverage_delta(before, after) -> CoverageDelta:
    B = as_vote_array(before)
    A = as_vote_array(after)
    if B.shape != A.shape:
        raise ShapeError(f"before has shape {B.shape}, after has {A.shape}")
    n = B.shape[0]
    if n == 0:
        z = np.zeros(B.shape[1])
        return CoverageDelta(0.0, 0.0, 0.0, z, z)
    cb = np.count_nonzero(np.any(B != 0, axis=1)) / n
    ca = np.count_nonzero(np.any(A != 0, axis=1)) / n
    return CoverageDelta(
        before=cb,
        after=ca,
        delta=ca - cb,
        per_source_before=np.count_nonzero(B, axis=0) / n,
        per_source_after=np.count_nonzero(A, axis=0) / n,
    )


def store_extended(ext: ExtendedVoteMatrix, path, provenance_path: Optional[str] = None) -> Path:
    """Write votes CSV at ``path`` and the O/E/A provenance CSV beside it."""
    path = Path(path)
    path.write_text(format_votes(ext.votes))
    prov_path = Path(provenance_path) if provenance_path else path.with_suffix(".provenance.csv")
    lines = [",".join(["id"] + [f"lf_{i}" for i in range(ext.m)])]
    for k, row in enumerate(ext.provenance):
        lines.append(",".join([str(k)] + [_PROV_CHARS[int(c)] for c in row]))
    prov_path.write_text("\n".join(lines) + "\n")
    return prov_path
