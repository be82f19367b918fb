"""Per-part label model fitted with the triplet method of moments.

Inside each part ``C_j`` a source's accuracy ``a_i = E[l_i y | l_i != 0]`` is
recovered from observable pairwise agreements: conditional independence
gives ``E[l_i l_k | both vote] = a_i a_k``, so any two other sources ``k, l``
yield ``|a_i| = sqrt(|M_ik M_il / M_kl|)``. Estimates from all usable pairs
are averaged and the positive root is taken.

Inference is Bayes' rule with conditionally independent sources::

    Pr(l_i = v | y, C_j) = (1 + v y a_i(C_j)) / 2 * cov_i(C_j)      (v != 0)

Abstaining sources contribute the same factor under both labels and drop
out; the normaliser is the model-implied mixture over ``y``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .data import EmbeddingDataset, EngineConfig, as_label_array, as_vote_array
from .errors import ArgumentError, FormatError, ShapeError
from .extend import extend_against
from .partition import Partition, kmeans_fit

BRUTE_FORCE_MAX_SOURCES = 10


@dataclass(frozen=True, eq=False)
class MomentTable:
    """Per-part pairwise agreement ``E[l_i l_k | l_i, l_k != 0, C_j]``.

    ``agreement[j, i, k]`` is NaN where the pair never co-votes in part ``j``;
    the diagonal holds each source's own coverage count and agreement 1.
    """

    agreement: np.ndarray
    overlap: np.ndarray

    @property
    def s(self) -> int:
        return self.agreement.shape[0]

    @property
    def m(self) -> int:
        return self.agreement.shape[1]

    def present(self, j: int, i: int, k: int) -> bool:
        return self.overlap[j, i, k] > 0


def pairwise_agreements(votes, part, s: Optional[int] = None) -> MomentTable:
    """Agreement moments for every part of ``part`` (a Partition or an assignment array)."""
    V = as_vote_array(votes)
    if isinstance(part, Partition):
        assignment, s = part.assignment, part.s
    else:
        assignment = np.asarray(part, dtype=np.int64)
        s = int(assignment.max()) + 1 if s is None else s
    if assignment.shape[0] != V.shape[0]:
        raise ShapeError(f"partition covers {assignment.shape[0]} points, votes have {V.shape[0]}")
    m = V.shape[1]
    agreement = np.full((s, m, m), np.nan)
    overlap = np.zeros((s, m, m), dtype=np.int64)
    Vf = V.astype(np.int64)
    for j in range(s):
        rows = Vf[assignment == j]
        nz = (rows != 0).astype(np.int64)
        cnt = nz.T @ nz
        tot = rows.T @ rows
        overlap[j] = cnt
        with np.errstate(invalid="ignore", divide="ignore"):
            agreement[j] = np.where(cnt > 0, tot / np.maximum(cnt, 1), np.nan)
    return MomentTable(agreement, overlap)


def clamp_accuracy(a: float, eps: float) -> float:
    """Keep ``a`` positive and the vote likelihood ``(1 + a) / 2`` at most ``1 - eps``."""
    return min(max(a, eps), 1.0 - 2.0 * eps)


def triplet_accuracy(moments: MomentTable, part: int, source: int, clamp: Optional[float] = 0.001):
    """Triplet estimate of ``a_source(C_part)``, or ``None`` when no pair is usable.

    A pair ``(k, l)`` is usable when all three agreements are observed and
    ``|M_kl| >= clamp``. With ``clamp=None`` nothing is clamped and every
    non-zero denominator is usable.
    """
    M = moments.agreement[part]
    present = moments.overlap[part] > 0
    floor = 0.0 if clamp is None else clamp
    others = [k for k in range(moments.m) if k != source]
    total = 0.0
    count = 0
    for k, l in itertools.combinations(others, 2):
        if not (present[source, k] and present[source, l] and present[k, l]):
            continue
        denom = M[k, l]
        if abs(denom) < floor or denom == 0.0:
            continue
        total += math.sqrt(abs(M[source, k] * M[source, l] / denom))
        count += 1
    if count == 0:
        return None
    est = total / count
    return est if clamp is None else clamp_accuracy(est, clamp)


@dataclass(frozen=True, eq=False)
class LabelModel:
    accuracies: np.ndarray
    coverages: np.ndarray
    class_balances: np.ndarray
    partition: Partition
    radii: np.ndarray
    clamp: float = 0.001
    seed: int = 0
    fallback: Optional[np.ndarray] = None
    # training support used to extend test votes; not persisted
    support_emb: Optional[EmbeddingDataset] = field(default=None, repr=False)
    support_votes: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def s(self) -> int:
        return self.accuracies.shape[0]

    @property
    def m(self) -> int:
        return self.accuracies.shape[1]

    def to_dict(self) -> dict:
        fb = self.fallback if self.fallback is not None else np.zeros((self.s, self.m), bool)
        return {
            "partition": self.partition.to_dict(),
            "accuracies": self.accuracies.tolist(),
            "coverages": self.coverages.tolist(),
            "class_balances": self.class_balances.tolist(),
            "radii": self.radii.tolist(),
            "clamp": self.clamp,
            "seed": self.seed,
            "fallback": fb.astype(bool).tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LabelModel":
        try:
            return cls(
                accuracies=np.asarray(doc["accuracies"], dtype=np.float64),
                coverages=np.asarray(doc["coverages"], dtype=np.float64),
                class_balances=np.asarray(doc["class_balances"], dtype=np.float64),
                partition=Partition.from_dict(doc["partition"]),
                radii=np.asarray(doc["radii"], dtype=np.float64),
                clamp=float(doc["clamp"]),
                seed=int(doc["seed"]),
                fallback=np.asarray(doc.get("fallback", []), dtype=bool).reshape(
                    len(doc["accuracies"]), -1
                ),
            )
        except KeyError as exc:
            raise FormatError(f"{exc.args[0]}: missing from model document") from None

    def with_support(self, emb: EmbeddingDataset, votes) -> "LabelModel":
        """Attach the training support needed to extend test-time votes."""
        return _replace(self, support_emb=emb, support_votes=np.asarray(as_vote_array(votes)))


def _replace(model: LabelModel, **kw) -> LabelModel:
    fields_ = {k: getattr(model, k) for k in model.__dataclass_fields__}
    fields_.update(kw)
    return LabelModel(**fields_)


def store_model(model: LabelModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict()) + "\n")


def load_model(path) -> LabelModel:
    return LabelModel.from_dict(json.loads(Path(path).read_text()))


def _class_balances(config, partition, s, dev_labels, dev_embeddings, n_train):
    mode = config.class_balance_mode
    if mode == "uniform":
        return np.full(s, 0.5)
    if mode == "explicit":
        bal = np.asarray(config.explicit_balances, dtype=np.float64)
        if bal.shape[0] != s:
            raise ArgumentError(f"explicit_balances: expected {s} values, got {bal.shape[0]}")
        return bal
    if dev_labels is None:
        raise ArgumentError(f"class_balance_mode={mode} requires dev labels")
    y = as_label_array(dev_labels)
    eps = config.accuracy_clamp
    if mode == "global_from_dev":
        p = float(np.count_nonzero(y == 1)) / y.shape[0]
        return np.full(s, min(max(p, eps), 1.0 - eps))
    # per_part_from_dev
    if dev_embeddings is not None:
        if dev_embeddings.n != y.shape[0]:
            raise ShapeError("dev labels and dev embeddings disagree on n")
        parts = partition.assign(dev_embeddings.points())
    else:
        if y.shape[0] != n_train:
            raise ShapeError("dev labels without dev embeddings must align with training points")
        parts = partition.assignment
    pos = np.bincount(parts[y == 1], minlength=s)
    cnt = np.bincount(parts, minlength=s)
    return (pos + 1.0) / (cnt + 2.0)


def fit(
    emb: EmbeddingDataset,
    votes,
    config: EngineConfig,
    dev_labels=None,
    dev_embeddings: Optional[EmbeddingDataset] = None,
    partition: Optional[Partition] = None,
    support_votes=None,
) -> LabelModel:
    """Fit per-part accuracies, coverages and class balances.

    ``votes`` are the (already extended) training votes. ``support_votes``
    are the raw votes that donate extensions at prediction time; they default
    to ``votes`` and matter only when some radius is positive.
    """
    V = np.asarray(as_vote_array(votes))
    n, m = V.shape
    if n != emb.n:
        raise ShapeError(f"votes: {n} rows but embeddings have {emb.n}")
    if m < 3:
        raise ArgumentError("triplet method needs three sources")
    radii = np.asarray(getattr(votes, "radii", config.radii_for(m)), dtype=np.float64)
    if partition is None:
        partition = kmeans_fit(emb, config.s, config.seed, config.kmeans_max_iters, config.kmeans_tol)
    elif partition.assignment.shape[0] != n:
        raise ShapeError("partition and votes disagree on n")
    s = partition.s
    sizes = partition.part_sizes
    if np.any(sizes == 0):
        raise RuntimeError("empty part after k-means repair")
    eps = config.accuracy_clamp

    moments = pairwise_agreements(V, partition)
    pooled = pairwise_agreements(V, np.zeros(n, dtype=np.int64), 1)
    pooled_acc = []
    for i in range(m):
        a = triplet_accuracy(pooled, 0, i, eps)
        pooled_acc.append(eps if a is None else a)

    acc = np.empty((s, m))
    fallback = np.zeros((s, m), dtype=bool)
    for j in range(s):
        for i in range(m):
            a = triplet_accuracy(moments, j, i, eps)
            if a is None:
                a = pooled_acc[i]
                fallback[j, i] = True
            acc[j, i] = a

    cov = np.empty((s, m))
    for j in range(s):
        cov[j] = np.count_nonzero(V[partition.assignment == j], axis=0) / sizes[j]

    bal = _class_balances(config, partition, s, dev_labels, dev_embeddings, n)
    sv = V if support_votes is None else np.asarray(as_vote_array(support_votes))
    return LabelModel(
        accuracies=acc,
        coverages=cov,
        class_balances=np.asarray(bal, dtype=np.float64),
        partition=partition,
        radii=radii,
        clamp=eps,
        seed=config.seed,
        fallback=fallback,
        support_emb=emb,
        support_votes=sv,
    )


def _posterior_rows(model: LabelModel, parts: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Posterior ``Pr(y = +1 | votes, C_j)`` for each row of extended votes ``V``."""
    b = model.class_balances[parts]
    pos = b.copy()
    neg = 1.0 - b
    for i in range(V.shape[1]):
        v = V[:, i].astype(np.float64)
        a = model.accuracies[parts, i]
        c = model.coverages[parts, i]
        # a zero coverage multiplies both branches alike; drop it rather than divide 0 by 0
        c = np.where(c > 0, c, 1.0)
        vote = v != 0
        pos = np.where(vote, pos * ((1.0 + v * a) / 2.0 * c), pos)
        neg = np.where(vote, neg * ((1.0 - v * a) / 2.0 * c), neg)
    total = pos + neg
    out = pos / np.where(total > 0, total, 1.0)
    bad = ~(total > 0) | ~np.isfinite(out)
    if np.any(bad):
        out[bad] = _posterior_log(model, parts[bad], V[bad])
    return out


def _posterior_log(model, parts, V):
    b = model.class_balances[parts]
    lp = np.log(b)
    ln = np.log1p(-b)
    for i in range(V.shape[1]):
        v = V[:, i].astype(np.float64)
        a = model.accuracies[parts, i]
        vote = v != 0
        lp = lp + np.where(vote, np.log((1.0 + v * a) / 2.0), 0.0)
        ln = ln + np.where(vote, np.log((1.0 - v * a) / 2.0), 0.0)
    return 1.0 / (1.0 + np.exp(ln - lp))


def posterior(model: LabelModel, point, votes_row) -> float:
    """``Pr(y = +1)`` for one point given its (extended) vote row."""
    from .partition import assign_part

    row = np.asarray(votes_row, dtype=np.int8).reshape(1, -1)
    if row.shape[1] != model.m:
        raise ShapeError(f"votes_row: expected {model.m} entries, got {row.shape[1]}")
    j = assign_part(model.partition, point)
    return float(_posterior_rows(model, np.array([j]), row)[0])


def posterior_in_part(model: LabelModel, part: int, votes_row) -> float:
    row = np.asarray(votes_row, dtype=np.int8).reshape(1, -1)
    return float(_posterior_rows(model, np.array([part]), row)[0])


def brute_force_posterior(model: LabelModel, part: int, votes_row) -> float:
    """Reference posterior from the explicit joint ``Pr(votes, y | C_part)``.

    Every source contributes a factor on both branches, including
    ``Pr(l_i = 0 | C) = 1 - cov_i`` for abstentions. A factor that is zero on
    both branches (abstaining at coverage 1, voting at coverage 0) would make
    the pattern impossible; it is taken in the limit, where it cancels.
    """
    m = model.m
    if m > BRUTE_FORCE_MAX_SOURCES:
        raise ArgumentError(f"brute force supports m <= {BRUTE_FORCE_MAX_SOURCES}, got {m}")
    row = [int(v) for v in votes_row]
    joint = {}
    for y in (1, -1):
        prior = model.class_balances[part] if y == 1 else 1.0 - model.class_balances[part]
        p = float(prior)
        for i, v in enumerate(row):
            a = float(model.accuracies[part, i])
            c = float(model.coverages[part, i])
            if v == 0:
                p *= (1.0 - c) if c < 1.0 else 1.0
            else:
                p *= (1.0 + (1 if v * y > 0 else -1) * a) / 2.0 * (c if c > 0.0 else 1.0)
        joint[y] = p
    return joint[1] / (joint[1] + joint[-1])


def empirical_normalizer_posterior(model: LabelModel, train_votes, parts, V) -> np.ndarray:
    """Diagnostic variant normalising by the empirical pattern frequency in each part.

    Not guaranteed to lie in [0, 1]; unseen patterns yield NaN. For comparison only.
    """
    T = np.asarray(as_vote_array(train_votes))
    assign = model.partition.assignment
    out = np.full(V.shape[0], np.nan)
    for r in range(V.shape[0]):
        j = parts[r]
        rows = T[assign == j]
        freq = np.count_nonzero(np.all(rows == V[r], axis=1)) / max(rows.shape[0], 1)
        if freq == 0:
            continue
        num = float(model.class_balances[j])
        for i, v in enumerate(V[r]):
            c = model.coverages[j, i]
            num *= (1.0 - c) if v == 0 else (1.0 + v * model.accuracies[j, i]) / 2.0 * c
        out[r] = num / freq
    return out


@dataclass(frozen=True)
class Predictions:
    posterior: np.ndarray
    label: np.ndarray
    part: np.ndarray
    abstains: np.ndarray
    votes: np.ndarray

    def to_csv(self) -> str:
        lines = ["id,part,posterior,label,abstains"]
        for i in range(self.posterior.shape[0]):
            lines.append(
                f"{i},{int(self.part[i])},{float(self.posterior[i])!r},"
                f"{int(self.label[i])},{int(self.abstains[i])}"
            )
        return "\n".join(lines) + "\n"


def hard_labels(post) -> np.ndarray:
    return np.where(np.asarray(post) >= 0.5, 1, -1).astype(np.int8)


def predict(
    model: LabelModel,
    emb_test: EmbeddingDataset,
    votes_test,
    support_emb: Optional[EmbeddingDataset] = None,
    support_votes=None,
    donors=None,
) -> Predictions:
    """Extend raw test votes against the training support, then infer.

    ``donors`` may carry a precomputed :class:`~liger.extend.DonorTable` for
    these test votes; it takes precedence over recomputing neighbours.
    """
    V = np.asarray(as_vote_array(votes_test))
    if V.ndim != 2 or V.shape[1] != model.m:
        raise ShapeError(f"votes: expected {model.m} columns, got shape {V.shape}")
    if V.shape[0] != emb_test.n:
        raise ShapeError(f"votes: {V.shape[0]} rows but embeddings have {emb_test.n}")
    if emb_test.d != model.partition.d:
        raise ShapeError(f"embeddings: dimension {emb_test.d}, model expects {model.partition.d}")
    if donors is not None:
        V = donors.extend(model.radii).votes
    elif np.any(model.radii > 0):
        s_emb = support_emb if support_emb is not None else model.support_emb
        s_votes = support_votes if support_votes is not None else model.support_votes
        if s_emb is None or s_votes is None:
            raise ArgumentError("model has positive radii; training embeddings and votes are required")
        V = extend_against(s_emb, s_votes, emb_test, V, model.radii).votes
    parts = model.partition.assign(emb_test.points())
    post = _posterior_rows(model, parts, V)
    return Predictions(
        posterior=post,
        label=hard_labels(post),
        part=parts,
        abstains=np.count_nonzero(V == 0, axis=1),
        votes=np.asarray(V),
    )


def summary(model: LabelModel) -> dict:
    return {
        "s": model.s,
        "part_sizes": model.partition.part_sizes.tolist(),
        "mean_accuracy": float(np.mean(model.accuracies)),
        "fallback_cells": int(np.count_nonzero(model.fallback)) if model.fallback is not None else 0,
    }
