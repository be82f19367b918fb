"""Metrics, dev-set hyperparameter search, and the synthetic benchmark drivers."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import stats

from .data import EmbeddingDataset, EngineConfig, as_label_array, as_vote_array
from .errors import ArgumentError, ShapeError
from .extend import EXTENDED, donor_table
from .label_model import LabelModel, _posterior_rows, fit, predict
from .partition import kmeans_fit, partition_from_labels
from .synthetic import (
    CheckerboardTaskSpec,
    SyntheticModelSpec,
    checkerboard_task,
    conditional_tables,
    two_population_dataset,
)

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-12
STAGE2_MULTIPLIERS = (0.5, 0.75, 1.0, 1.25, 1.5)


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    f1: float
    cross_entropy: float
    n_evaluated: int

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "f1": self.f1,
            "cross_entropy": self.cross_entropy,
            "n_evaluated": self.n_evaluated,
        }


def compute_metrics(posteriors, labels) -> MetricsReport:
    p = np.asarray(posteriors, dtype=np.float64).reshape(-1)
    y = as_label_array(labels).reshape(-1)
    if p.shape[0] != y.shape[0]:
        raise ShapeError(f"posteriors: {p.shape[0]} values for {y.shape[0]} labels")
    if p.size and (np.any(p < 0) | np.any(p > 1) | np.any(~np.isfinite(p))):
        raise ArgumentError("posteriors must lie in [0, 1]")
    n = p.shape[0]
    if n == 0:
        return MetricsReport(0.0, 0.0, 0.0, 0)
    p_true = np.clip(np.where(y == 1, p, 1.0 - p), PROB_CLAMP, 1.0)
    ce = float(-np.mean(np.log(p_true)))
    pred = np.where(p >= 0.5, 1, -1)
    tp = int(np.count_nonzero((pred == 1) & (y == 1)))
    fp = int(np.count_nonzero((pred == 1) & (y == -1)))
    fn = int(np.count_nonzero((pred == -1) & (y == 1)))
    denom = 2 * tp + fp + fn
    f1 = 2 * tp / denom if denom else 0.0
    acc = float(np.count_nonzero(pred == y)) / n
    return MetricsReport(acc, float(f1), max(ce, 0.0), n)


def _metric_value(report: MetricsReport, name: str) -> float:
    if name == "f1":
        return report.f1
    if name == "accuracy":
        return report.accuracy
    raise ArgumentError(f"dev metric must be 'f1' or 'accuracy', got {name!r}")


# ---------------------------------------------------------------------------
# tuning

@dataclass(frozen=True)
class TuneResult:
    radii: tuple
    s: int
    dev_metric: float
    search_trace: tuple

    def as_dict(self) -> dict:
        return {
            "radii": list(self.radii),
            "s": self.s,
            "dev_metric": self.dev_metric,
            "search_trace": [dict(entry) for entry in self.search_trace],
        }


def evaluate_config(
    emb_train: EmbeddingDataset,
    votes_train,
    emb_dev: EmbeddingDataset,
    votes_dev,
    labels_dev,
    config: EngineConfig,
    radii,
    s: int,
    metric: str = "f1",
) -> float:
    """Dev metric of fit + predict with the given radii and part count."""
    cfg = config.replace(radii=tuple(float(r) for r in radii), s=int(s))
    V = as_vote_array(votes_train)
    ext = donor_table(emb_train, V).extend(cfg.radii)
    model = fit(emb_train, ext, cfg, dev_labels=labels_dev, dev_embeddings=emb_dev, support_votes=V)
    pred = predict(model, emb_dev, votes_dev)
    return _metric_value(compute_metrics(pred.posterior, labels_dev), metric)


class _Evaluator:
    """Caches nearest-donor tables and partitions across tuning candidates."""

    def __init__(self, emb_train, votes_train, emb_dev, votes_dev, labels_dev, config, metric):
        self.emb_train = emb_train
        self.V = np.asarray(as_vote_array(votes_train))
        self.emb_dev = emb_dev
        self.labels_dev = labels_dev
        self.config = config
        self.metric = metric
        self.train_table = donor_table(emb_train, self.V)
        self.dev_table = donor_table(emb_train, self.V, emb_dev, votes_dev)
        self._parts = {}

    def partition(self, s):
        if s not in self._parts:
            c = self.config
            self._parts[s] = kmeans_fit(self.emb_train, s, c.seed, c.kmeans_max_iters, c.kmeans_tol)
        return self._parts[s]

    def __call__(self, radii, s):
        cfg = self.config.replace(radii=tuple(float(r) for r in radii), s=int(s))
        ext = self.train_table.extend(cfg.radii)
        model = fit(
            self.emb_train, ext, cfg, dev_labels=self.labels_dev, dev_embeddings=self.emb_dev,
            partition=self.partition(s), support_votes=self.V,
        )
        pred = predict(model, self.emb_dev, self.dev_table.query_votes, donors=self.dev_table)
        return _metric_value(compute_metrics(pred.posterior, self.labels_dev), self.metric)


def tune(
    emb_train: EmbeddingDataset,
    votes_train,
    emb_dev: EmbeddingDataset,
    votes_dev,
    labels_dev,
    config: EngineConfig,
    r_grid: Sequence[float],
    s_max: int = 10,
    metric: str = "f1",
) -> TuneResult:
    """Three-stage dev-set search over radii and part count.

    1. one shared radius over ``r_grid`` with ``s = 1``;
    2. per-source multiplicative refinement around the shared optimum, sources
       visited by decreasing number of points they gain, strict improvements only;
    3. ``s`` from 1 to ``s_max`` with radii frozen.

    Sources with full training coverage are pinned to radius 0. Stage-2
    candidates outside ``[min(r_grid), max(r_grid)]`` are skipped. Ties keep
    the earlier (smaller) candidate.
    """
    if labels_dev is None:
        raise ArgumentError("tune requires dev labels")
    grid = sorted(float(r) for r in r_grid)
    if not grid:
        raise ArgumentError("r_grid is empty")
    if s_max < 1:
        raise ArgumentError("s_max must be >= 1")
    evaluate = _Evaluator(emb_train, votes_train, emb_dev, votes_dev, labels_dev, config, metric)
    V = evaluate.V
    m = V.shape[1]
    pinned = np.all(V != 0, axis=0)
    trace: List[dict] = []

    def shared(r):
        return tuple(0.0 if pinned[i] else r for i in range(m))

    # stage 1
    best_radii, best_val = None, -np.inf
    for r in grid:
        radii = shared(r)
        val = evaluate(radii, 1)
        trace.append({"stage": 1, "radii": list(radii), "s": 1, "metric": val})
        if val > best_val:
            best_radii, best_val = radii, val
    r_star = max(best_radii) if any(best_radii) else 0.0

    # stage 2
    gained = np.count_nonzero(evaluate.train_table.extend(best_radii).provenance == EXTENDED, axis=0)
    order = sorted(range(m), key=lambda i: (-gained[i], i))
    radii = list(best_radii)
    for i in order:
        if pinned[i] or r_star == 0.0:
            continue
        for mult in STAGE2_MULTIPLIERS:
            cand = list(radii)
            cand[i] = r_star * mult
            # refinement stays inside the span of the supplied grid
            if cand[i] == radii[i] or not grid[0] <= cand[i] <= grid[-1]:
                continue
            val = evaluate(tuple(cand), 1)
            trace.append({"stage": 2, "radii": cand, "s": 1, "metric": val})
            if val > best_val:
                radii, best_val = cand, val
    radii = tuple(radii)

    # stage 3; s = 1 with these radii was already evaluated above
    best_s = 1
    for s in range(2, min(s_max, emb_train.n) + 1):
        val = evaluate(radii, s)
        trace.append({"stage": 3, "radii": list(radii), "s": s, "metric": val})
        if val > best_val:
            best_s, best_val = s, val
    log.info("tuned radii=%s s=%d dev_metric=%.6f", radii, best_s, best_val)
    return TuneResult(radii, best_s, float(best_val), tuple(trace))


# ---------------------------------------------------------------------------
# bias-variance benchmark

def expected_cross_entropy(model: LabelModel, part: int, tables) -> float:
    """Exact ``E[-log P(y | votes)]`` under ``tables`` using the parameters of ``part``."""
    patterns, joint_pos, joint_neg = tables.pattern_joint()
    parts = np.full(patterns.shape[0], part, dtype=np.int64)
    post = _posterior_rows(model, parts, patterns)
    lp = np.log(np.clip(post, PROB_CLAMP, 1.0))
    ln = np.log(np.clip(1.0 - post, PROB_CLAMP, 1.0))
    return float(-(joint_pos @ lp + joint_neg @ ln))


def _population_groups(membership: np.ndarray, s: int) -> np.ndarray:
    if s == 1:
        return np.zeros(membership.shape[0], dtype=np.int64)
    if s % 2:
        raise ArgumentError(f"s={s}: population-aligned partitions need s = 1 or even s")
    per = s // 2
    groups = np.empty(membership.shape[0], dtype=np.int64)
    for p in (0, 1):
        idx = np.nonzero(membership == p)[0]
        for q, chunk in enumerate(np.array_split(idx, per)):
            groups[chunk] = p * per + q
    return groups


@dataclass(frozen=True)
class BiasVarianceResult:
    s_list: tuple
    mean: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    per_seed: np.ndarray

    def to_csv(self) -> str:
        lines = ["s,mean,ci_lo,ci_hi"]
        for k, s in enumerate(self.s_list):
            lines.append(f"{s},{float(self.mean[k])!r},{float(self.ci_lo[k])!r},{float(self.ci_hi[k])!r}")
        return "\n".join(lines) + "\n"


def mean_ci(values: np.ndarray, level: float = 0.95):
    """Mean and two-sided Student-t confidence interval along axis 0."""
    values = np.asarray(values, dtype=np.float64)
    k = values.shape[0]
    mean = values.mean(axis=0)
    if k < 2:
        return mean, mean.copy(), mean.copy()
    half = stats.t.ppf(0.5 + level / 2, k - 1) * values.std(axis=0, ddof=1) / np.sqrt(k)
    return mean, mean - half, mean + half


def bench_bias_variance(
    spec_a: SyntheticModelSpec,
    spec_b: SyntheticModelSpec,
    n_each: int = 1000,
    s_list: Sequence[int] = (1, 2, 4, 8),
    n_seeds: int = 10,
    seed: int = 0,
    clamp: float = 0.001,
) -> BiasVarianceResult:
    """Generalisation cross-entropy versus part count on a two-population mixture.

    Parts follow true population membership: ``s = 1`` pools everything,
    ``s = 2k`` splits each population into ``k`` equal chunks. The loss of each
    part is its exact expectation under its population's model, averaged
    with equal part weights (all parts hold equal mass).
    """
    s_list = tuple(int(s) for s in s_list)
    if list(s_list) != sorted(s_list):
        raise ArgumentError("s_list must be ascending")
    tables = (conditional_tables(spec_a), conditional_tables(spec_b))
    cfg = EngineConfig(seed=seed, s=1, accuracy_clamp=clamp)
    out = np.empty((n_seeds, len(s_list)))
    for k in range(n_seeds):
        bundle = two_population_dataset(spec_a, spec_b, n_each, seed + k)
        for c, s in enumerate(s_list):
            groups = _population_groups(bundle.membership, s)
            part = partition_from_labels(bundle.embeddings, groups, max(s, 1))
            model = fit(bundle.embeddings, bundle.votes, cfg.replace(s=part.s), partition=part)
            if s == 1:
                loss = 0.5 * (expected_cross_entropy(model, 0, tables[0])
                              + expected_cross_entropy(model, 0, tables[1]))
            else:
                per = s // 2
                loss = float(np.mean([
                    expected_cross_entropy(model, j, tables[j // per]) for j in range(s)
                ]))
            out[k, c] = loss
    mean, lo, hi = mean_ci(out)
    return BiasVarianceResult(s_list, mean, lo, hi, out)


# ---------------------------------------------------------------------------
# extension benchmark

@dataclass(frozen=True)
class ExtensionCurve:
    name: str
    radii: np.ndarray
    cross_entropy: np.ndarray
    baseline: float
    extended_accuracy: np.ndarray
    extended_count: np.ndarray

    @property
    def best_reduction(self) -> float:
        return float(self.baseline - np.min(self.cross_entropy))


@dataclass(frozen=True)
class ExtensionResult:
    curves: tuple

    def by_name(self) -> Dict[str, ExtensionCurve]:
        return {c.name: c for c in self.curves}

    def to_csv(self) -> str:
        lines = ["r,variant,cross_entropy"]
        for c in self.curves:
            for r, ce in zip(c.radii, c.cross_entropy):
                lines.append(f"{float(r)!r},{c.name},{float(ce)!r}")
        return "\n".join(lines) + "\n"


def bench_extension(
    variants: Dict[str, CheckerboardTaskSpec],
    r_grid: Sequence[float],
    source: int = 0,
    clamp: float = 0.001,
) -> ExtensionResult:
    """Held-out cross-entropy as one source's radius sweeps ``r_grid`` (``s = 1``).

    Each variant's training set is stream 0 of its task and the test set is
    stream 1; test votes are extended against the training support.
    """
    radii_grid = np.asarray(sorted(float(r) for r in r_grid))
    curves = []
    for name, spec in variants.items():
        train = checkerboard_task(spec, stream=0)
        test = checkerboard_task(spec, stream=1)
        m = train.votes.m
        if not 0 <= source < m:
            raise ArgumentError(f"source {source} out of range for m={m}")
        V = np.asarray(train.votes.votes)
        train_table = donor_table(train.embeddings, V)
        test_table = donor_table(train.embeddings, V, test.embeddings, test.votes)
        part = partition_from_labels(train.embeddings, np.zeros(train.embeddings.n, dtype=np.int64), 1)
        cfg = EngineConfig(seed=spec.seed, s=1, accuracy_clamp=clamp)

        def run(r):
            radii = np.zeros(m)
            radii[source] = r
            ext = train_table.extend(radii)
            model = fit(train.embeddings, ext, cfg.replace(radii=tuple(radii)), partition=part,
                        support_votes=V)
            post = predict(model, test.embeddings, test.votes, donors=test_table).posterior
            ce = compute_metrics(post, test.labels).cross_entropy
            hit = ext.provenance[:, source] == EXTENDED
            y = train.labels.labels
            acc = float(np.mean(ext.votes[hit, source] == y[hit])) if hit.any() else np.nan
            return ce, acc, int(hit.sum())

        baseline_model = fit(train.embeddings, V, cfg.replace(radii=(0.0,) * m), partition=part)
        baseline = compute_metrics(predict(baseline_model, test.embeddings, test.votes).posterior,
                                   test.labels).cross_entropy
        rows = [run(r) for r in radii_grid]
        curves.append(ExtensionCurve(
            name=name,
            radii=radii_grid,
            cross_entropy=np.array([r[0] for r in rows]),
            baseline=baseline,
            extended_accuracy=np.array([r[1] for r in rows]),
            extended_count=np.array([r[2] for r in rows]),
        ))
    return ExtensionResult(tuple(curves))


def default_radius_grid(stop: float = 0.1, step: float = 0.005) -> np.ndarray:
    """``0, step, ..., stop`` computed from integer multiples to avoid drift."""
    k = int(round(stop / step))
    return np.arange(k + 1) * step
