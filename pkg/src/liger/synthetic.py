"""Samplers for the binary label model and the checkerboard extension tasks.

All randomness comes from ``numpy.random.Generator(PCG64(seed))`` consumed in a
fixed order (documented per sampler), so a seed pins every output bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.optimize import bisect

from .data import EmbeddingDataset, LabelVector, VoteMatrix
from .errors import ArgumentError

_VOTE_VALUES = (-1, 0, 1)


@dataclass(frozen=True)
class SyntheticModelSpec:
    """Canonical parameters of ``Pr(y, l) ∝ exp(t_y y + sum_i t_i l_i y + sum_i t_i0 1[l_i = 0])``."""

    theta_y: float
    theta: tuple
    theta_abstain: tuple

    def __post_init__(self):
        object.__setattr__(self, "theta", tuple(float(t) for t in self.theta))
        object.__setattr__(self, "theta_abstain", tuple(float(t) for t in self.theta_abstain))
        if len(self.theta) != len(self.theta_abstain):
            raise ArgumentError("theta and theta_abstain must have the same length")
        vals = (self.theta_y, *self.theta, *self.theta_abstain)
        if not all(np.isfinite(vals)):
            raise ArgumentError("canonical parameters must be finite")

    @property
    def m(self) -> int:
        return len(self.theta)

    def to_dict(self) -> dict:
        return {"theta_y": self.theta_y, "theta": list(self.theta), "theta_abstain": list(self.theta_abstain)}


@dataclass(frozen=True)
class ModelTables:
    """``prior_pos = Pr(y = 1)``; ``cond[i, y_idx, v + 1] = Pr(l_i = v | y)`` with ``y_idx`` 0 for -1."""

    prior_pos: float
    cond: np.ndarray

    @property
    def m(self) -> int:
        return self.cond.shape[0]

    def accuracies(self) -> np.ndarray:
        """``E[l_i y | l_i != 0]`` for each source."""
        right = (1 - self.prior_pos) * self.cond[:, 0, 0] + self.prior_pos * self.cond[:, 1, 2]
        wrong = (1 - self.prior_pos) * self.cond[:, 0, 2] + self.prior_pos * self.cond[:, 1, 0]
        return (right - wrong) / (right + wrong)

    def coverages(self) -> np.ndarray:
        return 1.0 - ((1 - self.prior_pos) * self.cond[:, 0, 1] + self.prior_pos * self.cond[:, 1, 1])

    def pattern_joint(self):
        """All ``3^m`` vote patterns with ``Pr(pattern, y=+1)`` and ``Pr(pattern, y=-1)``."""
        m = self.m
        grids = np.array(np.meshgrid(*([_VOTE_VALUES] * m), indexing="ij")).reshape(m, -1).T
        pos = np.full(grids.shape[0], self.prior_pos)
        neg = np.full(grids.shape[0], 1.0 - self.prior_pos)
        for i in range(m):
            pos = pos * self.cond[i, 1, grids[:, i] + 1]
            neg = neg * self.cond[i, 0, grids[:, i] + 1]
        return grids.astype(np.int8), pos, neg


def conditional_tables(spec: SyntheticModelSpec) -> ModelTables:
    m = spec.m
    cond = np.empty((m, 2, 3))
    log_z = np.zeros(2)
    for yi, y in enumerate((-1, 1)):
        for i in range(m):
            logits = np.array(
                [spec.theta[i] * v * y + spec.theta_abstain[i] * (v == 0) for v in _VOTE_VALUES]
            )
            top = logits.max()
            w = np.exp(logits - top)
            z = w.sum()
            cond[i, yi] = w / z
            log_z[yi] += top + np.log(z)
    score = np.array([-spec.theta_y, spec.theta_y]) + log_z
    score -= score.max()
    py = np.exp(score) / np.exp(score).sum()
    return ModelTables(float(py[1]), cond)


def _accuracy_of(theta: float, theta_abstain: float) -> float:
    t = conditional_tables(SyntheticModelSpec(0.0, (theta,), (theta_abstain,)))
    return float(t.accuracies()[0])


def spec_from_targets(
    accuracies: Sequence[float],
    coverages: Union[float, Sequence[float]] = 1.0,
    class_balance: float = 0.5,
) -> SyntheticModelSpec:
    """Canonical parameters hitting target accuracies, coverages and ``Pr(y = 1)``.

    Each ``theta_i`` is found by bisection (tolerance 1e-10) on the table-implied
    accuracy; ``theta_i0`` and ``theta_y`` then follow in closed form. Full
    coverage maps to a large negative (finite) abstain parameter.
    """
    acc = [float(a) for a in accuracies]
    cov = [float(coverages)] * len(acc) if np.isscalar(coverages) else [float(c) for c in coverages]
    if len(cov) != len(acc):
        raise ArgumentError("coverages and accuracies must have the same length")
    if not 0.0 < class_balance < 1.0:
        raise ArgumentError("class_balance must lie in (0, 1)")
    theta, theta0 = [], []
    for a, c in zip(acc, cov):
        if not -1.0 < a < 1.0:
            raise ArgumentError(f"accuracy {a} must lie strictly inside (-1, 1)")
        if not 0.0 < c <= 1.0:
            raise ArgumentError(f"coverage {c} must lie in (0, 1]")
        t = bisect(lambda th: _accuracy_of(th, 0.0) - a, -40.0, 40.0, xtol=1e-10)
        q = max(1.0 - c, 1e-300)
        # Pr(l=0|y) = e^{t0} / (e^t + e^-t + e^{t0})
        t0 = np.log(q) - np.log1p(-q) + np.logaddexp(t, -t)
        theta.append(float(t))
        theta0.append(float(t0))
    # per-source normalisers are symmetric in y, so Pr(y=1) = sigmoid(2 theta_y)
    theta_y = 0.5 * np.log(class_balance / (1.0 - class_balance))
    return SyntheticModelSpec(float(theta_y), tuple(theta), tuple(theta0))


@dataclass(frozen=True)
class SyntheticSample:
    labels: LabelVector
    votes: VoteMatrix
    accuracies: np.ndarray


def _sample_from_tables(tables: ModelTables, n: int, rng: np.random.Generator):
    # stream order: n uniforms for y, then an n x m block for the votes
    y = np.where(rng.random(n) < tables.prior_pos, 1, -1).astype(np.int8)
    U = rng.random((n, tables.m))
    yi = (y == 1).astype(np.int64)
    p_neg = tables.cond[np.arange(tables.m)[None, :], yi[:, None], 0]
    p_zero = tables.cond[np.arange(tables.m)[None, :], yi[:, None], 1]
    votes = np.where(U < p_neg, -1, np.where(U < p_neg + p_zero, 0, 1)).astype(np.int8)
    return y, votes


def sample_dataset(spec: SyntheticModelSpec, n: int, seed: int) -> SyntheticSample:
    if n < 1:
        raise ArgumentError(f"n must be >= 1, got {n}")
    tables = conditional_tables(spec)
    y, votes = _sample_from_tables(tables, n, np.random.default_rng(seed))
    return SyntheticSample(LabelVector(y), VoteMatrix(votes), tables.accuracies())


@dataclass(frozen=True)
class TwoPopulationBundle:
    embeddings: EmbeddingDataset
    labels: LabelVector
    votes: VoteMatrix
    membership: np.ndarray
    accuracies: tuple


def two_population_dataset(
    spec_a: SyntheticModelSpec, spec_b: SyntheticModelSpec, n_each: int, seed: int
) -> TwoPopulationBundle:
    """``n_each`` draws from each spec, concatenated (population a first).

    Embeddings are 2-D: population a uniform on ``[0,1]^2``, population b on
    ``[10,11] x [0,1]``, so the populations are also separable geometrically.
    """
    if spec_a.m != spec_b.m:
        raise ArgumentError(f"specs disagree on m: {spec_a.m} vs {spec_b.m}")
    ss = np.random.SeedSequence(seed)
    ra, rb, re = (np.random.default_rng(c) for c in ss.spawn(3))
    ta, tb = conditional_tables(spec_a), conditional_tables(spec_b)
    ya, va = _sample_from_tables(ta, n_each, ra)
    yb, vb = _sample_from_tables(tb, n_each, rb)
    xy = re.random((2 * n_each, 2))
    xy[n_each:, 0] += 10.0
    return TwoPopulationBundle(
        embeddings=EmbeddingDataset(xy, "euclidean"),
        labels=LabelVector(np.concatenate([ya, yb])),
        votes=VoteMatrix(np.vstack([va, vb])),
        membership=np.repeat(np.array([0, 1], dtype=np.int64), n_each),
        accuracies=(ta.accuracies(), tb.accuracies()),
    )


# ---------------------------------------------------------------------------
# checkerboard tasks

@dataclass(frozen=True)
class Region:
    """Subset of ``[0,1]^2`` on which a source may vote.

    kinds: ``full``; ``box`` with ``params = (x0, y0, x1, y1)`` (half-open);
    ``tile_cores`` with ``params = (cells, fraction[, col_stride])`` -- the
    centred square of side ``fraction / cells`` inside each cell of a
    ``cells x cells`` lattice whose column index is a multiple of ``col_stride``.
    """

    kind: str = "full"
    params: tuple = ()

    def contains(self, xy: np.ndarray) -> np.ndarray:
        if self.kind == "full":
            return np.ones(xy.shape[0], dtype=bool)
        if self.kind == "box":
            x0, y0, x1, y1 = self.params
            return (xy[:, 0] >= x0) & (xy[:, 0] < x1) & (xy[:, 1] >= y0) & (xy[:, 1] < y1)
        if self.kind == "tile_cores":
            cells, frac = self.params[:2]
            stride = int(self.params[2]) if len(self.params) > 2 else 1
            off = np.abs(np.mod(xy * cells, 1.0) - 0.5)
            col = np.minimum(np.floor(xy[:, 0] * cells).astype(np.int64), int(cells) - 1)
            return np.all(off <= frac / 2.0, axis=1) & (col % stride == 0)
        raise ArgumentError(f"unknown region kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": list(self.params)}


@dataclass(frozen=True)
class SourceSpec:
    accuracy: float
    region: Region = field(default_factory=Region)

    def __post_init__(self):
        if not 0.0 < self.accuracy <= 1.0:
            raise ArgumentError(f"source accuracy {self.accuracy} must lie in (0, 1]")


@dataclass(frozen=True)
class CheckerboardTaskSpec:
    n: int
    grid: int
    seed: int
    sources: tuple
    random_labels: bool = False

    def __post_init__(self):
        if self.grid < 1:
            raise ArgumentError("grid must be >= 1")
        object.__setattr__(self, "sources", tuple(self.sources))

    def replace(self, **kw) -> "CheckerboardTaskSpec":
        d = dict(n=self.n, grid=self.grid, seed=self.seed, sources=self.sources, random_labels=self.random_labels)
        d.update(kw)
        return CheckerboardTaskSpec(**d)


def checkerboard_labels(xy: np.ndarray, grid: int) -> np.ndarray:
    """+1 on tiles with even ``(col + row)`` parity, -1 otherwise."""
    tiles = np.minimum(np.floor(np.asarray(xy) * grid).astype(np.int64), grid - 1)
    return np.where((tiles[:, 0] + tiles[:, 1]) % 2 == 0, 1, -1).astype(np.int8)


@dataclass(frozen=True)
class CheckerboardSample:
    embeddings: EmbeddingDataset
    labels: LabelVector
    votes: VoteMatrix


def checkerboard_task(spec: CheckerboardTaskSpec, stream: int = 0) -> CheckerboardSample:
    """Sample a checkerboard task.

    Independent child streams of ``SeedSequence([seed, stream])`` drive, in
    order: the points, the random labels, then one stream per source. A
    source's draws therefore do not depend on the other sources' settings.
    ``stream`` selects an independent replicate (e.g. a held-out test set).
    """
    children = np.random.SeedSequence([spec.seed, stream]).spawn(2 + len(spec.sources))
    xy = np.random.default_rng(children[0]).random((spec.n, 2))
    if spec.random_labels:
        y = np.where(np.random.default_rng(children[1]).random(spec.n) < 0.5, 1, -1).astype(np.int8)
    else:
        y = checkerboard_labels(xy, spec.grid)
    votes = np.zeros((spec.n, len(spec.sources)), dtype=np.int8)
    for i, src in enumerate(spec.sources):
        u = np.random.default_rng(children[2 + i]).random(spec.n)
        inside = src.region.contains(xy)
        correct = u < (1.0 + src.accuracy) / 2.0
        votes[:, i] = np.where(inside, np.where(correct, y, -y), 0)
    return CheckerboardSample(EmbeddingDataset(xy, "euclidean"), LabelVector(y), VoteMatrix(votes))


def default_checkerboard(
    accuracy: float = 0.89,
    grid: int = 10,
    n: int = 10000,
    seed: int = 0,
    random_labels: bool = False,
    other_accuracies: Sequence[float] = (0.6, 0.5),
    core_fraction: float = 0.5,
    col_stride: int = 2,
) -> CheckerboardTaskSpec:
    """Three sources; the first votes only on tile cores of a fixed 10 x 10 lattice.

    Cores sit in every ``col_stride``-th lattice column, so far enough
    extension reaches into neighbouring columns. The support does not depend
    on ``grid``, which keeps it identical across board variants.
    """
    sources = [SourceSpec(accuracy, Region("tile_cores", (10, core_fraction, col_stride)))]
    sources += [SourceSpec(a) for a in other_accuracies]
    return CheckerboardTaskSpec(n=n, grid=grid, seed=seed, sources=tuple(sources), random_labels=random_labels)
