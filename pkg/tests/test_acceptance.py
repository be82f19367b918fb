"""Acceptance gate: the eleven end-to-end criteria at their stated tolerances.

Each test carries ``@pytest.mark.criterion(n, title)``; the conftest prints a
PASS/FAIL line per criterion at the end of the run.
"""

import hashlib
import itertools
import time
from pathlib import Path

import numpy as np
import pytest

import reference_triplet as ref
from liger import cli
from liger.data import EmbeddingDataset, EngineConfig, VoteMatrix
from liger.evaluate import bench_bias_variance, bench_extension, default_radius_grid
from liger.extend import ORIGINAL, extend_all
from liger.label_model import (
    LabelModel,
    MomentTable,
    brute_force_posterior,
    fit,
    posterior_in_part,
    predict,
    triplet_accuracy,
)
from liger.partition import Partition, partition_from_labels
from liger.smoothness import NeighborhoodSpec, label_lipschitz_curve, local_pl_curve
from liger.synthetic import checkerboard_task, default_checkerboard, sample_dataset, spec_from_targets

EPS = 0.001


def exact_moments(a):
    m = len(a)
    agreement = np.outer(a, a)[None, :, :].copy()
    np.fill_diagonal(agreement[0], 1.0)
    return MomentTable(agreement, np.ones((1, m, m), dtype=np.int64))


def one_part_model(acc, cov, balance):
    m = len(acc)
    part = Partition(np.zeros((1, 1)), np.zeros(1, dtype=np.int64))
    return LabelModel(
        accuracies=np.asarray(acc, dtype=np.float64).reshape(1, m),
        coverages=np.asarray(cov, dtype=np.float64).reshape(1, m),
        class_balances=np.array([balance], dtype=np.float64),
        partition=part,
        radii=np.zeros(m),
    )


def random_model(rng, m):
    return one_part_model(
        rng.uniform(EPS, 1 - 2 * EPS, m), rng.uniform(0.05, 1.0, m), rng.uniform(0.05, 0.95)
    )


def pooled_fit(votes, seed=0):
    n = votes.shape[0]
    emb = EmbeddingDataset(np.zeros((n, 1)))
    part = partition_from_labels(emb, np.zeros(n, dtype=np.int64), 1)
    return emb, fit(emb, VoteMatrix(votes), EngineConfig(seed=seed, s=1), partition=part)


# ---------------------------------------------------------------------------

@pytest.mark.criterion(1, "exact-moment triplet recovery within 1e-9")
def test_criterion_01_exact_moment_recovery():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst = 0.0
    for trial in range(100):
        m = (3, 5)[trial % 2]
        a = rng.uniform(0.05, 0.95, m)
        moments = exact_moments(a)
        est = np.array([triplet_accuracy(moments, 0, i, clamp=None) for i in range(m)])
        worst = max(worst, float(np.max(np.abs(est - a))))
    elapsed = time.perf_counter() - start
    assert worst <= 1e-9
    assert elapsed < 1.0


@pytest.mark.criterion(2, "worked fixture (0.48, 0.56, 0.42) gives 0.8 within 1e-12")
def test_criterion_02_worked_fixture():
    agreement = np.array([[[1.0, 0.48, 0.56], [0.48, 1.0, 0.42], [0.56, 0.42, 1.0]]])
    moments = MomentTable(agreement, np.ones((1, 3, 3), dtype=np.int64))
    assert abs(triplet_accuracy(moments, 0, 0) - 0.8) <= 1e-12
    assert abs(triplet_accuracy(moments, 0, 0, clamp=None) - 0.8) <= 1e-12


@pytest.mark.criterion(3, "posterior equals brute-force joint within 1e-12")
def test_criterion_03_posterior_oracle():
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    worst = 0.0
    for draw in range(50):
        m = draw % 4 + 1
        model = random_model(rng, m)
        for row in itertools.product((-1, 0, 1), repeat=m):
            fast = posterior_in_part(model, 0, row)
            slow = brute_force_posterior(model, 0, row)
            worst = max(worst, abs(fast - slow))
    elapsed = time.perf_counter() - start
    assert worst <= 1e-12
    assert elapsed < 5.0


@pytest.mark.criterion(4, "abstain invariance and normalisation within 1e-12")
def test_criterion_04_abstain_invariance_and_normalisation():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        m = int(rng.integers(1, 7))
        model = random_model(rng, m)
        row = rng.integers(-1, 2, m)
        p = posterior_in_part(model, 0, row)

        wider = one_part_model(
            np.append(model.accuracies[0], rng.uniform(EPS, 1 - 2 * EPS)),
            np.append(model.coverages[0], rng.uniform(0.05, 1.0)),
            model.class_balances[0],
        )
        assert abs(posterior_in_part(wider, 0, np.append(row, 0)) - p) <= 1e-12

        # Pr(y=-1 | row) is Pr(y=+1 | -row) under the mirrored prior
        mirrored = one_part_model(model.accuracies[0], model.coverages[0], 1.0 - model.class_balances[0])
        assert abs(p + posterior_in_part(mirrored, 0, -row) - 1.0) <= 1e-12


@pytest.mark.criterion(5, "s=1, r=0 is bit-identical to a pooled triplet reference")
def test_criterion_05_baseline_reduction():
    rng = np.random.default_rng(5)
    for trial in range(20):
        n, m = int(rng.integers(50, 400)), int(rng.integers(3, 7))
        spec = spec_from_targets(rng.uniform(0.2, 0.9, m), rng.uniform(0.3, 1.0, m), 0.5)
        votes = np.asarray(sample_dataset(spec, n, trial).votes.votes)
        emb, model = pooled_fit(votes)
        rows = votes.tolist()
        acc = ref.accuracies(rows)
        cov = ref.coverages(rows)
        assert model.accuracies[0].tolist() == acc
        assert model.coverages[0].tolist() == cov
        got = predict(model, emb, votes).posterior.tolist()
        want = [ref.posterior(row, acc, cov) for row in rows]
        assert got == want


@pytest.mark.criterion(6, "sampled recovery within 0.05 and consistency over n")
def test_criterion_06_sampled_recovery():
    start = time.perf_counter()
    truth = np.array([0.8, 0.6, 0.7])
    spec = spec_from_targets(truth)
    sample = sample_dataset(spec, 10000, 0)
    _, model = pooled_fit(np.asarray(sample.votes.votes))
    assert np.max(np.abs(model.accuracies[0] - truth)) <= 0.05

    medians = []
    for n in (1000, 4000, 16000):
        errs = []
        for seed in range(20):
            votes = np.asarray(sample_dataset(spec, n, 1000 + seed).votes.votes)
            _, model = pooled_fit(votes)
            errs.append(np.max(np.abs(model.accuracies[0] - truth)))
        medians.append(float(np.median(errs)))
    assert medians[0] > medians[1] > medians[2], medians
    assert time.perf_counter() - start < 30.0


@pytest.mark.criterion(7, "bias-variance U-shape; pooled minimum for identical populations")
def test_criterion_07_bias_variance():
    start = time.perf_counter()
    a = spec_from_targets([0.85, 0.75, 0.15, 0.2, 0.6], 0.7)
    b = spec_from_targets([0.15, 0.2, 0.85, 0.75, 0.6], 0.7)
    s_list = (1, 2, 4, 8)
    split = bench_bias_variance(a, b, n_each=1000, s_list=s_list, n_seeds=10, seed=0)
    assert split.mean[1] < split.mean[0]
    assert split.mean[1] < split.mean[3]
    control = bench_bias_variance(a, a, n_each=1000, s_list=s_list, n_seeds=10, seed=0)
    assert int(np.argmin(control.mean)) == 0
    assert time.perf_counter() - start < 120.0


@pytest.fixture(scope="module")
def extension_result():
    start = time.perf_counter()
    variants = {f"acc={a}": default_checkerboard(accuracy=a) for a in (0.89, 0.7, 0.5, 0.3)}
    variants["board=2x2"] = default_checkerboard(grid=2)
    variants["board=10x10"] = default_checkerboard(grid=10)
    variants["board=random"] = default_checkerboard(random_labels=True)
    result = bench_extension(variants, default_radius_grid(0.1, 0.005))
    return result, time.perf_counter() - start


@pytest.mark.criterion(8, "extension lift ordering over accuracy and board smoothness")
def test_criterion_08_extension_tradeoff(extension_result):
    result, elapsed = extension_result
    curves = result.by_name()
    grid = curves["acc=0.89"].radii
    assert grid.shape[0] == 21 and grid[0] == 0.0 and abs(grid[-1] - 0.1) < 1e-12
    for c in result.curves:
        assert c.cross_entropy[0] == c.baseline
    top = curves["acc=0.89"].best_reduction
    for a in (0.7, 0.5, 0.3):
        assert top >= curves[f"acc={a}"].best_reduction
    coarse = curves["board=2x2"].best_reduction
    fine = curves["board=10x10"].best_reduction
    rand = curves["board=random"].best_reduction
    assert coarse > fine > rand
    assert elapsed < 180.0


@pytest.mark.criterion(9, "coverage monotone in r, agreement on support, lift rises then falls")
def test_criterion_09_extension_structure(extension_result):
    train = checkerboard_task(default_checkerboard(), stream=0)
    V = np.asarray(train.votes.votes)
    support = V != 0
    prev = support
    for r in default_radius_grid():
        ext = extend_all(train.embeddings, train.votes, np.full(V.shape[1], r))
        covered = ext.votes != 0
        assert np.all(covered[prev])
        assert np.array_equal(ext.votes[support], V[support])
        assert np.array_equal(ext.provenance == ORIGINAL, support)
        prev = covered

    curve = extension_result[0].by_name()["acc=0.89"]
    # cores sit 0.025 inside their tile, so larger radii cross into other tiles
    past = curve.radii >= 0.025
    acc = curve.extended_accuracy[past]
    assert np.all(np.diff(acc) <= 0.0)
    best = int(np.argmin(curve.cross_entropy))
    assert 0 < best < curve.radii.shape[0] - 1
    assert curve.cross_entropy[best] < curve.baseline
    assert curve.cross_entropy[-1] > curve.cross_entropy[best]


@pytest.mark.criterion(10, "smoothness estimators: zero curve, PL monotone, hand fixture")
def test_criterion_10_smoothness(backend):
    rng = np.random.default_rng(10)
    emb = EmbeddingDataset(rng.random((60, 2)))
    flat = np.ones(60, dtype=np.int8)
    assert np.all(label_lipschitz_curve(emb, flat, NeighborhoodSpec.radius([0.05, 0.2, 2.0])) == 0)
    assert np.all(label_lipschitz_curve(emb, flat, NeighborhoodSpec.knn([1, 5, 59])) == 0)

    for _ in range(100):
        n, d = int(rng.integers(5, 60)), int(rng.integers(1, 4))
        data = EmbeddingDataset(rng.normal(size=(n, d)))
        y = np.where(rng.random(n) < 0.5, 1, -1)
        votes = rng.integers(-1, 2, (n, int(rng.integers(1, 4))))
        grid = np.sort(rng.uniform(0, 3, int(rng.integers(2, 8))))
        pl = local_pl_curve(data, y, votes, NeighborhoodSpec.radius(grid))
        assert np.all(np.diff(pl) >= 0)
        assert np.all((pl >= 0) & (pl <= 1))

    line = EmbeddingDataset(np.array([[0.0], [0.3]]))
    pl = local_pl_curve(line, [1, -1], [[1], [0]], NeighborhoodSpec.radius([0.1, 0.5]))
    assert pl.tolist() == [0.0, 1.0]


def _pipeline(root: Path, capsys):
    root.mkdir()
    b = root / "bundle"
    (root / "cfg.json").write_text('{"seed": 7, "s": 3, "radii": [0.05, 0.05, 0.05]}')
    dev = root / "dev"
    steps = [
        ["synth", "--kind", "checkerboard", "--seed", "3", "--n", "1500", "--out", str(b)],
        ["synth", "--kind", "checkerboard", "--seed", "4", "--n", "600", "--out", str(dev)],
        ["synth", "--kind", "two-population", "--seed", "5", "--n", "300", "--out", str(root / "pop")],
        ["synth", "--kind", "model", "--seed", "6", "--n", "300", "--out", str(root / "model")],
        ["partition", "--embeddings", f"{b}/embeddings.lgem", "--s", "4", "--seed", "2",
         "--out", str(root / "part.json")],
        ["extend", "--embeddings", f"{b}/embeddings.lgem", "--votes", f"{b}/votes.csv",
         "--radii", "0.03,0,0", "--out", str(root / "ext.csv")],
        ["fit", "--embeddings", f"{b}/embeddings.lgem", "--votes", f"{b}/votes.csv",
         "--config", str(root / "cfg.json"), "--out", str(root / "model.json")],
        ["predict", "--model", str(root / "model.json"), "--embeddings", f"{b}/embeddings.lgem",
         "--votes", f"{b}/votes.csv", "--test-embeddings", f"{dev}/embeddings.lgem",
         "--test-votes", f"{dev}/votes.csv", "--out", str(root / "pred.csv")],
        ["evaluate", "--predictions", str(root / "pred.csv"), "--labels", f"{dev}/labels.csv",
         "--out", str(root / "metrics.json")],
        ["tune", "--embeddings", f"{b}/embeddings.lgem", "--votes", f"{b}/votes.csv",
         "--dev-embeddings", f"{dev}/embeddings.lgem", "--dev-votes", f"{dev}/votes.csv",
         "--dev-labels", f"{dev}/labels.csv", "--config", str(root / "cfg.json"),
         "--r-grid", "0,0.02,0.04", "--s-max", "3", "--out", str(root / "tune.json")],
        ["smoothness", "--embeddings", f"{b}/embeddings.lgem", "--labels", f"{b}/labels.csv",
         "--votes", f"{b}/votes.csv", "--r-grid", "0.01,0.05,0.1", "--out", str(root / "smooth.csv")],
        ["bench", "--kind", "bias-variance", "--seed", "1", "--s", "1,2,4", "--seeds", "3",
         "--n-each", "200", "--out", str(root / "bv.csv")],
        ["bench", "--kind", "extension", "--seed", "1", "--n", "800", "--r-grid", "0,0.02,0.04",
         "--variants", "board", "--out", str(root / "ext_bench.csv")],
    ]
    stdout = []
    for argv in steps:
        assert cli.main(argv) == 0, argv
        stdout.append(capsys.readouterr().out)
    (root / "stdout.txt").write_text("".join(stdout))
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*")) if p.is_file()
    }


@pytest.mark.criterion(11, "seeded CLI pipeline reruns are byte-identical")
def test_criterion_11_determinism(tmp_path, capsys):
    first = _pipeline(tmp_path / "a", capsys)
    second = _pipeline(tmp_path / "b", capsys)
    assert len(first) >= 20
    assert first == second
