import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from liger.errors import ArgumentError
from liger.label_model import pairwise_agreements
from liger.synthetic import (
    CheckerboardTaskSpec,
    Region,
    SourceSpec,
    SyntheticModelSpec,
    checkerboard_labels,
    checkerboard_task,
    conditional_tables,
    default_checkerboard,
    sample_dataset,
    spec_from_targets,
    two_population_dataset,
)


def test_uniform_tables():
    t = conditional_tables(SyntheticModelSpec(0.0, (0.0, 0.0), (0.0, 0.0)))
    assert t.prior_pos == 0.5
    np.testing.assert_allclose(t.cond, 1 / 3, atol=1e-15)


def test_closed_form_entry():
    t = conditional_tables(SyntheticModelSpec(0.0, (1.0,), (0.0,)))
    e = math.e
    assert t.cond[0, 1, 2] == pytest.approx(e / (e + 1 / e + 1), abs=1e-15)
    assert t.cond[0, 1, 2] == pytest.approx(0.66524, abs=5e-6)


def test_sign_flip_swaps():
    a = conditional_tables(SyntheticModelSpec(0.3, (0.7,), (-0.2,)))
    b = conditional_tables(SyntheticModelSpec(0.3, (-0.7,), (-0.2,)))
    np.testing.assert_allclose(a.cond[:, :, 2], b.cond[:, :, 0], atol=1e-15)
    np.testing.assert_allclose(a.cond[:, :, 0], b.cond[:, :, 2], atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.floats(-3, 3), st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=1, max_size=5))
def test_tables_normalised(theta_y, pairs):
    t = conditional_tables(SyntheticModelSpec(theta_y, [p[0] for p in pairs], [p[1] for p in pairs]))
    np.testing.assert_allclose(t.cond.sum(axis=2), 1.0, atol=1e-12)
    assert 0 < t.prior_pos < 1
    np.testing.assert_allclose(t.accuracies(), np.tanh([p[0] for p in pairs]), atol=1e-12)
    _, pos, neg = t.pattern_joint()
    assert pos.sum() + neg.sum() == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-0.95, 0.95), min_size=1, max_size=4), st.floats(0.05, 1.0), st.floats(0.05, 0.95))
def test_spec_from_targets(acc, cov, bal):
    t = conditional_tables(spec_from_targets(acc, cov, bal))
    np.testing.assert_allclose(t.accuracies(), acc, atol=1e-8)
    np.testing.assert_allclose(t.coverages(), cov, atol=1e-12)
    assert t.prior_pos == pytest.approx(bal, abs=1e-12)


def test_spec_from_targets_rejects():
    with pytest.raises(ArgumentError):
        spec_from_targets([1.0])
    with pytest.raises(ArgumentError):
        spec_from_targets([0.5], 0.0)
    with pytest.raises(ArgumentError):
        spec_from_targets([0.5], 1.0, 1.0)


def test_sample_matches_tables():
    spec = spec_from_targets([0.8, 0.6, 0.7])
    s = sample_dataset(spec, 10000, 11)
    V, y = np.asarray(s.votes.votes), np.asarray(s.labels.labels)
    for i in range(3):
        nz = V[:, i] != 0
        assert abs(np.mean(V[nz, i] * y[nz]) - s.accuracies[i]) <= 0.03
    # agreement moments within 3 standard errors of a_i a_k
    table = pairwise_agreements(V, np.zeros(10000, int))
    for i, k in ((0, 1), (0, 2), (1, 2)):
        mu = s.accuracies[i] * s.accuracies[k]
        se = math.sqrt((1 - mu * mu) / 10000)
        assert abs(table.agreement[0, i, k] - mu) <= 3 * se


def test_near_deterministic_source():
    t = conditional_tables(SyntheticModelSpec(0.0, (20.0,), (-20.0,)))
    assert t.cond[0, 1, 2] == pytest.approx(1.0, abs=1e-8)
    s = sample_dataset(SyntheticModelSpec(0.0, (20.0,), (-20.0,)), 5000, 3)
    assert np.array_equal(s.votes.votes[:, 0], s.labels.labels)


def test_sampling_is_deterministic():
    spec = spec_from_targets([0.7, 0.2], 0.6, 0.4)
    a, b = sample_dataset(spec, 500, 9), sample_dataset(spec, 500, 9)
    assert a.votes.votes.tobytes() == b.votes.votes.tobytes()
    assert a.labels.labels.tobytes() == b.labels.labels.tobytes()
    c = sample_dataset(spec, 500, 10)
    assert a.votes.votes.tobytes() != c.votes.votes.tobytes()


def test_two_population_bundle():
    spec = spec_from_targets([0.8, 0.6, 0.7], 0.8)
    bundle = two_population_dataset(spec, spec, 1000, 0)
    assert bundle.embeddings.n == 2000 and bundle.votes.n == 2000
    assert np.bincount(bundle.membership).tolist() == [1000, 1000]
    with pytest.raises(ArgumentError):
        two_population_dataset(spec, spec_from_targets([0.5, 0.5]), 10, 0)


def test_identical_populations_indistinguishable():
    spec = spec_from_targets([0.8, 0.6, 0.7], 0.8)
    b = two_population_dataset(spec, spec, 10000, 1)
    table = pairwise_agreements(b.votes, b.membership, 2)
    diff = np.abs(table.agreement[0] - table.agreement[1])
    assert np.nanmax(diff) <= 0.05


def test_checkerboard_examples():
    assert checkerboard_labels(np.array([[0.05, 0.05]]), 10).tolist() == [1]
    assert checkerboard_labels(np.array([[0.15, 0.05]]), 10).tolist() == [-1]
    assert checkerboard_labels(np.array([[1.0, 1.0]]), 10).tolist() == [1]
    spec = CheckerboardTaskSpec(n=300, grid=1, seed=0, sources=(SourceSpec(1.0),))
    task = checkerboard_task(spec)
    assert np.all(task.labels.labels == 1)
    spec = spec.replace(grid=4)
    task = checkerboard_task(spec)
    assert np.array_equal(task.votes.votes[:, 0], task.labels.labels)
    again = checkerboard_labels(np.asarray(task.embeddings.data), 4)
    assert np.array_equal(again, task.labels.labels)


def test_checkerboard_support_and_accuracy():
    spec = default_checkerboard(accuracy=0.7, n=20000, seed=2)
    task = checkerboard_task(spec)
    xy = np.asarray(task.embeddings.data)
    inside = Region("tile_cores", (10, 0.5, 2)).contains(xy)
    V, y = np.asarray(task.votes.votes), np.asarray(task.labels.labels)
    assert np.array_equal(V[:, 0] != 0, inside)
    assert abs(inside.mean() - 0.125) < 0.01
    assert abs(np.mean(V[inside, 0] * y[inside]) - 0.7) < 0.05
    assert np.all(V[:, 1:] != 0)
    # the extendable source's draws do not depend on the other sources
    other = checkerboard_task(default_checkerboard(accuracy=0.7, n=20000, seed=2, other_accuracies=(0.9, 0.9)))
    assert np.array_equal(np.asarray(other.votes.votes)[:, 0], V[:, 0])
    held_out = checkerboard_task(spec, stream=1)
    assert not np.array_equal(np.asarray(held_out.embeddings.data), xy)


def test_region_kinds():
    xy = np.array([[0.1, 0.1], [0.5, 0.5], [0.9, 0.2]])
    assert Region("box", (0.0, 0.0, 0.6, 0.6)).contains(xy).tolist() == [True, True, False]
    assert Region().contains(xy).all()
    with pytest.raises(ArgumentError):
        Region("blob").contains(xy)
