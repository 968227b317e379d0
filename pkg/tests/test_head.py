import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import oracle_distance

from fewshot_ssm import autodiff as ad
from fewshot_ssm.head import (
    DIST_EPS,
    build_prototype,
    classification_loss,
    classify,
    cross_distance,
    distance_matrix,
    time_reverse,
)


def test_prototype_single_shot():
    x = np.random.default_rng(0).normal(size=(1, 4, 3))
    np.testing.assert_array_equal(build_prototype(x).data, x[0])


def test_prototype_two_shots():
    x = np.array([[[1.0, 1.0]], [[3.0, 3.0]]])
    np.testing.assert_array_equal(build_prototype(x).data, [[2.0, 2.0]])


def test_prototype_mean_oracle():
    x = np.random.default_rng(1).normal(size=(5, 3, 4, 2))
    np.testing.assert_allclose(build_prototype(x).data, x.mean(axis=1), atol=1e-15)


def test_prototype_rejects_empty():
    with pytest.raises(ValueError):
        build_prototype(np.zeros((0, 4, 2)))


def test_time_reverse_examples():
    one = np.array([[1.0, 2.0]])
    np.testing.assert_array_equal(time_reverse(one).data, one)
    rows = np.array([[1.0], [2.0], [3.0]])
    np.testing.assert_array_equal(time_reverse(rows).data, [[3.0], [2.0], [1.0]])
    np.testing.assert_array_equal(time_reverse(time_reverse(rows)).data, rows)


def test_cross_distance_identical_inputs():
    p = np.array([[1.0], [0.0]])
    b = cross_distance(p, p)
    assert b.d1.item() == 0.0 and b.d2.item() == 0.0
    assert b.d3.item() == pytest.approx(1 / (math.sqrt(2) + DIST_EPS), abs=1e-15)
    assert b.d4.item() == pytest.approx(1 / (math.sqrt(2) + DIST_EPS), abs=1e-15)


def test_cross_distance_worked_example():
    b = cross_distance(np.array([[1.0], [0.0]]), np.array([[2.0], [0.0]]))
    assert b.d1.item() == pytest.approx(1.0, abs=1e-15)
    assert b.d2.item() == pytest.approx(1.0, abs=1e-15)
    assert b.d3.item() == pytest.approx(1 / (math.sqrt(5) + DIST_EPS), abs=1e-15)
    assert b.d3.item() == pytest.approx(0.4472, abs=1e-4)
    assert b.d.item() == pytest.approx(0.7236, abs=1e-4)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 4), st.integers(0, 2**31))
def test_cross_distance_reversal_invariance(frames, dim, seed):
    rng = np.random.default_rng(seed)
    p, q = rng.normal(size=(frames, dim)), rng.normal(size=(frames, dim))
    d = cross_distance(p, q).d.item()
    assert cross_distance(p[::-1], q[::-1]).d.item() == d
    assert d == pytest.approx(oracle_distance(p, q), rel=1e-13)


def test_distance_matrix_matches_pairs():
    rng = np.random.default_rng(2)
    protos, queries = rng.normal(size=(3, 4, 2)), rng.normal(size=(5, 4, 2))
    m = distance_matrix(protos, queries).data
    assert m.shape == (5, 3)
    for i in range(5):
        for j in range(3):
            assert m[i, j] == pytest.approx(oracle_distance(protos[j], queries[i]), rel=1e-13)


def test_cross_distance_shape_error():
    with pytest.raises(ad.ShapeError):
        cross_distance(np.zeros((3, 2)), np.zeros((4, 2)))


def test_classify_examples():
    assert classify(np.array([0.5, 0.2, 0.9])) == 1
    assert classify(np.array([0.3, 0.1, 0.1])) == 1


def test_query_equal_to_prototype_wins():
    rng = np.random.default_rng(3)
    protos = rng.normal(size=(3, 6, 2))
    protos[1:] += 10.0
    assert classify(distance_matrix(protos, protos[:1]))[0] == 0


def test_loss_uniform_is_log_n():
    assert classification_loss(np.full(5, 0.7), 2).item() == pytest.approx(math.log(5), abs=1e-12)
    batch = classification_loss(np.full((4, 5), 0.3), np.array([0, 1, 2, 4])).item()
    assert batch == pytest.approx(math.log(5), abs=1e-12)


def test_loss_closed_form():
    assert classification_loss(np.array([0.0, 1.0]), 0).item() == pytest.approx(math.log1p(math.exp(-1)), abs=1e-15)
    assert classification_loss(np.array([0.0, 1.0]), 0).item() == pytest.approx(0.3133, abs=1e-4)


def test_loss_vanishes_when_true_class_far_closer():
    assert classification_loss(np.array([-200.0, 0.0, 0.0]), 0).item() < 1e-80


def test_loss_label_range():
    with pytest.raises(ValueError):
        classification_loss(np.zeros(3), 3)
