import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mcc.chain import (ChainPlan, build_test_stage, build_train_stage, gini_index, order_labels,
                       unchain)
from mcc.dataset import ModalitySchema, MultiModalDataset

from conftest import tiny_dataset


@pytest.mark.parametrize("labels,expected", [
    ([1, 1, 1, 1], 0.0),
    ([1, 1, -1, -1], 0.5),
    ([1, 1, 1, -1], 1 - (0.75 ** 2 + 0.25 ** 2)),
])
def test_gini_values(labels, expected):
    assert gini_index(labels) == pytest.approx(expected, abs=1e-15)


def test_gini_three_labels_form():
    assert gini_index([1, -1, 0]) == pytest.approx(1 - 3 * (1 / 3) ** 2)


def test_gini_empty():
    with pytest.raises(ValueError):
        gini_index([])


def test_order_single_label():
    plan = order_labels(np.ones((5, 1), dtype=int))
    assert plan.tau == (0,)


def test_order_puts_impure_label_first():
    Y = np.array([[1, 1], [1, -1], [1, 1], [1, -1]])
    plan = order_labels(Y)
    assert plan.tau == (1, 0)
    assert plan.gini == (0.0, 0.5)


def test_order_ties_by_index():
    Y = np.array([[1, -1, 1], [-1, 1, -1]])
    assert order_labels(Y).tau == (0, 1, 2)


def test_order_matches_brute_force_on_emotions_excerpt(emotions_head):
    Y = emotions_head.Y
    per_label = []
    for l in range(Y.shape[1]):
        pos = np.mean(Y[:, l] == 1)
        per_label.append(1 - pos ** 2 - (1 - pos) ** 2)
    expected = sorted(range(6), key=lambda l: (-round(per_label[l], 12), l))
    plan = order_labels(Y)
    assert list(plan.tau) == expected
    np.testing.assert_allclose(plan.gini, per_label, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(np.int64, st.tuples(st.integers(2, 30), st.integers(1, 6)), elements=st.sampled_from([-1, 1])),
       st.randoms())
def test_order_invariant_to_row_permutation(Y, rnd):
    rows = list(range(Y.shape[0]))
    rnd.shuffle(rows)
    assert order_labels(Y).tau == order_labels(Y[rows]).tau
    assert sorted(order_labels(Y).tau) == list(range(Y.shape[1]))


@pytest.fixture
def six_label():
    rng = np.random.default_rng(0)
    Y = np.where(rng.random((8, 6)) > 0.5, 1, -1)
    return tiny_dataset(rng.normal(size=(8, 5)), Y, [2, 3])


def test_first_stage_has_no_history(six_label):
    plan = order_labels(six_label.Y)
    s = build_train_stage(plan, six_label, 0)
    assert s.history.shape == (8, 0)
    assert s.schema == six_label.schema
    np.testing.assert_array_equal(s.X, six_label.X)
    np.testing.assert_array_equal(s.y, six_label.Y[:, plan.tau[0]])


def test_second_stage_appends_history_modality(six_label):
    plan = order_labels(six_label.Y)
    s = build_train_stage(plan, six_label, 1)
    assert s.history.shape == (8, 1)
    assert s.schema.n_modalities == 3
    assert s.schema.costs == (1.0, 1.0, 0.1)
    assert s.X.shape[1] == six_label.schema.total_dim + 1


def test_stage_history_is_slice_of_true_labels():
    Y = np.array([[1, -1, 1], [-1, -1, 1]])
    data = tiny_dataset([[0.0], [1.0]], Y, [1])
    plan = ChainPlan((2, 0, 1), (0.0, 0.5, 0.0))
    s = build_train_stage(plan, data, 2)
    np.testing.assert_array_equal(s.history, [[1, 1], [1, -1]])
    np.testing.assert_array_equal(s.y, [-1, -1])


def test_stage_out_of_range(six_label):
    plan = order_labels(six_label.Y)
    with pytest.raises(ValueError):
        build_train_stage(plan, six_label, 6)


def test_test_stage_uses_predictions(six_label):
    plan = order_labels(six_label.Y)
    assert build_test_stage(plan, six_label, 0, np.zeros((8, 0))).history.shape == (8, 0)
    s = build_test_stage(plan, six_label, 1, np.ones((8, 1), dtype=int))
    np.testing.assert_array_equal(s.X[:, -1], 1.0)
    s4 = build_test_stage(plan, six_label, 3, -np.ones((8, 3), dtype=int))
    assert len(s4.schema.costs) == six_label.schema.n_modalities + 1
    assert s4.schema.costs[-1] == 0.1


def test_test_stage_column_mismatch(six_label):
    plan = order_labels(six_label.Y)
    with pytest.raises(ValueError):
        build_test_stage(plan, six_label, 2, np.ones((8, 1), dtype=int))


def test_train_and_test_schemas_agree(six_label):
    plan = order_labels(six_label.Y)
    for j in range(1, 6):
        tr = build_train_stage(plan, six_label, j)
        te = build_test_stage(plan, six_label, j, np.ones((8, j), dtype=int))
        assert tr.schema == te.schema


def test_custom_history_cost(six_label):
    plan = order_labels(six_label.Y, history_cost=0.25)
    assert build_train_stage(plan, six_label, 2).schema.costs[-1] == 0.25


def test_unchain_restores_label_order():
    plan = ChainPlan((2, 0, 1), (0.5, 0.4, 0.3))
    Z = np.array([[1, -1, 1], [-1, 1, 1]])
    chain_ordered = Z[:, list(plan.tau)]
    np.testing.assert_array_equal(unchain(plan, chain_ordered), Z)


def test_plan_serialization_round_trip():
    plan = ChainPlan((1, 0), (0.5, 0.2), 0.1)
    assert ChainPlan.from_dict(plan.to_dict()) == plan
