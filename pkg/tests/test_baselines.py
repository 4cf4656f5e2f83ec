import itertools

import numpy as np
import pytest

from mcc.baselines import (EnsembleOfChains, baseline_cost, fit_logistic, train_br, train_cc,
                           train_ecc)
from mcc.dataset import MultiModalDataset, ModalitySchema, make_synthetic
from mcc.metrics import hamming_loss

from conftest import tiny_dataset


def test_single_label_br():
    data = make_synthetic(30, [2, 2], 1, seed=0)
    br = train_br(data)
    assert len(br.models) == 1
    assert br.predict(data.X).shape == (30, 1)


def test_constant_label_fitted():
    X = np.random.default_rng(0).normal(size=(20, 3))
    model = fit_logistic(X, np.ones(20))
    assert np.all(model.predict(X) == 1)


def test_xor_is_beyond_a_linear_model():
    X = np.array(list(itertools.product([0.0, 1.0], repeat=2)) * 5)
    y = np.where(X[:, 0] != X[:, 1], 1, -1)
    model = fit_logistic(X, y)
    assert np.mean(model.predict(X) == y) <= 0.75
    # no linear separator on a fine grid does better either
    best = 0.0
    for a, b in itertools.product(np.linspace(-1, 1, 21), repeat=2):
        for c in np.linspace(-2, 2, 41):
            best = max(best, np.mean(np.where(X @ [a, b] + c >= 0, 1, -1) == y))
    assert best <= 0.75


def test_loss_decreases_with_training():
    data = make_synthetic(60, [3, 3], 1, seed=2)
    y = data.Y[:, 0]

    def nll(m):
        p = np.clip(m.predict_proba(data.X), 1e-12, 1 - 1e-12)
        t = (y + 1) / 2
        return -np.mean(t * np.log(p) + (1 - t) * np.log(1 - p))

    assert nll(fit_logistic(data.X, y, epochs=200)) <= nll(fit_logistic(data.X, y, epochs=20))


def test_br_invariant_to_label_order():
    data = make_synthetic(40, [2, 3], 3, seed=1)
    perm = [2, 0, 1]
    permuted = MultiModalDataset(data.X, data.Y[:, perm], data.schema)
    a = train_br(data).predict(data.X)
    b = train_br(permuted).predict(data.X)
    np.testing.assert_array_equal(a[:, perm], b)


def test_cc_first_stage_equals_br():
    data = make_synthetic(40, [2, 3], 3, seed=1)
    tau = (2, 0, 1)
    cc = train_cc(data, tau)
    br = train_br(data)
    np.testing.assert_array_equal(cc.models[0].w, br.models[2].w)
    assert cc.models[0].b == br.models[2].b


def test_cc_single_label_equals_br():
    data = make_synthetic(30, [2, 2], 1, seed=3)
    np.testing.assert_array_equal(train_cc(data).predict(data.X), train_br(data).predict(data.X))


def test_cc_close_to_br_on_independent_labels():
    data = make_synthetic(200, [3, 3], 3, label_noise=0.0, seed=6)
    Zc = train_cc(data).predict(data.X)
    Zb = train_br(data).predict(data.X)
    assert hamming_loss(Zc, Zb) <= 0.1


def test_cc_exploits_duplicated_label():
    rng = np.random.default_rng(7)
    n = 120
    y1 = np.where(rng.random(n) < 0.5, 1, -1)
    X = y1[:, None] * 0.4 + rng.normal(size=(n, 4))
    train = tiny_dataset(X[:80], np.c_[y1[:80], y1[:80]], [2, 2])
    test = tiny_dataset(X[80:], np.c_[y1[80:], y1[80:]], [2, 2])
    cc = train_cc(train, (0, 1))
    w = cc.models[1].w
    assert abs(w[-1]) > np.max(np.abs(w[:-1]))
    acc_cc = np.mean(cc.predict(test.X)[:, 1] == test.Y[:, 1])
    acc_br = np.mean(train_br(train).predict(test.X)[:, 1] == test.Y[:, 1])
    assert acc_cc >= acc_br


def test_cc_rejects_bad_order():
    data = make_synthetic(10, [2], 2, seed=0)
    with pytest.raises(ValueError):
        train_cc(data, (0, 0))


def test_ecc_single_member_equals_cc():
    data = make_synthetic(40, [2, 2], 3, seed=2)
    ecc = train_ecc(data, n_chains=1, seed=5)
    cc = train_cc(data, ecc.chains[0].tau)
    np.testing.assert_array_equal(ecc.predict(data.X), cc.predict(data.X))


def test_ecc_vote_matches_hand_count():
    data = make_synthetic(40, [2, 2], 4, seed=3)
    ecc = train_ecc(data, n_chains=3, seed=1)
    members = [c.predict(data.X) for c in ecc.chains]
    expected = np.empty_like(members[0])
    for n, l in itertools.product(range(40), range(4)):
        plus = sum(m[n, l] == 1 for m in members)
        expected[n, l] = 1 if plus >= 2 else -1
    np.testing.assert_array_equal(ecc.predict(data.X), expected)


def test_ecc_tied_vote_goes_positive():
    class Fixed:
        def __init__(self, Z):
            self.Z = Z

        def predict(self, X):
            return self.Z

    ens = EnsembleOfChains([Fixed(np.array([[1, -1]])), Fixed(np.array([[-1, -1]]))])
    np.testing.assert_array_equal(ens.predict(None), [[1, -1]])


def test_ecc_agreeing_members():
    data = make_synthetic(20, [2], 2, seed=0)
    cc = train_cc(data)
    ens = EnsembleOfChains([cc, cc, cc])
    np.testing.assert_array_equal(ens.predict(data.X), cc.predict(data.X))


def test_baseline_cost_is_full_sum():
    data = MultiModalDataset(np.zeros((3, 5)), np.ones((3, 1), dtype=int),
                             ModalitySchema([1, 2, 2], [1.0, 2.5, 0.5]))
    assert baseline_cost(data) == 4.0
