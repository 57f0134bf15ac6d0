"""DBN unit tests: stacking, label injection, classification, fine-tuning."""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from tcanet.activations import BaseKind, TcaParams
from tcanet.config import TrainConfig
from tcanet.data import load_model, save_model
from tcanet.dbn import (
    DbnModel,
    classification_error,
    classify_free_energy,
    init_dbn,
    one_hot,
    stack_forward,
    swap_dbn_mixture,
    top_train,
    train_layerwise,
    updown_finetune,
)
from tcanet.dbn import _ce_grads
from tcanet.rbm import RbmModel, free_energy, hidden_step

T = BaseKind.TED


def tiny_dbn(seed=5, n_vis=4, h1=3, n_top=3, C=3):
    r = np.random.default_rng(seed)
    l1 = RbmModel(W=r.normal(0, 0.6, (n_vis, h1)), a=r.normal(0, 0.4, n_vis),
                  b=r.normal(0, 0.4, h1), vis=T,
                  hid=TcaParams(T, r.normal(0, 0.4, (h1, 2)), r.normal(0, 0.5, (h1, 2))))
    top = RbmModel(W=r.normal(0, 0.6, (h1 + C, n_top)), a=r.normal(0, 0.4, h1 + C),
                   b=r.normal(0, 0.4, n_top), vis=T,
                   hid=TcaParams(T, r.normal(0, 0.4, (n_top, 2)), r.normal(0, 0.5, (n_top, 2))))
    return DbnModel([l1], top, [3, 8, 9])


class TestStructure:
    def test_dimension_chaining_enforced(self):
        d = tiny_dbn()
        with pytest.raises(ValueError):
            DbnModel(d.stack, d.stack[0], d.classes)  # top expects 6 inputs

    def test_one_hot_layout(self):
        oh = one_hot([9, 3, 8], [3, 8, 9])
        assert_array_equal(oh, [[0, 0, 1], [1, 0, 0], [0, 1, 0]])

    def test_one_hot_rejects_unknown_label(self):
        with pytest.raises(ValueError):
            one_hot([4], [3, 8, 9])

    def test_init_dbn_shapes(self):
        d = init_dbn(10, [6, 4], 5, [3, 8, 9], T, T, np.random.default_rng(0))
        assert [m.n_vis for m in d.stack] == [10, 6]
        assert [m.n_hid for m in d.stack] == [6, 4]
        assert d.top.n_vis == 4 + 3
        assert d.n_features == 4

    def test_swap_dbn_mixture_widens_everything(self):
        d = tiny_dbn()
        d3 = swap_dbn_mixture(d, 4, np.random.default_rng(1))
        assert d3.stack[0].hid.m == 4
        assert d3.top.hid.m == 4
        assert_array_equal(d3.top.W, d.top.W)


class TestStackForward:
    def test_empty_stack_is_identity(self):
        d = tiny_dbn()
        empty = DbnModel([], RbmModel(W=np.zeros((7, 2)), a=np.zeros(7), b=np.zeros(2),
                                      vis=T, hid=TcaParams.reduced(T, 2, 1)), [3, 8, 9, 0])
        x = np.random.default_rng(2).random((5, 7))
        assert_array_equal(stack_forward(empty, x), x)

    def test_single_layer_equals_hidden_step(self):
        d = tiny_dbn()
        x = np.random.default_rng(3).random((5, 4))
        assert_allclose(stack_forward(d, x), hidden_step(d.stack[0], x), rtol=1e-15)

    def test_two_layer_matches_manual_composition(self):
        r = np.random.default_rng(7)
        l1 = RbmModel(W=r.normal(0, 0.5, (4, 3)), a=np.zeros(4), b=r.normal(0, 0.3, 3),
                      vis=T, hid=TcaParams.reduced(T, 3, 1))
        l2 = RbmModel(W=r.normal(0, 0.5, (3, 2)), a=np.zeros(3), b=r.normal(0, 0.3, 2),
                      vis=T, hid=TcaParams.reduced(T, 2, 1))
        top = RbmModel(W=np.zeros((2 + 2, 2)), a=np.zeros(4), b=np.zeros(2),
                       vis=T, hid=TcaParams.reduced(T, 2, 1))
        d = DbnModel([l1, l2], top, [0, 1])
        x = r.random(4)
        want = hidden_step(l2, hidden_step(l1, x))
        assert_allclose(stack_forward(d, x), want, rtol=1e-15)


class TestClassify:
    def test_zero_weight_top_picks_largest_label_bias(self):
        d = tiny_dbn()
        a_lab = np.array([0.1, 0.9, 0.4])
        top0 = RbmModel(W=np.zeros((6, 3)), a=np.concatenate([np.zeros(3), a_lab]),
                        b=np.zeros(3), vis=T, hid=TcaParams.reduced(T, 3, 1))
        d0 = DbnModel(d.stack, top0, d.classes)
        label, scores = classify_free_energy(d0, np.random.default_rng(1).random(4))
        assert label == 8  # classes[1] has the largest label bias
        assert scores.shape == (3,)

    def test_label_bias_shift_moves_scores_uniformly(self):
        d = tiny_dbn()
        x = np.random.default_rng(4).random(4)
        lab1, sc1 = classify_free_energy(d, x)
        shifted = RbmModel(W=d.top.W, a=d.top.a + np.concatenate([np.zeros(3), np.full(3, 1.3)]),
                           b=d.top.b, vis=d.top.vis, hid=d.top.hid)
        lab2, sc2 = classify_free_energy(DbnModel(d.stack, shifted, d.classes), x)
        assert_allclose(sc2 - sc1, 1.3, rtol=1e-9)
        assert lab1 == lab2

    def test_tie_breaks_to_lowest_class_index(self):
        top0 = RbmModel(W=np.zeros((6, 3)), a=np.zeros(6), b=np.zeros(3),
                        vis=T, hid=TcaParams.reduced(T, 3, 1))
        d0 = DbnModel(tiny_dbn().stack, top0, [3, 8, 9])
        label, scores = classify_free_energy(d0, np.full(4, 0.5))
        assert scores[0] == scores[1] == scores[2]
        assert label == 3

    def test_batch_classification(self):
        d = tiny_dbn()
        X = np.random.default_rng(5).random((6, 4))
        labels, scores = classify_free_energy(d, X)
        assert labels.shape == (6,)
        assert scores.shape == (6, 3)
        assert set(labels) <= {3, 8, 9}


class TestTopTrain:
    def test_ce_gradient_matches_finite_differences(self):
        d = tiny_dbn()
        rng = np.random.default_rng(23)
        feats = rng.random((5, 3))
        labs = one_hot([3, 9, 8, 3, 9], d.classes)
        lam = 0.7
        g = _ce_grads(d, feats, labs, lam)

        def ce_loss(top):
            S = feats.shape[0]
            scores = np.empty((S, 3))
            for c in range(3):
                lab = np.zeros((S, 3))
                lab[:, c] = 1.0
                scores[:, c] = -free_energy(top, np.concatenate([feats, lab], axis=1))
            m = scores.max(axis=1, keepdims=True)
            logp = scores - m - np.log(np.exp(scores - m).sum(axis=1, keepdims=True))
            return -lam * float(np.mean(np.sum(labs * logp, axis=1)))

        eps = 1e-6
        for block in ("W", "a", "b", "A", "B"):
            arr = {"W": d.top.W, "a": d.top.a, "b": d.top.b,
                   "A": d.top.hid.A, "B": d.top.hid.B}[block]
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                up = arr.copy()
                up[idx] += eps
                dn = arr.copy()
                dn[idx] -= eps

                def rebuilt(v):
                    W, a, b = d.top.W, d.top.a, d.top.b
                    A, B = d.top.hid.A, d.top.hid.B
                    if block == "W":
                        W = v
                    elif block == "a":
                        a = v
                    elif block == "b":
                        b = v
                    elif block == "A":
                        A = v
                    else:
                        B = v
                    return RbmModel(W=W, a=a, b=b, vis=d.top.vis,
                                    hid=TcaParams(d.top.hid.base, A, B))

                fd = (ce_loss(rebuilt(up)) - ce_loss(rebuilt(dn))) / (2 * eps)
                rel = abs(fd - g[block][idx]) / max(abs(fd), 1e-3)
                assert rel < 1e-5, f"{block}[{idx}]"

    def test_zero_epochs_leaves_model_unchanged(self):
        d = tiny_dbn()
        X = np.random.default_rng(6).random((6, 4))
        y = np.array([3, 8, 9, 3, 8, 9])
        d2, hist = top_train(d, X, y, TrainConfig(batch_size=6), epochs=0)
        assert hist == []
        assert_array_equal(d2.top.W, d.top.W)

    def test_deterministic_given_seed(self):
        d = tiny_dbn()
        X = np.random.default_rng(6).random((6, 4))
        y = np.array([3, 8, 9, 3, 8, 9])
        cfg = TrainConfig(lr=0.1, batch_size=3, seed=11, cd_k=3)
        d1, _ = top_train(d, X, y, cfg, epochs=2)
        d2, _ = top_train(d, X, y, cfg, epochs=2)
        assert_array_equal(d1.top.W, d2.top.W)
        assert_array_equal(d1.top.hid.A, d2.top.hid.A)

    def test_rejects_unknown_label(self):
        d = tiny_dbn()
        X = np.random.default_rng(6).random((2, 4))
        with pytest.raises(ValueError):
            top_train(d, X, np.array([3, 7]), TrainConfig(batch_size=2), epochs=1)

    def test_training_separates_separable_toy_data(self):
        # two tight clusters, empty stack: the top RBM alone must separate them
        rng = np.random.default_rng(0)
        d = init_dbn(4, [], 6, [0, 1], T, T, rng)
        X = np.vstack([rng.normal(0.2, 0.02, (20, 4)), rng.normal(0.8, 0.02, (20, 4))])
        X = np.clip(X, 0.01, 0.99)
        y = np.array([0] * 20 + [1] * 20)
        cfg = TrainConfig(lr=0.2, tca_lr=0.0, batch_size=10, seed=1, cd_k=1, lambda_fe=10.0)
        d2, hist = top_train(d, X, y, cfg, epochs=40, mode="deterministic")
        assert classification_error(d2, X, y) <= 0.1
        assert hist[-1]["train_err"] <= 0.1


class TestLayerwise:
    def test_zero_epochs_keeps_layer_sizes(self):
        rng = np.random.default_rng(0)
        d = init_dbn(6, [4], 5, [3, 8, 9], T, T, rng)
        X = np.clip(rng.random((10, 6)), 0.01, 0.99)
        cfg = TrainConfig(lr=0.1, batch_size=5, seed=2)
        d2, hist = train_layerwise(d, X, 2, cfg, epochs_a=0, epochs_b=0, epochs_c=0)
        assert [m.n_vis for m in d2.stack] == [6]
        assert hist == []

    def test_layerwise_trains_and_reports_history(self):
        rng = np.random.default_rng(0)
        d = init_dbn(6, [4, 3], 5, [3, 8, 9], T, T, rng)
        X = np.clip(rng.random((20, 6)), 0.01, 0.99)
        cfg = TrainConfig(lr=0.2, tca_lr=0.005, batch_size=10, seed=2)
        d2, hist = train_layerwise(d, X, 2, cfg, epochs_a=3, epochs_b=2, epochs_c=2)
        assert {r["layer"] for r in hist} == {0, 1}
        assert {r["phase"] for r in hist} == {"a", "b", "c"}
        assert d2.stack[0].hid.m == 2
        assert d2.stack[1].hid.m == 2
        # deterministic given seed
        d3, _ = train_layerwise(d, X, 2, cfg, epochs_a=3, epochs_b=2, epochs_c=2)
        assert_array_equal(d2.stack[0].W, d3.stack[0].W)


class TestUpdown:
    def test_zero_epochs_unchanged(self):
        d = tiny_dbn()
        X = np.random.default_rng(6).random((6, 4))
        y = np.array([3, 8, 9, 3, 8, 9])
        d2, hist = updown_finetune(d, X, y, TrainConfig(batch_size=6), epochs=0)
        assert hist == []
        assert_array_equal(d2.stack[0].W, d.stack[0].W)

    def test_deterministic_given_seed(self):
        d = tiny_dbn()
        X = np.random.default_rng(6).random((6, 4))
        y = np.array([3, 8, 9, 3, 8, 9])
        cfg = TrainConfig(lr=0.05, batch_size=3, seed=4, cd_k=3)
        d1, h1 = updown_finetune(d, X, y, cfg, epochs=2)
        d2, h2 = updown_finetune(d, X, y, cfg, epochs=2)
        assert_array_equal(d1.stack[0].W, d2.stack[0].W)
        assert_array_equal(d1.top.W, d2.top.W)
        assert h1 == h2

    def test_history_rows_carry_metrics(self):
        d = tiny_dbn()
        rng = np.random.default_rng(6)
        X = rng.random((6, 4))
        y = np.array([3, 8, 9, 3, 8, 9])
        Xv = rng.random((4, 4))
        yv = np.array([3, 8, 9, 3])
        cfg = TrainConfig(lr=0.05, batch_size=6, seed=4)
        _, hist = updown_finetune(d, X, y, cfg, epochs=2, X_val=Xv, y_val=yv)
        assert len(hist) == 2
        assert set(hist[0]) == {"epoch", "recon_mse", "val_err"}
        assert 0.0 <= hist[0]["val_err"] <= 1.0

    def test_freeze_tca_keeps_mixtures(self):
        d = tiny_dbn()
        X = np.random.default_rng(6).random((6, 4))
        y = np.array([3, 8, 9, 3, 8, 9])
        cfg = TrainConfig(lr=0.05, batch_size=3, seed=4, freeze_tca=True)
        d2, _ = updown_finetune(d, X, y, cfg, epochs=2)
        assert_array_equal(d2.stack[0].hid.A, d.stack[0].hid.A)
        assert_array_equal(d2.top.hid.B, d.top.hid.B)
        assert np.any(d2.stack[0].W != d.stack[0].W)


class TestPersistence:
    def test_round_trip_is_bit_exact(self, tmp_path):
        d = tiny_dbn(seed=13)
        path = tmp_path / "net.tcam"
        save_model(d, str(path))
        d2 = load_model(str(path), expect="dbn")
        assert d2.classes == d.classes
        assert len(d2.stack) == 1
        assert_array_equal(d2.stack[0].W, d.stack[0].W)
        assert_array_equal(d2.top.hid.B, d.top.hid.B)
        assert_array_equal(d2.top.a, d.top.a)
