"""RBM unit tests: fields, free energy, CD updates, metrics, persistence."""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy.integrate import quad

from tcanet.activations import BaseKind, TcaParams, base_eval, tca_eval
from tcanet.data import load_model, save_model
from tcanet.rbm import (
    RbmModel,
    backward_field,
    cd_step,
    conditional_loglik,
    forward_field,
    free_energy,
    free_energy_grads,
    gibbs_chain,
    hidden_step,
    init_rbm,
    inverse_base_eval,
    reconstruction_metrics,
    swap_mixture,
    visible_step,
)

T = BaseKind.TED
S = BaseKind.SIGMOID_BERNOULLI
G = BaseKind.LINEAR_GAUSSIAN


def tiny_model(vis=T, base=T, n=4, h=3, m=2, seed=1):
    r = np.random.default_rng(seed)
    hid = TcaParams(base, r.normal(0, 0.5, (h, m)), r.normal(0, 0.7, (h, m)))
    return RbmModel(W=r.normal(0, 0.8, (n, h)), a=r.normal(0, 0.5, n),
                    b=r.normal(0, 0.5, h), vis=vis, hid=hid)


def rebuild(m, block, arr):
    W, a, b = m.W, m.a, m.b
    A, B = m.hid.A, m.hid.B
    if block == "W":
        W = arr
    elif block == "a":
        a = arr
    elif block == "b":
        b = arr
    elif block == "A":
        A = arr
    elif block == "B":
        B = arr
    return RbmModel(W=W, a=a, b=b, vis=m.vis, hid=TcaParams(m.hid.base, A, B))


class TestFields:
    def test_forward_field_hand_example(self):
        m = RbmModel(W=np.array([[1.0], [2.0]]), a=np.zeros(2), b=np.array([0.5]),
                     vis=T, hid=TcaParams.reduced(T, 1, 1))
        assert_allclose(forward_field(m, np.array([1.0, 1.0])), [3.5])
        assert_allclose(forward_field(m, np.array([[1.0, 1.0]])), [[3.5]])

    def test_backward_field_hand_example(self):
        m = RbmModel(W=np.array([[1.0], [2.0]]), a=np.array([0.25, -0.25]),
                     b=np.array([0.0]), vis=T, hid=TcaParams.reduced(T, 1, 1))
        assert_allclose(backward_field(m, np.array([0.5])), [0.75, 0.75])

    def test_fields_match_loop_oracle(self):
        m = tiny_model()
        rng = np.random.default_rng(0)
        X = rng.random((6, 4))
        H = rng.random((6, 3))
        alpha = forward_field(m, X)
        beta = backward_field(m, H)
        for s in range(6):
            for j in range(3):
                assert_allclose(alpha[s, j], m.b[j] + X[s] @ m.W[:, j], rtol=1e-14)
            for i in range(4):
                assert_allclose(beta[s, i], m.a[i] + H[s] @ m.W[i, :], rtol=1e-14)

    def test_deterministic_steps_are_mean_maps(self):
        m = tiny_model()
        x = np.random.default_rng(3).random((5, 4))
        h = hidden_step(m, x, mode="deterministic")
        assert_allclose(h, tca_eval(m.hid, forward_field(m, x)), rtol=1e-15)
        v = visible_step(m, h, mode="deterministic")
        assert_allclose(v, base_eval(m.vis, backward_field(m, h)), rtol=1e-15)

    def test_stochastic_hidden_matches_mean_within_3_sigma(self):
        m = tiny_model(vis=T, base=T)
        x = np.full((1, 4), 0.4)
        rng = np.random.default_rng(12)
        n = 4000
        draws = np.stack([hidden_step(m, x, mode="stochastic", rng=rng)[0]
                          for _ in range(n)])
        mean = hidden_step(m, x, mode="deterministic")[0]
        se = draws.std(axis=0) / np.sqrt(n)
        assert np.all(np.abs(draws.mean(axis=0) - mean) < 3.5 * se + 1e-4)

    def test_gibbs_chain_rejects_nonpositive_k(self):
        m = tiny_model()
        with pytest.raises(ValueError):
            gibbs_chain(m, np.full((1, 4), 0.5), 0, "deterministic")

    def test_gibbs_chain_seeded_reproducible(self):
        m = tiny_model()
        x0 = np.random.default_rng(5).random((3, 4))
        r1 = gibbs_chain(m, x0, 2, "stochastic", np.random.default_rng(42))[0]
        r2 = gibbs_chain(m, x0, 2, "stochastic", np.random.default_rng(42))[0]
        assert_array_equal(r1, r2)

    def test_invalid_mode_rejected(self):
        m = tiny_model()
        with pytest.raises(ValueError):
            hidden_step(m, np.full(4, 0.5), mode="hybrid")


class TestFreeEnergy:
    def test_all_zero_sigmoid_gives_minus_h_log2(self):
        m0 = RbmModel(W=np.zeros((6, 5)), a=np.zeros(6), b=np.zeros(5), vis=S,
                      hid=TcaParams.reduced(S, 5, 1))
        x = np.random.default_rng(1).random(6)
        assert_allclose(free_energy(m0, x), [-5 * np.log(2)], rtol=1e-15)

    def test_linear_in_visible_bias(self):
        m = tiny_model()
        rng = np.random.default_rng(2)
        delta = rng.normal(0, 1, 4)
        x = rng.random(4)
        m2 = rebuild(m, "a", m.a + delta)
        got = free_energy(m, x) - free_energy(m2, x)
        assert_allclose(got, [delta @ x], rtol=1e-10)

    def test_gradients_match_finite_differences(self):
        # every component of every block, central differences
        m = tiny_model()
        X = np.random.default_rng(17).random((5, 4))
        g = free_energy_grads(m, X)
        eps = 1e-6

        def fmean(model):
            return float(np.mean(free_energy(model, X)))

        for block in ("W", "a", "b", "A", "B"):
            arr = {"W": m.W, "a": m.a, "b": m.b, "A": m.hid.A, "B": m.hid.B}[block]
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                up = arr.copy()
                up[idx] += eps
                dn = arr.copy()
                dn[idx] -= eps
                fd = (fmean(rebuild(m, block, up)) - fmean(rebuild(m, block, dn))) / (2 * eps)
                rel = abs(fd - g[block][idx]) / max(abs(fd), 1e-3)
                assert rel < 1e-5, f"{block}[{idx}]: fd={fd} analytic={g[block][idx]}"

    def test_weighted_grads_are_linear_in_weights(self):
        m = tiny_model()
        rng = np.random.default_rng(8)
        X = rng.random((6, 4))
        w = rng.normal(0, 1, 6)
        g_pos = free_energy_grads(m, X, weights=w)
        g_neg = free_energy_grads(m, X, weights=-w)
        for k in g_pos:
            assert_allclose(g_pos[k], -g_neg[k], rtol=1e-12, atol=1e-15)


class TestConditionalLoglik:
    def test_density_integrates_to_one(self):
        m1 = RbmModel(W=np.zeros((1, 1)), a=np.zeros(1), b=np.zeros(1), vis=T,
                      hid=TcaParams.reduced(T, 1, 1))
        val = quad(lambda x: np.exp(conditional_loglik(m1, np.array([x]), np.array([2.0]))), 0, 1)[0]
        assert abs(val - 1.0) < 1e-9

    def test_zero_field_gives_zero(self):
        m1 = RbmModel(W=np.zeros((1, 1)), a=np.zeros(1), b=np.zeros(1), vis=T,
                      hid=TcaParams.reduced(T, 1, 1))
        assert conditional_loglik(m1, np.array([0.3]), np.array([0.0])) == 0.0

    def test_derivative_is_residual(self):
        # d/d beta of log p(x|beta) = x - f0(beta)
        m1 = RbmModel(W=np.zeros((1, 1)), a=np.zeros(1), b=np.zeros(1), vis=T,
                      hid=TcaParams.reduced(T, 1, 1))
        x = np.array([0.4])
        eps = 1e-6
        fd = (conditional_loglik(m1, x, np.array([1.1 + eps]))
              - conditional_loglik(m1, x, np.array([1.1 - eps]))) / (2 * eps)
        assert abs(fd - (0.4 - float(base_eval(T, 1.1)))) < 1e-8

    def test_support_validation(self):
        m1 = RbmModel(W=np.zeros((1, 1)), a=np.zeros(1), b=np.zeros(1), vis=T,
                      hid=TcaParams.reduced(T, 1, 1))
        with pytest.raises(ValueError):
            conditional_loglik(m1, np.array([1.4]), np.array([0.0]))


class TestCdStep:
    def test_fixed_point_update_is_zero(self):
        m = tiny_model(seed=3)
        x = np.full((1, 4), 0.5)
        for _ in range(400):
            x, _, _ = gibbs_chain(m, x, 1, "deterministic")
        x_next, _, _ = gibbs_chain(m, x, 1, "deterministic")
        assert np.max(np.abs(x_next - x)) < 1e-13
        m_new, _ = cd_step(m, x, k=1, lr=0.05, tca_lr=0.01, freeze_tca=False)
        for got, want in ((m_new.W, m.W), (m_new.a, m.a), (m_new.b, m.b),
                          (m_new.hid.A, m.hid.A), (m_new.hid.B, m.hid.B)):
            assert np.max(np.abs(got - want)) < 1e-12

    def test_matches_classical_cd_for_reduced_sigmoid(self):
        # reduced TCA-RBM must reproduce the textbook CD-1 update exactly
        rng = np.random.default_rng(17)
        m = RbmModel(W=rng.normal(0, 0.6, (5, 3)), a=rng.normal(0, 0.3, 5),
                     b=rng.normal(0, 0.3, 3), vis=S, hid=TcaParams.reduced(S, 3, 1))
        xb = (rng.random((7, 5)) < 0.5).astype(float)
        x1, _, _ = gibbs_chain(m, xb, 1, "deterministic")
        h0 = tca_eval(m.hid, forward_field(m, xb))
        h1 = tca_eval(m.hid, forward_field(m, x1))
        lr = 0.05
        m_cd, _ = cd_step(m, xb, k=1, lr=lr, freeze_tca=True, mode="deterministic")
        assert_allclose(m_cd.W, m.W + lr * (xb.T @ h0 - x1.T @ h1) / 7, atol=1e-13)
        assert_allclose(m_cd.a, m.a + lr * (xb - x1).mean(0), atol=1e-13)
        assert_allclose(m_cd.b, m.b + lr * (h0 - h1).mean(0), atol=1e-13)

    def test_freeze_tca_keeps_mixture_bits_identical(self):
        m = tiny_model(seed=9)
        x = np.random.default_rng(4).random((6, 4))
        m_new, _ = cd_step(m, x, k=1, lr=0.1, freeze_tca=True)
        assert_array_equal(m_new.hid.A, m.hid.A)
        assert_array_equal(m_new.hid.B, m.hid.B)
        assert np.any(m_new.W != m.W)

    def test_metrics_reported(self):
        m = tiny_model(seed=9)
        x = np.random.default_rng(4).random((6, 4))
        _, metrics = cd_step(m, x, k=1, lr=0.1, freeze_tca=True)
        assert set(metrics) == {"mse", "cond_ll"}
        assert 0.0 <= metrics["mse"] <= 1.0

    def test_seeded_stochastic_step_reproducible(self):
        m = tiny_model(seed=9)
        x = np.random.default_rng(4).random((6, 4))
        m1, _ = cd_step(m, x, k=2, lr=0.1, freeze_tca=False, mode="stochastic",
                        rng=np.random.default_rng(7))
        m2, _ = cd_step(m, x, k=2, lr=0.1, freeze_tca=False, mode="stochastic",
                        rng=np.random.default_rng(7))
        assert_array_equal(m1.W, m2.W)
        assert_array_equal(m1.hid.B, m2.hid.B)


class TestInitAndSwap:
    def test_init_shapes_and_bias_matches_means(self):
        rng = np.random.default_rng(0)
        means = np.array([0.3, 0.5, 0.7])  # inside the [-4,4] clip for ted
        m = init_rbm(3, 2, T, T, rng, data_means=means)
        assert m.W.shape == (3, 2)
        assert m.hid.m == 1
        assert_array_equal(m.b, np.zeros(2))
        assert_allclose(base_eval(T, m.a), means, atol=1e-9)

    def test_init_bias_clip(self):
        rng = np.random.default_rng(0)
        means = np.array([1e-9, 1.0 - 1e-9])
        m = init_rbm(2, 2, T, T, rng, data_means=means)
        assert_array_equal(m.a, [-4.0, 4.0])

    def test_swap_mixture_preserves_transfer_function_closely(self):
        rng = np.random.default_rng(1)
        m = init_rbm(4, 3, T, T, rng)
        m3 = swap_mixture(m, 3, rng, spread=0.1)
        assert m3.hid.m == 3
        assert_array_equal(m3.W, m.W)
        alpha = np.linspace(-6, 6, 41).reshape(-1, 1).repeat(3, axis=1)
        before = tca_eval(m.hid, alpha)
        after = tca_eval(m3.hid, alpha)
        assert np.max(np.abs(after - before)) < 0.02

    def test_inverse_base_eval_round_trip(self):
        ys = np.array([0.23, 0.4, 0.5, 0.62, 0.77])
        assert_allclose(base_eval(T, inverse_base_eval(T, ys)), ys, atol=1e-10)
        assert_allclose(base_eval(S, inverse_base_eval(S, ys)), ys, atol=1e-12)
        assert_allclose(inverse_base_eval(G, ys), ys, atol=1e-15)


class TestMetricsAndPersistence:
    def test_reconstruction_metrics_zero_for_perfect_model(self):
        # a fixed point of the deterministic chain reconstructs itself
        m = tiny_model(seed=3)
        x = np.full((1, 4), 0.5)
        for _ in range(400):
            x, _, _ = gibbs_chain(m, x, 1, "deterministic")
        mse, _ = reconstruction_metrics(m, x, k=1)
        assert mse < 1e-20

    def test_round_trip_is_bit_exact(self, tmp_path):
        m = tiny_model(seed=11)
        path = tmp_path / "layer.tcam"
        save_model(m, str(path))
        m2 = load_model(str(path), expect="rbm")
        assert m2.vis == m.vis
        assert_array_equal(m2.W, m.W)
        assert_array_equal(m2.a, m.a)
        assert_array_equal(m2.b, m.b)
        assert_array_equal(m2.hid.A, m.hid.A)
        assert_array_equal(m2.hid.B, m.hid.B)
