import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from jointpred import autodiff as ad


def dense_store(rng, sizes, prefix="mlp"):
    params = ad.ParamStore()
    names = []
    for n, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        name = f"{prefix}.{n}"
        params.add_dense(name, fan_in, fan_out, rng)
        params[f"{name}.b"] = rng.normal(size=fan_out)
        names.append(name)
    return params, names


def central_diff(f, x, eps=1e-6):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        up, down = x.copy(), x.copy()
        up[idx] += eps
        down[idx] -= eps
        g[idx] = (f(up) - f(down)) / (2 * eps)
    return g


class TestParamStore:
    def test_glorot_bounds(self):
        params = ad.ParamStore()
        params.add_dense("l", 30, 10, np.random.default_rng(0))
        a = math.sqrt(6 / 40)
        assert np.abs(params["l.W"]).max() <= a
        assert params["l.W"].std() > a / 3
        assert not params["l.b"].any()

    def test_duplicate_and_shape(self):
        params = ad.ParamStore({"w": np.zeros(3)})
        with pytest.raises(KeyError):
            params.add("w", np.zeros(3))
        with pytest.raises(ad.DimensionError):
            params["w"] = np.zeros(4)

    def test_checkpoint_round_trip(self, tmp_path):
        params, _ = dense_store(np.random.default_rng(1), [4, 3, 2])
        params.save(tmp_path / "p.npz")
        back = ad.ParamStore.load(tmp_path / "p.npz")
        assert back.equals(params) and back.names() == params.names()

    def test_checkpoint_rejects_foreign_file(self, tmp_path):
        np.savez(tmp_path / "x.npz", w=np.zeros(2))
        with pytest.raises(ValueError):
            ad.ParamStore.load(tmp_path / "x.npz")


class TestOps:
    def test_square(self):
        params = ad.ParamStore({"w": np.array(2.0)})
        tape = ad.Tape()
        w = tape.param(params, "w")
        assert ad.backward_gradients(tape, w * w, params)["w"] == pytest.approx(4.0)

    def test_stop_gradient_product(self):
        params = ad.ParamStore({"x": np.array(3.0)})
        tape = ad.Tape()
        x = tape.param(params, "x")
        sg = ad.stop_gradient(x)
        assert sg.value == x.value
        assert ad.backward_gradients(tape, sg * x, params)["x"] == pytest.approx(3.0)

    def test_detached_branch_zero(self):
        params = ad.ParamStore({"x": np.ones(3), "y": np.ones(3)})
        tape = ad.Tape()
        x = tape.param(params, "x")
        y = tape.param(params, "y")
        loss = ad.total(x * 2.0 + ad.stop_gradient(y * 5.0))
        g = ad.backward_gradients(tape, loss, params)
        assert np.array_equal(g["y"], np.zeros(3)) and np.allclose(g["x"], 2.0)

    def test_off_path_param_gets_zero(self):
        params = ad.ParamStore({"a": np.ones(2), "b": np.ones((2, 2))})
        tape = ad.Tape()
        g = ad.backward_gradients(tape, ad.total(tape.param(params, "a")), params)
        assert np.array_equal(g["b"], np.zeros((2, 2)))

    def test_non_scalar_loss(self):
        params = ad.ParamStore({"a": np.ones(2)})
        tape = ad.Tape()
        with pytest.raises(ad.ContractError):
            ad.backward_gradients(tape, tape.param(params, "a"), params)

    @settings(max_examples=40)
    @given(arrays(np.float64, (3, 4), elements=st.floats(-3, 3)),
           arrays(np.float64, (4, 2), elements=st.floats(-3, 3)))
    def test_primitive_gradients(self, a, b):
        # loss touches matmul, add, mul, take, reshape, transpose, concat, log_softmax
        def build(av, tape):
            x = tape.constant(av) if not isinstance(av, ad.Var) else av
            y = (x @ tape.constant(b)) * 0.5 + 1.0
            z = ad.concat([y, ad.transpose(y, (1, 0)).reshape(3, 2)], axis=0)
            w = ad.log_softmax(z * z)
            return ad.total(w[(np.array([0, 2, 5]), np.array([1, 0, 1]))])

        params = ad.ParamStore({"a": a})
        tape = ad.Tape()
        grad = ad.backward_gradients(tape, build(tape.param(params, "a"), tape), params)["a"]
        num = central_diff(lambda v: float(build(v, ad.Tape()).value), a)
        assert np.abs(grad - num).max() < 1e-6 * max(1.0, np.abs(num).max())

    def test_mlp_zero_weights(self):
        params = ad.ParamStore()
        params.add_dense("l0", 3, 4, np.random.default_rng(0), zero=True)
        params.add_dense("l1", 4, 2, np.random.default_rng(0), zero=True)
        out = ad.mlp_forward(np.array([1.0, -2.0, 3.0]), ["l0", "l1"], params, ad.Tape())
        assert np.array_equal(out.value, np.zeros(2))

    def test_mlp_single_linear_layer(self):
        rng = np.random.default_rng(2)
        params, names = dense_store(rng, [5, 3])
        x = rng.normal(size=5)
        out = ad.mlp_forward(x, names, params, ad.Tape())
        assert np.allclose(out.value, x @ params["mlp.0.W"] + params["mlp.0.b"], atol=1e-14)

    def test_mlp_relu_hidden_only(self):
        rng = np.random.default_rng(3)
        params, names = dense_store(rng, [4, 6, 3])
        params["mlp.1.b"] = np.array([-50.0, 0.0, 0.0])
        x = rng.normal(size=(7, 4))
        out = ad.mlp_forward(x, names, params, ad.Tape()).value
        h = np.maximum(x @ params["mlp.0.W"] + params["mlp.0.b"], 0)
        assert np.allclose(out, h @ params["mlp.1.W"] + params["mlp.1.b"], atol=1e-13)
        assert (out < 0).any()  # linear output

    def test_mlp_dimension_error_names_layer(self):
        params, names = dense_store(np.random.default_rng(0), [4, 3, 2])
        with pytest.raises(ad.DimensionError, match="mlp.0"):
            ad.mlp_forward(np.ones(5), names, params, ad.Tape())

    def test_mlp_ce_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(4)
        params, names = dense_store(rng, [6, 8, 5])
        x = rng.normal(size=6)

        def loss_fn(p, tape):
            return ad.softmax_cross_entropy(ad.mlp_forward(x, names, p, tape), 3)

        res = ad.finite_diff_check(loss_fn, params, 1e-6)
        assert res.max_rel_error < 1e-6


class TestLosses:
    def test_ce_uniform_two(self):
        v = ad.softmax_cross_entropy(ad.Tape().constant([0.0, 0.0]), 0).value
        assert v == pytest.approx(math.log(2), abs=1e-15)

    @given(st.floats(-1e3, 1e3), st.integers(0, 3))
    def test_ce_constant_logits(self, c, j):
        v = ad.softmax_cross_entropy(ad.Tape().constant([c] * 4), j).value
        assert v == pytest.approx(math.log(4), abs=1e-12)

    def test_ce_vs_naive(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            logits = rng.normal(0, 3, size=6)
            label = int(rng.integers(6))
            naive = -math.log(math.exp(logits[label]) / sum(math.exp(v) for v in logits))
            assert abs(ad.softmax_cross_entropy(ad.Tape().constant(logits), label).value - naive) < 1e-12

    @settings(max_examples=50)
    @given(arrays(np.float64, 5, elements=st.floats(-20, 20)), st.floats(-100, 100), st.integers(0, 4))
    def test_ce_shift_invariance(self, logits, c, j):
        tape = ad.Tape()
        a = ad.softmax_cross_entropy(tape.constant(logits), j).value
        b = ad.softmax_cross_entropy(tape.constant(logits + c), j).value
        assert abs(a - b) <= 1e-12 * max(1.0, abs(c))

    def test_ce_label_range(self):
        with pytest.raises(IndexError):
            ad.softmax_cross_entropy(ad.Tape().constant([0.0, 1.0]), 2)

    def test_huber_values(self):
        tape = ad.Tape()
        assert ad.huber(tape.constant([0.0]), [0.0]).value == 0.0
        assert ad.huber(tape.constant([0.5]), [0.0], 1.0).value == pytest.approx(0.125)
        assert ad.huber(tape.constant([3.0]), [0.0], 1.0).value == pytest.approx(2.5)
        with pytest.raises(ad.DimensionError):
            ad.huber(tape.constant([1.0, 2.0]), [1.0])

    def test_huber_gradient(self):
        rng = np.random.default_rng(6)
        target = rng.normal(size=10)
        params = ad.ParamStore({"p": target + rng.uniform(-3, 3, size=10)})
        res = ad.finite_diff_check(lambda p, t: ad.huber(t.param(p, "p"), target, 1.0), params, 1e-6)
        assert res.max_rel_error < 1e-6


class TestFiniteDiffCheck:
    def test_linear_loss(self):
        params = ad.ParamStore({"w": np.arange(4.0)})
        coef = np.array([1.0, -2.0, 0.5, 3.0])
        # no truncation error for a linear loss, so a large step only cuts rounding noise
        res = ad.finite_diff_check(lambda p, t: ad.total(t.param(p, "w") * coef), params, 1e-3)
        assert res.max_rel_error < 1e-10

    def test_corrupted_gradient_fails(self):
        rng = np.random.default_rng(7)
        params, names = dense_store(rng, [3, 4, 2])

        def loss_fn(p, tape):
            return ad.softmax_cross_entropy(ad.mlp_forward(np.ones(3), names, p, tape), 1)

        tape = ad.Tape()
        grads = ad.backward_gradients(tape, loss_fn(params, tape), params)
        doubled = {k: 2 * v for k, v in grads.items()}
        assert ad.finite_diff_check(loss_fn, params, 1e-6).passed(1e-4)
        assert not ad.finite_diff_check(loss_fn, params, 1e-6, grads=doubled).passed(1e-4)

    def test_non_finite_loss(self):
        params = ad.ParamStore({"w": np.array([np.inf])})
        with pytest.raises(ad.NumericError):
            ad.finite_diff_check(lambda p, t: ad.total(t.param(p, "w")), params)

    def test_kink_is_skipped(self):
        params = ad.ParamStore({"w": np.array([0.0, 1.0])})
        res = ad.finite_diff_check(lambda p, t: ad.total(ad.relu(t.param(p, "w"))), params, 1e-6,
                                   skip_kinks=True)
        assert res.skipped == 1 and res.checked == 1 and res.max_rel_error < 1e-9


class TestAdamW:
    def test_zero_gradient_no_change(self):
        params = ad.ParamStore({"w": np.array([1.0, -2.0])})
        state = ad.AdamWState()
        for _ in range(5):
            ad.adamw_step(params, {"w": np.zeros(2)}, ad.AdamWConfig(lr=0.1), state)
        assert np.array_equal(params["w"], [1.0, -2.0])

    def test_first_step_is_lr_sign(self):
        params = ad.ParamStore({"w": np.array([0.5, 0.5])})
        ad.adamw_step(params, {"w": np.array([3.0, -0.02])}, ad.AdamWConfig(lr=0.01), ad.AdamWState())
        # m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
        expected = 0.5 - 0.01 * np.array([3.0, -0.02]) / (np.abs([3.0, -0.02]) + 1e-8)
        assert np.allclose(params["w"], expected, atol=1e-15)

    def test_weight_decay_is_decoupled(self):
        params = ad.ParamStore({"w": np.array([2.0])})
        ad.adamw_step(params, {"w": np.zeros(1)}, ad.AdamWConfig(lr=0.1, weight_decay=0.5), ad.AdamWState())
        assert params["w"][0] == pytest.approx(2.0 * (1 - 0.05))

    def test_convex_quadratic(self):
        target = np.array([1.5, -0.5, 3.0])
        scale = np.array([1.0, 4.0, 0.25])
        params = ad.ParamStore({"w": np.zeros(3)})
        state = ad.AdamWState()
        hyper = ad.AdamWConfig(lr=0.1)
        for step in range(200):
            if step == 150:
                hyper.lr = 0.01
            g = 2 * scale * (params["w"] - target)
            ad.adamw_step(params, {"w": g}, hyper, state)
        loss = float(np.sum(scale * (params["w"] - target) ** 2))
        assert loss < 1e-6

    def test_non_finite_gradient_named(self):
        params = ad.ParamStore({"layer.W": np.zeros(2)})
        with pytest.raises(ad.NumericError, match="layer.W"):
            ad.adamw_step(params, {"layer.W": np.array([np.nan, 0.0])}, ad.AdamWConfig(), ad.AdamWState())
