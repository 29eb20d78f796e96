import zipfile

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import naive_forward
from contrastive_sne.numkit import (BatchNormState, CheckpointError, Layer, MlpParams, OptimizerState,
                                    RngState, finite_diff_grad, init_mlp, load_state, mlp_backward,
                                    mlp_forward, optimizer_step, relative_error, save_state)


class TestRngState:
    def test_same_seed_same_stream(self):
        a, b = RngState(7), RngState(7)
        np.testing.assert_array_equal(a.gen.standard_normal(20), b.gen.standard_normal(20))

    def test_split_independent_of_draws(self):
        a, b = RngState(3), RngState(3)
        a.gen.standard_normal(100)
        ca, cb = a.split(2), b.split(2)
        for x, y in zip(ca, cb):
            np.testing.assert_array_equal(x.gen.integers(0, 1 << 30, 5), y.gen.integers(0, 1 << 30, 5))

    def test_successive_splits_differ(self):
        r = RngState(3)
        first, second = r.split(1)[0], r.split(1)[0]
        assert first.spawn_key != second.spawn_key
        assert first.gen.random() != second.gen.random()

    def test_dict_round_trip_resumes_stream(self):
        r = RngState(11)
        r.gen.random(13)
        r.split(3)
        clone = RngState.from_dict(r.to_dict())
        np.testing.assert_array_equal(r.gen.random(5), clone.gen.random(5))
        assert r.split(1)[0].spawn_key == clone.split(1)[0].spawn_key


class TestForward:
    def test_identity_layer(self, rng):
        params = MlpParams([Layer(np.eye(3), np.zeros(3), "identity")])
        B = rng.gen.standard_normal((5, 3))
        out, _ = mlp_forward(params, None, B)
        np.testing.assert_array_equal(out, B)

    def test_zero_weights_relu(self, rng):
        params = MlpParams([Layer(np.zeros((2, 4)), np.zeros(4), "relu"), Layer(np.zeros((4, 3)), np.zeros(3), "relu")])
        out, _ = mlp_forward(params, None, rng.gen.standard_normal((6, 2)))
        np.testing.assert_array_equal(out, np.zeros((6, 3)))

    @pytest.mark.parametrize("activation", ["relu", "tanh"])
    def test_matches_naive_loop(self, rng, activation):
        params = init_mlp(2, [4], 3, rng, activation)
        params.layers[0].b[:] = rng.gen.standard_normal(4)
        X = np.array([[0.5, -1.0], [2.0, 0.25], [-0.3, 0.7]])
        out, _ = mlp_forward(params, None, X)
        np.testing.assert_allclose(out, naive_forward(params, X), rtol=0, atol=1e-12)

    def test_dimension_mismatch(self, rng):
        params = init_mlp(2, [4], 3, rng)
        with pytest.raises(ValueError, match="columns"):
            mlp_forward(params, None, np.zeros((3, 5)))

    def test_single_sample_batchnorm_train(self, rng):
        params = init_mlp(2, [4], 3, rng)
        with pytest.raises(ValueError, match="at least 2"):
            mlp_forward(params, BatchNormState.create(3), np.zeros((1, 2)))

    def test_batchnorm_train_standardizes(self, rng):
        params = init_mlp(3, [8], 2, rng)
        out, _ = mlp_forward(params, BatchNormState.create(2), rng.gen.standard_normal((50, 3)))
        np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-10)
        np.testing.assert_allclose(out.var(axis=0), 1.0, atol=1e-3)

    def test_batchnorm_running_stats(self, rng):
        params = init_mlp(3, [], 2, rng)
        bn = BatchNormState.create(2, momentum=1.0)
        X = rng.gen.standard_normal((10, 3))
        H, _ = mlp_forward(params, None, X)
        mlp_forward(params, bn, X)
        np.testing.assert_allclose(bn.running_mean, H.mean(axis=0), atol=1e-14)
        np.testing.assert_allclose(bn.running_var, H.var(axis=0, ddof=1), atol=1e-14)

    def test_glorot_bounds(self, rng):
        params = init_mlp(10, [30], 5, rng)
        assert np.all(np.abs(params.layers[0].W) <= np.sqrt(6 / 40))
        assert params.layers[-1].activation == "identity"

    def test_chain_check(self):
        with pytest.raises(ValueError, match="chain"):
            MlpParams([Layer(np.zeros((2, 3)), np.zeros(3)), Layer(np.zeros((4, 1)), np.zeros(1))])


def grads_agree(analytic, numeric):
    # relative error, except for gradients that vanish identically (e.g. the
    # last bias under train-mode batch norm), where only round-off is left
    return relative_error(analytic, numeric) < 1e-5 or np.max(np.abs(analytic - numeric)) < 1e-9


class TestBackward:
    def test_zero_upstream(self, rng):
        params = init_mlp(3, [5], 2, rng)
        out, cache = mlp_forward(params, None, rng.gen.standard_normal((4, 3)))
        grads, gin = mlp_backward(params, None, cache, np.zeros_like(out))
        assert all(np.all(a == 0) for a in grads.arrays())
        assert np.all(gin == 0)

    def test_identity_network(self, rng):
        params = MlpParams([Layer(np.eye(3), np.zeros(3), "identity")])
        out, cache = mlp_forward(params, None, rng.gen.standard_normal((4, 3)))
        G = rng.gen.standard_normal((4, 3))
        _, gin = mlp_backward(params, None, cache, G)
        np.testing.assert_array_equal(gin, G)

    @pytest.mark.parametrize("mode", [None, "train", "eval"])
    @pytest.mark.parametrize("activation", ["tanh", "relu"])
    def test_finite_differences(self, rng, mode, activation):
        params = init_mlp(3, [5, 4], 2, rng, activation)
        for layer in params.layers:
            layer.b[:] = 0.1 * rng.gen.standard_normal(layer.b.shape)
        X = rng.gen.standard_normal((6, 3))
        G = rng.gen.standard_normal((6, 2))
        bn = None
        if mode is not None:
            bn = BatchNormState.create(2)
            bn.gamma[:] = [1.5, 0.7]
            bn.beta[:] = [0.2, -0.1]
            bn.running_mean[:] = [0.3, -0.2]
            bn.running_var[:] = [2.0, 0.5]
            bn.mode = mode

        def scalar(p_arrays_or_x, which):
            def f(v):
                ps = params.copy()
                b2 = None if bn is None else bn.copy()
                x = X
                if which == "x":
                    x = v
                elif which == "gamma":
                    b2.gamma[:] = v
                elif which == "beta":
                    b2.beta[:] = v
                else:
                    li, part = which
                    setattr(ps.layers[li], part, v)
                return float(np.sum(mlp_forward(ps, b2, x)[0] * G))
            return f

        work_bn = None if bn is None else bn.copy()
        _, cache = mlp_forward(params, work_bn, X)
        grads, gin = mlp_backward(params, work_bn, cache, G)
        for li, (dW, db) in enumerate(grads.layers):
            num_W = finite_diff_grad(scalar(None, (li, "W")), params.layers[li].W)
            num_b = finite_diff_grad(scalar(None, (li, "b")), params.layers[li].b)
            assert grads_agree(dW, num_W)
            assert grads_agree(db, num_b)
        assert relative_error(gin, finite_diff_grad(scalar(None, "x"), X)) < 1e-5
        if bn is not None:
            assert relative_error(grads.bn[0], finite_diff_grad(scalar(None, "gamma"), bn.gamma)) < 1e-5
            assert relative_error(grads.bn[1], finite_diff_grad(scalar(None, "beta"), bn.beta)) < 1e-5

    def test_stale_cache(self, rng):
        params = init_mlp(3, [5], 2, rng)
        out, cache = mlp_forward(params, None, rng.gen.standard_normal((4, 3)))
        params.layers[0].W[0, 0] += 1.0
        with pytest.raises(ValueError, match="stale"):
            mlp_backward(params, None, cache, np.ones_like(out))

    def test_mismatched_bn(self, rng):
        params = init_mlp(3, [5], 2, rng)
        out, cache = mlp_forward(params, None, rng.gen.standard_normal((4, 3)))
        with pytest.raises(ValueError):
            mlp_backward(params, BatchNormState.create(2), cache, np.ones_like(out))


class TestOptimizer:
    def test_sgd_first_step(self):
        p = [np.array([1.0, -2.0])]
        g = [np.array([0.5, 0.25])]
        optimizer_step(OptimizerState("sgd-momentum", lr=0.1), p, g)
        np.testing.assert_allclose(p[0], [0.95, -2.025], atol=1e-15)

    def test_sgd_zero_grad(self):
        p = [np.array([1.0, -2.0])]
        optimizer_step(OptimizerState("sgd-momentum", lr=0.1), p, [np.zeros(2)])
        np.testing.assert_array_equal(p[0], [1.0, -2.0])

    def test_adam_quadratic(self):
        p = [np.array([1.0, 1.0])]
        opt = OptimizerState("adam", lr=0.05)
        for _ in range(500):
            optimizer_step(opt, p, [p[0].copy()])
        assert np.linalg.norm(p[0]) < 1e-3
        assert opt.step_count == 500

    def test_weight_decay_pulls_to_zero(self):
        p = [np.array([2.0])]
        optimizer_step(OptimizerState("sgd-momentum", lr=0.1, weight_decay=0.5), p, [np.zeros(1)])
        np.testing.assert_allclose(p[0], [1.9])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            optimizer_step(OptimizerState(), [np.zeros(2)], [np.zeros(3)])

    def test_non_finite(self):
        with pytest.raises(FloatingPointError):
            optimizer_step(OptimizerState(), [np.zeros(2)], [np.array([np.nan, 0.0])])

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            OptimizerState("rmsprop")


class TestFiniteDiff:
    def test_square_norm(self):
        g = finite_diff_grad(lambda x: float(np.sum(x * x)), np.array([1.0, 2.0]))
        np.testing.assert_allclose(g, [2.0, 4.0], atol=1e-6)

    def test_constant(self):
        np.testing.assert_array_equal(finite_diff_grad(lambda x: 3.0, np.ones((2, 2))), np.zeros((2, 2)))

    def test_non_finite_value(self):
        with pytest.raises(FloatingPointError):
            finite_diff_grad(lambda x: float("inf"), np.ones(2))

    def test_bad_step(self):
        with pytest.raises(ValueError):
            finite_diff_grad(lambda x: 0.0, np.ones(2), step=0)

    @given(st.lists(st.floats(-3, 3), min_size=1, max_size=6))
    def test_quadratic_exact(self, xs):
        x = np.array(xs)
        A = np.diag(np.arange(1, len(x) + 1, dtype=float))
        g = finite_diff_grad(lambda v: 0.5 * float(v @ A @ v), x)
        np.testing.assert_allclose(g, A @ x, atol=1e-6)


class TestCheckpoint:
    def _state(self, rng):
        params = init_mlp(3, [4], 2, rng)
        bn = BatchNormState.create(2)
        opt = OptimizerState("adam", lr=0.01)
        out, cache = mlp_forward(params, bn, rng.gen.standard_normal((5, 3)))
        grads, _ = mlp_backward(params, bn, cache, np.ones_like(out))
        optimizer_step(opt, params.arrays(), grads.arrays())
        return params, bn, opt, RngState(5)

    def test_round_trip_bit_exact(self, rng, tmp_path):
        params, bn, opt, r = self._state(rng)
        save_state(tmp_path / "c.ckpt", params, bn, opt, r, {"note": "x"})
        p2, bn2, opt2, r2, meta = load_state(tmp_path / "c.ckpt")
        for a, b in zip(params.arrays() + bn.arrays(), p2.arrays() + bn2.arrays()):
            np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(bn.running_var, bn2.running_var)
        for a, b in zip(opt.buffers[1], opt2.buffers[1]):
            np.testing.assert_array_equal(a, b)
        assert opt2.step_count == opt.step_count
        assert r2.gen.random() == r.gen.random()
        assert meta == {"note": "x"}

    def test_bytes_deterministic(self, rng, tmp_path):
        params, bn, opt, r = self._state(rng)
        save_state(tmp_path / "a.ckpt", params, bn, opt, r)
        save_state(tmp_path / "b.ckpt", params, bn, opt, r)
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_truncated(self, rng, tmp_path):
        params, bn, opt, r = self._state(rng)
        save_state(tmp_path / "c.ckpt", params, bn, opt, r)
        data = (tmp_path / "c.ckpt").read_bytes()
        (tmp_path / "t.ckpt").write_bytes(data[: len(data) // 2])
        with pytest.raises(CheckpointError):
            load_state(tmp_path / "t.ckpt")

    def test_version_mismatch_names_both(self, rng, tmp_path):
        params, bn, opt, r = self._state(rng)
        save_state(tmp_path / "c.ckpt", params, bn, opt, r)
        with zipfile.ZipFile(tmp_path / "c.ckpt") as zf:
            members = {n: zf.read(n) for n in zf.namelist()}
        members["meta.json"] = members["meta.json"].replace(b'"version": 1', b'"version": 99')
        with zipfile.ZipFile(tmp_path / "v.ckpt", "w") as zf:
            for n, d in members.items():
                zf.writestr(n, d)
        with pytest.raises(CheckpointError, match=r"99.*expected 1"):
            load_state(tmp_path / "v.ckpt")

    def test_not_a_checkpoint(self, tmp_path):
        (tmp_path / "x.ckpt").write_text("hello")
        with pytest.raises(CheckpointError):
            load_state(tmp_path / "x.ckpt")
