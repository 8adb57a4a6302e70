import numpy as np
import pytest

from tenproj.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from tenproj.gradcheck import central_diff_gradient, compare_gradients
from tenproj.nn import (
    AvgPool2D,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    Network,
    ReLU,
    RMSProp,
    SoftmaxCrossEntropy,
    TensorProjection,
    conv2d_reference,
    count_params,
    rmsprop_step,
    softmax_cross_entropy,
)


def tiny_classifier(seed=0):
    """Miniature conv + projection classifier for 6x6 grayscale, 4 classes."""
    return Network(
        input_shape=(6, 6, 1),
        layers=[
            Conv2D(1, 4, kernel=(3, 3), padding="same", seed=(seed, 0)),
            ReLU(),
            TensorProjection((6, 6, 4), (3, 3, 4), seed=(seed, 1)),
            Flatten(),
            Dense(36, 16, seed=(seed, 2)),
            ReLU(),
            Dense(16, 4, seed=(seed, 3)),
        ],
    )


class TestConv2D:
    def test_one_by_one_identity_kernel(self):
        conv = Conv2D(2, 2, kernel=(1, 1), padding="same", seed=0)
        conv.w[0, 0] = np.eye(2)
        conv.b[...] = 0.0
        x = np.random.default_rng(0).standard_normal((3, 5, 5, 2))
        assert np.allclose(conv.forward(x), x, atol=1e-15)

    def test_ones_kernel_center_sums_window(self):
        conv = Conv2D(1, 1, kernel=(3, 3), padding="same", seed=0)
        conv.w[...] = 1.0
        conv.b[...] = 0.0
        x = np.arange(9.0).reshape(1, 3, 3, 1)
        out = conv.forward(x)
        assert out[0, 1, 1, 0] == pytest.approx(x.sum())

    def test_parameter_count_example(self):
        assert Conv2D(1, 32, kernel=(3, 3)).num_params() == 320

    def test_matches_reference_on_random_shapes(self):
        rng = np.random.default_rng(1)
        cases = [((2, 5, 5, 2), (3, 3), (1, 1), "same"),
                 ((1, 6, 4, 3), (3, 3), (2, 2), "same"),
                 ((2, 5, 6, 1), (2, 3), (1, 2), "valid")]
        for shape, kernel, stride, padding in cases:
            conv = Conv2D(shape[3], 3, kernel=kernel, stride=stride,
                          padding=padding, seed=2)
            x = rng.standard_normal(shape)
            fast = conv.forward(x)
            slow = conv2d_reference(x, conv.w, conv.b, stride=stride, padding=padding)
            assert np.abs(fast - slow).max() <= 1e-12

    def test_zero_upstream_gradient(self):
        conv = Conv2D(2, 3, seed=3)
        x = np.random.default_rng(2).standard_normal((2, 4, 4, 2))
        out = conv.forward(x)
        dx = conv.backward(np.zeros_like(out))
        assert np.array_equal(dx, np.zeros_like(x))
        assert np.array_equal(conv.dw, np.zeros_like(conv.w))
        assert np.array_equal(conv.db, np.zeros_like(conv.b))

    def test_backward_matches_finite_differences(self):
        conv = Conv2D(2, 2, kernel=(3, 3), padding="same", seed=4)
        x = np.random.default_rng(3).standard_normal((1, 4, 4, 2))
        out = conv.forward(x)
        dx = conv.backward(out)

        numeric_dx = central_diff_gradient(
            lambda x_new: 0.5 * float(np.sum(conv.forward(x_new) ** 2)), x)
        assert compare_gradients(dx, numeric_dx, tol=1e-6).passed

        original = conv.w.copy()

        def loss_w(w_new):
            conv.w[...] = w_new
            return 0.5 * float(np.sum(conv.forward(x) ** 2))

        numeric_dw = central_diff_gradient(loss_w, original)
        conv.w[...] = original
        conv.forward(x)
        conv.backward(conv.forward(x))
        assert compare_gradients(conv.dw, numeric_dw, tol=1e-6).passed

    def test_batch_additivity(self):
        conv = Conv2D(1, 2, seed=5)
        x = np.random.default_rng(4).standard_normal((2, 4, 4, 1))
        out = conv.forward(x)
        conv.backward(out)
        dw_batch = conv.dw.copy()
        total = np.zeros_like(conv.dw)
        for i in range(2):
            single = conv.forward(x[i:i + 1])
            conv.backward(single)
            total += conv.dw
        assert np.abs(dw_batch - total).max() <= 1e-12

    def test_output_shape_validates_channels(self):
        with pytest.raises(ValueError):
            Conv2D(3, 4).output_shape((8, 8, 2))


class TestAvgPool:
    def test_constant_input(self):
        pool = AvgPool2D((2, 2))
        x = np.full((2, 4, 4, 3), 1.7)
        assert np.allclose(pool.forward(x), np.full((2, 2, 2, 3), 1.7), atol=1e-15)

    def test_single_window_mean(self):
        pool = AvgPool2D((2, 2))
        x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2, 1)
        assert pool.forward(x)[0, 0, 0, 0] == pytest.approx(2.5)

    def test_backward_splits_evenly(self):
        pool = AvgPool2D((2, 2))
        x = np.zeros((1, 2, 2, 1))
        pool.forward(x)
        dx = pool.backward(np.ones((1, 1, 1, 1)))
        assert np.allclose(dx, np.full((1, 2, 2, 1), 0.25), atol=1e-15)

    def test_rejects_odd_spatial_dims(self):
        pool = AvgPool2D((2, 2))
        with pytest.raises(ValueError):
            pool.forward(np.zeros((1, 5, 4, 1)))
        with pytest.raises(ValueError):
            pool.output_shape((5, 4, 1))


class TestDenseAndFriends:
    def test_dense_parameter_counts(self):
        assert Dense(3136, 640).num_params() == 2007680
        assert Dense(640, 10).num_params() == 6410

    def test_dense_backward_matches_finite_differences(self):
        dense = Dense(4, 3, seed=6)
        x = np.random.default_rng(5).standard_normal((3, 4))
        out = dense.forward(x)
        dx = dense.backward(out)
        numeric = central_diff_gradient(
            lambda x_new: 0.5 * float(np.sum(dense.forward(x_new) ** 2)), x)
        assert compare_gradients(dx, numeric, tol=1e-6).passed

    def test_relu(self):
        relu = ReLU()
        x = np.array([[-1.0, 2.0], [0.5, -3.0]])
        assert np.array_equal(relu.forward(x), [[0.0, 2.0], [0.5, 0.0]])
        assert np.array_equal(relu.backward(np.ones_like(x)), [[0.0, 1.0], [1.0, 0.0]])

    def test_flatten_is_column_major_per_sample(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2, 1)
        flat = Flatten()
        assert np.array_equal(flat.forward(x), [[1.0, 3.0, 2.0, 4.0]])
        assert np.array_equal(flat.backward(flat.forward(x)), x)

    def test_flatten_roundtrip_random(self):
        x = np.random.default_rng(6).standard_normal((3, 4, 5, 2))
        flat = Flatten()
        assert np.array_equal(flat.backward(flat.forward(x)), x)


class TestDropout:
    def test_eval_mode_is_identity(self):
        drop = Dropout(0.5, seed=1, layer_id=0)
        x = np.random.default_rng(7).standard_normal((4, 6))
        assert np.array_equal(drop.forward(x, train=False), x)
        assert np.array_equal(drop.backward(x), x)

    def test_train_mode_masks_and_scales(self):
        drop = Dropout(0.5, seed=1, layer_id=0)
        x = np.ones((64, 64))
        y = drop.forward(x, train=True, step=0)
        values = np.unique(y)
        assert set(values.tolist()) <= {0.0, 2.0}
        assert 0.0 in values and 2.0 in values

    def test_mask_is_pure_function_of_seed_layer_step(self):
        x = np.ones((8, 8))
        a = Dropout(0.5, seed=3, layer_id=2).forward(x, train=True, step=5)
        b = Dropout(0.5, seed=3, layer_id=2).forward(x, train=True, step=5)
        c = Dropout(0.5, seed=3, layer_id=2).forward(x, train=True, step=6)
        d = Dropout(0.5, seed=3, layer_id=1).forward(x, train=True, step=5)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)
        assert not np.array_equal(a, d)

    def test_backward_uses_same_mask(self):
        drop = Dropout(0.5, seed=4, layer_id=0)
        x = np.random.default_rng(8).standard_normal((5, 5))
        y = drop.forward(x, train=True, step=0)
        dy = np.ones_like(x)
        dx = drop.backward(dy)
        assert np.array_equal((y != 0), (dx != 0))

    def test_rejects_bad_probability(self):
        with pytest.raises(ValueError):
            Dropout(1.0)


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        loss, _ = softmax_cross_entropy(np.zeros((4, 10)), np.arange(4) % 10)
        assert loss == pytest.approx(np.log(10.0), abs=1e-12)

    def test_saturated_logits_are_stable(self):
        loss, _ = softmax_cross_entropy(np.array([[1e9, 0.0]]), np.array([0]))
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(9)
        logits = rng.standard_normal((4, 5))
        labels = rng.integers(0, 5, size=4)
        _, dlogits = softmax_cross_entropy(logits, labels)
        numeric = central_diff_gradient(
            lambda l_new: softmax_cross_entropy(l_new, labels)[0], logits)
        assert compare_gradients(dlogits, numeric, tol=1e-6).passed

    def test_invalid_label_rejected(self):
        with pytest.raises(ValueError):
            softmax_cross_entropy(np.zeros((2, 3)), np.array([0, 3]))


class TestRMSProp:
    def test_zero_gradient_leaves_params(self):
        p = np.array([1.0, -2.0])
        acc = np.array([0.5, 0.5])
        rmsprop_step(p, np.zeros(2), acc)
        assert np.array_equal(p, [1.0, -2.0])

    def test_scalar_update_value(self):
        p = np.array([1.0])
        acc = np.zeros(1)
        rmsprop_step(p, np.array([1.0]), acc, lr=0.001, rho=0.9, delta=1e-7)
        assert acc[0] == pytest.approx(0.1)
        assert p[0] == pytest.approx(1.0 - 0.001 / (np.sqrt(0.1) + 1e-7))

    def test_accumulator_stays_nonnegative(self):
        rng = np.random.default_rng(10)
        p = np.zeros(4)
        acc = np.zeros(4)
        for _ in range(1000):
            rmsprop_step(p, rng.standard_normal(4), acc)
            assert np.all(acc >= 0)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            rmsprop_step(np.zeros(2), np.zeros(3), np.zeros(2))

    def test_optimizer_over_parameter_list(self):
        opt = RMSProp()
        params = [np.ones(2), np.ones((2, 2))]
        grads = [np.zeros(2), np.ones((2, 2))]
        opt.step(params, grads)
        assert np.array_equal(params[0], np.ones(2))
        assert params[1][0, 0] < 1.0


class TestNetwork:
    def test_shape_chain_validated_at_build(self):
        with pytest.raises(ValueError):
            Network((6, 6, 1), [Conv2D(2, 4)])  # channel mismatch

    def test_forward_validates_input_shape(self):
        model = tiny_classifier()
        with pytest.raises(ValueError):
            model.forward(np.zeros((2, 5, 5, 1)))

    def test_count_params_empty_model(self):
        assert count_params(Network((4,), [])) == 0

    def test_full_gradient_matches_finite_differences(self):
        # screen seeds so no ReLU pre-activation sits near its kink, where
        # finite differences are invalid
        for seed in range(20):
            model = tiny_classifier(seed)
            rng = np.random.default_rng(seed)
            x = rng.standard_normal((2, 6, 6, 1))
            labels = rng.integers(0, 4, size=2)
            margins = []
            out = x
            for layer in model.layers:
                nxt = layer.forward(out, train=False)
                if layer.kind == "relu":
                    margins.append(np.abs(out).min())
                out = nxt
            if min(margins) > 1e-3:
                break
        else:
            pytest.fail("no kink-safe seed found")

        model.loss_and_gradients(x, labels, train=False)
        analytic = [g.copy() for g in model.grads()]
        for param, grad in zip(model.params(), analytic):
            original = param.copy()

            def loss(p_new, param=param):
                param[...] = p_new
                logits = model.forward(x, train=False)
                return softmax_cross_entropy(logits, labels)[0]

            numeric = central_diff_gradient(loss, original)
            param[...] = original
            assert compare_gradients(grad, numeric, tol=1e-6).passed

    def test_overfit_loss_decreases(self):
        model = tiny_classifier(seed=1)
        rng = np.random.default_rng(11)
        x = rng.standard_normal((32, 6, 6, 1))
        labels = rng.integers(0, 4, size=32)
        opt = RMSProp()
        losses = [model.train_step(x, labels, opt, step) for step in range(200)]
        assert np.mean(losses[-10:]) < np.mean(losses[:10])

    def test_train_step_bitwise_reproducible(self):
        rng = np.random.default_rng(12)
        x = rng.standard_normal((8, 6, 6, 1))
        labels = rng.integers(0, 4, size=8)
        results = []
        for _ in range(2):
            model = tiny_classifier(seed=2)
            opt = RMSProp()
            loss = [model.train_step(x, labels, opt, step) for step in range(3)]
            results.append((loss, [p.copy() for p in model.params()]))
        assert results[0][0] == results[1][0]
        for a, b in zip(results[0][1], results[1][1]):
            assert np.array_equal(a, b)

    def test_evaluate_reports_loss_and_accuracy(self):
        model = tiny_classifier(seed=3)
        rng = np.random.default_rng(13)
        x = rng.standard_normal((10, 6, 6, 1))
        labels = rng.integers(0, 4, size=10)
        loss, acc = model.evaluate(x, labels, batch_size=4)
        assert loss > 0
        assert 0.0 <= acc <= 1.0

    def test_projection_stays_near_orthonormal_across_updates(self):
        # the reparameterization keeps U'U = I - eps^2 inv(M) after every
        # optimizer step, not just at initialization
        model = tiny_classifier(seed=4)
        tp = [layer for layer in model.layers if layer.kind == "tensor_projection"][0]
        rng = np.random.default_rng(14)
        x = rng.standard_normal((8, 6, 6, 1))
        labels = rng.integers(0, 4, size=8)
        opt = RMSProp()
        from tenproj.layer import orthogonalize

        for step in range(5):
            model.train_step(x, labels, opt, step)
            for k in tp.core.enabled_modes:
                eps = tp.core.eps[k - 1]
                u, _, m = orthogonalize(tp.core.w[k], eps)
                q = u.shape[1]
                gap = np.abs(u.T @ u - (np.eye(q) - eps**2 * np.linalg.inv(m))).max()
                assert gap <= 1e-10
                assert np.linalg.norm(u.T @ u - np.eye(q)) <= \
                    eps**2 * q / np.linalg.eigvalsh(m).min() * (1 + 1e-9)


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        model = tiny_classifier(seed=4)
        other = tiny_classifier(seed=5)
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        load_checkpoint(other, path)
        for a, b in zip(model.params(), other.params()):
            assert np.array_equal(a, b)

    def test_layer_kind_mismatch_rejected(self, tmp_path):
        model = tiny_classifier(seed=6)
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        other = Network((6, 6, 1), [Conv2D(1, 4, seed=0), ReLU(),
                                    TensorProjection((6, 6, 4), (3, 3, 4)),
                                    Flatten(), Dense(36, 16), Dropout(0.5),
                                    Dense(16, 4)])
        with pytest.raises(CheckpointError):
            load_checkpoint(other, path)

    def test_shape_mismatch_rejected(self, tmp_path):
        model = tiny_classifier(seed=7)
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        other = Network((6, 6, 1), [Conv2D(1, 4, seed=0), ReLU(),
                                    TensorProjection((6, 6, 4), (3, 3, 4)),
                                    Flatten(), Dense(36, 12), ReLU(),
                                    Dense(12, 4)])
        with pytest.raises(CheckpointError):
            load_checkpoint(other, path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "model.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\0" * 32)
        with pytest.raises(CheckpointError):
            load_checkpoint(tiny_classifier(), path)

    def test_unknown_version_rejected(self, tmp_path):
        model = tiny_classifier(seed=9)
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        data = bytearray(path.read_bytes())
        data[8] = 0xFE  # bump the little-endian version field
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(model, path)

    def test_truncated_file_rejected(self, tmp_path):
        model = tiny_classifier(seed=8)
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        data = path.read_bytes()
        path.write_bytes(data[:len(data) - 100])
        with pytest.raises(CheckpointError):
            load_checkpoint(model, path)

    def test_head_has_no_params(self):
        assert SoftmaxCrossEntropy().num_params() == 0
