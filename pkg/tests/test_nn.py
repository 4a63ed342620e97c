import numpy as np
import pytest

from emogen.errors import BatchTooSmall, ShapeMismatch
from emogen.nn import (Adam, AttentionConfig, BatchNorm, Conv2d, Embedding,
                       FeedForward, LayerNorm, Linear, MultiHeadAttention,
                       Parameter, Tensor, avg_pool2d, concat, global_avg_pool,
                       gradcheck, matmul, no_grad, relu, sinusoidal_positions,
                       softmax, take, tensor_mean, tensor_sum, transpose)


class TestTensorOps:
    def test_matmul_example(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = Tensor([[5.0], [6.0]])
        assert matmul(a, b).data.tolist() == [[17.0], [39.0]]

    def test_matmul_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_transpose_involution(self):
        x = np.arange(6.0).reshape(2, 3)
        assert np.array_equal(transpose(transpose(Tensor(x))).data, x)

    def test_softmax_example(self):
        out = softmax(Tensor([0.0, np.log(3.0)]))
        assert out.data == pytest.approx([0.25, 0.75])

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(3)
        out = softmax(Tensor(rng.normal(size=(5, 7))), axis=-1)
        assert out.data.sum(axis=-1) == pytest.approx(np.ones(5))

    def test_softmax_shift_invariant(self):
        x = np.array([1.0, -2.0, 0.5])
        a = softmax(Tensor(x)).data
        b = softmax(Tensor(x + 100.0)).data
        assert a == pytest.approx(b, abs=1e-12)

    def test_broadcast_add_backward(self):
        a = Tensor(np.ones((3, 2)), requires_grad=True)
        b = Tensor(np.ones(2), requires_grad=True)
        tensor_sum(a + b).backward()
        assert np.array_equal(a.grad, np.ones((3, 2)))
        assert np.array_equal(b.grad, np.full(2, 3.0))

    def test_take_backward_accumulates(self):
        a = Tensor(np.arange(4.0), requires_grad=True)
        out = take(a, np.array([1, 1, 3]))
        tensor_sum(out).backward()
        assert a.grad.tolist() == [0.0, 2.0, 0.0, 1.0]

    def test_concat_backward_splits(self):
        a = Tensor(np.ones(2), requires_grad=True)
        b = Tensor(np.ones(3), requires_grad=True)
        out = concat([a, b]) * Tensor(np.arange(5.0))
        tensor_sum(out).backward()
        assert a.grad.tolist() == [0.0, 1.0]
        assert b.grad.tolist() == [2.0, 3.0, 4.0]

    def test_no_grad_suppresses_graph(self):
        a = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            out = tensor_sum(a * a)
        assert not out.requires_grad
        out.backward()  # nothing to propagate: the graph was never built
        assert a.grad is None

    def test_mean_over_tuple_axes(self):
        x = np.arange(24.0).reshape(2, 3, 4)
        assert tensor_mean(Tensor(x), axis=(0, 2)).data == pytest.approx(x.mean(axis=(0, 2)))


class TestGradcheckHarness:
    def test_composite_function_passes(self):
        rng = np.random.default_rng(4)
        a = Tensor(rng.normal(size=(3, 3)), requires_grad=True)

        def fn():
            return tensor_sum(softmax(matmul(a, a), axis=-1) * relu(a))

        report = gradcheck(fn, [("a", a)])
        assert report.passed and report.worst < 1e-6

    def test_negative_control_detects_corruption(self):
        a = Tensor(np.array([0.3, -0.7, 1.1]), requires_grad=True)

        def fn():
            result = tensor_sum(a * a)
            inner = result._backward_fn

            def corrupted(grad):
                inner(grad * 2.0)  # deliberately doubles the true gradient

            if inner is not None:
                result._backward_fn = corrupted
            return result

        report = gradcheck(fn, [("a", a)])
        assert not report.passed
        assert "a" in dict(report.failures())

    def test_subsampling_is_deterministic(self):
        base = np.random.default_rng(5).normal(size=50)

        def run():
            a = Tensor(base.copy(), requires_grad=True)
            rep = gradcheck(lambda: tensor_sum(a * a * a), [("a", a)],
                            max_coords_per_block=10)
            return rep.max_errors["a"]

        assert run() == run()


class TestLayers:
    def test_linear_matches_numpy(self):
        rng = np.random.default_rng(6)
        layer = Linear(4, 3, rng)
        x = rng.normal(size=(5, 4))
        out = layer(Tensor(x))
        assert out.data == pytest.approx(x @ layer.weight.data + layer.bias.data)

    def test_embedding_rows(self):
        rng = np.random.default_rng(7)
        emb = Embedding(10, 4, rng)
        out = emb(np.array([2, 2, 5]))
        assert np.array_equal(out.data[0], out.data[1])
        assert np.array_equal(out.data[2], emb.weight.data[5])

    def test_layer_norm_statistics(self):
        rng = np.random.default_rng(8)
        out = LayerNorm(16)(Tensor(rng.normal(size=(4, 16)) * 3 + 5))
        assert out.data.mean(axis=-1) == pytest.approx(np.zeros(4), abs=1e-9)
        assert out.data.std(axis=-1) == pytest.approx(np.ones(4), abs=1e-3)

    def test_batch_norm_train_statistics(self):
        rng = np.random.default_rng(9)
        bn = BatchNorm(6)
        out = bn(Tensor(rng.normal(size=(32, 6)) * 2 + 1), train=True)
        assert out.data.mean(axis=0) == pytest.approx(np.zeros(6), abs=1e-9)
        assert out.data.var(axis=0) == pytest.approx(np.ones(6), abs=1e-3)
        assert not np.array_equal(bn.running_mean, np.zeros(6))

    def test_batch_norm_eval_is_deterministic_in_batch(self):
        bn = BatchNorm(3)
        bn.running_mean = np.array([1.0, 2.0, 3.0])
        bn.running_var = np.array([1.0, 4.0, 9.0])
        single = bn(Tensor(np.array([[2.0, 4.0, 6.0]])), train=False).data
        batch = bn(Tensor(np.array([[2.0, 4.0, 6.0], [0.0, 0.0, 0.0]])), train=False).data
        assert batch[0] == pytest.approx(single[0])

    def test_batch_norm_rejects_tiny_train_batch(self):
        with pytest.raises(BatchTooSmall):
            BatchNorm(3)(Tensor(np.ones((1, 3))), train=True)

    def test_attention_rows_are_convex_combinations(self):
        rng = np.random.default_rng(10)
        cfg = AttentionConfig(model_dim=8, head_count=2)
        mha = MultiHeadAttention(cfg, rng)
        x = Tensor(rng.normal(size=(4, 8)))
        assert mha(x, x, x).shape == (4, 8)

    def test_attention_causal_first_position_fixed(self):
        rng = np.random.default_rng(11)
        cfg = AttentionConfig(model_dim=8, head_count=2)
        mha = MultiHeadAttention(cfg, rng)
        x = rng.normal(size=(4, 8))
        base = mha(Tensor(x), Tensor(x), Tensor(x), causal=True).data
        x2 = x.copy()
        x2[2] += 10.0  # later positions must not affect earlier outputs
        pert = mha(Tensor(x2), Tensor(x2), Tensor(x2), causal=True).data
        assert pert[:2] == pytest.approx(base[:2], abs=1e-12)
        assert not np.allclose(pert[2], base[2])

    def test_attention_key_mask_excludes_position(self):
        rng = np.random.default_rng(12)
        cfg = AttentionConfig(model_dim=8, head_count=2)
        mha = MultiHeadAttention(cfg, rng)
        x = rng.normal(size=(3, 8))
        mask = np.array([True, True, False])
        base = mha(Tensor(x), Tensor(x), Tensor(x), key_mask=mask).data
        v2 = x.copy()
        v2[2] += 5.0
        # the masked key gets exactly zero weight, so its value is inert
        pert = mha(Tensor(x), Tensor(x), Tensor(v2), key_mask=mask).data
        assert pert == pytest.approx(base, abs=1e-12)

    def test_attention_single_token(self):
        rng = np.random.default_rng(13)
        mha = MultiHeadAttention(AttentionConfig(4, 2), rng)
        x = Tensor(rng.normal(size=(1, 4)))
        assert mha(x, x, x, causal=True).shape == (1, 4)

    def test_attention_config_divisibility(self):
        with pytest.raises(ValueError):
            AttentionConfig(model_dim=10, head_count=3)

    def test_conv2d_matches_direct_convolution(self):
        rng = np.random.default_rng(14)
        conv = Conv2d(2, 3, 3, rng)
        x = rng.normal(size=(2, 5, 5))
        out = conv(Tensor(x)).data
        padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
        expected = np.zeros((3, 5, 5))
        kernels = conv.weight.data.reshape(3, 2, 3, 3)
        for o in range(3):
            for i in range(5):
                for j in range(5):
                    patch = padded[:, i:i + 3, j:j + 3]
                    expected[o, i, j] = (patch * kernels[o]).sum() + conv.bias.data[o]
        assert out == pytest.approx(expected, abs=1e-10)

    def test_avg_pool_and_global_pool(self):
        x = np.arange(16.0).reshape(1, 4, 4)
        pooled = avg_pool2d(Tensor(x)).data
        assert pooled.shape == (1, 2, 2)
        assert pooled[0, 0, 0] == pytest.approx((0 + 1 + 4 + 5) / 4)
        assert global_avg_pool(Tensor(x)).data == pytest.approx([7.5])

    def test_sinusoidal_positions(self):
        table = sinusoidal_positions(10, 8)
        assert table.shape == (10, 8)
        assert table[0] == pytest.approx([0, 1] * 4)
        assert np.abs(table).max() <= 1.0

    def test_module_parameters_stable_order(self):
        rng = np.random.default_rng(15)
        ff = FeedForward(4, 8, rng)
        names = [name for name, _ in ff.parameters()]
        assert names == ["fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias"]

    def test_layer_gradchecks(self):
        rng = np.random.default_rng(16)
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        ln = LayerNorm(4)
        report = gradcheck(lambda: tensor_sum(ln(x) * ln(x)),
                           [("x", x)] + ln.parameters())
        assert report.passed, report.max_errors


class TestAdam:
    def test_zero_grad_is_fixed_point(self):
        p = Parameter(np.array([1.0, -2.0]))
        p.grad = np.zeros(2)
        Adam([p], lr=0.1).step()
        assert p.data.tolist() == [1.0, -2.0]

    def test_first_step_is_signed_lr(self):
        p = Parameter(np.array([1.0, -2.0]))
        p.grad = np.array([0.3, -4.0])
        Adam([p], lr=0.1).step()
        assert p.data == pytest.approx([0.9, -1.9], abs=1e-6)

    def test_grad_cleared_after_step(self):
        p = Parameter(np.array([1.0]))
        p.grad = np.array([1.0])
        Adam([p], lr=0.1).step()
        assert p.grad is None

    def test_deterministic_trajectory(self):
        def run():
            p = Parameter(np.array([0.5, -0.5]))
            opt = Adam([p], lr=0.05)
            for t in range(10):
                p.grad = np.array([np.sin(t + 1.0), np.cos(t + 1.0)])
                opt.step()
            return p.data.copy()

        assert np.array_equal(run(), run())

    def test_quadratic_descent(self):
        target = np.array([2.0, -3.0])
        p = Parameter(np.zeros(2))
        opt = Adam([p], lr=0.1)
        for _ in range(200):
            x = Tensor(p.data, requires_grad=False)
            p.grad = 2.0 * (p.data - target)
            opt.step()
        assert p.data == pytest.approx(target, abs=1e-2)

    def test_accepts_named_pairs(self):
        rng = np.random.default_rng(17)
        layer = Linear(2, 2, rng)
        opt = Adam(layer.parameters(), lr=0.01)
        out = tensor_sum(layer(Tensor(np.ones((1, 2)))))
        out.backward()
        before = layer.weight.data.copy()
        opt.step()
        assert not np.array_equal(before, layer.weight.data)
