import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from textrec import autodiff as ad
from textrec.errors import ContractError, ShapeError

from oracles import fd_gradients, max_rel_err, ref_attention, ref_softmax

RNG = np.random.default_rng(20240817)


def t64(arr, requires_grad=False):
    return ad.Tensor(np.asarray(arr, dtype=np.float64), requires_grad=requires_grad)


def check_grads(build_loss, arrays, tol=1e-5, h=1e-3):
    """build_loss(tensors...) -> scalar Tensor; compare against central FD."""
    tensors = [t64(a, requires_grad=True) for a in arrays]
    loss = build_loss(*tensors)
    ad.backward(loss)

    def feval():
        fresh = [t64(t.data) for t in tensors]
        return float(build_loss(*fresh).data)

    # FD perturbs the live arrays in place
    numeric = fd_gradients(feval, [t.data for t in tensors], h=h)
    for tensor, num in zip(tensors, numeric):
        assert tensor.grad is not None
        assert max_rel_err(tensor.grad, num) < tol


class TestMatmul:
    def test_identity(self):
        a = ad.Tensor(RNG.normal(size=(3, 3)))
        out = ad.matmul(ad.Tensor(np.eye(3, dtype=np.float32)), a)
        np.testing.assert_allclose(out.data, a.data, rtol=1e-6)

    def test_zeros_annihilate(self):
        a = ad.Tensor(RNG.normal(size=(2, 3)))
        out = ad.matmul(a, ad.Tensor(np.zeros((3, 4), dtype=np.float32)))
        assert not out.data.any()

    def test_hand_product(self):
        out = ad.matmul(ad.Tensor([[1.0, 2.0], [3.0, 4.0]]), ad.Tensor([[5.0], [6.0]]))
        np.testing.assert_array_equal(out.data, [[17.0], [39.0]])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError) as exc:
            ad.matmul(ad.Tensor(np.zeros((2, 3))), ad.Tensor(np.zeros((4, 2))))
        assert "(2, 3)" in str(exc.value) and "(4, 2)" in str(exc.value)

    def test_gradients(self):
        check_grads(
            lambda a, b: ad.tsum(ad.matmul(a, b)),
            [RNG.normal(size=(3, 4)), RNG.normal(size=(4, 2))],
        )

    def test_batched_broadcast_gradients(self):
        check_grads(
            lambda a, b: ad.tsum(ad.matmul(a, b)),
            [RNG.normal(size=(2, 2, 3, 4)), RNG.normal(size=(4, 5))],
        )


class TestSoftmax:
    def test_equal_logits_uniform(self):
        out = ad.softmax(ad.Tensor([1.7, 1.7, 1.7, 1.7]))
        np.testing.assert_allclose(out.data, [0.25] * 4, atol=1e-7)

    def test_shift_invariance(self):
        x = RNG.normal(size=(5,)).astype(np.float32)
        a = ad.softmax(ad.Tensor(x)).data
        b = ad.softmax(ad.Tensor(x + 123.0)).data
        np.testing.assert_allclose(a, b, atol=1e-6)

    def test_log3_case(self):
        out = ad.softmax(ad.Tensor([0.0, np.log(3.0)]))
        np.testing.assert_allclose(out.data, [0.25, 0.75], atol=1e-7)

    def test_empty_last_dim_rejected(self):
        with pytest.raises(ShapeError):
            ad.softmax(ad.Tensor(np.zeros((2, 0))))

    @given(st.lists(st.floats(-30, 30), min_size=1, max_size=8))
    @settings(max_examples=60, deadline=None)
    def test_rows_sum_to_one(self, logits):
        out = ad.softmax(ad.Tensor(np.array(logits, dtype=np.float64)))
        assert out.data.min() >= 0
        assert abs(out.data.sum() - 1.0) < 1e-6

    def test_matches_reference(self):
        x = RNG.normal(size=(2, 3, 5))
        np.testing.assert_allclose(
            ad.softmax(ad.Tensor(x)).data, ref_softmax(x), atol=1e-12
        )

    def test_gradients(self):
        w = RNG.normal(size=(4, 3))
        check_grads(
            lambda x: ad.tsum(ad.mul(ad.softmax(x), t64(w))),
            [RNG.normal(size=(4, 3))],
        )


class TestElementwise:
    def test_sigmoid_zero(self):
        assert ad.sigmoid(ad.Tensor([0.0])).data[0] == pytest.approx(0.5)

    def test_relu(self):
        out = ad.relu(ad.Tensor([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    def test_add_mul_grads(self):
        check_grads(
            lambda a, b: ad.tsum(ad.mul(ad.add(a, b), a)),
            [RNG.normal(size=(3, 2)), RNG.normal(size=(2,))],
        )

    def test_sigmoid_grad(self):
        check_grads(lambda x: ad.tsum(ad.sigmoid(x)), [RNG.normal(size=(4,))])

    def test_relu_grad_away_from_kink(self):
        x = RNG.normal(size=(6,))
        x[np.abs(x) < 0.05] = 0.5
        check_grads(lambda t: ad.tsum(ad.relu(t)), [x])

    def test_concat_grad(self):
        check_grads(
            lambda a, b: ad.tsum(ad.mul(ad.concat([a, b], axis=-1), ad.concat([a, b], axis=-1))),
            [RNG.normal(size=(2, 3)), RNG.normal(size=(2, 2))],
        )

    def test_transpose_reshape_grad(self):
        check_grads(
            lambda a: ad.tsum(ad.mul(ad.transpose(a, (1, 0)), ad.transpose(a, (1, 0)))),
            [RNG.normal(size=(3, 4))],
        )


class TestLayerNorm:
    def test_constant_vector_returns_beta(self):
        gamma = ad.Tensor(np.ones(6, dtype=np.float32))
        beta = ad.Tensor(np.full(6, 0.3, dtype=np.float32))
        out = ad.layer_norm(ad.Tensor(np.full((2, 6), 5.0, dtype=np.float32)), gamma, beta)
        np.testing.assert_allclose(out.data, 0.3, atol=1e-6)

    def test_normalizes(self):
        x = RNG.normal(size=(3, 8))
        out = ad.layer_norm(t64(x), t64(np.ones(8)), t64(np.zeros(8)))
        np.testing.assert_allclose(out.data.mean(axis=-1), 0, atol=1e-9)
        np.testing.assert_allclose(out.data.std(axis=-1), 1, atol=1e-4)

    def test_gradients(self):
        check_grads(
            lambda x, g, b: ad.tsum(ad.mul(ad.layer_norm(x, g, b), x)),
            [RNG.normal(size=(2, 5)), RNG.normal(size=(5,)), RNG.normal(size=(5,))],
        )


class TestCrossEntropy:
    def test_uniform_logits_give_log_c(self):
        for c in (2, 5, 13):
            logits = ad.Tensor(np.zeros((1, 4, c)))
            targets = np.array([[0, 1, 2 % c, 0]])
            loss = ad.cross_entropy(logits, targets, ignore_id=-1)
            assert loss.item() == pytest.approx(np.log(c), rel=1e-6)

    def test_ignore_id_positions_do_not_contribute(self):
        logits = t64(RNG.normal(size=(2, 3, 5)), requires_grad=True)
        targets = np.array([[1, 2, 0], [3, 0, 0]])
        loss = ad.cross_entropy(logits, targets, ignore_id=0)
        ad.backward(loss)
        assert not logits.grad[0, 2].any()
        assert not logits.grad[1, 1:].any()

    def test_out_of_range_target_rejected(self):
        with pytest.raises(ShapeError):
            ad.cross_entropy(ad.Tensor(np.zeros((1, 2, 3))), np.array([[0, 7]]), ignore_id=-1)

    def test_gradients(self):
        targets = np.array([[1, 3, 0], [2, 0, 0]])
        check_grads(
            lambda x: ad.cross_entropy(x, targets, ignore_id=0),
            [RNG.normal(size=(2, 3, 5))],
        )


class TestEmbedding:
    def test_lookup(self):
        table = ad.Tensor(np.arange(12, dtype=np.float32).reshape(4, 3))
        out = ad.embedding(table, np.array([[0, 2]]))
        np.testing.assert_array_equal(out.data[0, 1], [6, 7, 8])

    def test_out_of_range(self):
        with pytest.raises(ShapeError):
            ad.embedding(ad.Tensor(np.zeros((4, 3))), np.array([5]))

    def test_scatter_add_gradient(self):
        table = t64(RNG.normal(size=(4, 3)), requires_grad=True)
        ids = np.array([[0, 0, 2]])
        loss = ad.tsum(ad.embedding(table, ids))
        ad.backward(loss)
        np.testing.assert_allclose(table.grad[0], 2.0)
        np.testing.assert_allclose(table.grad[2], 1.0)
        np.testing.assert_allclose(table.grad[1], 0.0)


class TestAttention:
    def test_single_key_passes_value_through(self):
        q = ad.Tensor(RNG.normal(size=(1, 3, 4)))
        k = ad.Tensor(RNG.normal(size=(1, 1, 4)))
        v = ad.Tensor(RNG.normal(size=(1, 1, 5)))
        out, w = ad.scaled_dot_attention(q, k, v)
        np.testing.assert_allclose(out.data, np.broadcast_to(v.data, (1, 3, 5)), atol=1e-6)
        np.testing.assert_allclose(w, 1.0)

    def test_fully_masked_row_outputs_zeros(self):
        q = ad.Tensor(RNG.normal(size=(2, 4)))
        k = ad.Tensor(RNG.normal(size=(3, 4)))
        v = ad.Tensor(RNG.normal(size=(3, 4)))
        mask = ad.CausalMask(np.array([[False, False, False], [True, True, True]]))
        out, w = ad.scaled_dot_attention(q, k, v, mask)
        assert not out.data[1].any()
        assert not w[1].any()

    def test_log3_weights(self):
        d = 4
        q = np.zeros((1, 1, d))
        q[0, 0, 0] = 1.0
        k = np.zeros((1, 2, d))
        k[0, 1, 0] = np.log(3.0) * np.sqrt(d)
        v = RNG.normal(size=(1, 2, 3))
        _, w = ad.scaled_dot_attention(t64(q), t64(k), t64(v))
        np.testing.assert_allclose(w[0, 0], [0.25, 0.75], atol=1e-9)

    def test_masked_weight_leak_below_1e9(self):
        q = ad.Tensor(RNG.normal(size=(5, 8)))
        k = ad.Tensor(RNG.normal(size=(5, 8)))
        v = ad.Tensor(RNG.normal(size=(5, 8)))
        mask = ad.CausalMask.causal(5)
        _, w = ad.scaled_dot_attention(q, k, v, mask)
        assert w[mask.blocked].max(initial=0.0) < 1e-9
        np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-6)

    def test_matches_bruteforce(self):
        q = RNG.normal(size=(2, 3, 4))
        k = RNG.normal(size=(2, 3, 4))
        v = RNG.normal(size=(2, 3, 4))
        mask = ad.CausalMask.causal(3)
        out, w = ad.scaled_dot_attention(t64(q), t64(k), t64(v), mask)
        ref_out, ref_w = ref_attention(q, k, v, mask.blocked)
        np.testing.assert_allclose(out.data, ref_out, atol=1e-9)
        np.testing.assert_allclose(w, ref_w, atol=1e-9)

    def test_mask_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ad.scaled_dot_attention(
                ad.Tensor(np.zeros((2, 4))),
                ad.Tensor(np.zeros((3, 4))),
                ad.Tensor(np.zeros((3, 4))),
                ad.CausalMask.causal(2, 2),
            )

    def test_gradients_through_masked_attention(self):
        mask = ad.CausalMask.causal(3)

        def loss(q, k, v):
            out, _ = ad.scaled_dot_attention(q, k, v, mask)
            return ad.tsum(ad.mul(out, out))

        check_grads(
            loss,
            [RNG.normal(size=(3, 4)), RNG.normal(size=(3, 4)), RNG.normal(size=(3, 4))],
        )


class TestBackward:
    def test_sum_gives_ones(self):
        x = t64(RNG.normal(size=(2, 3)), requires_grad=True)
        ad.backward(ad.tsum(x))
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_quadratic_gives_2x(self):
        x = t64(RNG.normal(size=(4,)), requires_grad=True)
        ad.backward(ad.tsum(ad.mul(x, x)))
        np.testing.assert_allclose(x.grad, 2 * x.data, rtol=1e-12)

    def test_non_scalar_loss_rejected(self):
        with pytest.raises(ContractError):
            ad.backward(ad.Tensor(np.zeros((2,)), requires_grad=True))

    def test_accumulation_without_zeroing(self):
        x = t64(np.ones(3), requires_grad=True)
        ad.backward(ad.tsum(x))
        ad.backward(ad.tsum(x))
        np.testing.assert_array_equal(x.grad, 2 * np.ones(3))

    def test_shared_input_used_twice_sums_contributions(self):
        x = t64(RNG.normal(size=(3,)), requires_grad=True)
        y = ad.add(ad.mul(x, x), ad.mul(x, x))
        ad.backward(ad.tsum(y))
        np.testing.assert_allclose(x.grad, 4 * x.data, rtol=1e-12)

    def test_untracked_graph_is_not_taped(self):
        a = ad.Tensor(RNG.normal(size=(2, 2)))
        out = ad.matmul(a, a)
        assert out._vjp is None and not out.requires_grad

    def test_finite_grads_end_to_end(self):
        w = t64(RNG.normal(size=(4, 4)), requires_grad=True)
        x = ad.Tensor(RNG.normal(size=(2, 4)).astype(np.float64))
        out = ad.softmax(ad.matmul(x, w))
        ad.backward(ad.tsum(ad.mul(out, out)))
        assert np.isfinite(w.grad).all()


class TestComposite:
    def test_mlp_block_gradients(self):
        def loss(x, w1, b1, w2, b2, g, b):
            h = ad.relu(ad.dense(x, w1, b1))
            h = ad.dense(h, w2, b2)
            h = ad.layer_norm(ad.add(h, x), g, b)
            return ad.tsum(ad.mul(h, h))

        e = 6
        x = RNG.normal(size=(2, 3, e))
        check_grads(
            loss,
            [
                x,
                RNG.normal(size=(e, 8)) * 0.7,
                RNG.normal(size=(8,)) * 0.5 + 0.8,
                RNG.normal(size=(8, e)) * 0.7,
                RNG.normal(size=(e,)),
                RNG.normal(size=(e,)),
                RNG.normal(size=(e,)),
            ],
        )

    def test_im2col_gradients(self):
        def loss(x):
            cols, _, _ = ad.im2col(x, ksize=3, stride=2, pad=1)
            return ad.tsum(ad.mul(cols, cols))

        check_grads(loss, [RNG.normal(size=(2, 2, 4, 6))])

    def test_determinism(self):
        x = RNG.normal(size=(3, 5)).astype(np.float32)
        w = RNG.normal(size=(5, 5)).astype(np.float32)
        a = ad.softmax(ad.matmul(ad.Tensor(x), ad.Tensor(w))).data
        b = ad.softmax(ad.matmul(ad.Tensor(x), ad.Tensor(w))).data
        assert (a == b).all()
