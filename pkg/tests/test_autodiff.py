"""Gradient and semantics checks for the tensor core."""

import numpy as np
import pytest
from scipy import sparse

from admatch.errors import NonFiniteError
from admatch.featurize import SequenceBatch
from admatch.nn import autodiff as ad
from admatch.nn.autodiff import Tensor
from admatch.nn.layers import (
    BatchNorm,
    Dense,
    EmbeddingSum,
    ResidualUnit,
    WordConv,
    WordMaxPool,
)
from admatch.nn.optim import SgdMomentum

from helpers import finite_difference_check

RNG = np.random.default_rng(42)


def _param(shape):
    return Tensor(RNG.uniform(-1.0, 1.0, size=shape), requires_grad=True)


class TestPrimitiveOps:
    def test_add_mul_broadcast_grads(self):
        a = _param((4, 3))
        b = _param((3,))
        finite_difference_check([a, b], lambda: ad.t_sum(ad.mul(ad.add(a, b), ad.add(a, 2.0))))

    def test_div_pow_grads(self):
        a = Tensor(RNG.uniform(0.5, 2.0, (5,)), requires_grad=True)
        b = Tensor(RNG.uniform(0.5, 2.0, (5,)), requires_grad=True)
        finite_difference_check([a, b], lambda: ad.t_sum(ad.div(ad.power(a, 1.7), b)))

    def test_matmul_grads(self):
        a = _param((4, 6))
        b = _param((6, 2))
        finite_difference_check([a, b], lambda: ad.t_sum(ad.matmul(a, b)))

    def test_activations_grads(self):
        x = _param((3, 4))
        finite_difference_check([x], lambda: ad.t_sum(ad.tanh(x)))
        finite_difference_check([x], lambda: ad.t_sum(ad.sigmoid(x)))
        shifted = Tensor(x.data + 0.01, requires_grad=True)  # keep away from the relu kink
        finite_difference_check([shifted], lambda: ad.t_sum(ad.relu(shifted)))

    def test_reshape_transpose_concat_grads(self):
        a = _param((2, 3, 4))
        b = _param((3, 5))

        def loss():
            flat = ad.reshape(ad.transpose(a, (1, 0, 2)), (3, 8))
            joined = ad.concat([flat, b], axis=1)
            return ad.t_sum(ad.mul(joined, joined))

        finite_difference_check([a, b], loss)

    def test_sparse_matmul_grads(self):
        m = sparse.random(6, 8, density=0.4, random_state=3, format="csr")
        w = _param((8, 3))
        finite_difference_check([w], lambda: ad.t_sum(ad.power(ad.sparse_matmul(m, w), 2.0)))

    def test_masked_max_grads(self):
        x = _param((3, 5, 2))
        mask = np.array(
            [[True, True, False, False, False],
             [True, True, True, True, True],
             [False, True, False, True, False]]
        )
        finite_difference_check([x], lambda: ad.t_sum(ad.masked_max(x, mask)))

    def test_l2_normalize_unit_rows(self):
        x = _param((7, 5))
        normed = ad.l2_normalize(x)
        np.testing.assert_allclose(np.linalg.norm(normed.data, axis=1), 1.0, atol=1e-12)
        finite_difference_check([x], lambda: ad.t_sum(ad.mul(ad.l2_normalize(x), 0.5)))

    def test_nonfinite_trips_error(self):
        zero = Tensor(np.zeros(3))
        with np.errstate(divide="ignore"):
            with pytest.raises(NonFiniteError):
                ad.div(Tensor(np.ones(3)), zero)

    def test_backward_needs_scalar_and_graph(self):
        x = _param((3,))
        with pytest.raises(ValueError):
            ad.mul(x, 2.0).backward()
        with pytest.raises(RuntimeError):
            Tensor(np.array(1.0)).backward()


class TestBackwardSemantics:
    def test_identity_graph_grads_all_one(self):
        x = _param((4, 3))
        ad.t_sum(x).backward()
        np.testing.assert_array_equal(x.grad, np.ones((4, 3)))

    def test_double_backward_doubles_grads(self):
        x = _param((5,))
        first = None
        for _ in range(2):
            loss = ad.t_sum(ad.mul(x, x))
            loss.backward()
            if first is None:
                first = x.grad.copy()
        np.testing.assert_allclose(x.grad, 2.0 * first, rtol=0, atol=0)

    def test_no_grad_blocks_recording(self):
        x = _param((3,))
        with ad.no_grad():
            out = ad.t_sum(ad.mul(x, x))
        assert out._backward_fn is None and not out.requires_grad


class TestLosses:
    def test_weighted_mse_values(self):
        pred = Tensor(np.array([0.9]))
        assert ad.weighted_mse(pred, np.array([0.8]), np.array([1.0])).data == pytest.approx(0.01)
        assert ad.weighted_mse(pred, np.array([0.1]), np.array([0.0])).data == 0.0

    def test_cross_entropy_value(self):
        assert ad.cross_entropy(Tensor(np.array([0.5])), np.array([1.0])).data == pytest.approx(np.log(2))

    def test_loss_grads(self):
        pred = Tensor(RNG.uniform(0.05, 0.95, size=12), requires_grad=True)
        targets = RNG.integers(0, 2, size=12).astype(float)
        weights = RNG.uniform(0.2, 2.0, size=12)
        finite_difference_check([pred], lambda: ad.cross_entropy(pred, targets, weights))
        soft = RNG.uniform(0.0, 1.0, size=12)
        finite_difference_check([pred], lambda: ad.weighted_mse(pred, soft, weights))

    def test_batch_loss_is_mean(self):
        pred = Tensor(np.array([0.2, 0.6]))
        y = np.array([0.0, 1.0])
        expected = np.mean([0.2**2, 0.4**2])
        assert ad.weighted_mse(pred, y).data == pytest.approx(expected)


def _tiny_sequence_batch(rng, n=3, length=4, vocab=12, n_words=6) -> SequenceBatch:
    dense = np.abs(sparse.random(n_words + 1, vocab, density=0.4, random_state=7).toarray())
    dense[0] = 0.0  # padding word
    ids = rng.integers(0, n_words + 1, size=(n, length)).astype(np.int32)
    mask = rng.random((n, length)) < 0.7
    mask[:, 0] = True
    return SequenceBatch(sparse.csr_matrix(dense), ids, mask)


class TestLayers:
    def test_dense_identity(self):
        layer = Dense(3, 3, np.random.default_rng(0))
        layer.weight.data = np.eye(3)
        layer.bias.data = np.zeros(3)
        x = Tensor(RNG.uniform(-1, 1, (5, 3)))
        np.testing.assert_array_equal(layer(x).data, x.data)

    def test_dense_grads(self):
        layer = Dense(4, 3, np.random.default_rng(1))
        x = Tensor(RNG.uniform(-1, 1, (6, 4)))
        finite_difference_check(
            [p for _, p in layer.params()], lambda: ad.t_sum(ad.tanh(layer(x)))
        )

    def test_embedding_sum_grads(self):
        layer = EmbeddingSum(10, 4, np.random.default_rng(2))
        counts = sparse.csr_matrix(np.abs(RNG.uniform(0, 2, (5, 10))))
        finite_difference_check(
            [p for _, p in layer.params()], lambda: ad.t_sum(ad.relu(layer(counts)))
        )

    def test_word_conv_matches_dense_definition(self):
        rng = np.random.default_rng(3)
        seq = _tiny_sequence_batch(rng)
        layer = WordConv(12, 5, rng)
        out = layer(seq).data
        dense_rows = seq.word_rows.toarray()
        w = layer.weight.data  # [vocab, 3*dim]
        for b in range(seq.ids.shape[0]):
            for t in range(seq.ids.shape[1]):
                acc = layer.bias.data.copy()
                for k, offset in enumerate((-1, 0, 1)):
                    tt = t + offset
                    if 0 <= tt < seq.ids.shape[1]:
                        x = dense_rows[seq.ids[b, tt]]
                        acc = acc + x @ w[:, k * 5 : (k + 1) * 5]
                np.testing.assert_allclose(out[b, t], acc, atol=1e-12)

    def test_word_conv_grads(self):
        rng = np.random.default_rng(4)
        seq = _tiny_sequence_batch(rng)
        layer = WordConv(12, 3, rng)
        pool = WordMaxPool()
        finite_difference_check(
            [p for _, p in layer.params()],
            lambda: ad.t_sum(pool(ad.tanh(layer(seq)), seq.mask)),
        )

    def test_maxpool_single_word(self):
        rng = np.random.default_rng(5)
        seq = _tiny_sequence_batch(rng, n=1, length=4)
        seq.mask[:] = False
        seq.mask[0, 2] = True
        layer = WordConv(12, 3, rng)
        h = ad.tanh(layer(seq))
        pooled = WordMaxPool()(h, seq.mask)
        np.testing.assert_array_equal(pooled.data[0], h.data[0, 2])

    def test_batchnorm_train_grads_and_eval_affine(self):
        bn = BatchNorm(4)
        x = Tensor(RNG.uniform(-2, 2, (8, 4)), requires_grad=True)
        finite_difference_check(
            [x, bn.gamma, bn.beta], lambda: ad.t_sum(ad.power(bn(x, training=True), 2.0))
        )
        # Eval mode: output is an affine map of the input given frozen stats.
        bn.running_mean = RNG.uniform(-1, 1, 4)
        bn.running_var = RNG.uniform(0.5, 2, 4)
        x1 = RNG.uniform(-1, 1, (3, 4))
        x2 = RNG.uniform(-1, 1, (3, 4))
        f = lambda arr: bn(Tensor(arr), training=False).data
        np.testing.assert_allclose(
            f(0.3 * x1 + 0.7 * x2) - f(np.zeros((3, 4))),
            0.3 * (f(x1) - f(np.zeros((3, 4)))) + 0.7 * (f(x2) - f(np.zeros((3, 4)))),
            atol=1e-12,
        )

    def test_residual_zero_weights_is_identity(self):
        for batchnorm in (False, True):
            unit = ResidualUnit(4, 6, np.random.default_rng(6), batchnorm=batchnorm)
            unit.inner.weight.data[:] = 0.0
            unit.inner.bias.data[:] = 0.0
            unit.outer.weight.data[:] = 0.0
            unit.outer.bias.data[:] = 0.0
            x = Tensor(RNG.uniform(-1, 1, (5, 4)))
            np.testing.assert_array_equal(unit(x, training=True).data, x.data)
            np.testing.assert_array_equal(unit(x, training=False).data, x.data)

    def test_residual_grads(self):
        unit = ResidualUnit(3, 5, np.random.default_rng(7), batchnorm=True)
        x = Tensor(RNG.uniform(-1, 1, (6, 3)))
        finite_difference_check(
            [p for _, p in unit.params()],
            lambda: ad.t_sum(ad.power(unit(x, training=True), 2.0)),
        )


class TestOptimizer:
    def test_zero_lr_keeps_params(self):
        p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        opt = SgdMomentum([p], lr=0.0)
        p.grad = np.array([5.0, -3.0])
        opt.step()
        np.testing.assert_array_equal(p.data, [1.0, 2.0])

    def test_plain_sgd_step(self):
        p = Tensor(np.array(5.0), requires_grad=True)
        opt = SgdMomentum([p], lr=0.1, momentum=0.0)
        p.grad = np.array(1.0)
        opt.step()
        assert p.data == pytest.approx(4.9)
        assert opt.step_count == 1

    def test_quadratic_bowl_converges(self):
        p = Tensor(np.array(1.0), requires_grad=True)
        opt = SgdMomentum([p], lr=0.1, momentum=0.0)
        for _ in range(100):
            opt.zero_grad()
            loss = ad.mul(p, p)
            loss.backward()
            opt.step()
        assert abs(float(p.data)) < 1e-8
        assert float(p.data) == pytest.approx(0.8**100, rel=1e-9)
