"""Autodiff core: anchor values, gradient checks, and tape behavior."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import check_gradients
from gradcases import GRAD_CASES

from consem import tensor as T
from consem.errors import ConfigError, ContractError, DegenerateInputError, ShapeError
from consem.tensor import Tape, Tensor, backward, precision


class TestAnchors:
    def test_softmax_uniform(self):
        out = T.softmax(Tensor([0.0, 0.0, 0.0]))
        np.testing.assert_allclose(out.data, [1 / 3, 1 / 3, 1 / 3], atol=1e-7)

    @pytest.mark.parametrize("c", [0.0, -3.5, 100.0])
    def test_softmax_ln2_gap(self, c, f64):
        out = T.softmax(Tensor([c, c + math.log(2.0)]))
        np.testing.assert_allclose(out.data, [1 / 3, 2 / 3], atol=1e-12)

    def test_matmul_identity(self):
        m = Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = T.matmul(Tensor(np.eye(2)), m)
        np.testing.assert_array_equal(out.data, m.data)

    def test_matmul_column_pick(self):
        out = T.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[0.0], [1.0]]))
        np.testing.assert_array_equal(out.data, [[2.0], [4.0]])

    def test_layer_norm_constant_row_maps_to_bias(self):
        gain, bias = Tensor(np.ones(4)), Tensor([0.5, -0.5, 0.0, 2.0])
        out = T.layer_norm(Tensor(np.full((2, 4), 7.0)), gain, bias)
        np.testing.assert_allclose(out.data, np.tile(bias.data, (2, 1)), atol=1e-6)

    def test_layer_norm_plus_minus_one(self, f64):
        out = T.layer_norm(Tensor([1.0, -1.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)))
        np.testing.assert_allclose(out.data, [1.0, -1.0], atol=1e-4)

    def test_cosine_self_is_one(self):
        v = Tensor([0.3, -1.2, 0.7])
        assert T.cosine_similarity(v, v).item() == pytest.approx(1.0, abs=1e-6)

    def test_cosine_orthogonal_is_zero(self):
        assert T.cosine_similarity(Tensor([1.0, 0.0]), Tensor([0.0, 1.0])).item() == 0.0

    def test_cosine_45_degrees(self):
        sim = T.cosine_similarity(Tensor([1.0, 1.0]), Tensor([1.0, 0.0]))
        assert sim.item() == pytest.approx(1.0 / math.sqrt(2.0), abs=1e-6)

    def test_cross_entropy_uniform_logits_is_log_v(self, f64):
        for v in (2, 5, 17):
            loss = T.cross_entropy(Tensor(np.zeros((3, v))), np.array([0, 1, v - 1]))
            assert loss.item() == pytest.approx(math.log(v), abs=1e-12)

    def test_grad_of_sum_is_ones(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        with Tape() as tape:
            backward(T.reduce_sum(x), tape)
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_grad_of_sum_of_squares_is_2x(self, f64):
        x = Tensor([[0.5, -1.0], [2.0, 0.0]], requires_grad=True)
        with Tape() as tape:
            backward(T.reduce_sum(T.mul(x, x)), tape)
        np.testing.assert_allclose(x.grad, 2.0 * x.data, atol=1e-12)


class TestGradientChecks:
    @pytest.mark.parametrize("name", sorted(GRAD_CASES))
    def test_matches_finite_difference(self, name, f64):
        worst = 0.0
        for seed in range(5):
            fn, params = GRAD_CASES[name](np.random.default_rng([17, seed]))
            worst = max(worst, check_gradients(fn, params))
        assert worst < 1e-3, f"{name}: relative error {worst:.3e}"

    def test_shared_subexpression_accumulates(self, f64):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            y = T.add(x, x)
            backward(T.reduce_sum(y), tape)
        np.testing.assert_array_equal(x.grad, [2.0, 2.0])

    def test_gather_rows_repeated_ids_accumulate(self, f64):
        table = Tensor(np.zeros((3, 2)), requires_grad=True)
        with Tape() as tape:
            out = T.gather_rows(table, np.array([0, 0, 1]))
            backward(T.reduce_sum(out), tape)
        np.testing.assert_array_equal(table.grad, [[2.0, 2.0], [1.0, 1.0], [0.0, 0.0]])


class TestProperties:
    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            out = T.softmax(Tensor(rng.uniform(-30, 30, size=(4, 7))))
            np.testing.assert_allclose(out.data.sum(axis=-1), np.ones(4), atol=1e-6)

    def test_layer_norm_row_mean_near_zero(self):
        rng = np.random.default_rng(1)
        gain, bias = Tensor(np.ones(8)), Tensor(np.zeros(8))
        for _ in range(20):
            out = T.layer_norm(Tensor(rng.uniform(-1, 1, size=(5, 8))), gain, bias)
            assert np.abs(out.data.mean(axis=-1)).max() < 1e-5

    @given(
        alpha=st.floats(min_value=1e-3, max_value=1e3),
        beta=st.floats(min_value=1e-3, max_value=1e3),
    )
    @settings(max_examples=60, deadline=None)
    def test_cosine_scale_invariance(self, alpha, beta):
        with precision(np.float64):
            u = Tensor([0.4, -1.1, 0.3, 2.0])
            v = Tensor([-0.2, 0.5, 1.4, -0.7])
            base = T.cosine_similarity(u, v).item()
            scaled = T.cosine_similarity(
                Tensor(alpha * u.data), Tensor(beta * v.data)
            ).item()
        assert scaled == pytest.approx(base, abs=1e-6)

    def test_forward_is_bitwise_deterministic(self):
        rng = np.random.default_rng(7)
        x = rng.uniform(-1, 1, size=(6, 6)).astype(np.float32)

        def run():
            out = T.softmax(T.matmul(Tensor(x), Tensor(x.T)))
            return T.gelu(out).data.tobytes()

        assert run() == run()

    def test_logsumexp_matches_log_of_sum(self, f64):
        rng = np.random.default_rng(3)
        a = rng.uniform(-2, 2, size=(4, 6))
        out = T.logsumexp(Tensor(a), axis=-1)
        np.testing.assert_allclose(out.data, np.log(np.exp(a).sum(axis=-1)), atol=1e-12)


class TestTapeAndErrors:
    def test_backward_rejects_non_scalar(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            y = T.add(x, x)
            with pytest.raises(ContractError):
                backward(y, tape)

    def test_no_tape_records_nothing(self):
        x = Tensor([1.0], requires_grad=True)
        with Tape() as tape:
            pass
        T.add(x, x)
        assert len(tape) == 0

    def test_constant_inputs_get_no_grad(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        c = T.constant([3.0, 4.0])
        with Tape() as tape:
            backward(T.reduce_sum(T.mul(x, c)), tape)
        assert c.grad is None
        np.testing.assert_array_equal(x.grad, c.data)

    def test_matmul_rejects_vectors(self):
        with pytest.raises(ShapeError):
            T.matmul(Tensor([1.0, 2.0]), Tensor([[1.0], [2.0]]))

    def test_matmul_rejects_inner_mismatch(self):
        with pytest.raises(ShapeError):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))

    def test_normalize_rejects_zero_row(self):
        with pytest.raises(DegenerateInputError):
            T.normalize_rows(Tensor([[1.0, 0.0], [0.0, 0.0]]))

    def test_cosine_rejects_zero_vector(self):
        with pytest.raises(DegenerateInputError):
            T.cosine_similarity(Tensor([0.0, 0.0]), Tensor([1.0, 0.0]))

    def test_dropout_rejects_rate_one(self):
        with pytest.raises(ConfigError):
            T.dropout(Tensor([1.0]), 1.0, np.random.default_rng(0))

    def test_dropout_rate_zero_is_identity(self):
        x = Tensor([1.0, 2.0])
        assert T.dropout(x, 0.0, np.random.default_rng(0)) is x

    def test_cross_entropy_rejects_bad_targets(self):
        with pytest.raises(ShapeError):
            T.cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 3]))

    def test_precision_context_restores(self):
        assert Tensor([1.0]).dtype == np.float32
        with precision(np.float64):
            assert Tensor([1.0]).dtype == np.float64
        assert Tensor([1.0]).dtype == np.float32
