"""
Tests for the tensor core.
Covers forward values, tape gradients, the LSTM cell and parameter sets.
"""

import numpy as np
import pytest

from reasoner import tensor as T
from reasoner.errors import NumericError, ShapeError, TapeError
from reasoner.tensor import LSTMWeights, ParameterSet, Tape, Tensor


def param(rng, *shape) -> Tensor:
    return Tensor(rng.normal(size=shape), requires_grad=True)


class TestForward:
    """Tests for forward values of the primitive ops."""

    def test_identity_matmul(self):
        """I₃ × A should be A."""
        a = np.arange(9.0).reshape(3, 3)
        out = T.matmul(np.eye(3), a)
        assert np.array_equal(out.data, a)

    def test_small_matmul(self):
        """[[1,2]]×[[3],[4]] should be [[11]]."""
        assert T.matmul([[1.0, 2.0]], [[3.0], [4.0]]).data.tolist() == [[11.0]]

    def test_matmul_dimension_mismatch(self):
        """Mismatched inner dimensions should raise a shape error."""
        with pytest.raises(ShapeError):
            T.matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_cos_of_zero(self):
        """cos of a zero vector is all ones."""
        assert T.elementwise("cos", np.zeros(4)).data.tolist() == [1.0] * 4

    def test_relu(self):
        """relu clips negatives."""
        assert T.elementwise("relu", [-1.0, 2.0]).data.tolist() == [0.0, 2.0]

    def test_unknown_elementwise(self):
        """Unknown op names are rejected."""
        with pytest.raises(ValueError):
            T.elementwise("softplus", [1.0])

    def test_incompatible_broadcast(self):
        """Shapes that do not broadcast raise a shape error."""
        with pytest.raises(ShapeError):
            T.add(np.ones((2, 3)), np.ones((3, 2)))


class TestSoftmax:
    """Tests for the softmax contract."""

    def test_symmetric(self):
        """[0, 0] → [0.5, 0.5]."""
        assert T.softmax([0.0, 0.0]).data.tolist() == [0.5, 0.5]

    def test_large_logits_do_not_overflow(self):
        """[1000]*3 → thirds."""
        out = T.softmax([1000.0, 1000.0, 1000.0]).data
        assert np.allclose(out, 1.0 / 3.0, atol=1e-15)

    def test_sums_to_one_and_shift_invariant(self):
        """Random logits sum to 1 and a constant shift changes nothing."""
        x = np.random.default_rng(1).normal(size=(1, 7))
        p = T.softmax(x).data
        assert abs(p.sum() - 1.0) < 1e-12
        assert np.allclose(T.softmax(x + 12.5).data, p, atol=1e-15)

    def test_nan_rejected(self):
        """NaN input raises a numeric error."""
        with pytest.raises(NumericError):
            T.softmax([0.0, np.nan])

    def test_empty_rejected(self):
        """An empty input raises a shape error."""
        with pytest.raises(ShapeError):
            T.softmax(np.zeros((1, 0)))


class TestGradients:
    """Tests for tape gradients against finite differences."""

    def test_sum_gives_ones(self):
        """d sum(W)/dW is all ones."""
        w = Tensor(np.random.default_rng(0).normal(size=(3, 4)), requires_grad=True)
        with Tape() as tape:
            loss = T.sum(w)
        grads = tape.backward(loss)
        assert np.array_equal(grads[w], np.ones((3, 4)))

    def test_quadratic_closed_form(self):
        """(W·x − y)² has gradient 2(W·x − y)xᵀ."""
        rng = np.random.default_rng(2)
        w = param(rng, 2, 3)
        x = rng.normal(size=(3, 1))
        y = rng.normal(size=(2, 1))
        with Tape() as tape:
            r = w @ x - y
            loss = T.sum(r * r)
        grads = tape.backward(loss)
        expected = 2 * (w.data @ x - y) @ x.T
        assert np.allclose(grads[w], expected, rtol=1e-12)

    def test_matmul_gradient(self):
        """Gradient of sum(a @ b) w.r.t. a is ones × bᵀ."""
        rng = np.random.default_rng(3)
        a, b = param(rng, 5, 4), param(rng, 4, 3)
        with Tape() as tape:
            loss = T.sum(a @ b)
        grads = tape.backward(loss)
        assert np.allclose(grads[a], np.ones((5, 3)) @ b.data.T)

    def test_cos_derivative(self):
        """d cos(x)/dx at 0.3 is −sin(0.3)."""
        x = Tensor([0.3], requires_grad=True)
        with Tape() as tape:
            loss = T.sum(T.cos(x))
        assert np.isclose(tape.backward(loss)[x][0], -np.sin(0.3))

    @pytest.mark.parametrize("op", ["tanh", "sigmoid", "cos", "exp"])
    def test_unary_ops(self, op, gradcheck):
        """Unary elementwise ops match finite differences."""
        rng = np.random.default_rng(4)
        x = param(rng, 3, 5)
        fn = getattr(T, op)
        assert gradcheck(lambda: T.sum(fn(x) * fn(x)), [x]) < 1e-4

    def test_relu_away_from_kink(self, gradcheck):
        """relu matches finite differences away from zero."""
        x = Tensor([[0.5, -0.7, 1.3], [-2.0, 0.9, -0.1]], requires_grad=True)
        assert gradcheck(lambda: T.sum(T.relu(x) * x), [x]) < 1e-4

    def test_log(self, gradcheck):
        """log matches finite differences on positive inputs."""
        x = Tensor(np.random.default_rng(5).uniform(0.5, 2.0, size=(4,)), requires_grad=True)
        assert gradcheck(lambda: T.sum(T.log(x) * x), [x]) < 1e-4

    def test_broadcast_add_and_mul(self, gradcheck):
        """Broadcast operands receive reduced gradients."""
        rng = np.random.default_rng(6)
        a, b, c = param(rng, 4, 3), param(rng, 1, 3), param(rng, 4, 1)
        assert gradcheck(lambda: T.sum(T.tanh((a + b) * c)), [a, b, c]) < 1e-4

    def test_softmax_jacobian(self, gradcheck):
        """softmax matches finite differences."""
        rng = np.random.default_rng(7)
        x = param(rng, 2, 6)
        weights = rng.normal(size=(2, 6))
        assert gradcheck(lambda: T.sum(T.softmax(x) * weights), [x]) < 1e-4

    def test_shape_ops(self, gradcheck):
        """concat, index, transpose, reshape and mean match finite differences."""
        rng = np.random.default_rng(8)
        a, b = param(rng, 2, 3), param(rng, 2, 2)

        def loss():
            joined = T.concat([a, b], axis=1)
            picked = joined[:, 1:4]
            flat = T.reshape(T.transpose(picked), (1, 6))
            column_sums = T.sum(joined, axis=0, keepdims=True)
            return T.mean(T.tanh(flat)) + T.sum(column_sums * column_sums)

        assert gradcheck(loss, [a, b]) < 1e-4

    def test_gather_accumulates_repeated_rows(self):
        """A row gathered twice receives twice the gradient."""
        table = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
        with Tape() as tape:
            loss = T.sum(T.gather(table, [1, 1, 2]))
        grads = tape.backward(loss)
        assert grads[table].tolist() == [[0.0, 0.0], [2.0, 2.0], [1.0, 1.0]]

    def test_segment_sum(self, gradcheck):
        """segment_sum buckets rows and matches finite differences."""
        rng = np.random.default_rng(9)
        x = param(rng, 5, 3)
        ids = [0, 2, 0, 1, 2]
        out = T.segment_sum(x, ids, 4)
        assert np.allclose(out.data[0], x.data[0] + x.data[2])
        assert np.array_equal(out.data[3], np.zeros(3))
        assert gradcheck(lambda: T.sum(T.tanh(T.segment_sum(x, ids, 4))), [x]) < 1e-4

    @pytest.mark.parametrize("rows,cols", [(1, 1), (3, 16), (16, 2)])
    def test_random_shapes(self, rows, cols, gradcheck):
        """A mixed expression matches finite differences on shapes up to 16."""
        rng = np.random.default_rng(rows * 31 + cols)
        x, w = param(rng, rows, cols), param(rng, cols, 4)
        assert gradcheck(lambda: T.sum(T.sigmoid(x @ w) * T.cos(x @ w)), [x, w], samples=24) < 1e-4


class TestTape:
    """Tests for the tape replay contract."""

    def test_replay_rejected(self):
        """A consumed tape rejects a second backward."""
        w = Tensor([[1.0, 2.0]], requires_grad=True)
        with Tape() as tape:
            loss = T.sum(w * w)
        tape.backward(loss)
        assert tape.consumed
        with pytest.raises(TapeError):
            tape.backward(loss)

    def test_non_scalar_rejected(self):
        """backward needs a scalar loss."""
        w = Tensor([[1.0, 2.0]], requires_grad=True)
        with Tape() as tape:
            out = w * 2.0
        with pytest.raises(TapeError):
            tape.backward(out)

    def test_unrecorded_loss_rejected(self):
        """A loss computed outside the tape cannot be replayed."""
        w = Tensor([1.0], requires_grad=True)
        loss = T.sum(w)
        with Tape() as tape:
            pass
        with pytest.raises(TapeError):
            tape.backward(loss)

    def test_no_recording_without_tape(self):
        """Outside a tape results do not require gradients."""
        w = Tensor([1.0], requires_grad=True)
        assert not (w * 3.0).requires_grad
        with pytest.raises(TapeError):
            T.backward(T.sum(w))

    def test_module_backward_uses_active_tape(self):
        """backward() inside the context uses the active tape."""
        w = Tensor([2.0], requires_grad=True)
        with Tape():
            loss = T.sum(w * w)
            grads = T.backward(loss)
        assert grads[w].tolist() == [4.0]


class TestLSTMCell:
    """Tests for the LSTM cell."""

    def test_zero_weights_zero_state(self):
        """Zero weights and zero states give h = 0."""
        params = LSTMWeights(Tensor(np.zeros((5, 12))), Tensor(np.zeros((1, 12))))
        h, c = T.lstm_cell(np.ones((1, 2)), np.zeros((1, 3)), np.zeros((1, 3)), params)
        assert np.array_equal(h.data, np.zeros((1, 3)))
        assert np.array_equal(c.data, np.zeros((1, 3)))

    def test_matches_scalar_reference(self):
        """Output equals a scalar-loop reference implementation."""
        rng = np.random.default_rng(10)
        n_in, hidden = 3, 2
        weight = rng.uniform(-0.5, 0.5, size=(n_in + hidden, 4 * hidden))
        bias = rng.uniform(-0.5, 0.5, size=(1, 4 * hidden))
        x, h0, c0 = rng.normal(size=(1, n_in)), rng.normal(size=(1, hidden)), rng.normal(size=(1, hidden))
        h, c = T.lstm_cell(x, h0, c0, LSTMWeights(Tensor(weight), Tensor(bias)))

        inputs = list(x[0]) + list(h0[0])
        sig = lambda v: 1.0 / (1.0 + np.exp(-v))
        for j in range(hidden):
            z = [bias[0, g * hidden + j] + sum(inputs[k] * weight[k, g * hidden + j] for k in range(len(inputs)))
                 for g in range(4)]
            c_ref = sig(z[1]) * c0[0, j] + sig(z[0]) * np.tanh(z[2])
            h_ref = sig(z[3]) * np.tanh(c_ref)
            assert np.isclose(c.data[0, j], c_ref, rtol=1e-12)
            assert np.isclose(h.data[0, j], h_ref, rtol=1e-12)

    def test_gradients_through_three_steps(self, gradcheck):
        """Weights, input and state gradients match finite differences over three steps."""
        rng = np.random.default_rng(11)
        params = LSTMWeights(param(rng, 6, 12), param(rng, 1, 12))
        xs = [param(rng, 1, 3) for _ in range(3)]
        h0 = param(rng, 1, 3)

        def loss():
            h, c = h0, Tensor(np.zeros((1, 3)))
            for x in xs:
                h, c = T.lstm_cell(x, h, c, params)
            return T.sum(h * h)

        assert gradcheck(loss, [params.weight, params.bias, h0] + xs) < 1e-4

    def test_shape_mismatch(self):
        """Wrong input width raises a shape error."""
        params = LSTMWeights(Tensor(np.zeros((5, 12))), Tensor(np.zeros((1, 12))))
        with pytest.raises(ShapeError):
            T.lstm_cell(np.ones((1, 4)), np.zeros((1, 3)), np.zeros((1, 3)), params)


class TestParameterSet:
    """Tests for named parameters."""

    def test_seeded_initialization(self):
        """Same seed gives identical values inside ±1/√fan_in."""
        a, b = ParameterSet(3), ParameterSet(3)
        wa = a.create("w", (16, 4))
        wb = b.create("w", (16, 4))
        assert np.array_equal(wa.data, wb.data)
        assert np.all(np.abs(wa.data) <= 0.25)
        assert wa.requires_grad

    def test_duplicate_name(self):
        """Creating a name twice is rejected."""
        params = ParameterSet()
        params.create("w", (2, 2))
        with pytest.raises(KeyError):
            params.create("w", (2, 2))

    def test_gradients_fill_zeros(self):
        """Parameters missing from a gradient map get zero gradients of their own shape."""
        params = ParameterSet()
        w = params.create("w", (2, 3))
        v = params.create("v", (4,))
        with Tape() as tape:
            loss = T.sum(w)
        named = params.gradients(tape.backward(loss))
        assert named["w"].shape == (2, 3)
        assert np.array_equal(named["v"], np.zeros(4))
        assert v.shape == named["v"].shape

    def test_state_dict_roundtrip(self):
        """load_state_dict restores values and checks shapes."""
        params = ParameterSet(1)
        params.create("w", (2, 2))
        state = params.state_dict()
        params["w"].data += 1.0
        params.load_state_dict(state)
        assert np.array_equal(params["w"].data, state["w"])
        with pytest.raises(ShapeError):
            params.load_state_dict({"w": np.zeros((3, 3))})
