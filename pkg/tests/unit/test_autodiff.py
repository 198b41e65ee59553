"""
Tests for the numcore tape: gradient accumulation, tape lifetime, modes
(no_grad, precision, anomaly detection) and AdamW.
"""

import math

import numpy as np
import pytest

from core.errors import NumericalError, TapeError
from core.numcore import (
    AdamW,
    Tensor,
    backward,
    current_tape,
    default_dtype,
    detect_anomaly,
    get_default_dtype,
    new_tape,
    no_grad,
    ops,
)
from core.numcore.nn import parameter

pytestmark = pytest.mark.unit


# =============================================================================
# Gradient accumulation
# =============================================================================

class TestBackward:
    """Reverse pass over the recorded operations"""

    def test_product_rule(self, f64):
        x = parameter(np.array([1.0, 2.0, 3.0]))
        y = parameter(np.array([4.0, 5.0, 6.0]))
        backward(ops.sum(x * y))
        np.testing.assert_allclose(x.grad, y.data)
        np.testing.assert_allclose(y.grad, x.data)

    def test_shared_subexpression_accumulates(self, f64):
        x = parameter(np.array([0.5, -2.0]))
        backward(ops.sum(x * x + x))
        np.testing.assert_allclose(x.grad, 2 * x.data + 1)

    def test_broadcast_gradient_is_summed_back(self, f64):
        x = parameter(np.ones((4, 3)))
        bias = parameter(np.zeros(3))
        backward(ops.sum((x + bias) * 2.0))
        np.testing.assert_allclose(bias.grad, np.full(3, 8.0))

    def test_max_routes_gradient_to_first_maximum(self, f64):
        x = parameter(np.array([[1.0, 3.0, 3.0], [2.0, 0.0, -1.0]]))
        backward(ops.sum(ops.max(x, axis=1)))
        np.testing.assert_array_equal(x.grad, [[0, 1, 0], [1, 0, 0]])

    def test_retained_intermediate_gets_gradient(self, f64):
        x = parameter(np.array([1.0, 2.0]))
        hidden = (x * 3.0).retain_grad()
        backward(ops.sum(hidden * hidden))
        np.testing.assert_allclose(hidden.grad, 2 * hidden.data)

    def test_constants_get_no_gradient(self, f64):
        x = parameter(np.array([1.0]))
        c = Tensor(np.array([2.0]))
        backward(ops.sum(x * c))
        assert c.grad is None


# =============================================================================
# Tape lifetime
# =============================================================================

class TestTape:
    """A tape is consumed by backward and cannot be replayed"""

    def test_second_backward_raises(self, f64):
        x = parameter(np.array([1.0, 2.0]))
        loss = ops.sum(x * x)
        backward(loss)
        with pytest.raises(TapeError):
            backward(loss)

    def test_recording_resumes_on_a_fresh_tape(self, f64):
        x = parameter(np.array([1.0, 2.0]))
        backward(ops.sum(x * x))
        x.grad = None
        backward(ops.sum(x * 3.0))
        np.testing.assert_allclose(x.grad, [3.0, 3.0])

    def test_non_scalar_loss_rejected(self, f64):
        x = parameter(np.ones(3))
        with pytest.raises(TapeError, match="scalar"):
            backward(x * 2.0)

    def test_loss_without_parameters_rejected(self, f64):
        with pytest.raises(TapeError):
            backward(ops.sum(Tensor(np.ones(3))))

    def test_new_tape_replaces_current(self):
        first = current_tape()
        assert new_tape() is not first
        assert len(current_tape()) == 0

    def test_ops_are_recorded_in_order(self, f64):
        tape = new_tape()
        x = parameter(np.ones(2))
        ops.sum(ops.exp(x))
        assert tape.op_names == ["exp", "sum"]


# =============================================================================
# Modes
# =============================================================================

class TestModes:
    """no_grad, default precision and anomaly detection"""

    def test_no_grad_records_nothing(self, f64):
        tape = new_tape()
        x = parameter(np.ones(2))
        with no_grad():
            y = x * 2.0
        assert not y.requires_grad
        assert len(tape) == 0

    def test_default_dtype_is_scoped(self):
        before = get_default_dtype()
        with default_dtype("float64"):
            assert Tensor([1.0]).dtype == np.float64
        assert get_default_dtype() == before

    def test_anomaly_detection_names_the_operation(self, f64):
        x = Tensor(np.array([-1.0]))
        with detect_anomaly(), np.errstate(invalid="ignore"):
            with pytest.raises(NumericalError, match="log"):
                ops.log(x)

    def test_anomaly_detection_off_lets_nan_through(self, f64):
        with np.errstate(invalid="ignore"):
            out = ops.log(Tensor(np.array([-1.0])))
        assert math.isnan(out.item())


# =============================================================================
# AdamW
# =============================================================================

class TestAdamW:
    """Decoupled weight decay and convergence on a quadratic"""

    def test_decay_skips_vectors(self, f64):
        matrix = parameter(np.ones((2, 2)))
        vector = parameter(np.ones(2))
        optimizer = AdamW([matrix, vector], lr=0.1, weight_decay=0.5)
        matrix.grad = np.zeros((2, 2))
        vector.grad = np.zeros(2)
        optimizer.step()
        np.testing.assert_allclose(matrix.data, np.full((2, 2), 0.95))
        np.testing.assert_allclose(vector.data, np.ones(2))

    def test_minimizes_quadratic(self, f64):
        x = parameter(np.array([3.0, -2.0]))
        optimizer = AdamW([x], lr=0.1, weight_decay=0.0)
        for _ in range(600):
            new_tape()
            backward(ops.sum(x * x))
            optimizer.step()
            optimizer.zero_grad()
        assert np.all(np.abs(x.data) < 0.1)
