"""
Reverse-mode differentiation: broadcasting, accumulation, graph control and
finite-difference agreement for every primitive.
"""
import numpy as np
import pytest

from lite_nvist import autodiff as ad
from lite_nvist.autodiff import (ComputationRecord, Tensor, gradcheck, gradcheck_tensors, no_grad, precision,
                                 relative_error)
from lite_nvist.common import ContractError, DimensionError
from lite_nvist.layers import layer_norm


GRAD_TOL = 1e-4


def test_broadcast_add_reduces_gradient_to_operand_shape(float64):
    a = Tensor(np.ones((3, 4)), requires_grad=True)
    b = Tensor(np.arange(4.0), requires_grad=True)
    (a + b).sum().backward()
    np.testing.assert_allclose(a.grad, np.ones((3, 4)))
    np.testing.assert_allclose(b.grad, np.full(4, 3.0))


def test_matmul_gradients_match_closed_form(float64, rng):
    a = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    ad.matmul(a, b).sum().backward()
    np.testing.assert_allclose(a.grad, np.tile(b.data.sum(axis=1), (2, 1)))
    np.testing.assert_allclose(b.grad, np.tile(a.data.sum(axis=0)[:, None], (1, 4)))


def test_reused_tensor_accumulates_gradient(float64):
    x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    (x * x + x).sum().backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


def test_gather_with_repeated_rows_accumulates(float64):
    a = Tensor(np.zeros((2, 3)), requires_grad=True)
    ad.gather(a, np.array([0, 0, 1])).sum().backward()
    np.testing.assert_allclose(a.grad, [[2.0, 2.0, 2.0], [1.0, 1.0, 1.0]])


def test_relu_subgradient_at_zero_is_zero(float64):
    x = Tensor(np.array([-1.0, 0.0, 2.0]), requires_grad=True)
    x.relu().sum().backward()
    np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])


def test_sigmoid_is_finite_for_large_inputs(float64):
    y = Tensor(np.array([-1000.0, 0.0, 1000.0])).sigmoid().data
    assert np.all(np.isfinite(y))
    np.testing.assert_allclose(y, [0.0, 0.5, 1.0], atol=1e-12)


CASES = {
    "add": lambda t: (t + 1.5).sum(),
    "sub_rsub": lambda t: (2.0 - t * 3.0).sum(),
    "mul": lambda t: (t * t * t).sum(),
    "div": lambda t: (1.0 / (t * t + 1.0)).sum(),
    "pow": lambda t: (t ** 2).sum(),
    "exp": lambda t: t.exp().sum(),
    "log": lambda t: (t * t + 1.0).log().sum(),
    "sqrt": lambda t: (t * t + 0.5).sqrt().sum(),
    "sin_cos": lambda t: (t.sin() * t.cos()).sum(),
    "sigmoid": lambda t: t.sigmoid().sum(),
    "softmax": lambda t: (t.softmax(axis=-1) * Tensor(np.arange(12.0).reshape(3, 4))).sum(),
    "mean_axis": lambda t: (t.mean(axis=0) * t.mean(axis=0)).sum(),
    "reshape_transpose": lambda t: (t.reshape(4, 3).T * t).sum(),
    "concat_slice": lambda t: (ad.concat([t, t * 2.0], axis=0)[1:5] * t[0]).sum(),
    "stack": lambda t: (ad.stack([t, t.sin()], axis=-1) ** 2).sum(),
    "silu_gelu": lambda t: (ad.silu(t) + ad.gelu(t)).sum(),
    "layer_norm": lambda t: (layer_norm(t) * Tensor(np.linspace(-1.0, 1.0, 4))).sum(),
}


@pytest.mark.parametrize("name", sorted(CASES))
def test_primitive_gradient_matches_central_differences(name, rng):
    x = rng.normal(size=(3, 4))
    assert gradcheck(CASES[name], x) < GRAD_TOL


def test_gradcheck_tensors_reports_one_error_per_tensor(float64, rng):
    w = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=3), requires_grad=True)
    x = Tensor(rng.normal(size=(5, 4)))
    errors = gradcheck_tensors(lambda: (ad.matmul(x, w) + b).sin().sum(), [w, b], coords_per_tensor=4)
    assert len(errors) == 2
    assert max(errors) < GRAD_TOL


def test_gradcheck_tensors_rejects_single_precision(rng):
    w = Tensor(rng.normal(size=3).astype(np.float32), requires_grad=True)
    with pytest.raises(ContractError):
        gradcheck_tensors(lambda: w.sum(), [w])


def test_no_grad_records_nothing(float64):
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = (x * 2.0).sum()
    assert not y.requires_grad
    assert y.creator is None
    assert ad.is_grad_enabled()


def test_precision_context_restores_default_dtype():
    before = ad.get_default_dtype()
    with precision(np.float64):
        assert Tensor([1.0]).dtype == np.float64
    assert ad.get_default_dtype() is before


def test_only_float_dtypes_are_accepted():
    with pytest.raises(ContractError):
        ad.set_default_dtype(np.int32)


def test_backward_needs_a_scalar(float64):
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ContractError):
        (x * 2.0).backward()


def test_shape_errors_are_dimension_errors(float64):
    with pytest.raises(DimensionError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(DimensionError):
        ad.concat([Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4)))], axis=0)
    with pytest.raises(ContractError):
        ad.gather(Tensor(np.ones((2, 3))), np.array([2]))


def test_record_replays_forward_with_new_leaf_values(float64):
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    y = (x * x).sum()
    record = ComputationRecord(y)
    assert len(record) == 2
    x.data[:] = [3.0, 4.0]
    np.testing.assert_allclose(record.replay(), [25.0])


def test_relative_error_uses_floor_for_tiny_values():
    assert relative_error(np.array([1e-12]), np.array([0.0]), floor=1e-8) == pytest.approx(1e-4)
    assert relative_error(np.zeros(0), np.zeros(0)) == 0.0
