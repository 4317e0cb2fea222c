import threading

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from gagcn import numkernel as nk
from gagcn.exceptions import ContractError, DimensionError, NumericError, OracleError

from conftest import param


def floats(lo=-5, hi=5):
    return st.floats(lo, hi, allow_nan=False, allow_infinity=False)


# matmul

def test_matmul_identity():
    out = nk.matmul(np.eye(2), nk.Tensor([[5.0, 6], [7, 8]]))
    np.testing.assert_array_equal(out.data, [[5, 6], [7, 8]])


def test_matmul_unit_column_selects_second_column():
    out = nk.matmul(nk.Tensor([[1.0, 2], [3, 4]]), nk.Tensor([[0.0], [1]]))
    np.testing.assert_array_equal(out.data, [[2], [4]])


def test_matmul_hand_expansion():
    out = nk.Tensor([[1.0, 2], [3, 4]]) @ nk.Tensor([[5.0, 6], [7, 8]])
    np.testing.assert_array_equal(out.data, [[19, 22], [43, 50]])


def test_matmul_mismatch_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        nk.matmul(nk.Tensor(np.ones((2, 3))), nk.Tensor(np.ones((2, 3))))


def test_matmul_binary64_accumulates_in_binary64():
    a = nk.Tensor(np.full((1, 3), 1e8))
    b = nk.Tensor(np.array([[1.0], [1e-8], [-1.0]]))
    assert (a @ b).dtype == np.float64
    assert (a @ b).item() == pytest.approx(1.0)


@given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_matmul_associative(m, k, n, p, seed):
    r = nk.Rng(seed)
    a, b, c = (nk.Tensor(r.child(i).normal(1.0, s)) for i, s in enumerate([(m, k), (k, n), (n, p)]))
    np.testing.assert_allclose(((a @ b) @ c).data, (a @ (b @ c)).data, atol=1e-10, rtol=1e-10)


# softmax

def test_softmax_examples():
    np.testing.assert_allclose(nk.softmax(nk.Tensor([0.0, 0.0])).data, [0.5, 0.5])
    np.testing.assert_allclose(nk.softmax(nk.Tensor([7.3])).data, [1.0])
    np.testing.assert_allclose(nk.softmax(nk.Tensor([1.0, 2, 3])).data, [0.09003, 0.24473, 0.66524], atol=1e-5)


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_softmax_rejects_non_finite(bad):
    with pytest.raises(NumericError):
        nk.softmax(nk.Tensor([0.0, bad]))


@given(hnp.arrays(np.float64, st.integers(1, 12), elements=floats(-50, 50)))
def test_softmax_on_simplex(x):
    out = nk.softmax(nk.Tensor(x)).data
    assert out.min() >= 0
    assert abs(out.sum() - 1) < 1e-6


@given(hnp.arrays(np.float64, st.integers(1, 12), elements=floats(-50, 50)), floats(-100, 100))
def test_softmax_shift_invariant(x, c):
    np.testing.assert_allclose(nk.softmax(nk.Tensor(x + c)).data, nk.softmax(nk.Tensor(x)).data, atol=1e-10)


def test_softmax_survives_huge_logits():
    out = nk.softmax(nk.Tensor([1000.0, 1000.0, -1000.0])).data
    np.testing.assert_allclose(out, [0.5, 0.5, 0.0])


# kronecker

def test_kronecker_examples():
    np.testing.assert_array_equal(nk.kronecker(np.eye(2), nk.Tensor(np.eye(3))).data, np.eye(6))
    B = np.array([[1.0, -2], [3, 4]])
    np.testing.assert_array_equal(nk.kronecker(nk.Tensor([[2.0]]), nk.Tensor(B)).data, 2 * B)
    out = nk.kronecker(nk.Tensor([[1.0, 2], [3, 4]]), nk.Tensor([[0.0, 1], [1, 0]])).data
    np.testing.assert_array_equal(out, [[0, 1, 0, 2], [1, 0, 2, 0], [0, 3, 0, 4], [3, 0, 4, 0]])


def test_kronecker_rejects_non_matrices():
    with pytest.raises(DimensionError):
        nk.kronecker(nk.Tensor(np.ones(3)), nk.Tensor(np.ones((2, 2))))


@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_kronecker_mixed_product_structure(p, r, seed):
    g = nk.Rng(seed)
    A, B, X = g.child(0).normal(1.0, (p, p)), g.child(1).normal(1.0, (r, r)), g.child(2).normal(1.0, (p, r))
    lhs = nk.kronecker(nk.Tensor(A), nk.Tensor(B)).data @ X.reshape(-1)
    np.testing.assert_allclose(lhs, (A @ X @ B.T).reshape(-1), atol=1e-10)


# activations

def test_activation_examples():
    assert nk.activation(nk.Tensor([0.0]), "tanh").item() == 0.0
    np.testing.assert_array_equal(nk.activation(nk.Tensor([-3.0, 3.0]), "relu").data, [0, 3])
    assert nk.activation(nk.Tensor([1.0]), "tanh").item() == pytest.approx(0.76159, abs=1e-5)
    x = nk.Tensor(np.arange(6.0).reshape(2, 3))
    assert nk.activation(x, "identity").shape == (2, 3)


def test_unknown_activation():
    with pytest.raises(ContractError):
        nk.activation(nk.Tensor([1.0]), "gelu")


# backward

def test_backward_linear_map():
    W = param(np.ones((2, 2)), "W")
    loss = nk.tsum(W @ nk.Tensor([1.0, 2.0]))
    loss.backward()
    np.testing.assert_array_equal(W.grad, [[1, 2], [1, 2]])


def test_backward_softmax_jacobian():
    x = param([0.0, 0.0], "x")
    nk.softmax(x)[0].backward()
    np.testing.assert_allclose(x.grad, [0.25, -0.25])


def test_backward_requires_scalar():
    x = param([1.0, 2.0])
    with pytest.raises(ContractError):
        (x * x).backward()


def test_backward_accumulates_until_reset():
    x = param([3.0])
    for _ in range(2):
        nk.tsum(x * x).backward()
    assert x.grad[0] == 12.0
    x.zero_grad()
    assert x.grad[0] == 0.0


def test_backward_shared_subexpression():
    x = param([2.0])
    y = x * x
    nk.tsum(y + y * x).backward()  # d/dx (x^2 + x^3) = 2x + 3x^2
    assert x.grad[0] == pytest.approx(16.0)


def test_no_grad_records_nothing():
    x = param([1.0])
    with nk.no_grad():
        y = x * x
    assert not y.requires_grad
    assert nk.is_recording()


def test_no_grad_is_thread_local():
    seen = []
    with nk.no_grad():
        t = threading.Thread(target=lambda: seen.append(nk.is_recording()))
        t.start()
        t.join()
    assert seen == [True]


def test_grad_is_finite_after_backward():
    x = param(nk.Rng(0).normal(1.0, (3, 4)))
    nk.tsum(nk.norm(nk.tanh(x), axis=-1)).backward()
    assert x.grad.shape == x.shape and np.all(np.isfinite(x.grad))


def test_norm_subgradient_at_zero():
    x = param(np.zeros((2, 3)))
    nk.tsum(nk.norm(x)).backward()
    np.testing.assert_array_equal(x.grad, 0)


# finite differences

def test_fd_quadratic():
    p = param([3.0])
    assert nk.finite_diff_check(lambda: nk.tsum(p * p), p) < 1e-8


def test_fd_constant():
    p = param([1.0, 2.0])
    assert nk.finite_diff_check(lambda: nk.Tensor(5.0), p) == 0.0


def test_fd_detects_nondeterminism():
    p = param([1.0])
    calls = iter(range(100))
    with pytest.raises(OracleError):
        nk.finite_diff_check(lambda: nk.tsum(p * float(next(calls))), p)


def test_fd_requires_binary64():
    p = nk.Parameter(np.ones(2), "p32", dtype=np.float32)
    with pytest.raises(ContractError):
        nk.finite_diff_check(lambda: nk.tsum(p), p)


def test_fd_flags_wrong_gradient():
    p = param([0.5, -1.0])
    wrong = lambda: nk._node(np.array(0.0), (p,), lambda g: (np.ones(2) * g,))  # noqa: E731
    assert nk.finite_diff_check(lambda: nk.tsum(p * p) + wrong(), p) > 0.1


# tensors, parameters, rng

def test_tensor_row_major_layout():
    t = nk.Tensor(np.arange(24.0).reshape(2, 3, 4))
    assert t.data.flags["C_CONTIGUOUS"] and t.size == 24
    i, j, k = 1, 2, 3
    strides = (12, 4, 1)
    assert t.data.reshape(-1)[i * strides[0] + j * strides[1] + k * strides[2]] == t.data[i, j, k]


def test_parameter_grad_matches_shape():
    p = nk.Parameter(np.ones((3, 2)), "w")
    assert p.grad.shape == p.shape and not p.grad.any()


def test_precision_labels():
    assert nk.Tensor(np.ones(2), dtype=np.float32).precision == "binary32"
    assert nk.Tensor(np.ones(2)).precision == "binary64"


def test_rng_reproducible():
    a = nk.init_uniform(nk.Rng(7).child(3), (4, 5), 4)
    b = nk.init_uniform(nk.Rng(7).child(3), (4, 5), 4)
    assert a.tobytes() == b.tobytes()
    assert np.abs(a).max() <= 0.5
    assert nk.Rng(7).normal(1.0, 3).tobytes() != nk.Rng(8).normal(1.0, 3).tobytes()


def test_rng_children_independent_of_draw_order():
    r = nk.Rng(5)
    first = r.child(1).normal(1.0, 4)
    r.child(0).normal(1.0, 100)
    assert r.child(1).normal(1.0, 4).tobytes() == first.tobytes()


def test_module_state_roundtrip():
    class Toy(nk.Module):
        def __init__(self):
            self.a = nk.Parameter(np.ones(2), "a")
            self.pairs = [(nk.Parameter(np.zeros((2, 2)), "b"), nk.Parameter(np.zeros(1), "c"))]

    toy = Toy()
    assert [p.name for p in toy.parameters()] == ["a", "b", "c"]
    state = toy.state_dict()
    state["a"][:] = 4
    toy.load_state_dict(state)
    assert toy.a.data[0] == 4
    with pytest.raises(DimensionError, match=r"\(3,\).*\(2,\)"):
        toy.load_state_dict({**state, "a": np.ones(3)})
    with pytest.raises(DimensionError):
        toy.load_state_dict({"a": np.ones(2)})
