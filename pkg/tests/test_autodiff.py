import numpy as np
import pytest
from hypothesis import given, strategies as st

from graphcond.autodiff import (Adam, AdamState, Tape, Tensor, adam_step, finite_diff_check,
                                jacobi_eigh, load_params, ops, save_params)
from graphcond.graph import CSR

rng0 = np.random.default_rng(0)
SPARSE = CSR(np.array([0, 2, 3, 4]), np.array([0, 2, 1, 0]), np.array([1.0, 0.5, 2.0, -1.0]), (3, 3))

# (name, function of tensor list, list of input shapes, positive-only inputs)
UNARY_CASES = [
    ("matmul", lambda t: ops.sum(ops.mul(ops.matmul(t[0], t[1]), ops.matmul(t[0], t[1]))), [(3, 4), (4, 2)]),
    ("spmm", lambda t: ops.frobenius_sq(ops.spmm(SPARSE, t[0])), [(3, 2)]),
    ("transpose", lambda t: ops.sum(ops.mul(ops.transpose(t[0]), t[1])), [(3, 2), (2, 3)]),
    ("reshape", lambda t: ops.frobenius_sq(ops.mul(ops.reshape(t[0], (2, 3)), t[1])), [(3, 2), (2, 3)]),
    ("add_broadcast", lambda t: ops.frobenius_sq(ops.add(t[0], t[1])), [(3, 4), (1, 4)]),
    ("sub_broadcast", lambda t: ops.frobenius_sq(ops.sub(t[0], t[1])), [(3, 4), (3, 1)]),
    ("neg_scale", lambda t: ops.frobenius_sq(ops.scale(ops.neg(t[0]), 2.5)), [(2, 3)]),
    ("mul", lambda t: ops.sum(ops.mul(ops.mul(t[0], t[1]), t[0])), [(3, 3), (3, 3)]),
    ("div", lambda t: ops.sum(ops.div(t[0], ops.add(ops.mul(t[1], t[1]), 1.0))), [(2, 3), (2, 3)]),
    ("power", lambda t: ops.sum(ops.power(ops.add(ops.mul(t[0], t[0]), 0.5), 1.5)), [(2, 3)]),
    ("sqrt", lambda t: ops.sum(ops.sqrt(ops.add(ops.mul(t[0], t[0]), 0.3))), [(2, 3)]),
    ("exp_log", lambda t: ops.sum(ops.log(ops.add(ops.exp(t[0]), 1.0))), [(3, 2)]),
    ("relu", lambda t: ops.frobenius_sq(ops.relu(t[0])), [(4, 3)]),
    ("leaky_relu", lambda t: ops.frobenius_sq(ops.leaky_relu(t[0], 0.2)), [(4, 3)]),
    ("sigmoid", lambda t: ops.sum(ops.mul(ops.sigmoid(t[0]), t[1])), [(3, 3), (3, 3)]),
    ("tanh", lambda t: ops.sum(ops.mul(ops.tanh(t[0]), t[1])), [(3, 3), (3, 3)]),
    ("row_softmax", lambda t: ops.sum(ops.mul(ops.row_softmax(t[0]), t[1])), [(3, 4), (3, 4)]),
    ("log_softmax", lambda t: ops.sum(ops.mul(ops.log_softmax(t[0]), t[1])), [(3, 4), (3, 4)]),
    ("cross_entropy", lambda t: ops.cross_entropy(t[0], np.array([0, 2, 1, 2])), [(4, 3)]),
    ("cross_entropy_mask", lambda t: ops.cross_entropy(t[0], np.array([0, 2, 1, 2]),
                                                       np.array([True, False, True, True]), 7.0), [(4, 3)]),
    ("sum_axis0", lambda t: ops.frobenius_sq(ops.sum_axis(t[0], 0)), [(3, 4)]),
    ("sum_axis1", lambda t: ops.frobenius_sq(ops.sum_axis(t[0], 1)), [(3, 4)]),
    ("concat_cols", lambda t: ops.frobenius_sq(ops.mul(ops.concat_cols([t[0], t[1]]), t[2])),
     [(3, 2), (3, 1), (3, 3)]),
    ("take_rows", lambda t: ops.frobenius_sq(ops.take_rows(t[0], np.array([2, 0, 2]))), [(4, 3)]),
    ("mean_rows", lambda t: ops.frobenius_sq(ops.mean_rows(t[0], np.array([1, 3]))), [(4, 3)]),
    ("pair_sum", lambda t: ops.sum(ops.sigmoid(ops.pair_sum(t[0], t[1]))), [(3, 2), (2, 2)]),
    ("cosine", lambda t: ops.cosine_columns_distance(t[0], t[1]), [(4, 3), (4, 3)]),
    ("cosine_vector", lambda t: ops.cosine_columns_distance(t[0], t[1]), [(5,), (5,)]),
    ("dropout", lambda t: ops.frobenius_sq(ops.dropout(t[0], 0.4, True, np.random.default_rng(3))), [(5, 4)]),
    ("operators", lambda t: ops.sum((t[0] @ t[1] - t[0] @ t[1] * 2.0 + 1.0) / 3.0), [(2, 2), (2, 2)]),
]


@pytest.mark.parametrize("name,f,shapes", UNARY_CASES, ids=[c[0] for c in UNARY_CASES])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_op_gradients_match_finite_differences(name, f, shapes, seed):
    rng = np.random.default_rng(seed)
    xs = [rng.standard_normal(s) for s in shapes]
    if name == "relu" or name == "leaky_relu":
        xs = [np.where(np.abs(x) < 1e-2, 0.5, x) for x in xs]
    assert finite_diff_check(f, xs) < 1e-5


def test_sqrt_gradient_at_zero_is_zero():
    tape = Tape()
    x = tape.param(np.zeros((1, 2)))
    grads = tape.backward(ops.sum(ops.sqrt(x)))
    np.testing.assert_array_equal(grads[x], 0.0)


def test_relu_mask_is_constant():
    tape = Tape()
    x = tape.param(np.array([[-1.0, 2.0]]))
    m = ops.relu_mask(x)
    np.testing.assert_array_equal(m.value, [[0.0, 1.0]])
    grads = tape.backward(ops.sum(ops.mul(m, x)))
    np.testing.assert_array_equal(grads[x], [[0.0, 1.0]])


def test_cosine_zero_column_contributes_one():
    a = np.array([[0.0, 1.0], [0.0, 0.0]])
    b = np.array([[1.0, 1.0], [1.0, 0.0]])
    assert ops.cosine_columns_distance(a, b).item() == pytest.approx(1.0)
    assert ops.cosine_columns_distance(a, a).item() == pytest.approx(0.0, abs=1e-15)


def test_dropout_eval_mode_is_identity_and_train_scales():
    x = np.ones((50, 50))
    np.testing.assert_array_equal(ops.dropout(x, 0.5, False).value, x)
    out = ops.dropout(x, 0.5, True, np.random.default_rng(0)).value
    assert set(np.unique(out)) <= {0.0, 2.0}


def test_backward_consumes_tape_and_unused_leaves_get_zero():
    tape = Tape()
    a, b = tape.param(np.ones((2, 2))), tape.param(np.ones((2, 2)))
    grads = tape.backward(ops.sum(a))
    np.testing.assert_array_equal(grads[b], 0.0)
    with pytest.raises(RuntimeError):
        tape.backward(ops.sum(a))


def test_backward_rejects_non_scalar():
    tape = Tape()
    a = tape.param(np.ones((2, 2)))
    with pytest.raises(ValueError):
        tape.backward(ops.mul(a, a))


def test_second_order_through_recorded_gradient():
    # d/dx of (d/dw (w*x)^2 at w=1) = d/dx (2 x^2) = 4x
    tape = Tape()
    x = tape.param(np.array([[1.5]]))
    w = Tensor(np.array([[1.0]]))
    grad_w = ops.mul(ops.scale(ops.mul(w, x), 2.0), x)   # analytic d/dw (w x)^2
    grads = tape.backward(ops.sum(grad_w))
    assert grads[x][0, 0] == pytest.approx(6.0)


def _adam_reference(x0, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    x, m, v = x0, 0.0, 0.0
    for t in range(1, steps + 1):
        g = 2 * x
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x -= lr * (m / (1 - b1 ** t)) / ((v / (1 - b2 ** t)) ** 0.5 + eps)
    return x


def test_adam_matches_scalar_reference():
    p = [np.array([1.0])]
    state = AdamState()
    for _ in range(100):
        p = adam_step(p, [2 * p[0]], state, 0.05)
    assert p[0][0] == pytest.approx(_adam_reference(1.0, 0.05, 100), abs=1e-12)
    assert abs(p[0][0]) < 0.1


def test_adam_first_step_moves_by_lr_and_weight_decay_folds_in():
    opt = Adam(0.1)
    out = opt.step({"w": np.array([3.0])}, {"w": np.array([-7.0])})
    assert out["w"][0] == pytest.approx(3.1, abs=1e-8)
    state = AdamState()
    a = adam_step([np.array([2.0])], [np.array([0.0])], state, 0.1, weight_decay=0.5)
    assert a[0][0] == pytest.approx(1.9, abs=1e-8)
    with pytest.raises(ValueError):
        adam_step([np.ones(2)], [np.ones(3)], AdamState(), 0.1)


@given(st.integers(0, 10_000), st.integers(1, 16))
def test_jacobi_reconstruction_and_orthogonality(seed, n):
    s = np.random.default_rng(seed).standard_normal((n, n))
    s = s + s.T
    w, v = jacobi_eigh(s)
    assert np.all(np.diff(w) >= 0)
    assert np.linalg.norm(s - v @ np.diag(w) @ v.T) / max(np.linalg.norm(s), 1e-300) < 1e-8
    assert np.linalg.norm(v.T @ v - np.eye(n)) < 1e-10


def test_jacobi_edge_cases():
    w, v = jacobi_eigh(np.eye(4) * 3)
    np.testing.assert_array_equal(w, 3.0)
    w, v = jacobi_eigh(np.zeros((3, 3)))
    np.testing.assert_array_equal(w, 0.0)
    with pytest.raises(ValueError):
        jacobi_eigh(np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(ValueError):
        jacobi_eigh(np.zeros((2, 3)))


def test_params_round_trip(tmp_path):
    params = {"W0": rng0.standard_normal((3, 4)), "b0": np.zeros(4), "lr": np.array([0.01])}
    nbytes = save_params(params, tmp_path / "p.params")
    assert nbytes == (tmp_path / "p.params").stat().st_size
    back = load_params(tmp_path / "p.params")
    assert list(back) == list(params)
    for k in params:
        assert back[k].tobytes() == params[k].tobytes()
    (tmp_path / "bad").write_bytes(b"NOPE 1\n")
    with pytest.raises(ValueError):
        load_params(tmp_path / "bad")
    with pytest.raises(ValueError):
        save_params({"a b": np.zeros(1)}, tmp_path / "x")
