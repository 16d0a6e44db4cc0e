import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ssene import numerics as nx
from ssene.numerics import DimensionError, Tensor


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            s = 0.0
            for k in range(a.shape[1]):
                s += a[i, k] * b[k, j]
            out[i, j] = s
    return out


def scalar_softmax(row):
    m = max(row)
    e = [math.exp(x - m) for x in row]
    z = sum(e)
    return [x / z for x in e]


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-30)


# -- matmul ----------------------------------------------------------------------


def test_matmul_identity():
    a = np.array([[1.5, -2.0], [0.25, 4.0]])
    assert np.array_equal(nx.matmul(np.eye(2), a).data, a)


def test_matmul_hand_arithmetic():
    out = nx.matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[1.0], [1.0]]))
    assert out.data.tolist() == [[3.0], [7.0]]


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 3))
    assert np.max(np.abs(nx.matmul(a, b).data - naive_matmul(a, b))) < 1e-12


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        nx.matmul(np.ones((2, 3)), np.ones((2, 3)))


# -- softmax ---------------------------------------------------------------------


def test_softmax_symmetric():
    assert np.allclose(nx.softmax_rows(np.zeros((1, 2))).data, [[0.5, 0.5]], atol=0)


def test_softmax_closed_form():
    out = nx.softmax_rows(np.array([[math.log(2.0), 0.0]])).data
    assert out[0, 0] == pytest.approx(2 / 3, abs=1e-15)
    assert out[0, 1] == pytest.approx(1 / 3, abs=1e-15)


def test_softmax_matches_scalar_loop():
    x = np.random.default_rng(1).normal(size=(3, 3))
    out = nx.softmax_rows(x).data
    for i in range(3):
        assert np.max(np.abs(out[i] - scalar_softmax(list(x[i])))) < 1e-15
        assert abs(out[i].sum() - 1.0) < 1e-12


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (4, 6), elements=st.floats(-50, 50)))
def test_softmax_rows_properties(x):
    out = nx.softmax_rows(x).data
    assert np.all(np.abs(out.sum(axis=1) - 1.0) < 1e-12)
    assert np.all(np.isfinite(out))
    # order preserving, weakly since tiny gaps can round to equal outputs
    for row_x, row_out in zip(x, out):
        idx = np.argsort(row_x, kind="stable")
        assert np.all(np.diff(row_out[idx]) >= -1e-15)


def test_softmax_mask_zeroes_entries():
    out = nx.softmax(np.array([[1.0, 2.0, 3.0]]), mask=np.array([[True, False, True]])).data
    assert out[0, 1] == 0.0
    assert out.sum() == pytest.approx(1.0)


# -- cross entropy ---------------------------------------------------------------


def test_cross_entropy_perfect():
    probs = np.eye(4)[[0, 2, 3]]
    assert nx.cross_entropy(probs, [0, 2, 3]).item() == 0.0


def test_cross_entropy_half():
    assert nx.cross_entropy(np.array([[0.5, 0.5]]), [1]).item() == pytest.approx(0.693147, abs=1e-6)


def test_cross_entropy_matches_summation():
    rng = np.random.default_rng(2)
    probs = nx.softmax_rows(rng.normal(size=(3, 5))).data
    targets = [4, 0, 2]
    n, v = probs.shape
    expected = 0.0
    for i in range(n):
        for j in range(v):
            y = 1.0 if targets[i] == j else 0.0
            if y:
                expected -= y * math.log(probs[i, j])
    expected /= n
    assert nx.cross_entropy(probs, targets).item() == pytest.approx(expected, abs=1e-14)


def test_cross_entropy_zero_probability_clamped():
    loss = nx.cross_entropy(np.array([[1.0, 0.0]]), [1]).item()
    assert math.isfinite(loss)
    assert loss == pytest.approx(-math.log(1e-12))


# -- KL --------------------------------------------------------------------------


def test_kl_identical_is_zero():
    p = np.array([0.2, 0.3, 0.5])
    assert nx.kl_divergence(p, p).item() == 0.0


def test_kl_scalar_value():
    expected = 0.5 * math.log(0.5 / 0.25) + 0.5 * math.log(0.5 / 0.75)
    got = nx.kl_divergence(np.array([0.5, 0.5]), np.array([0.25, 0.75])).item()
    assert got == pytest.approx(expected, abs=1e-15)


def test_kl_zero_entries_contribute_nothing():
    got = nx.kl_divergence(np.array([0.0, 1.0]), np.array([0.5, 0.5])).item()
    assert got == pytest.approx(math.log(2.0))


def test_kl_length_mismatch():
    with pytest.raises(DimensionError):
        nx.kl_divergence(np.array([0.5, 0.5]), np.array([0.2, 0.3, 0.5]))


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 8), st.integers(0, 10_000))
def test_kl_nonnegative_on_simplex(d, seed):
    rng = np.random.default_rng(seed)
    t, x = rng.dirichlet(np.ones(d)), rng.dirichlet(np.ones(d))
    assert nx.kl_divergence(t, x).item() >= 0.0


# -- finite differences ------------------------------------------------------------


def test_finite_diff_square():
    w = np.array([3.0])
    g = nx.finite_diff_grad(lambda: float(w[0] ** 2), w)
    assert g[0] == pytest.approx(6.0, abs=1e-6)


def test_finite_diff_zero_function():
    w = np.ones((2, 3))
    assert np.array_equal(nx.finite_diff_grad(lambda: 0.0, w), np.zeros((2, 3)))


def test_finite_diff_restores_params():
    w = np.array([1.0, 2.0])
    nx.finite_diff_grad(lambda: float((w ** 3).sum()), {"w": w})
    assert w.tolist() == [1.0, 2.0]


def _check_grad(build, *shapes, seed=0):
    """Analytic vs central-difference gradient of sum(build(*inputs) * probe)."""
    rng = np.random.default_rng(seed)
    inputs = [nx.parameter(rng.normal(size=s)) for s in shapes]
    out = build(*inputs)
    probe = rng.normal(size=out.shape)

    def loss():
        return float((build(*[Tensor(p.data) for p in inputs]).data * probe).sum())

    (out * probe).sum().backward()
    for p in inputs:
        numeric = nx.finite_diff_grad(loss, p.data)
        assert rel_err(p.grad, numeric) < 1e-4


@pytest.mark.parametrize("build,shapes", [
    (lambda a, b: nx.matmul(a, b), [(3, 4), (4, 2)]),
    (lambda a, b: nx.matmul(a, b), [(2, 3, 4), (4, 5)]),
    (lambda a, b: a + b, [(3, 4), (4,)]),
    (lambda a, b: a * b, [(3, 4), (3, 1)]),
    (lambda a: nx.softmax(a, axis=-1), [(3, 5)]),
    (lambda a: nx.exp(a), [(4,)]),
    (lambda a: nx.gelu(a), [(3, 3)]),
    (lambda a: nx.log(nx.exp(a) + 1.0), [(5,)]),
    (lambda a: a.transpose(1, 0, 2).reshape(4, 6), [(2, 4, 3)]),
    (lambda a: a.sum(axis=0), [(3, 4)]),
    (lambda a: a.mean(axis=1, keepdims=True), [(3, 4)]),
    (lambda a: a[np.array([0, 2, 2])], [(3, 4)]),
    (lambda a: a / (a * a + 2.0), [(3,)]),
    (lambda x, g, b: nx.layer_norm(x, g, b), [(2, 3, 6), (6,), (6,)]),
])
def test_op_gradients(build, shapes):
    _check_grad(build, *shapes)


def test_embedding_gradient_accumulates_repeats():
    table = nx.parameter(np.arange(6.0).reshape(3, 2))
    nx.embedding(table, [1, 1, 2]).sum().backward()
    assert table.grad.tolist() == [[0, 0], [2, 2], [1, 1]]


def test_cross_entropy_and_kl_gradients():
    rng = np.random.default_rng(5)
    logits = nx.parameter(rng.normal(size=(4, 6)))
    targets = [1, 0, 5, 2]

    def loss():
        return nx.cross_entropy(nx.softmax(Tensor(logits.data)), targets).item()

    nx.cross_entropy(nx.softmax(logits), targets).backward()
    assert rel_err(logits.grad, nx.finite_diff_grad(loss, logits.data)) < 1e-4

    a, b = nx.parameter(rng.normal(size=5)), nx.parameter(rng.normal(size=5))

    def kl():
        return nx.kl_divergence(nx.softmax(Tensor(a.data)), nx.softmax(Tensor(b.data))).item()

    nx.kl_divergence(nx.softmax(a), nx.softmax(b)).backward()
    assert rel_err(a.grad, nx.finite_diff_grad(kl, a.data)) < 1e-4
    assert rel_err(b.grad, nx.finite_diff_grad(kl, b.data)) < 1e-4


def test_no_grad_records_nothing():
    p = nx.parameter(np.ones(3))
    with nx.no_grad():
        out = p * 2.0
    assert not out.requires_grad


# -- Adam ------------------------------------------------------------------------


def scalar_adam(w, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return w


def test_adam_zero_gradient_leaves_params():
    params = {"w": np.array([1.0, -2.0])}
    state = nx.AdamState()
    nx.adam_step(params, {"w": np.zeros(2)}, state, lr=0.1)
    assert params["w"].tolist() == [1.0, -2.0]
    assert state.t == 1


def test_adam_first_step_moves_by_lr():
    params = {"w": np.array([0.5, 0.5])}
    nx.adam_step(params, {"w": np.array([3.0, -0.2])}, nx.AdamState(), lr=0.01)
    assert params["w"][0] == pytest.approx(scalar_adam(0.5, [3.0], 0.01), abs=1e-15)
    assert params["w"][0] == pytest.approx(0.5 - 0.01, abs=1e-8)
    assert params["w"][1] == pytest.approx(0.5 + 0.01, abs=1e-8)


def test_adam_two_steps_match_recurrence():
    params = {"w": np.array([0.3])}
    state = nx.AdamState()
    for g in (0.7, -1.3):
        nx.adam_step(params, {"w": np.array([g])}, state, lr=0.05)
    assert params["w"][0] == scalar_adam(0.3, [0.7, -1.3], 0.05)


def test_smoothed_cross_entropy_value_and_gradient():
    rng = np.random.default_rng(7)
    logits = rng.normal(size=(3, 5))
    targets = np.array([0, 4, 2])
    s = 0.2

    def value(z):
        p = np.exp(z - z.max(axis=1, keepdims=True))
        p /= p.sum(axis=1, keepdims=True)
        q = np.full((3, 5), s / 5)
        q[np.arange(3), targets] += 1 - s
        return float(-(q * np.log(p)).sum() / 3)

    z = nx.parameter(logits.copy())
    loss = nx.cross_entropy(nx.softmax(z), targets, smoothing=s)
    assert loss.item() == pytest.approx(value(logits), abs=1e-12)
    loss.backward()
    numeric = nx.finite_diff_grad(lambda: value(z.data), z.data)
    assert np.allclose(z.grad, numeric, atol=1e-8)
    plain = nx.cross_entropy(nx.softmax(nx.constant(logits)), targets)
    assert nx.cross_entropy(nx.softmax(nx.constant(logits)), targets, smoothing=0.0).item() == plain.item()


def test_adam_weight_decay_is_decoupled():
    p = {"w": np.array([2.0, -4.0])}
    nx.adam_step(p, {"w": np.zeros(2)}, nx.AdamState(), lr=0.1, weight_decay=0.5)
    assert np.allclose(p["w"], [2.0 * 0.95, -4.0 * 0.95])
