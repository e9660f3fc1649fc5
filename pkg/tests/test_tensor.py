import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from emsnet import tensor as T
from emsnet.checkpoint import dumps_checkpoint, load_checkpoint, loads_checkpoint, save_checkpoint
from emsnet.errors import (
    ConfigError,
    ContractError,
    DomainError,
    GradStateError,
    IntegrityError,
    NonFiniteError,
    ParseError,
    ShapeError,
)
from emsnet.tensor import Tensor
from gradcheck import max_rel_error


# -- matmul -------------------------------------------------------------------
def test_matmul_identity(rng):
    m = rng.standard_normal((2, 2))
    np.testing.assert_allclose(T.matmul(Tensor(np.eye(2)), Tensor(m)).data, m, atol=1e-12)


def test_matmul_hand_example():
    out = Tensor([[1, 2], [3, 4]]) @ Tensor([[0], [1]])
    np.testing.assert_array_equal(out.data, [[2], [4]])


def test_matmul_shape_error_mentions_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_gradient_5x4x3(rng):
    a, b = rng.standard_normal((5, 4)), rng.standard_normal((4, 3))
    assert max_rel_error(lambda x, y: T.tsum(x @ y), [a, b]) < 1e-6


def test_matmul_batched_broadcast_gradient(rng):
    w, s = rng.standard_normal((2, 3)), rng.standard_normal((4, 3, 3))
    assert max_rel_error(lambda x, y: T.tsum(T.matmul(x, y) * T.matmul(x, y)), [w, s]) < 1e-6


def test_identity_product_within_tolerance(rng):
    a = rng.standard_normal((6, 6))
    assert np.max(np.abs((Tensor(np.eye(6)) @ Tensor(a)).data - a)) <= 1e-12


# -- conv2d -------------------------------------------------------------------
def test_conv_identity_kernel(rng):
    x = rng.standard_normal((1, 6, 7))
    out = T.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))))
    np.testing.assert_array_equal(out.data, x)


def test_conv_zero_kernel(rng):
    x = rng.standard_normal((2, 5, 5))
    assert np.all(T.conv2d(Tensor(x), Tensor(np.zeros((3, 2, 3, 3)))).data == 0)


def test_conv_even_kernel_rejected():
    with pytest.raises(ConfigError):
        T.conv2d(Tensor(np.ones((1, 4, 4))), Tensor(np.ones((1, 1, 2, 2))))


def test_conv_matches_direct_loops(rng):
    x, k = rng.standard_normal((2, 6, 5)), rng.standard_normal((3, 2, 3, 3))
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    ref = np.zeros((3, 6, 5))
    for o in range(3):
        for i in range(6):
            for j in range(5):
                ref[o, i, j] = np.sum(xp[:, i:i + 3, j:j + 3] * k[o])
    np.testing.assert_allclose(T.conv2d(Tensor(x), Tensor(k)).data, ref, atol=1e-12)


def test_conv_gradients(rng):
    x, k, b = rng.standard_normal((2, 8, 8)), rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3)
    weights = rng.standard_normal((3, 8, 8))
    assert max_rel_error(lambda x, k, b: T.tsum(T.conv2d(x, k, b) * Tensor(weights)), [x, k, b]) < 1e-5


def test_conv_batched_5x5_gradients(rng):
    x, k = rng.standard_normal((2, 3, 5, 5)), rng.standard_normal((2, 3, 5, 5))
    assert max_rel_error(lambda x, k: T.tsum(T.conv2d(x, k) * T.conv2d(x, k)), [x, k]) < 1e-5


# -- softmax ------------------------------------------------------------------
def test_softmax_constant_is_uniform():
    np.testing.assert_allclose(T.softmax(Tensor(np.full(7, 3.3))).data, np.full(7, 1 / 7), atol=1e-15)


def test_softmax_two_element():
    np.testing.assert_allclose(T.softmax(Tensor([0.0, np.log(3.0)])).data, [0.25, 0.75], atol=1e-15)


def test_softmax_rows_sum_to_one(rng):
    y = T.softmax(Tensor(rng.standard_normal((4, 6))), axis=-1).data
    assert np.max(np.abs(y.sum(axis=-1) - 1)) <= 1e-12
    assert np.all(y > 0)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 8)), elements=st.floats(-700, 700)))
def test_softmax_normalised_and_positive_for_finite_inputs(x):
    y = T.softmax(Tensor(x), axis=-1).data
    assert np.all(y >= 0)
    assert np.max(np.abs(y.sum(axis=-1) - 1)) <= 1e-12


def test_softmax_gradient(rng):
    w = rng.standard_normal((3, 5))
    assert max_rel_error(lambda x: T.tsum(T.softmax(x, axis=0) * Tensor(w)), [rng.standard_normal((3, 5))]) < 1e-6


# -- elementwise --------------------------------------------------------------
def test_abs_of_self_difference_is_zero(rng):
    x = Tensor(rng.standard_normal((3, 4)))
    assert np.all(T.tabs(x - x).data == 0)


def test_abs_subgradient_zero_at_zero():
    x = Tensor([0.0, 2.0, -1.0], requires_grad=True)
    T.tsum(T.tabs(x)).backward()
    np.testing.assert_array_equal(x.grad, [0.0, 1.0, -1.0])


def test_sigmoid_half():
    assert T.sigmoid(Tensor(0.0)).item() == 0.5


def test_l2_normalize_345():
    np.testing.assert_allclose(T.l2_normalize(Tensor([3.0, 4.0])).data, [0.6, 0.8], atol=1e-15)


def test_l2_normalize_zero_vector():
    x = Tensor(np.zeros((2, 3)), requires_grad=True)
    y = T.l2_normalize(x, axis=-1)
    assert np.all(y.data == 0)
    T.tsum(y).backward()
    assert np.all(np.isfinite(x.grad))


def test_log_domain_error():
    with pytest.raises(DomainError):
        T.log(Tensor([1.0, 0.0]))
    with pytest.raises(DomainError):
        T.log(Tensor([-2.0]))


def test_exp_overflow_is_an_error():
    with pytest.raises(NonFiniteError):
        T.exp(Tensor([1000.0]))


def test_nonfinite_leaf_rejected():
    with pytest.raises(NonFiniteError):
        Tensor([np.nan])


ELEMENTWISE = {
    "add": (lambda a, b: a + b, 2),
    "sub": (lambda a, b: a - b, 2),
    "mul": (lambda a, b: a * b, 2),
    "scalar_mul": (lambda a: a * 2.5, 1),
    "abs": (lambda a: T.tabs(a), 1),
    "relu": (lambda a: T.relu(a), 1),
    "sigmoid": (lambda a: T.sigmoid(a), 1),
    "exp": (lambda a: T.exp(a), 1),
    "log": (lambda a: T.log(T.exp(a) + 0.5), 1),
    "mean": (lambda a: T.mean(a, axis=0), 1),
    "sum": (lambda a: T.tsum(a, axis=1, keepdims=True), 1),
    "l2_normalize": (lambda a: T.l2_normalize(a, axis=-1), 1),
    "transpose": (lambda a: T.transpose(a), 1),
    "reshape": (lambda a: T.reshape(a, (-1,)), 1),
    "take": (lambda a: T.take(a, np.array([2, 0, 2])), 1),
    "concat": (lambda a, b: T.concat([a, b], axis=1), 2),
    "clip": (lambda a: T.clip(a, -0.5, 0.5), 1),
}


@pytest.mark.parametrize("name", sorted(ELEMENTWISE))
def test_op_gradients_on_five_random_inputs(name):
    fn, arity = ELEMENTWISE[name]
    for trial in range(5):
        rng = np.random.default_rng(trial)
        inputs = [rng.standard_normal((3, 4)) for _ in range(arity)]
        # keep away from the kinks of abs/relu/clip
        inputs = [np.where(np.abs(x) < 1e-3, 0.1, x) for x in inputs]
        inputs = [np.where(np.abs(np.abs(x) - 0.5) < 1e-3, 0.3, x) for x in inputs]

        def loss(*ts):
            out = fn(*ts)
            w = Tensor(np.cos(np.arange(out.size)).reshape(out.shape))
            return T.tsum(out * w)

        assert max_rel_error(loss, inputs) < 1e-4, (name, trial)


# -- broadcasting -------------------------------------------------------------
def test_leading_broadcast_allowed_and_gradient_summed():
    a = Tensor(np.ones((3, 2)), requires_grad=True)
    b = Tensor([1.0, 2.0], requires_grad=True)
    T.tsum(a * b).backward()
    np.testing.assert_array_equal(b.grad, [3.0, 3.0])


def test_leading_one_extent_allowed():
    out = Tensor(np.ones((4, 3))) + Tensor(np.ones((1, 3)))
    assert out.shape == (4, 3)


def test_trailing_broadcast_rejected():
    with pytest.raises(ShapeError):
        Tensor(np.ones((4, 3))) + Tensor(np.ones((4, 1)))


# -- backward contract --------------------------------------------------------
def test_backward_sum_gives_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    T.tsum(x).backward()
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_backward_square():
    x = Tensor([1.0, 2.0], requires_grad=True)
    T.tsum(x * x).backward()
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ContractError):
        (x * 2).backward()


def test_double_backward_is_state_error():
    x = Tensor([1.0, 2.0], requires_grad=True)
    loss = T.tsum(x * x)
    loss.backward()
    with pytest.raises(GradStateError):
        loss.backward()


def test_tape_visits_each_op_once_in_reverse_order():
    x = Tensor([0.5, -1.0], requires_grad=True)
    y = x * x
    z = T.exp(y) + y  # y feeds two ops
    loss = T.tsum(z)
    tape = loss.backward()
    assert len(tape.seqs) == len(set(tape.seqs)) == 4
    assert tape.seqs == sorted(tape.seqs, reverse=True)
    assert tape.ops[0] == "sum" and tape.ops[-1] == "mul"


def test_every_reachable_leaf_gets_grad(rng):
    a = Tensor(rng.standard_normal((3,)), requires_grad=True)
    b = Tensor(rng.standard_normal((3,)), requires_grad=True)
    c = Tensor(rng.standard_normal((3,)), requires_grad=False)
    T.tsum(T.relu(a - 100.0) * b + c).backward()
    assert a.grad is not None and b.grad is not None and c.grad is None


def test_no_grad_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    with T.no_grad():
        y = x * 3
    assert not y.requires_grad


def test_gradients_bit_identical_across_runs():
    def run():
        rng = np.random.default_rng(5)
        a = Tensor(rng.standard_normal((4, 2, 6, 6)), requires_grad=True)
        k = Tensor(rng.standard_normal((3, 2, 3, 3)), requires_grad=True)
        loss = T.tsum(T.softmax(T.reshape(T.conv2d(a, k), (4, -1)), axis=-1) * Tensor(rng.standard_normal((4, 108))))
        loss.backward()
        return a.grad, k.grad

    (a1, k1), (a2, k2) = run(), run()
    assert np.array_equal(a1, a2) and np.array_equal(k1, k2)


def test_record_ops_probe():
    with T.record_ops() as log:
        T.softmax(Tensor(np.ones((2, 5))), axis=-1)
    assert [r.name for r in log] == ["softmax"]
    assert log[0].input_shapes == ((2, 5),)


# -- checkpoint ---------------------------------------------------------------
def test_checkpoint_round_trip_bit_exact(tmp_path, rng):
    params = {
        "a/w": rng.standard_normal((3, 4)),
        "b": np.array([np.pi, -0.0, 5e-324, 1.7976931348623157e308]),
        "scalar": np.array(2.5),
        "t": Tensor(rng.standard_normal((2, 1, 3))),
    }
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, params)
    raw = path.read_bytes()
    assert raw.startswith(b"EMSNET01")
    loaded = load_checkpoint(path)
    assert list(loaded) == list(params)
    for name, value in params.items():
        ref = np.asarray(getattr(value, "data", value))
        assert loaded[name].shape == ref.shape
        assert loaded[name].tobytes() == ref.astype("<f8").tobytes()
    assert dumps_checkpoint(loaded) == raw


def test_checkpoint_rejects_bad_magic_and_truncation(rng):
    blob = dumps_checkpoint({"w": rng.standard_normal(5)})
    with pytest.raises(ParseError):
        loads_checkpoint(b"NOTMAGIC" + blob[8:])
    with pytest.raises(IntegrityError):
        loads_checkpoint(blob[:-3])


def test_no_grad_is_per_thread():
    import threading

    inside, release = threading.Event(), threading.Event()

    def worker():
        with T.no_grad():
            inside.set()
            release.wait()

    t = threading.Thread(target=worker)
    t.start()
    inside.wait()
    try:
        x = Tensor(np.ones(3), requires_grad=True)
        assert (x * x).requires_grad
    finally:
        release.set()
        t.join()
