import numpy as np
import pytest

from gchgnn import diff
from gchgnn.diff import (
    AdamState,
    Parameter,
    ParameterSet,
    Tape,
    Tensor,
    adam_step,
    backward,
    constant,
    init_parameter,
)
from gchgnn.errors import (
    EmptySoftmaxRow,
    GCHGNNError,
    NonFiniteValue,
    NonScalarLoss,
    ShapeMismatch,
)
from gchgnn.gradcheck import DEFAULT_TOLERANCE, check_primitives, finite_difference_check


def test_every_primitive_matches_central_differences():
    # 20 random shapes per primitive, float64
    worst = check_primitives(shapes_per_op=20, seed=7)
    assert worst, "no primitives checked"
    for name, err in worst.items():
        assert err < DEFAULT_TOLERANCE, f"{name}: relative error {err:.2e}"


def test_mean_of_parameter_grad_is_one_over_n():
    p = init_parameter("p", "xavier-uniform", (3, 4), 0, dtype=np.float64)
    with Tape(dtype=np.float64):
        loss = diff.mean_all(p)
        backward(loss, params=[p])
    assert np.allclose(p.grad, np.full((3, 4), 1.0 / 12.0))


def test_fanout_gradients_accumulate():
    p = init_parameter("p", "ones", (2, 2), 0, dtype=np.float64)
    with Tape(dtype=np.float64):
        once = diff.mean_all(p)
        loss = once
        for _ in range(4):  # five uses of the same mean
            loss = diff.add(loss, once)
        backward(loss, params=[p])
    assert np.allclose(p.grad, 5.0 * np.full((2, 2), 0.25))

    # two independent uses of the same tensor sum their adjoints
    q = init_parameter("q", "ones", (2, 3), 0, dtype=np.float64)
    with Tape(dtype=np.float64):
        a = diff.mean_all(diff.scalar_mul(q, 2.0))
        b = diff.mean_all(diff.tanh(q))
        backward(diff.add(a, b), params=[q])
    expected = 2.0 / 6.0 + (1.0 - np.tanh(1.0) ** 2) / 6.0
    assert np.allclose(q.grad, expected)


def test_unreachable_parameter_gets_zero_grad():
    used = init_parameter("used", "ones", (2, 2), 0, dtype=np.float64)
    unused = init_parameter("unused", "ones", (3, 1), 0, dtype=np.float64)
    with Tape(dtype=np.float64):
        backward(diff.mean_all(used), params=[used, unused])
    assert np.allclose(unused.grad, 0.0)
    assert unused.grad.shape == (3, 1)


def test_backward_rejects_non_scalar():
    p = init_parameter("p", "ones", (2, 2), 0, dtype=np.float64)
    with Tape(dtype=np.float64):
        out = diff.tanh(p)
        with pytest.raises(NonScalarLoss):
            backward(out)


def test_forward_only_without_tape():
    p = init_parameter("p", "ones", (2, 2), 0)
    out = diff.tanh(p)
    assert out.requires_grad
    t = Tape()
    assert not t.records


def test_nonfinite_forward_raises():
    bad = constant(np.array([[-1.0, 2.0]]))
    with pytest.raises(NonFiniteValue):
        diff.log(bad)


def test_shape_mismatch_raises():
    a = constant(np.ones((2, 3)))
    b = constant(np.ones((2, 3)))
    with pytest.raises(ShapeMismatch):
        diff.matmul(a, b)


def test_empty_softmax_row_raises():
    x = constant(np.ones((2, 3)))
    mask = np.array([[True, False, True], [False, False, False]])
    with pytest.raises(EmptySoftmaxRow):
        diff.masked_row_softmax(x, mask)
    out = diff.masked_row_softmax(x, mask, allow_empty_rows=True)
    assert np.allclose(out.value[1], 0.0)
    assert np.isclose(out.value[0].sum(), 1.0)


def test_row_softmax_uniform_row():
    x = constant(np.full((1, 5), 3.2))
    out = diff.row_softmax(x)
    assert np.allclose(out.value, 0.2)
    assert np.isclose(out.value.sum(), 1.0)


def test_cosine_similarity_self_is_one():
    rng = np.random.default_rng(0)
    x = constant(rng.normal(size=(4, 6)))
    s = diff.cosine_similarity_matrix(x, x)
    assert np.allclose(np.diag(s.value), 1.0, atol=1e-6)


def test_gather_rows_with_repeats_accumulates():
    p = init_parameter("p", "ones", (3, 2), 0, dtype=np.float64)
    with Tape(dtype=np.float64):
        out = diff.gather_rows(p, [0, 0, 2])
        backward(diff.mean_all(out), params=[p])
    assert np.allclose(p.grad[0], 2.0 / 6.0)
    assert np.allclose(p.grad[1], 0.0)
    assert np.allclose(p.grad[2], 1.0 / 6.0)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

def test_adam_zero_grad_leaves_parameter_unchanged():
    p = init_parameter("p", "xavier-uniform", (2, 2), 1, dtype=np.float64)
    before = p.value.copy()
    p.grad = np.zeros_like(p.value)
    adam_step([p], AdamState(), lr=0.1)
    assert np.allclose(p.value, before)


def test_adam_first_step_moves_opposite_to_grad_sign():
    p = init_parameter("p", "zeros", (1, 3), 0, dtype=np.float64)
    p.grad = np.array([[1.0, -2.0, 0.5]])
    adam_step([p], AdamState(), lr=0.1)
    assert (np.sign(p.value) == -np.sign(p.grad)).all()


def test_adam_converges_on_quadratic_bowl():
    # loss = 0.5 * ||p - a||^2 has its argmin at a
    rng = np.random.default_rng(5)
    a = rng.uniform(-0.15, 0.15, size=(2, 3))
    target = constant(a, dtype=np.float64)
    p = init_parameter("p", "zeros", (2, 3), 0, dtype=np.float64)
    state = AdamState()
    for _ in range(100):
        with Tape(dtype=np.float64):
            d = diff.sub(p, target)
            loss = diff.scalar_mul(diff.mean_all(diff.elementwise_mul(d, d)), 0.5 * d.value.size)
            backward(loss, params=[p])
        adam_step([p], state, lr=0.01)
    assert np.max(np.abs(p.value - a)) < 1e-3


def test_adam_is_deterministic():
    def run():
        p = init_parameter("p", "xavier-uniform", (3, 3), 9, dtype=np.float64)
        state = AdamState()
        for _ in range(10):
            with Tape(dtype=np.float64):
                loss = diff.mean_all(diff.elementwise_mul(p, p))
                backward(loss, params=[p])
            adam_step([p], state, lr=0.01)
        return p.value.copy()

    assert np.array_equal(run(), run())


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def test_init_zeros_and_ones():
    assert not init_parameter("z", "zeros", (2, 3), 0).value.any()
    assert (init_parameter("o", "ones", (2, 3), 0).value == 1).all()


def test_init_same_seed_bit_identical():
    a = init_parameter("a", "xavier-uniform", (7, 5), 42)
    b = init_parameter("b", "xavier-uniform", (7, 5), 42)
    assert np.array_equal(a.value, b.value)


def test_xavier_bounds_and_mean():
    rows, cols = 100, 100
    n = rows * cols  # 10^4 entries x 100 draws = 10^6 samples
    bound = np.sqrt(6.0 / (rows + cols))
    samples = []
    for seed in range(100):
        samples.append(init_parameter("x", "xavier-uniform", (rows, cols), seed).value)
    samples = np.stack(samples)
    assert samples.size == 100 * n
    assert np.abs(samples).max() <= bound
    # mean of uniform(-b, b): std of the sample mean is b/sqrt(3N)
    sigma_mean = bound / np.sqrt(3.0 * samples.size)
    assert abs(samples.mean()) < 4 * sigma_mean


def test_unknown_init_spec_rejected():
    with pytest.raises(GCHGNNError):
        init_parameter("p", "gaussian", (2, 2), 0)


def test_parameter_set_rejects_duplicate_names():
    ps = ParameterSet()
    ps.register(Parameter("w", np.zeros((1, 1))))
    with pytest.raises(GCHGNNError):
        ps.register(Parameter("w", np.zeros((2, 2))))


def test_composite_graph_gradient_matches_fd():
    # a softmax-attention-flavored composite touching several primitives
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(4, 3)))
    x.requires_grad = True
    w = Tensor(rng.normal(size=(3, 3)))
    w.requires_grad = True

    def build():
        h = diff.tanh(diff.matmul(x, w))
        att = diff.row_softmax(diff.matmul(h, diff.transpose(h)))
        out = diff.matmul(att, h)
        return diff.mean_all(diff.elementwise_mul(out, out))

    assert finite_difference_check(build, [x, w]) < DEFAULT_TOLERANCE
