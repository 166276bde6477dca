import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dialret.numerics import (
    ContractError,
    LengthError,
    NumericError,
    Rng,
    ShapeError,
    Tensor,
    backward,
    concat,
    gelu,
    grad_check,
    layer_norm,
    log_softmax,
    matmul,
    mean_pool_segments,
    no_grad,
    numeric_grad,
    relu,
    segment_sizes,
    softmax,
    softmax_rows,
    take_rows,
    transpose,
)


def rand(rng, *shape, grad=True):
    return Tensor(rng.normal(shape), requires_grad=grad)


# ---------------------------------------------------------------- rng


def test_pcg32_reference_stream():
    # pcg32_srandom_r(42, 54) from the PCG reference demo
    r = Rng.from_pcg_seed(42, 54)
    assert [r.next_u32() for _ in range(6)] == [
        0xA15C02B7, 0x7B47F409, 0xBA1D3330, 0x83D2F293, 0xBFA4784B, 0xCBED606E,
    ]


def test_bulk_draw_matches_sequential():
    a, b = Rng(7), Rng(7)
    seq = [a.next_u32() for _ in range(5000)]
    bulk = b.u32_array(5000)
    assert bulk.tolist() == seq
    assert a.next_u32() == int(b.u32_array(1)[0])


def test_same_seed_same_stream_and_spawn_independence():
    assert np.array_equal(Rng(3).normal(100), Rng(3).normal(100))
    assert not np.array_equal(Rng(3).normal(10), Rng(4).normal(10))
    r = Rng(9)
    child_before = r.spawn("init").uniform(4)
    r.uniform(100)
    assert np.array_equal(child_before, r.spawn("init").uniform(4))
    assert not np.array_equal(r.spawn("a").uniform(4), r.spawn("b").uniform(4))


def test_rng_distributions_sane():
    r = Rng(11)
    u = r.uniform(20000)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.01
    z = r.normal(20000)
    assert abs(z.mean()) < 0.03 and abs(z.std() - 1.0) < 0.03
    p = r.permutation(50)
    assert sorted(p.tolist()) == list(range(50))
    c = r.choice(10, 4)
    assert len(set(c.tolist())) == 4
    with pytest.raises(ValueError):
        r.choice(3, 4)


# ---------------------------------------------------------------- matmul


def test_matmul_examples():
    eye = Tensor(np.eye(2))
    assert matmul(eye, Tensor([[3.0], [4.0]])).data.tolist() == [[3.0], [4.0]]
    out = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0], [6.0]]))
    assert out.data.tolist() == [[17.0], [39.0]]
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_matmul_batched_gradients():
    r = Rng(1)
    a, w = rand(r, 3, 4, 5), rand(r, 5, 2)
    f = lambda: (matmul(a, w) * Tensor(np.arange(24.0).reshape(3, 4, 2))).sum()
    assert grad_check(f, [a, w], h=1e-5, tol=1e-6).passed


# ---------------------------------------------------------------- softmax


def test_softmax_examples():
    assert np.allclose(softmax_rows(Tensor([[0.0, 0.0, 0.0]])).data, 1 / 3, atol=1e-15)
    two = softmax_rows(Tensor([[math.log(2.0), 0.0]])).data
    assert np.allclose(two, [[2 / 3, 1 / 3]], atol=1e-15)
    big = softmax_rows(Tensor([[1000.0, 0.0]])).data
    assert big.tolist() == [[1.0, 0.0]]
    with pytest.raises(NumericError):
        softmax_rows(Tensor([[np.nan, 0.0]]))


@settings(max_examples=50, deadline=None)
@given(
    rows=st.integers(1, 5),
    cols=st.integers(1, 7),
    seed=st.integers(0, 10_000),
    shift=st.floats(-50, 50),
)
def test_softmax_rows_normalized_and_shift_invariant(rows, cols, seed, shift):
    x = Rng(seed).normal((rows, cols), scale=5.0)
    p = softmax_rows(Tensor(x)).data
    assert np.all(p >= 0)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12, rtol=0)
    q = softmax_rows(Tensor(x + shift)).data
    assert np.allclose(p, q, atol=1e-12, rtol=0)


# ---------------------------------------------------------------- layer norm / relu


def test_layer_norm_examples():
    one, zero = Tensor(np.ones(3)), Tensor(np.zeros(3))
    out = layer_norm(Tensor([[2.0, 2.0, 2.0]]), one, zero, eps=1e-5)
    assert np.all(out.data == 0.0)
    out = layer_norm(Tensor([[1.0, -1.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-12)
    assert np.allclose(out.data, [[1.0, -1.0]], atol=1e-10)


def test_relu_examples_and_mask():
    assert relu(Tensor([-1.0, 0.0, 2.0])).data.tolist() == [0.0, 0.0, 2.0]
    assert np.all(relu(Tensor(-np.arange(1.0, 5.0))).data == 0.0)
    x = Tensor([-1.5, -0.2, 0.3, 2.0], requires_grad=True)
    backward(relu(x).sum())
    num = numeric_grad(lambda: relu(x).sum(), x)
    assert x.grad.tolist() == [0.0, 0.0, 1.0, 1.0]
    assert np.allclose(num, x.grad)


# ---------------------------------------------------------------- every differentiable op vs. finite differences

OPS = {
    "matmul": lambda t: (matmul(t[0], t[1]) * t[2]).sum(),
    "softmax": lambda t: (softmax(t[0]) * t[6]).sum(),
    "log_softmax": lambda t: (log_softmax(t[0]) * t[6]).sum(),
    "layer_norm": lambda t: (layer_norm(t[0], t[3], t[4], 1e-5) * t[6]).sum(),
    "gelu": lambda t: (gelu(t[0]) * t[6]).sum(),
    "relu": lambda t: (relu(t[0]) * t[6]).sum(),
    "transpose_concat": lambda t: (concat([transpose(t[0]), t[1]], axis=1) * t[5]).sum(),
    "getitem": lambda t: (t[0][1:, ::2] * t[0][1:, 1::2]).sum(),
    "take_rows": lambda t: (take_rows(t[0], [0, 2, 2]) * t[6]).sum(),
    "pool": lambda t: (mean_pool_segments(t[0], 2) * t[6][:2]).sum(),
    "mean_sub": lambda t: (t[0] - t[0].mean(axis=0, keepdims=True)).sum(axis=1).mean() + (t[0] * t[0]).mean(),
}


@pytest.mark.parametrize("name", sorted(OPS))
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_op_gradients_match_finite_differences(name, seed):
    r = Rng(100 + seed)
    tensors = [
        rand(r, 3, 4),
        rand(r, 4, 3),
        Tensor(r.normal((3, 3))),
        rand(r, 4),
        rand(r, 4),
        Tensor(r.normal((4, 6))),
        Tensor(r.normal((3, 4))),
    ]
    if name == "relu":
        # keep away from the kink
        tensors[0].data[np.abs(tensors[0].data) < 1e-2] = 0.5
    params = [t for t in tensors if t.requires_grad]
    report = grad_check(lambda: OPS[name](tensors), params, h=1e-6, tol=1e-4)
    assert report.passed, report.summary()


# ---------------------------------------------------------------- pooling


def test_pool_examples():
    r = Rng(5)
    h = Tensor(r.normal((8, 3)))
    assert np.array_equal(mean_pool_segments(h, 8).data, h.data)
    const = Tensor(np.tile([1.5, -2.0, 0.25], (7, 1)))
    for length in range(1, 8):
        assert np.allclose(mean_pool_segments(const, length).data, const.data[:length], atol=1e-15)
    rows = Tensor(r.normal((4, 3)))
    out = mean_pool_segments(rows, 2).data
    assert np.allclose(out, [(rows.data[0] + rows.data[1]) / 2, (rows.data[2] + rows.data[3]) / 2])
    with pytest.raises(LengthError):
        mean_pool_segments(rows, 5)


def test_segment_sizes_longer_first():
    assert segment_sizes(7, 3) == [3, 2, 2]
    assert segment_sizes(5, 5) == [1] * 5


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 40), data=st.data(), seed=st.integers(0, 1000))
def test_pool_preserves_weighted_mean(n, data, seed):
    length = data.draw(st.integers(1, n))
    h = Rng(seed).normal((n, 3))
    out = mean_pool_segments(Tensor(h), length).data
    sizes = np.array(segment_sizes(n, length), dtype=float)
    weighted = (out * sizes[:, None]).sum(axis=0) / n
    assert np.allclose(weighted, h.mean(axis=0), atol=1e-12, rtol=0)


# ---------------------------------------------------------------- backward


def test_backward_basics():
    x = Tensor(3.0, requires_grad=True)
    backward(x * x)
    assert x.grad == 6.0
    a = Tensor([1.0, 2.0], requires_grad=True)
    b = Tensor([5.0], requires_grad=True)
    backward((a * a).sum(), leaves=[a, b])
    assert b.grad.tolist() == [0.0]
    with pytest.raises(ContractError):
        backward(a * a)


def test_no_grad_records_nothing_and_frozen_never_accumulates():
    w = Tensor([1.0, 2.0], requires_grad=True)
    frozen = Tensor([3.0, 4.0])
    with no_grad():
        y = (w * frozen).sum()
    assert not y.requires_grad
    loss = (w * frozen).sum()
    backward(loss, leaves=[w, frozen])
    assert frozen.grad is None
    assert w.grad.tolist() == [3.0, 4.0]


def test_shared_subexpression_visited_once():
    x = Tensor([2.0], requires_grad=True)
    y = x * x
    z = (y + y * y).sum()  # z = x^2 + x^4, dz/dx = 2x + 4x^3
    backward(z)
    assert x.grad.tolist() == [2 * 2.0 + 4 * 8.0]


def test_pure_ops_bit_identical():
    r = Rng(2)
    x = r.normal((4, 5))
    g, b = np.ones(5), np.zeros(5)
    run = lambda: layer_norm(Tensor(x), Tensor(g), Tensor(b)).data
    assert np.array_equal(run(), run())


# ---------------------------------------------------------------- grad_check itself


def test_grad_check_quadratic_exact():
    r = Rng(3)
    a = Tensor(r.normal((3, 3)))
    x = Tensor(r.normal((3, 1)), requires_grad=True)
    f = lambda: (matmul(transpose(x), matmul(a, x))).sum()
    report = grad_check(f, {"x": x}, h=1e-4, tol=1e-9)
    assert report.max_rel_err < 1e-9, report.summary()


def test_grad_check_flags_corrupted_gradient():
    x = Tensor([0.7, -1.3], requires_grad=True)
    f = lambda: (x * x * x).sum()
    bad = {"x": 2 * 3 * x.data**2}
    report = grad_check(f, {"x": x}, analytic=bad, tol=1e-3)
    assert not report.passed
    assert report.max_rel_err == pytest.approx(0.5, rel=1e-6)


def test_grad_check_non_finite_objective():
    x = Tensor([1.0], requires_grad=True)
    with pytest.raises(NumericError):
        grad_check(lambda: (x * np.inf).sum(), [x])
