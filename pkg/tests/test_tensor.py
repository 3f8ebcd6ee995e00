import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from dtvit import tensor as T
from dtvit.tensor import DimensionError, Graph, Tensor, no_grad

from gradcheck import max_rel_err, numeric_grad


def leaf(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def naive_matmul(a, b):
    """Triple loop, batched over leading axes."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    lead = a.shape[:-2]
    n, k = a.shape[-2:]
    m = b.shape[-1]
    out = np.zeros(lead + (n, m))
    for idx in np.ndindex(*lead):
        for i in range(n):
            for j in range(m):
                s = 0.0
                for t in range(k):
                    s += a[idx + (i, t)] * b[idx + (t, j)]
                out[idx + (i, j)] = s
    return out


def gelu_exact(x):
    # x * Phi(x) with Phi from math.erf; differs from the tanh form by < 1e-3
    return x * 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


# ------------------------------------------------------------------ forward


def test_matmul_matches_triple_loop():
    rs = np.random.default_rng(0)
    a = rs.standard_normal((2, 3, 4))
    b = rs.standard_normal((2, 4, 5))
    got = T.matmul(Tensor(a), Tensor(b)).data
    np.testing.assert_allclose(got, naive_matmul(a, b), rtol=1e-12, atol=1e-12)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 5\)"):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))


def test_softmax_examples():
    np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3)
    np.testing.assert_allclose(T.softmax(Tensor([0.0, math.log(2)])).data, [1 / 3, 2 / 3])
    out = T.softmax(Tensor([1000.0, 1000.0, 1000.0])).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [1 / 3] * 3)


def test_softmax_empty_axis_errors():
    with pytest.raises(ValueError):
        T.softmax(Tensor(np.zeros((2, 0))))


@settings(max_examples=50, deadline=None)
@given(
    hnp.arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6)), elements=st.floats(-50, 50)),
    st.floats(-100, 100),
)
def test_softmax_sums_to_one_and_shift_invariant(x, c):
    p = T.softmax(Tensor(x)).data
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-6)
    np.testing.assert_allclose(T.softmax(Tensor(x + c)).data, p, atol=1e-6)


def test_layernorm_examples():
    one, zero = Tensor(np.ones(4)), Tensor(np.zeros(4))
    np.testing.assert_array_equal(T.layernorm(Tensor([5.0, 5, 5, 5]), one, zero).data, 0.0)
    np.testing.assert_allclose(
        T.layernorm(Tensor([1.0, 3.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-12).data, [-1, 1], atol=1e-9
    )
    out = T.layernorm(Tensor(np.arange(4.0)), Tensor(np.zeros(4)), Tensor(np.full(4, 7.0))).data
    np.testing.assert_array_equal(out, 7.0)


def test_layernorm_moments_and_dim_mismatch():
    x = np.random.default_rng(1).standard_normal((6, 16)) * 5 + 3
    out = T.layernorm(Tensor(x), Tensor(np.ones(16)), Tensor(np.zeros(16))).data
    np.testing.assert_allclose(out.mean(-1), 0, atol=1e-6)
    np.testing.assert_allclose(out.var(-1), 1, atol=1e-4)
    with pytest.raises(DimensionError):
        T.layernorm(Tensor(x), Tensor(np.ones(8)), Tensor(np.zeros(8)))


def test_gelu_against_erf_form():
    assert T.gelu(Tensor([0.0])).data[0] == 0.0
    assert abs(T.gelu(Tensor([10.0])).data[0] - 10.0) < 1e-4
    assert abs(T.gelu(Tensor([1.0])).data[0] - gelu_exact(1.0)) < 1e-3
    grid = np.linspace(-0.75, 6, 200)  # x*Phi(x) has its minimum near -0.75
    vals = T.gelu(Tensor(grid)).data
    assert np.all(np.diff(vals) >= 0)
    for x in (-3.0, -1.0, 0.5, 2.0):
        assert abs(T.gelu(Tensor([x])).data[0] - gelu_exact(x)) < 1e-3


def test_cross_entropy_examples():
    assert T.cross_entropy(Tensor(np.zeros((1, 3))), [0]).item() == pytest.approx(math.log(3), abs=1e-12)
    assert T.cross_entropy(Tensor([[10.0, -10.0]]), [0]).item() < 1e-4
    # direct formula: -log(e^3 / (e^1 + e^2 + e^3))
    direct = -(3 - math.log(math.exp(1) + math.exp(2) + math.exp(3)))
    assert T.cross_entropy(Tensor([[1.0, 2.0, 3.0]]), [2]).item() == pytest.approx(direct, abs=1e-12)
    assert direct == pytest.approx(0.4076, abs=1e-3)
    with pytest.raises(IndexError):
        T.cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])


def test_cross_entropy_gradient_is_softmax_minus_onehot():
    rs = np.random.default_rng(2)
    z = leaf(rs.standard_normal((5, 4)))
    t = np.array([0, 3, 1, 1, 2])
    T.cross_entropy(z, t).backward()
    e = np.exp(z.data - z.data.max(1, keepdims=True))
    p = e / e.sum(1, keepdims=True)
    p[np.arange(5), t] -= 1
    np.testing.assert_allclose(z.grad, p / 5, atol=1e-14)


# ------------------------------------------------------------------ backward


def test_backward_analytic_examples():
    x = leaf(np.ones((2, 3)))
    T.tsum(x).backward()
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))
    y = leaf([1.0, 2.0, 3.0])
    T.tsum(y * y).backward()
    np.testing.assert_array_equal(y.grad, [2.0, 4.0, 6.0])


def test_backward_rejects_non_scalar_root():
    x = leaf(np.ones(3))
    with pytest.raises(ValueError):
        (x * x).backward()


def test_graph_topological_and_shared_subexpression():
    x = leaf([2.0])
    y = x * x
    z = y + y  # y used twice -> gradient accumulates
    g = Graph(T.tsum(z))
    pos = {id(n): i for i, n in enumerate(g.nodes)}
    assert pos[id(x)] < pos[id(y)] < pos[id(z)]
    assert g.leaves() == [x]
    g.backward()
    np.testing.assert_array_equal(x.grad, [8.0])


def test_deep_chain_does_not_recurse():
    x = leaf([1.0])
    y = x
    for _ in range(5000):
        y = y + 0.0
    T.tsum(y).backward()
    assert x.grad[0] == 1.0


def test_no_grad_records_nothing():
    x = leaf([1.0, 2.0])
    with no_grad():
        y = x * x
    assert not y.requires_grad and y._parents == ()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_fails_fast():
    with pytest.raises(FloatingPointError):
        T.mul(leaf([1e200]), leaf([1e200]))


def test_getitem_scatter_adds_repeated_indices():
    x = leaf(np.arange(4.0))
    T.tsum(x[np.array([0, 0, 2])]).backward()
    np.testing.assert_array_equal(x.grad, [2, 0, 1, 0])


# ---------------------------------------------- finite-difference contract


def _ops(rs):
    """(name, builder(rng) -> (inputs, fn)) for every recorded op."""

    def shape(nd):
        return tuple(int(s) for s in rs.integers(1, 5, size=nd))

    def w():
        return rs.standard_normal((4, 4))

    out = []
    s = shape(2)
    out.append(("add", [rs.standard_normal(s), rs.standard_normal(s[-1:])], lambda a, b: T.add(a, b)))
    out.append(("sub", [rs.standard_normal(s), rs.standard_normal((1, s[1]))], lambda a, b: T.sub(a, b)))
    out.append(("mul", [rs.standard_normal(s), rs.standard_normal(s)], lambda a, b: T.mul(a, b)))
    out.append(("scale", [rs.standard_normal(s)], lambda a: T.scale(a, -1.7)))
    out.append(("gelu", [rs.standard_normal(s) * 2], T.gelu))
    s3 = shape(3)
    out.append(("reshape", [rs.standard_normal(s3)], lambda a: T.reshape(a, (-1,)) * T.Tensor(np.arange(a.size, dtype=float))))
    out.append(("transpose", [rs.standard_normal(s3)], lambda a: T.transpose(a, (2, 0, 1)) * T.Tensor(rs_fixed(s3[2], s3[0], s3[1]))))
    out.append(("getitem", [rs.standard_normal((5, 3))], lambda a: a[1:4, ::2]))
    out.append(("concat", [rs.standard_normal((2, 3)), rs.standard_normal((4, 3))], lambda a, b: T.concat([a, b * b], axis=0)))
    out.append(("sum", [rs.standard_normal(s3)], lambda a: T.tsum(a * a, axis=1)))
    out.append(("mean", [rs.standard_normal(s3)], lambda a: T.mean(a * a, axis=(0, 2), keepdims=True)))
    out.append(("matmul", [rs.standard_normal((2, 3, 4)), rs.standard_normal((2, 4, 2))], T.matmul))
    out.append(("linear", [rs.standard_normal((3, 4)), w(), rs.standard_normal(4)], T.linear))
    out.append(("softmax", [rs.standard_normal((3, 5))], lambda a: T.softmax(a) * T.Tensor(rs_fixed(3, 5))))
    out.append(("log_softmax", [rs.standard_normal((3, 5))], lambda a: T.log_softmax(a) * T.Tensor(rs_fixed(3, 5))))
    out.append(("layernorm", [rs.standard_normal((3, 6)), rs.standard_normal(6), rs.standard_normal(6)],
                lambda x, g, b: T.layernorm(x, g, b) * T.Tensor(rs_fixed(3, 6))))
    out.append(("cross_entropy", [rs.standard_normal((4, 3))], lambda a: T.cross_entropy(a, [0, 2, 1, 2])))
    out.append(("broadcast_to", [rs.standard_normal((1, 3))], lambda a: T.broadcast_to(a, (4, 3)) * T.Tensor(rs_fixed(4, 3))))
    return out


def rs_fixed(*shape):
    return np.random.default_rng(99).standard_normal(shape)


def _check(inputs, fn):
    xs = [leaf(a) for a in inputs]
    out = fn(*xs)
    T.tsum(out).backward()
    worst = 0.0
    for x in xs:
        def f():
            return float(T.tsum(fn(*[Tensor(y.data) for y in xs])).data)

        num = numeric_grad(f, x.data)
        worst = max(worst, max_rel_err(num, x.grad))
    return worst


@pytest.mark.parametrize("seed", range(12))
def test_every_op_matches_finite_differences(seed):
    rs = np.random.default_rng(seed)
    for name, inputs, fn in _ops(rs):
        err = _check(inputs, fn)
        assert err < 1e-4, (name, err)
