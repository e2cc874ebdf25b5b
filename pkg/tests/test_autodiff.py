import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from divmotion import autodiff as ad


def _p(x, name="p"):
    return ad.Parameter(np.asarray(x, dtype=float), name)


def test_matmul_all_ones():
    out = ad.matmul(np.ones((2, 3)), np.ones((3, 2)))
    np.testing.assert_array_equal(out.data, np.full((2, 2), 3.0))


def test_tanh_zero():
    np.testing.assert_array_equal(ad.tanh(np.zeros((2, 3))).data, np.zeros((2, 3)))


def test_prelu_negative():
    assert ad.prelu(np.array(-2.0), 0.25).item() == -0.5
    assert ad.prelu(np.array(3.0), 0.25).item() == 3.0


def test_shape_mismatch_names_op_and_shapes():
    with pytest.raises(ad.DimensionError, match=r"matmul.*\(2, 3\).*\(2, 2\)"):
        ad.matmul(np.ones((2, 3)), np.ones((2, 2)))
    with pytest.raises(ad.DimensionError, match="add"):
        ad.add(np.ones(3), np.ones(4))


def test_domain_errors():
    with pytest.raises(ad.DomainError):
        ad.log(np.array([1.0, 0.0]))
    with pytest.raises(ad.DomainError):
        ad.acos(np.array([1.5]))


def test_sum_gradient_is_ones():
    p = _p(np.arange(6.0).reshape(2, 3))
    ad.backward(ad.sum_(p))
    np.testing.assert_array_equal(p.grad, np.ones((2, 3)))


def test_l2_norm_gradient():
    p = _p([3.0, 4.0])
    ad.backward(ad.l2_norm(p))
    np.testing.assert_allclose(p.grad, [0.6, 0.8], atol=1e-15)


def test_gradients_accumulate_until_zero_grad():
    p = _p([1.0, 2.0])
    ad.backward(ad.sum_(p))
    ad.backward(ad.sum_(p))
    np.testing.assert_array_equal(p.grad, [2.0, 2.0])
    p.zero_grad()
    assert np.all(p.grad == 0.0)


def test_backward_requires_scalar():
    with pytest.raises(ad.ContractError):
        ad.backward(ad.square(_p([1.0, 2.0])))


def test_grad_check_quadratic_is_exact():
    p = _p(np.random.default_rng(0).normal(size=(3, 4)))
    assert ad.grad_check(lambda: ad.sum_(ad.square(p)), [p]) < 1e-8


def test_grad_check_rejects_nondeterministic():
    p = _p([1.0])
    rng = np.random.default_rng(0)
    with pytest.raises(ad.OracleError):
        ad.grad_check(lambda: ad.sum_(p * rng.normal()), [p])


def test_grad_check_rejects_bad_step():
    p = _p([1.0])
    with pytest.raises(ad.ContractError):
        ad.grad_check(lambda: ad.sum_(p), [p], step=0.0)


def test_min_routes_to_first_argmin():
    p = _p([3.0, 1.0, 1.0, 5.0])
    out = ad.min_(p, axis=0)
    assert out.item() == 1.0
    ad.backward(out)
    np.testing.assert_array_equal(p.grad, [0.0, 1.0, 0.0, 0.0])


def test_clamp_gradient_only_inside():
    p = _p([-2.0, 0.5, 2.0])
    ad.backward(ad.sum_(ad.clamp(p, -1.0, 1.0)))
    np.testing.assert_array_equal(p.grad, [0.0, 1.0, 0.0])


def test_take_with_repeats_scatter_adds():
    p = _p(np.arange(12.0).reshape(4, 3))
    out = ad.take(p, np.array([0, 2, 2, 3, 0, 0]), axis=0)
    ad.backward(ad.sum_(out))
    np.testing.assert_array_equal(p.grad[:, 0], [3.0, 0.0, 2.0, 1.0])


def test_forward_is_deterministic():
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 3))
    r1 = ad.tanh(ad.matmul(a, b)).data
    r2 = ad.tanh(ad.matmul(a, b)).data
    assert np.array_equal(r1, r2)


UNARY = {
    "tanh": ad.tanh,
    "exp": ad.exp,
    "square": ad.square,
    "abs": ad.abs_,
    "sqrt": lambda x: ad.sqrt(ad.abs_(x) + 0.5),
    "log": lambda x: ad.log(ad.abs_(x) + 0.5),
    "acos": lambda x: ad.acos(ad.scale(x, 0.4)),
    "clamp": lambda x: ad.clamp(x, -1.0, 1.0),
    "prelu": lambda x: ad.prelu(x, 0.3),
    "neg": ad.neg,
    "scale": lambda x: ad.scale(x, -1.7),
    "l1": lambda x: ad.l1_norm(x, axis=-1),
    "l2": lambda x: ad.l2_norm(x, axis=-1),
    "mean": lambda x: ad.mean(x, axis=0),
    "transpose": lambda x: ad.transpose(x),
    "reshape": lambda x: ad.reshape(x, (-1,)),
    "slice": lambda x: x[1:, ::2],
    "fancy": lambda x: x[np.array([0, 0, 2])],
    "min": lambda x: ad.min_(x, axis=1),
    "take": lambda x: ad.take(x, np.array([2, 0, 2]), axis=1),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_ops_match_finite_differences(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    fn = UNARY[name]
    worst = 0.0
    for _ in range(20):
        x = _p(rng.uniform(-2, 2, size=(3, 4)))
        w = rng.normal(size=fn(x).shape)
        worst = max(worst, ad.grad_check(lambda: ad.sum_(fn(x) * w), [x]))
    assert worst < 1e-4


BINARY = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / (ad.abs_(b) + 0.5),
    "matmul": lambda a, b: ad.matmul(a, ad.transpose(b)),
    "concat": lambda a, b: ad.concat([a, b], axis=0),
    "cross": lambda a, b: ad.cross(a[:, :3], b[:, :3]),
    "broadcast": lambda a, b: a + b[0],
    "prelu_slope": lambda a, b: ad.prelu(a, ad.exp(b[0, 0])),
}


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_ops_match_finite_differences(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    fn = BINARY[name]
    worst = 0.0
    for _ in range(20):
        a, b = _p(rng.uniform(-2, 2, (3, 4)), "a"), _p(rng.uniform(-2, 2, (3, 4)), "b")
        w = rng.normal(size=fn(a, b).shape)
        worst = max(worst, ad.grad_check(lambda: ad.sum_(fn(a, b) * w), [a, b]))
    assert worst < 1e-4


def test_batched_matmul_gradients():
    rng = np.random.default_rng(3)
    A = _p(rng.normal(size=(5, 5)), "A")
    F = _p(rng.normal(size=(2, 3, 5, 4)), "F")
    W = _p(rng.normal(size=(4, 6)), "W")
    fn = lambda: ad.sum_(ad.tanh(ad.matmul(A, ad.matmul(F, W))))
    assert ad.grad_check(fn, [A, F, W]) < 1e-6


def test_adam_minimises_quadratic():
    p = _p([3.0, -2.0])
    opt = ad.Adam([p], lr=0.1)
    for _ in range(300):
        opt.zero_grad()
        ad.backward(ad.sum_(ad.square(p - np.array([1.0, 1.0]))))
        opt.step()
    np.testing.assert_allclose(p.data, [1.0, 1.0], atol=1e-3)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (4,), elements=st.floats(-5, 5)))
def test_tanh_odd(x):
    np.testing.assert_allclose(ad.tanh(-x).data, -ad.tanh(x).data, atol=0)
