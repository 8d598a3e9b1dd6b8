import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import logsumexp as np_logsumexp
from scipy.special import softmax as np_softmax

from drpm import autodiff as ad

finite = st.floats(-30.0, 30.0, allow_nan=False)


def grad_of(fn, xs, eps=1e-6):
    """Central finite differences of fn at xs, one coordinate at a time."""
    out = []
    for i in range(len(xs)):
        hi = list(xs)
        lo = list(xs)
        hi[i] += eps
        lo[i] -= eps
        out.append((fn(hi) - fn(lo)) / (2 * eps))
    return out


def tape_grad(fn, xs):
    leaves = [ad.Var(x) for x in xs]
    grads = ad.gradients(fn(leaves))
    return [grads.wrt(v) for v in leaves]


def test_arithmetic_values_match_floats():
    a, b = ad.Var(3.0), ad.Var(-2.0)
    assert ad.val(a + b) == 1.0
    assert ad.val(a - b) == 5.0
    assert ad.val(a * b) == -6.0
    assert ad.val(a / b) == -1.5
    assert ad.val(-a) == -3.0
    assert ad.val(a**2) == 9.0
    assert ad.val(2.0 - a) == -1.0
    assert ad.val(1.0 / b) == -0.5


def test_float_inputs_stay_floats():
    assert isinstance(ad.log(2.0), float)
    assert isinstance(ad.ssum([1.0, 2.0]), float)
    assert isinstance(ad.logsumexp([0.0, 1.0]), float)
    assert all(isinstance(p, float) for p in ad.softmax([0.0, 1.0]))


def test_composite_gradient_vs_fd():
    def fn(v):
        return ad.exp(v[0]) * ad.sigmoid(v[1]) + ad.log(v[2]) / v[0] - v[1] ** 3

    xs = [1.3, -0.4, 2.2]
    got = tape_grad(fn, xs)
    want = grad_of(lambda u: fn(list(u)), xs)
    assert np.allclose(got, want, rtol=1e-6, atol=1e-8)


def test_fanout_accumulates():
    x = ad.Var(0.7)
    y = x * x + ad.exp(x) * x
    g = ad.gradients(y).wrt(x)
    want = 2 * 0.7 + math.exp(0.7) * (1 + 0.7)
    assert g == pytest.approx(want, rel=1e-12)


def test_lgamma_matches_scipy():
    x = ad.Var(3.7)
    y = ad.lgamma(x)
    assert ad.val(y) == pytest.approx(math.lgamma(3.7), rel=1e-14)
    g = ad.gradients(y).wrt(x)
    fd = (math.lgamma(3.7 + 1e-6) - math.lgamma(3.7 - 1e-6)) / 2e-6
    assert g == pytest.approx(fd, rel=1e-7)


def test_absval_and_clamp():
    x = ad.Var(-2.5)
    assert ad.val(ad.absval(x)) == 2.5
    assert ad.gradients(ad.absval(x)).wrt(x) == -1.0
    assert ad.val(ad.clamp_min(x, 0.0)) == 0.0
    assert ad.gradients(ad.clamp_min(x, 0.0) * 1.0).wrt(x) == 0.0
    y = ad.Var(1.5)
    assert ad.val(ad.clamp_min(y, 0.0)) == 1.5
    assert ad.gradients(ad.clamp_min(y, 0.0) * 1.0).wrt(y) == 1.0


def test_straight_through_value_and_grad():
    x = ad.Var(0.2)
    soft = ad.sigmoid(x)
    out = ad.straight_through(1.0, soft)
    assert ad.val(out) == 1.0
    g = ad.gradients(out * 3.0).wrt(x)
    s = 1 / (1 + math.exp(-0.2))
    assert g == pytest.approx(3.0 * s * (1 - s), rel=1e-12)


@given(st.lists(finite, min_size=1, max_size=8))
def test_logsumexp_matches_scipy(xs):
    assert ad.logsumexp(xs) == pytest.approx(np_logsumexp(xs), rel=1e-12, abs=1e-12)


@given(st.lists(finite, min_size=1, max_size=8), st.floats(0.1, 3.0))
def test_softmax_matches_scipy(xs, tau):
    got = ad.softmax(xs, tau=tau)
    want = np_softmax(np.asarray(xs) / tau)
    assert np.allclose(got, want, rtol=1e-10, atol=1e-12)
    assert sum(got) == pytest.approx(1.0, abs=1e-9)


def test_softmax_handles_minus_inf_exactly():
    probs = ad.softmax([0.0, ad._NEG_INF, 1.0], tau=0.7)
    assert probs[1] == 0.0
    assert sum(probs) == pytest.approx(1.0, abs=1e-12)


def test_logsumexp_gradient_vs_fd():
    xs = [0.3, -1.2, 2.0, 0.0]
    got = tape_grad(lambda v: ad.logsumexp(v), xs)
    want = grad_of(lambda u: np_logsumexp(u), xs)
    assert np.allclose(got, want, rtol=1e-6)


def test_softmax_gradient_vs_fd():
    xs = [0.5, -0.5, 1.5]

    def head(v):
        return ad.softmax(v, tau=0.6)[0]

    got = tape_grad(head, xs)
    want = grad_of(lambda u: np_softmax(np.asarray(u) / 0.6)[0], xs)
    assert np.allclose(got, want, rtol=1e-5)


def test_fused_sums_and_dots():
    xs = [0.1, 0.2, 0.3]
    leaves = [ad.Var(x) for x in xs]
    assert ad.val(ad.ssum(leaves)) == pytest.approx(0.6)
    assert ad.val(ad.dot_const(leaves, [1.0, 2.0, 3.0])) == pytest.approx(1.4)
    ys = [ad.Var(2.0), ad.Var(3.0), ad.Var(4.0)]
    out = ad.dot(leaves, ys)
    assert ad.val(out) == pytest.approx(0.1 * 2 + 0.2 * 3 + 0.3 * 4)
    grads = ad.gradients(out)
    assert grads.wrt(leaves[1]) == 3.0
    assert grads.wrt(ys[1]) == pytest.approx(0.2)


def test_gradient_of_unreached_leaf_is_zero():
    x, y = ad.Var(1.0), ad.Var(2.0)
    grads = ad.gradients(x * 2.0)
    assert grads.wrt(y) == 0.0
