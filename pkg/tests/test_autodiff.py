"""Gradient contract: every primitive exposed to training matches central
finite differences (step 1e-5, float64) with relative error < 1e-4."""

import numpy as np
import pytest

from sonotrace import autodiff as ad

RNG = np.random.default_rng(1234)
STEP = 1e-5
TOL = 1e-4


def check_grads(build, arrays):
    """build(list of Vars) -> scalar Var; FD-check every input array."""
    vars_ = [ad.Var(a.copy(), requires_grad=True) for a in arrays]
    out = build(vars_)
    out.backward()
    for i, v in enumerate(vars_):
        analytic = v.grad if v.grad is not None else np.zeros_like(v.value)

        def f(x, i=i):
            vals = [x if j == i else vars_[j].value for j in range(len(vars_))]
            with ad.no_grad():
                r = build([ad.Var(val) for val in vals])
            return float(r.value)

        fd = ad.finite_difference_grad(f, arrays[i].copy(), STEP)
        scale = max(np.abs(fd).max(), np.abs(analytic).max(), 1e-10)
        assert np.abs(analytic - fd).max() / scale < TOL, f"input {i}"


def scalar(x):
    return ad.vsum(ad.mul(x, x))


def test_add_broadcasting():
    check_grads(lambda v: scalar(ad.add(v[0], v[1])),
                [RNG.normal(size=(3, 4)), RNG.normal(size=(4,))])


def test_mul_broadcasting():
    check_grads(lambda v: scalar(ad.mul(v[0], v[1])),
                [RNG.normal(size=(2, 3, 4)), RNG.normal(size=(3, 1))])


def test_div():
    check_grads(lambda v: scalar(ad.div(v[0], v[1])),
                [RNG.normal(size=(3, 4)), RNG.normal(size=(3, 4)) + 3.0])


def test_power():
    check_grads(lambda v: ad.vsum(ad.power(v[0], 3.0)), [RNG.normal(size=(5,))])


def test_matmul_2d():
    check_grads(lambda v: scalar(ad.matmul(v[0], v[1])),
                [RNG.normal(size=(3, 4)), RNG.normal(size=(4, 2))])


def test_matmul_batched():
    check_grads(lambda v: scalar(ad.matmul(v[0], v[1])),
                [RNG.normal(size=(2, 3, 4)), RNG.normal(size=(4, 5))])


def test_matmul_batched_both():
    check_grads(lambda v: scalar(ad.matmul(v[0], v[1])),
                [RNG.normal(size=(2, 3, 4)), RNG.normal(size=(2, 4, 5))])


def test_conv3d():
    check_grads(lambda v: scalar(ad.conv3d(v[0], v[1], v[2])),
                [RNG.normal(size=(2, 3, 4, 4, 3)),
                 RNG.normal(size=(2, 3, 3, 3, 3)) * 0.3,
                 RNG.normal(size=(2,))])


def test_sum_axes_keepdims():
    check_grads(lambda v: scalar(ad.vsum(v[0], axis=(1, 3), keepdims=True)),
                [RNG.normal(size=(2, 3, 2, 4))])


def test_mean_axes():
    check_grads(lambda v: scalar(ad.vmean(v[0], axis=(0, 2))),
                [RNG.normal(size=(2, 3, 4))])


def test_reshape_transpose_concat():
    def build(v):
        a = ad.reshape(v[0], (4, 3))
        b = ad.transpose(v[1], (1, 0))
        return scalar(ad.concat([a, b], axis=1))

    check_grads(build, [RNG.normal(size=(2, 6)), RNG.normal(size=(5, 4))])


@pytest.mark.parametrize("op", [ad.exp, ad.log, ad.sqrt, ad.sigmoid, ad.silu])
def test_unary_ops(op):
    x = np.abs(RNG.normal(size=(4, 3))) + 0.5  # keep log/sqrt in-domain
    check_grads(lambda v: ad.vsum(op(v[0])), [x])


def test_softmax():
    check_grads(lambda v: scalar(ad.mul(ad.softmax(v[0], axis=-1), v[1])),
                [RNG.normal(size=(3, 5)), RNG.normal(size=(3, 5))])


def test_group_norm_composite():
    from sonotrace.denoiser import _group_norm

    def build(v):
        return scalar(_group_norm(v[0], 2, v[1], v[2]))

    check_grads(build, [RNG.normal(size=(2, 3, 4, 4, 4)),
                        RNG.normal(size=(4,)),
                        RNG.normal(size=(4,))])


def test_no_grad_blocks_graph():
    with ad.no_grad():
        x = ad.Var(np.ones(3), requires_grad=True)
        y = ad.mul(x, 2.0)
    assert y._parents == ()


def test_backward_requires_scalar():
    x = ad.Var(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        ad.mul(x, 2.0).backward()


def test_grad_accumulates_across_reuse():
    x = ad.Var(np.array(2.0), requires_grad=True)
    y = ad.add(ad.mul(x, x), ad.mul(x, 3.0))  # x^2 + 3x -> dy/dx = 2x + 3
    y.backward()
    assert np.allclose(x.grad, 7.0)
