import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from saeda import _kernels_py, kernels, losses
from saeda.losses import LossConfig, MissingClassError

import oracles


def test_bce_perfect_reconstruction():
    x = np.ones((3, 4))
    eps = 1e-7
    assert 0 <= losses.reconstruction_bce(x, np.ones((3, 4)), eps) <= eps * x.size


@pytest.mark.parametrize("x", [0.5, 1.0])
def test_bce_half_probability_is_ln2(x):
    assert losses.reconstruction_bce(np.array([[x]]), np.array([[0.5]])) == pytest.approx(math.log(2), abs=1e-12)


def test_bce_shape_mismatch():
    with pytest.raises(losses.LossInputError):
        losses.reconstruction_bce(np.zeros((2, 3)), np.zeros((3, 2)) + 0.5)


def test_mmd_examples():
    a = np.random.default_rng(0).normal(size=(6, 3))
    assert losses.mmd_loss(a, a) == 0.0
    assert losses.mmd_loss([[1.0, 0.0]], [[0.0, 0.0]]) == pytest.approx(1.0)
    assert losses.mmd_loss([[2.0, 0.0], [0.0, 2.0]], [[1.0, 1.0]]) == pytest.approx(0.0, abs=1e-15)


def test_mmd_errors():
    with pytest.raises(losses.LossInputError):
        losses.mmd_loss(np.zeros((0, 2)), np.zeros((1, 2)))
    with pytest.raises(losses.LossInputError):
        losses.mmd_loss(np.zeros((2, 2)), np.zeros((2, 3)))


def test_cws_mmd_examples():
    a = np.random.default_rng(1).normal(size=(8, 3))
    y = np.array([0, 1, 0, 1, 2, 2, 0, 1])
    assert losses.cws_mmd_loss(a, y, a, y, 3) == 0.0
    xs = np.array([[1.0, 0.0], [2.0, 2.0]])
    xt = np.array([[0.0, 0.0], [2.0, 2.0]])
    assert losses.cws_mmd_loss(xs, [0, 1], xt, [0, 1], 2) == pytest.approx(0.5)
    single = np.zeros(2, dtype=int)
    xs2, xt2 = np.array([[2.0, 0.0], [0.0, 2.0]]), np.array([[1.0, 1.0]])
    assert losses.cws_mmd_loss(xs2, single, xt2, [0], 1) == losses.mmd_loss(xs2, xt2)


def test_cws_mmd_missing_class_is_error():
    a = np.zeros((4, 2))
    with pytest.raises(MissingClassError):
        losses.cws_mmd_loss(a, [0, 0, 1, 1], a, [0, 0, 0, 0], 2)
    with pytest.raises(MissingClassError):
        losses.cws_mmd_loss(a, [0, 0, 1, 1], a, [0, 1, 0, 1], 3)


def test_composite_examples():
    rng = np.random.default_rng(2)
    x = rng.uniform(size=(4, 5))
    p = rng.uniform(0.05, 0.95, size=(4, 5))
    zs, zt = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    y = np.array([0, 1, 0, 1])
    total, parts = losses.target_composite_loss(x, p, zs, y, zt, y, LossConfig(beta=0.0))
    assert total == losses.reconstruction_bce(x, p)
    total, parts = losses.target_composite_loss(x, p, zs, y, zt, y, LossConfig(beta=0.25))
    assert total == pytest.approx(parts["reconstruction"] + 0.25 * parts["cws_mmd"])
    # Perfect reconstruction and alignment.
    ones = np.ones((4, 5))
    total, _ = losses.target_composite_loss(ones, ones, zs, y, zs, y)
    assert total == pytest.approx(0.0, abs=1e-7 * ones.size)


def test_composite_weighting_arithmetic():
    # beta = 0.25 with L_r = 0.8 and L_cws = 0.4 gives 0.9.
    assert 0.8 + LossConfig().beta * 0.4 == pytest.approx(0.9)


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(beta=-1)
    with pytest.raises(ValueError):
        LossConfig(epsilon=0.01)


def test_categorical_cross_entropy():
    onehot = np.eye(3)
    assert losses.categorical_cross_entropy([0, 1, 2], onehot) == pytest.approx(0.0, abs=1e-12)
    assert losses.categorical_cross_entropy([0, 3], np.full((2, 4), 0.25)) == pytest.approx(math.log(4))
    with pytest.raises(losses.LossInputError):
        losses.categorical_cross_entropy([0], [[0.25, 0.25]])


def test_mse():
    assert losses.mse_loss([1, 2, 3], [1, 2, 3]) == 0.0
    assert losses.mse_loss([0, 0], [1, -1]) == 1.0
    assert losses.mse_loss([0, 2], [1, 1]) == 1.0
    with pytest.raises(losses.LossInputError):
        losses.mse_loss([1, 2], [1])


# -- properties -----------------------------------------------------------------------------

feature_mats = st.integers(1, 6).flatmap(
    lambda w: st.tuples(
        arrays(np.float64, st.tuples(st.integers(1, 7), st.just(w)), elements=st.floats(-10, 10)),
        arrays(np.float64, st.tuples(st.integers(1, 7), st.just(w)), elements=st.floats(-10, 10)),
    )
)


@settings(max_examples=60, deadline=None)
@given(feature_mats, st.floats(0.1, 5))
def test_mmd_properties(mats, scale):
    a, b = mats
    v = losses.mmd_loss(a, b)
    assert v >= 0
    assert v == pytest.approx(losses.mmd_loss(b, a), rel=1e-12, abs=1e-12)
    assert losses.mmd_loss(scale * a, scale * b) == pytest.approx(scale**2 * v, rel=1e-9, abs=1e-9)
    assert losses.cws_mmd_loss(a, np.zeros(len(a), int), b, np.zeros(len(b), int), 1) == pytest.approx(v, rel=1e-12, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 5))
def test_cws_mmd_properties(seed, scale):
    rng = np.random.default_rng(seed)
    c = int(rng.integers(2, 5))
    ya = np.concatenate([np.arange(c), rng.integers(0, c, size=5)])
    yb = np.concatenate([np.arange(c), rng.integers(0, c, size=3)])
    a, b = rng.normal(size=(len(ya), 3)), rng.normal(size=(len(yb), 3))
    v = losses.cws_mmd_loss(a, ya, b, yb, c)
    assert v >= 0
    assert v == pytest.approx(losses.cws_mmd_loss(b, yb, a, ya, c), rel=1e-12)
    assert losses.cws_mmd_loss(scale * a, ya, scale * b, yb, c) == pytest.approx(scale**2 * v, rel=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_bce_nonnegative(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(3, 4))
    p = rng.uniform(size=(3, 4))
    assert losses.reconstruction_bce(x, p) >= 0


# -- oracle equivalence and gradients ------------------------------------------------------


def test_kernels_match_python_fallback():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(7, 4)), rng.normal(size=(5, 4))
    ya, yb = np.array([0, 1, 2, 0, 1, 2, 0]), np.array([2, 1, 0, 0, 1])
    for impl_out, ref_out in [
        (kernels.centroid_sqdist(a, b), _kernels_py.centroid_sqdist(a, b)),
        (kernels.classwise_centroid_sqdist(a, ya, b, yb, 3)[:3], _kernels_py.classwise_centroid_sqdist(a, ya, b, yb, 3)[:3]),
    ]:
        assert impl_out[0] == pytest.approx(ref_out[0], rel=1e-12)
        for g1, g2 in zip(impl_out[1:], ref_out[1:]):
            np.testing.assert_allclose(g1, g2, rtol=1e-12, atol=1e-15)
    x, p = rng.uniform(size=(3, 6)), rng.uniform(size=(3, 6))
    v1, g1 = kernels.bce(x, p, 1e-7)
    v2, g2 = _kernels_py.bce(x, p, 1e-7)
    assert v1 == pytest.approx(v2, rel=1e-12)
    np.testing.assert_allclose(g1, g2, rtol=1e-12)


def test_bce_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    x = rng.uniform(size=(5, 3))
    p = rng.uniform(0.05, 0.95, size=(5, 3))
    _, g = losses.reconstruction_bce_grad(x, p)
    num = oracles.central_difference(lambda q: losses.reconstruction_bce(x, q), p.copy())
    assert np.linalg.norm(g - num) / np.linalg.norm(num) < 1e-4


def test_torch_bindings_agree_with_numpy():
    rng = np.random.default_rng(5)
    zs = torch.tensor(rng.normal(size=(6, 3)), requires_grad=True)
    zt = torch.tensor(rng.normal(size=(6, 3)), requires_grad=True)
    y = torch.tensor([0, 1, 2, 0, 1, 2])
    v = losses.torch_cws_mmd(zs, y, zt, y, 3)
    v.backward()
    ref, ga, gb = losses.cws_mmd_loss_grad(zs.detach().numpy(), y.numpy(), zt.detach().numpy(), y.numpy(), 3)
    assert v.item() == pytest.approx(ref)
    np.testing.assert_allclose(zs.grad.numpy(), ga)
    np.testing.assert_allclose(zt.grad.numpy(), gb)
    # Autograd on the same formula written with torch ops agrees too.
    zs2, zt2 = zs.detach().clone().requires_grad_(), zt.detach().clone().requires_grad_()
    ref_t = sum(((zs2[y == k].mean(0) - zt2[y == k].mean(0)) ** 2).sum() for k in range(3)) / 3
    ref_t.backward()
    np.testing.assert_allclose(zs2.grad.numpy(), ga, rtol=1e-10)

    x = torch.tensor(rng.uniform(size=(2, 1, 3, 3)))
    p = torch.tensor(rng.uniform(0.1, 0.9, size=(2, 1, 3, 3)), requires_grad=True)
    loss = losses.torch_bce(x, p)
    loss.backward()
    p2 = p.detach().clone().requires_grad_()
    ref_b = -(x * torch.log(p2) + (1 - x) * torch.log(1 - p2)).sum() / 2
    ref_b.backward()
    assert loss.item() == pytest.approx(ref_b.item())
    np.testing.assert_allclose(p.grad.numpy(), p2.grad.numpy(), rtol=1e-10)


def test_torch_cce_and_mse():
    probs = torch.tensor([[0.7, 0.3], [0.2, 0.8]])
    y = torch.tensor([0, 1])
    assert losses.torch_categorical_cross_entropy(y, probs).item() == pytest.approx(
        oracles.cce([0, 1], probs.numpy()), rel=1e-6
    )
    assert losses.torch_mse(torch.tensor([0.0, 2.0]), torch.tensor([1.0, 1.0])).item() == 1.0
