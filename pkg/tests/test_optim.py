import numpy as np
import pytest

from gblend.autodiff import NumericError, ShapeError, Tensor
from gblend.optim import Adam


def test_zero_gradient_leaves_parameters_unchanged():
    p = Tensor([1.0, -2.0, 3.0], requires_grad=True)
    opt = Adam(lr=0.1)
    before = p.data.copy()
    for _ in range(10):
        opt.step([p], {p: np.zeros(3)})
    np.testing.assert_array_equal(p.data, before)
    assert opt.t == 10


def test_single_step_matches_closed_form():
    # With constant gradient g, bias-corrected Adam's first step is exactly
    # lr * g / (|g| + eps): m_hat = g, v_hat = g^2.
    lr, eps, g = 1e-4, 1e-7, 1.0
    p = Tensor([0.5], requires_grad=True)
    opt = Adam(lr=lr, eps=eps)
    opt.step([p], {p: np.array([g])})
    expected = 0.5 - lr * g / (abs(g) + eps)
    np.testing.assert_allclose(p.data, [expected], rtol=0, atol=1e-18)
    assert abs(p.data[0] - (0.5 - lr)) < 1e-10  # first step moves by ~lr


def test_seeded_runs_are_bitwise_identical():
    def run():
        rng = np.random.default_rng(123)
        p = Tensor(rng.standard_normal(8), requires_grad=True)
        opt = Adam(lr=1e-2)
        for _ in range(50):
            opt.step([p], {p: rng.standard_normal(8)})
        return p.data.copy()

    np.testing.assert_array_equal(run(), run())


def test_missing_gradient_entry_treated_as_zero():
    p = Tensor([1.0], requires_grad=True)
    q = Tensor([2.0], requires_grad=True)
    opt = Adam(lr=0.1)
    opt.step([p, q], {p: np.array([1.0])})
    assert p.data[0] != 1.0
    assert q.data[0] == 2.0


def test_momentum_tail_applies_when_gradient_goes_missing():
    # A parameter with accumulated momentum keeps moving on a zero-grad step.
    p = Tensor([0.0], requires_grad=True)
    opt = Adam(lr=0.1)
    opt.step([p], {p: np.array([1.0])})
    after_first = p.data[0]
    opt.step([p], {})
    assert p.data[0] != after_first


def test_shape_mismatch_rejected():
    p = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ShapeError):
        Adam().step([p], {p: np.zeros(3)})


def test_non_finite_gradient_rejected():
    p = Tensor([1.0], requires_grad=True)
    with pytest.raises(NumericError):
        Adam().step([p], {p: np.array([np.nan])})
