"""Gradient correctness and contract tests for the autodiff core.

Every registered op is checked against a central finite-difference oracle
that is independent of the backward implementations: it only re-runs the
forward computation at perturbed inputs.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gblend import autodiff as ad
from gblend.autodiff import (
    NumericError,
    ShapeError,
    Tape,
    Tensor,
    apply_op,
    dropout_mask,
)


def finite_diff_grad(fn, x, step=1e-5):
    """Central-difference gradient of ``fn()`` w.r.t. ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + step
        hi = fn()
        x[idx] = orig - step
        lo = fn()
        x[idx] = orig
        grad[idx] = (hi - lo) / (2 * step)
    return grad


def check_op_gradients(kind, make_instance, rng, n_instances=5, tol=1e-4):
    """Compare tape gradients with finite differences on random instances."""
    for _ in range(n_instances):
        arrays, attrs = make_instance(rng)
        tensors = _wrap(kind, arrays, requires_grad=True)
        with Tape() as tape:
            out = apply_op(kind, *tensors, **attrs)
            probe = rng.standard_normal(out.shape)
            loss = ad.tsum(ad.mul(out, Tensor(probe)))
        grads = tape.backward(loss)

        copies = [a.copy() for a in arrays]

        def scalar():
            result = apply_op(kind, *_wrap(kind, copies), **attrs)
            return float((result.data * probe).sum())

        for i, t in enumerate(_flatten_inputs(kind, tensors)):
            analytic = grads.get(t, np.zeros_like(t.data))
            numeric = finite_diff_grad(scalar, copies[i])
            denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3)
            rel = np.abs(analytic - numeric) / denom
            assert rel.max() <= tol, f"{kind}: input {i} rel err {rel.max():.2e}"


def _wrap(kind, arrays, requires_grad=False):
    tensors = [Tensor(a, requires_grad=requires_grad) for a in arrays]
    if kind in ("concat", "stack"):
        return (tensors,)
    return tuple(tensors)


def _flatten_inputs(kind, wrapped):
    if kind in ("concat", "stack"):
        return list(wrapped[0])
    return list(wrapped)


def _rand(rng, *shape):
    return rng.uniform(-1.5, 1.5, shape)


def _rand_away_from_zero(rng, *shape):
    return rng.uniform(0.2, 1.5, shape) * rng.choice([-1.0, 1.0], shape)


OP_INSTANCES = {
    "add": lambda rng: ([_rand(rng, 3, 4), _rand(rng, 4)], {}),
    "sub": lambda rng: ([_rand(rng, 3, 4), _rand(rng, 3, 4)], {}),
    "mul": lambda rng: ([_rand(rng, 2, 3, 4), _rand(rng, 3, 4)], {}),
    "power": lambda rng: ([rng.uniform(0.3, 2.0, (3, 4))], {"exponent": -0.5}),
    "log": lambda rng: ([rng.uniform(0.3, 3.0, (4, 5))], {}),
    "matmul": lambda rng: ([_rand(rng, 4, 3), _rand(rng, 3, 5)], {}),
    "conv1d": lambda rng: ([_rand(rng, 2, 11, 2), _rand(rng, 3, 2, 4)],
                           {"stride": 2, "padding": "same"}),
    "tanh": lambda rng: ([_rand(rng, 3, 4)], {}),
    "sigmoid": lambda rng: ([_rand(rng, 3, 4)], {}),
    "prelu": lambda rng: ([_rand_away_from_zero(rng, 3, 4), rng.uniform(0.1, 0.5, (4,))], {}),
    "softmax": lambda rng: ([_rand(rng, 3, 5)], {}),
    "layer_norm": lambda rng: ([_rand(rng, 3, 6), rng.uniform(0.5, 1.5, (6,)),
                                _rand(rng, 6)], {}),
    "mean": lambda rng: ([_rand(rng, 3, 4)], {"axis": 1, "keepdims": True}),
    "sum": lambda rng: ([_rand(rng, 3, 4)], {}),
    "reshape": lambda rng: ([_rand(rng, 3, 4)], {"shape": (2, 6)}),
    "flatten": lambda rng: ([_rand(rng, 2, 3, 4)], {"start_axis": 1}),
    "transpose": lambda rng: ([_rand(rng, 2, 3, 4)], {"axes": (2, 0, 1)}),
    "slice_axis": lambda rng: ([_rand(rng, 3, 6)], {"axis": 1, "start": 1, "stop": 4}),
    "concat": lambda rng: ([_rand(rng, 2, 3), _rand(rng, 2, 2)], {"axis": 1}),
    "stack": lambda rng: ([_rand(rng, 3, 4), _rand(rng, 3, 4)], {"axis": 1}),
}


@pytest.mark.parametrize("kind", sorted(ad.OPS))
def test_gradients_match_finite_differences(kind):
    rng = np.random.default_rng(hash(kind) % 2**32)
    check_op_gradients(kind, OP_INSTANCES[kind], rng, n_instances=5)


def test_registry_covers_instance_table():
    assert set(OP_INSTANCES) == set(ad.OPS)


class TestForwardValues:
    def test_softmax_uniform_logits(self):
        out = ad.softmax(Tensor(np.zeros(5)))
        np.testing.assert_allclose(out.data, np.full(5, 0.2), rtol=0, atol=1e-15)

    def test_prelu_definition(self):
        out = ad.prelu(Tensor([-2.0, 3.0]), Tensor([0.25]))
        np.testing.assert_array_equal(out.data, [-0.5, 3.0])

    def test_conv_output_lengths_match_padding_rule(self):
        x = Tensor(np.zeros((3000, 1)))
        w = Tensor(np.zeros((31, 1, 16)))
        assert ad.conv1d(x, w, stride=2, padding="valid").shape == (1485, 16)
        assert ad.conv1d(x, w, stride=2, padding="same").shape == (1500, 16)

    def test_conv_matches_direct_correlation(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((9, 2))
        w = rng.standard_normal((3, 2, 4))
        out = ad.conv1d(Tensor(x), Tensor(w), stride=2, padding="valid")
        expected = np.zeros((4, 4))
        for t in range(4):
            for c in range(4):
                expected[t, c] = (x[2 * t:2 * t + 3] * w[:, :, c]).sum()
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    @given(st.integers(1, 200), st.integers(1, 31), st.integers(1, 7))
    @settings(max_examples=60, deadline=None)
    def test_conv_length_formula(self, length, width, stride):
        x = Tensor(np.ones((length, 1)))
        w = Tensor(np.ones((width, 1, 1)))
        same = ad.conv1d(x, w, stride=stride, padding="same")
        assert same.shape[0] == -(-length // stride)
        if length >= width:
            valid = ad.conv1d(x, w, stride=stride, padding="valid")
            assert valid.shape[0] == (length - width) // stride + 1

    @given(st.lists(st.floats(-30, 30), min_size=2, max_size=8))
    @settings(max_examples=60, deadline=None)
    def test_softmax_rows_are_distributions(self, logits):
        out = ad.softmax(Tensor(logits))
        assert (out.data >= 0).all()
        assert abs(out.data.sum() - 1.0) <= 1e-12


class TestBackward:
    def test_sum_of_squares_gradient(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        with Tape() as tape:
            loss = ad.tsum(ad.mul(x, x))
        grads = tape.backward(loss)
        np.testing.assert_allclose(grads[x], [2.0, 4.0, 6.0], atol=1e-12)

    def test_cross_entropy_softmax_gradient_identity(self):
        # d/dz of -sum(y * log(softmax(z))) is softmax(z) - y
        z = Tensor(np.zeros(5), requires_grad=True)
        y = np.array([0.0, 0.0, 1.0, 0.0, 0.0])
        with Tape() as tape:
            p = ad.softmax(z)
            loss = ad.mul(ad.tsum(ad.mul(Tensor(y), ad.log(p))), -1.0)
        grads = tape.backward(loss)
        np.testing.assert_allclose(grads[z], p.data - y, atol=1e-12)

    def test_off_path_tensor_has_no_gradient(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        other = Tensor([5.0], requires_grad=True)
        with Tape() as tape:
            loss = ad.tsum(x)
            ad.mul(other, 3.0)  # recorded but unconnected to the loss
        grads = tape.backward(loss)
        assert other not in grads
        np.testing.assert_array_equal(grads.get(other, np.zeros(1)), [0.0])

    def test_reused_input_accumulates(self):
        x = Tensor([3.0], requires_grad=True)
        with Tape() as tape:
            loss = ad.tsum(ad.mul(x, x))
        np.testing.assert_allclose(tape.backward(loss)[x], [6.0])

    def test_backward_rejects_non_scalar_loss(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            out = ad.mul(x, 2.0)
        with pytest.raises(ShapeError):
            tape.backward(out)

    def test_replay_determinism(self):
        def run():
            rng = np.random.default_rng(99)
            x = Tensor(rng.standard_normal((4, 6)), requires_grad=True)
            w = Tensor(rng.standard_normal((6, 3)), requires_grad=True)
            with Tape() as tape:
                h = ad.tanh(ad.matmul(x, w))
                loss = ad.mean(ad.mul(h, h))
            grads = tape.backward(loss)
            return loss.item(), grads[x].copy(), grads[w].copy()

        l1, gx1, gw1 = run()
        l2, gx2, gw2 = run()
        assert l1 == l2
        np.testing.assert_array_equal(gx1, gx2)
        np.testing.assert_array_equal(gw1, gw2)


class TestErrors:
    def test_shape_mismatch_names_dimensions(self):
        with pytest.raises(ShapeError, match="matmul"):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))

    def test_non_finite_input_rejected(self):
        with pytest.raises(NumericError):
            Tensor([1.0, np.inf])
        with pytest.raises(NumericError):
            Tensor([np.nan])

    def test_conv_channel_mismatch(self):
        with pytest.raises(ShapeError, match="channels"):
            ad.conv1d(Tensor(np.ones((10, 2))), Tensor(np.ones((3, 1, 4))))


class TestDropoutMask:
    def test_rate_zero_is_identity(self):
        m = dropout_mask((4, 4), 0.0, np.random.default_rng(0))
        np.testing.assert_array_equal(m.data, np.ones((4, 4)))

    def test_eval_mode_is_identity(self):
        m = dropout_mask((4, 4), 0.9, np.random.default_rng(0), training=False)
        np.testing.assert_array_equal(m.data, np.ones((4, 4)))

    def test_zero_fraction_matches_rate(self):
        m = dropout_mask((1000, 1000), 0.5, np.random.default_rng(7))
        frac = float((m.data == 0).mean())
        assert abs(frac - 0.5) < 0.01
        kept = m.data[m.data != 0]
        np.testing.assert_allclose(kept, 2.0)

    def test_rate_one_rejected(self):
        with pytest.raises(ValueError):
            dropout_mask((2,), 1.0, np.random.default_rng(0))
