import math

import numpy as np
import pytest

from conftest import fd_gradient_error
from voxseg.nn import (Conv3d, activation, add, backward, ce_dice_loss,
                       concat_channels, constant, conv3d, down_shuffle_op, maxpool3,
                       mul, relu, scale, softmax_channels, sum_all, up_shuffle_op)
from voxseg.tensor import Rng, Shape4, Tensor4

GRAD_TOL = 1e-6


def scalar(v):
    return constant(Tensor4.from_flat(Shape4(1, 1, 1, 1), [v]))


def random_projection(shape, seed):
    return constant(Tensor4.gaussian(shape, 0.0, 1.0, Rng(seed)))


class TestEngine:
    def test_product_rule_on_scalars(self):
        x, y = scalar(3.0), scalar(4.0)
        backward(mul(x, y))
        assert x.grad[0, 0, 0, 0] == 4.0
        assert y.grad[0, 0, 0, 0] == 3.0

    def test_grads_start_at_zero(self):
        node = constant(Tensor4.gaussian(Shape4(2, 2, 2, 1), 0, 1, Rng(1)))
        assert not node.grad.any()

    def test_non_scalar_root_rejected(self):
        node = constant(Tensor4.zeros(Shape4(2, 1, 1, 1)))
        with pytest.raises(ValueError):
            backward(node)

    def test_double_backward_rejected(self):
        root = sum_all(scalar(2.0))
        backward(root)
        with pytest.raises(RuntimeError):
            backward(root)

    def test_shared_node_accumulates(self):
        x = scalar(5.0)
        backward(add(mul(x, x), x))  # d(x^2 + x)/dx = 2x + 1
        assert x.grad[0, 0, 0, 0] == 11.0

    def test_scale_and_sum(self):
        t = Tensor4.gaussian(Shape4(2, 2, 2, 2), 0, 1, Rng(2))
        x = constant(t)
        backward(scale(sum_all(x), 3.0))
        assert (x.grad == 3.0).all()


class TestActivation:
    def test_relu_values(self):
        t = Tensor4.from_flat(Shape4(2, 1, 1, 1), [-1.0, 2.0])
        assert relu(constant(t)).value.flat.tolist() == [0.0, 2.0]

    def test_relu_gradient_signs(self):
        t = Tensor4.from_flat(Shape4(2, 1, 1, 1), [-1.0, 2.0])
        x = constant(t)
        backward(sum_all(relu(x)))
        assert x.grad.reshape(-1).tolist() == [0.0, 1.0]

    def test_identity_kind(self):
        t = Tensor4.gaussian(Shape4(2, 2, 2, 1), 0, 1, Rng(3))
        assert activation(constant(t), "identity").value.equal(t)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            activation(scalar(1.0), "swish")

    def test_fd_away_from_kink(self):
        vals = Rng(4).normal(16)
        vals += np.sign(vals) * 0.25  # keep clear of the origin
        t = Tensor4.from_flat(Shape4(2, 2, 2, 2), vals)
        proj = random_projection(t.shape, 5)

        def build(leaves):
            return sum_all(mul(relu(leaves[0]), proj))

        assert fd_gradient_error(build, [t]) < GRAD_TOL


class TestConv3d:
    def test_one_by_one_identity(self):
        layer = Conv3d(1, 1, kernel=(1, 1, 1), padding=(0, 0, 0))
        layer.weight.value = Tensor4.full(Shape4(1, 1, 1, 1), 1.0)
        t = Tensor4.gaussian(Shape4(3, 4, 2, 1), 0, 1, Rng(6))
        assert layer(constant(t)).value.equal(t)

    def test_all_ones_sum(self):
        layer = Conv3d(1, 1, kernel=(3, 3, 3), padding=(0, 0, 0))
        layer.weight.value = Tensor4.full(Shape4(3, 3, 3, 1), 1.0)
        out = layer(constant(Tensor4.full(Shape4(3, 3, 3, 1), 1.0)))
        assert out.value.shape == Shape4(1, 1, 1, 1)
        assert out.value.at(0, 0, 0, 0) == 27.0

    def test_same_padding_keeps_extents(self):
        layer = Conv3d(2, 3, rng=Rng(7))
        out = layer(constant(Tensor4.gaussian(Shape4(4, 5, 6, 2), 0, 1, Rng(8))))
        assert out.value.shape == Shape4(4, 5, 6, 3)

    def test_even_kernel_same_padding_rejected(self):
        with pytest.raises(ValueError):
            Conv3d(1, 1, kernel=(2, 3, 3))

    def test_channel_mismatch(self):
        layer = Conv3d(2, 1, rng=Rng(9))
        with pytest.raises(ValueError):
            layer(constant(Tensor4.zeros(Shape4(4, 4, 4, 3))))

    def test_degenerate_output_extent(self):
        layer = Conv3d(1, 1, kernel=(3, 3, 3), padding=(0, 0, 0))
        with pytest.raises(ValueError):
            layer(constant(Tensor4.zeros(Shape4(2, 4, 4, 1))))

    def test_fd_same_padding(self):
        rng = Rng(10)
        x = Tensor4.gaussian(Shape4(3, 3, 3, 2), 0, 1, rng)
        w = Tensor4.gaussian(Shape4(3, 3, 3, 4), 0, 0.5, rng)
        b = Tensor4.gaussian(Shape4(1, 1, 1, 2), 0, 0.5, rng)
        proj = random_projection(Shape4(3, 3, 3, 2), 11)

        def build(leaves):
            out = conv3d(leaves[0], leaves[1], leaves[2], (3, 3, 3), (1, 1, 1), (1, 1, 1))
            return sum_all(mul(out, proj))

        assert fd_gradient_error(build, [x, w, b]) < GRAD_TOL

    def test_fd_strided(self):
        rng = Rng(12)
        x = Tensor4.gaussian(Shape4(5, 4, 5, 1), 0, 1, rng)
        w = Tensor4.gaussian(Shape4(3, 3, 3, 2), 0, 0.5, rng)
        b = Tensor4.gaussian(Shape4(1, 1, 1, 2), 0, 0.5, rng)
        proj = random_projection(Shape4(3, 2, 5, 2), 13)

        def build(leaves):
            out = conv3d(leaves[0], leaves[1], leaves[2], (3, 3, 3), (2, 2, 1), (1, 1, 1))
            return sum_all(mul(out, proj))

        assert fd_gradient_error(build, [x, w, b]) < GRAD_TOL


class TestMaxpool:
    def test_constant_input(self):
        out = maxpool3(constant(Tensor4.full(Shape4(4, 4, 4, 1), 2.5)), (2, 2, 2))
        assert (out.value.zyxc == 2.5).all()

    def test_window_max(self):
        sh = Shape4(2, 2, 2, 1)
        t = Tensor4.from_flat(sh, np.arange(8.0))
        out = maxpool3(constant(t), (2, 2, 2))
        assert out.value.at(0, 0, 0, 0) == 7.0

    def test_identity_factors(self):
        t = Tensor4.gaussian(Shape4(3, 3, 3, 2), 0, 1, Rng(14))
        assert maxpool3(constant(t), (1, 1, 1)).value.equal(t)

    def test_tie_routes_to_first_in_layout_order(self):
        x = constant(Tensor4.full(Shape4(2, 2, 2, 1), 1.0))
        backward(sum_all(maxpool3(x, (2, 2, 2))))
        grads = x.grad.reshape(-1)
        assert grads[0] == 1.0 and not grads[1:].any()

    def test_non_divisible_rejected(self):
        with pytest.raises(ValueError):
            maxpool3(constant(Tensor4.zeros(Shape4(3, 4, 4, 1))), (2, 2, 2))

    def test_fd(self):
        t = Tensor4.gaussian(Shape4(4, 4, 2, 2), 0, 1, Rng(15))
        proj = random_projection(Shape4(2, 2, 1, 2), 16)

        def build(leaves):
            return sum_all(mul(maxpool3(leaves[0], (2, 2, 2)), proj))

        assert fd_gradient_error(build, [t]) < GRAD_TOL


class TestConcat:
    def test_values_and_gradient_split(self):
        a = constant(Tensor4.gaussian(Shape4(2, 2, 2, 2), 0, 1, Rng(17)))
        b = constant(Tensor4.gaussian(Shape4(2, 2, 2, 1), 0, 1, Rng(18)))
        cat = concat_channels(a, b)
        assert cat.value.shape.c == 3
        proj = Tensor4.gaussian(cat.value.shape, 0, 1, Rng(19))
        backward(sum_all(mul(cat, constant(proj))))
        assert np.array_equal(a.grad, proj.zyxc[..., :2])
        assert np.array_equal(b.grad, proj.zyxc[..., 2:])


class TestShuffleOps:
    def test_fd_down_up(self):
        t = Tensor4.gaussian(Shape4(4, 4, 2, 1), 0, 1, Rng(20))
        proj = random_projection(t.shape, 21)

        def build(leaves):
            d = down_shuffle_op(leaves[0], (2, 2, 2))
            return sum_all(mul(up_shuffle_op(d, (2, 2, 2)), proj))

        assert fd_gradient_error(build, [t]) < GRAD_TOL


class TestSoftmax:
    def test_uniform_two_classes(self):
        out = softmax_channels(constant(Tensor4.zeros(Shape4(2, 2, 2, 2))))
        assert np.allclose(out.value.zyxc, 0.5, atol=0, rtol=0)

    def test_closed_form(self):
        t = Tensor4.from_flat(Shape4(1, 1, 1, 2), [0.0, math.log(3.0)])
        out = softmax_channels(constant(t)).value
        assert abs(out.at(0, 0, 0, 0) - 0.25) < 1e-15
        assert abs(out.at(0, 0, 0, 1) - 0.75) < 1e-15

    def test_channel_sums_one(self):
        t = Tensor4.gaussian(Shape4(4, 3, 2, 5), 0, 10, Rng(22))
        sums = softmax_channels(constant(t)).value.zyxc.sum(axis=3)
        assert np.abs(sums - 1.0).max() < 1e-12

    def test_fd(self):
        t = Tensor4.gaussian(Shape4(2, 2, 2, 3), 0, 1, Rng(23))
        proj = random_projection(t.shape, 24)

        def build(leaves):
            return sum_all(mul(softmax_channels(leaves[0]), proj))

        assert fd_gradient_error(build, [t]) < GRAD_TOL


def one_hot_from(idx, class_count):
    hot = np.zeros(idx.shape + (class_count,))
    np.put_along_axis(hot, idx[..., None], 1.0, axis=3)
    return Tensor4.from_zyxc(hot)


class TestCeDiceLoss:
    def test_perfect_prediction_is_zero(self):
        idx = Rng(25).randint(0, 2, 8).reshape(2, 2, 2)
        labels = one_hot_from(np.asarray(idx), 2)
        loss = ce_dice_loss(constant(labels), labels)
        assert loss.value.at(0, 0, 0, 0) == 0.0

    def test_uniform_ce_is_ln2(self):
        probs = Tensor4.full(Shape4(2, 2, 2, 2), 0.5)
        idx = Rng(26).randint(0, 2, 8).reshape(2, 2, 2)
        labels = one_hot_from(np.asarray(idx), 2)
        loss = ce_dice_loss(constant(probs), labels, lam_ce=1.0, lam_dice=0.0)
        assert abs(loss.value.at(0, 0, 0, 0) - math.log(2.0)) < 1e-12

    def test_non_one_hot_rejected(self):
        probs = Tensor4.full(Shape4(2, 2, 2, 2), 0.5)
        with pytest.raises(ValueError):
            ce_dice_loss(constant(probs), probs)

    def test_shape_mismatch(self):
        probs = Tensor4.full(Shape4(2, 2, 2, 2), 0.5)
        labels = one_hot_from(np.zeros((2, 2, 4), dtype=np.int64), 2)
        with pytest.raises(ValueError):
            ce_dice_loss(constant(probs), labels)

    def test_fd_through_softmax(self):
        logits = Tensor4.gaussian(Shape4(4, 4, 4, 2), 0, 1, Rng(27))
        idx = Rng(28).randint(0, 2, 64).reshape(4, 4, 4)
        labels = one_hot_from(np.asarray(idx), 2)

        def build(leaves):
            return ce_dice_loss(softmax_channels(leaves[0]), labels)

        assert fd_gradient_error(build, [logits]) < GRAD_TOL

    def test_loss_finite_with_floored_probabilities(self):
        # a hard zero probability on the labeled class stays finite via the floor
        probs = np.full((2, 2, 2, 2), 0.5)
        probs[0, 0, 0] = [0.0, 1.0]
        labels = one_hot_from(np.zeros((2, 2, 2), dtype=np.int64), 2)
        loss = ce_dice_loss(constant(Tensor4.from_zyxc(probs)), labels)
        assert math.isfinite(loss.value.at(0, 0, 0, 0))

    def test_fd_direct_probs(self):
        rng = Rng(29)
        raw = 0.1 + 0.8 * rng.uniform(4 * 4 * 4 * 2)
        probs = Tensor4.from_flat(Shape4(4, 4, 4, 2), raw)
        idx = rng.randint(0, 2, 64).reshape(4, 4, 4)
        labels = one_hot_from(np.asarray(idx), 2)

        def build(leaves):
            return ce_dice_loss(leaves[0], labels)

        assert fd_gradient_error(build, [probs]) < GRAD_TOL
