"""Finite-difference checks for every differentiable op.

All fixtures run in float64 so the central quotient is good to ~1e-10 and
the 1e-4 tolerance only trips on genuine gradient bugs. Charbonnier targets
are kept at least 0.2 away from predictions and relu inputs at least 5e-3
away from the kink; otherwise the quotient itself would be the suspect.
"""

import numpy as np
import pytest

from vdslim import ops
from vdslim.distill import distill_loss
from vdslim.tensor import Tensor

from conftest import assert_grad_matches, offset_target, philox, safe_relu_input


def t64(arr, grad=True):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad)


@pytest.mark.parametrize("seed,stride,padding,k", [
    (100, 1, 0, 3),
    (101, 1, 1, 3),
    (102, 2, 1, 3),
    (103, 1, 0, 1),
])
def test_conv2d_gradients(seed, stride, padding, k):
    rng = philox(seed)
    x = t64(rng.uniform(-1, 1, size=(1, 2, 5, 5)))
    w = t64(rng.uniform(-1, 1, size=(2, 2, k, k)))
    b = t64(rng.uniform(-1, 1, size=2))
    ref = ops.conv2d(x, w, b, stride=stride, padding=padding).data
    target = Tensor(offset_target(rng, ref))

    def make_loss():
        return ops.charbonnier(ops.conv2d(x, w, b, stride=stride, padding=padding), target)

    assert_grad_matches(make_loss, [x, w, b])


@pytest.mark.parametrize("seed", [110, 111])
def test_relu_gradients(seed):
    rng = philox(seed)
    x = t64(safe_relu_input(rng, (2, 3, 4)))
    target = Tensor(offset_target(rng, np.maximum(x.data, 0.0)))

    def make_loss():
        return ops.charbonnier(ops.relu(x), target)

    assert_grad_matches(make_loss, [x])


@pytest.mark.parametrize("seed,eps", [(120, 1e-4), (121, 1e-2)])
def test_charbonnier_gradients_both_sides(seed, eps):
    rng = philox(seed)
    x = t64(rng.uniform(-1, 1, size=(3, 4)))
    y = t64(offset_target(rng, x.data))

    def make_loss():
        return ops.charbonnier(x, y, eps=eps)

    assert_grad_matches(make_loss, [x, y])


def test_pixel_shuffle_gradients():
    rng = philox(130)
    x = t64(rng.uniform(-1, 1, size=(1, 8, 3, 3)))
    ref = ops.pixel_shuffle(Tensor(x.data), 2).data
    target = Tensor(offset_target(rng, ref))

    def make_loss():
        return ops.charbonnier(ops.pixel_shuffle(x, 2), target)

    assert_grad_matches(make_loss, [x])


def test_inverse_pixel_shuffle_gradients():
    rng = philox(131)
    x = t64(rng.uniform(-1, 1, size=(1, 2, 4, 6)))
    ref = ops.inverse_pixel_shuffle(Tensor(x.data), 2).data
    target = Tensor(offset_target(rng, ref))

    def make_loss():
        return ops.charbonnier(ops.inverse_pixel_shuffle(x, 2), target)

    assert_grad_matches(make_loss, [x])


@pytest.mark.parametrize("seed,pads", [(140, (1, 1, 1, 1)), (141, (0, 2, 1, 0))])
def test_reflect_pad_gradients(seed, pads):
    rng = philox(seed)
    x = t64(rng.uniform(-1, 1, size=(1, 2, 4, 5)))
    ref = ops.reflect_pad(Tensor(x.data), pads).data
    target = Tensor(offset_target(rng, ref))

    def make_loss():
        return ops.charbonnier(ops.reflect_pad(x, pads), target)

    assert_grad_matches(make_loss, [x])


def test_crop_gradients():
    rng = philox(150)
    x = t64(rng.uniform(-1, 1, size=(1, 2, 6, 6)))
    target = Tensor(offset_target(rng, x.data[:, :, 1:4, 2:6]))

    def make_loss():
        return ops.charbonnier(ops.crop(x, 1, 2, 3, 4), target)

    assert_grad_matches(make_loss, [x])


def test_concat_gradients():
    rng = philox(151)
    a = t64(rng.uniform(-1, 1, size=(1, 2, 3, 3)))
    b = t64(rng.uniform(-1, 1, size=(1, 3, 3, 3)))
    ref = np.concatenate([a.data, b.data], axis=1)
    target = Tensor(offset_target(rng, ref))

    def make_loss():
        return ops.charbonnier(ops.concat([a, b], axis=1), target)

    assert_grad_matches(make_loss, [a, b])


def test_add_gradients():
    rng = philox(152)
    a = t64(rng.uniform(-1, 1, size=(2, 3)))
    b = t64(rng.uniform(-1, 1, size=(2, 3)))
    target = Tensor(offset_target(rng, a.data + b.data))

    def make_loss():
        return ops.charbonnier(ops.add(a, b), target)

    assert_grad_matches(make_loss, [a, b])


def test_scale_gradients():
    rng = philox(153)
    x = t64(rng.uniform(-1, 1, size=(3, 3)))

    def make_loss():
        return ops.tsum(ops.scale(x, -1.7))

    assert_grad_matches(make_loss, [x])


def test_tsum_gradients():
    rng = philox(154)
    x = t64(rng.uniform(-1, 1, size=(2, 2, 2)))

    def make_loss():
        return ops.tsum(x)

    assert_grad_matches(make_loss, [x])


@pytest.mark.parametrize("seed", [160, 161])
def test_composed_conv_relu_conv_gradients(seed):
    rng = philox(seed)
    x = t64(rng.uniform(-1, 1, size=(1, 2, 5, 5)))
    w1 = t64(rng.uniform(-1, 1, size=(3, 2, 3, 3)))
    b1 = t64(safe_relu_input(rng, 3))
    w2 = t64(rng.uniform(-1, 1, size=(2, 3, 3, 3)))
    b2 = t64(rng.uniform(-1, 1, size=2))

    def forward():
        h = ops.relu(ops.conv2d(x, w1, b1, padding=1))
        return ops.conv2d(h, w2, b2, padding=1)

    target = Tensor(offset_target(rng, forward().data))

    def make_loss():
        return ops.charbonnier(forward(), target)

    assert_grad_matches(make_loss, [x, w1, b1, w2, b2])


@pytest.mark.parametrize("seed,alpha", [(170, 0.3), (171, 0.5), (172, 0.9)])
def test_distill_loss_composed_gradients(seed, alpha):
    rng = philox(seed)
    x = t64(rng.uniform(0, 1, size=(1, 2, 4, 4)))
    w = t64(rng.uniform(-1, 1, size=(3, 2, 3, 3)))
    b = t64(rng.uniform(-1, 1, size=3))
    ref = ops.conv2d(x, w, b, padding=1).data
    teacher = Tensor(offset_target(rng, ref))
    gt = Tensor(offset_target(rng, ref))

    def make_loss():
        student_out = ops.conv2d(x, w, b, padding=1)
        total, _, _ = distill_loss(student_out, teacher, gt, alpha=alpha, eps=1e-4)
        return total

    assert_grad_matches(make_loss, [x, w, b])
