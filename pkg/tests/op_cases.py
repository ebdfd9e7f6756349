"""Differentiable op cases shared by the unit gradient checks and the acceptance gate."""
import numpy as np

from metadrn import nn
from metadrn import tensor as T

rng = np.random.default_rng(1234)


def _r(*shape):
    return rng.standard_normal(shape)


def _away_from_zero(*shape):
    x = _r(*shape)
    return np.where(np.abs(x) < 0.2, np.sign(x + 1e-9) * 0.2 + x, x)


_target = rng.integers(0, 3, size=(2, 3, 3))

OP_CASES = [
    ("add", lambda a, b: T.add(a, b), [_r(2, 3), _r(2, 3)]),
    ("add_broadcast", lambda a, b: T.add(a, b), [_r(2, 3, 4), _r(3, 1)]),
    ("sub", lambda a, b: T.sub(a, b), [_r(3, 2), _r(1, 2)]),
    ("mul", lambda a, b: T.mul(a, b), [_r(2, 3, 2), _r(2, 3, 2)]),
    ("mul_broadcast", lambda a, b: T.mul(a, b), [_r(2, 4, 3, 3), _r(1, 4, 1, 1)]),
    ("scalar_mul", lambda a: T.scalar_mul(a, -1.7), [_r(4)]),
    ("div", lambda a, b: T.div(a, b), [_r(3, 3), _away_from_zero(3, 3)]),
    ("neg", lambda a: T.neg(a), [_r(5)]),
    ("pow", lambda a: T.power(a, -0.5), [np.abs(_r(4)) + 0.5]),
    ("exp", lambda a: T.exp(a), [_r(2, 3)]),
    ("log", lambda a: T.log(a), [np.abs(_r(2, 3)) + 0.3]),
    ("sigmoid", lambda a: T.sigmoid(a), [_r(3, 2)]),
    ("sum_axis", lambda a: T.sum(a, axis=(0, 2)), [_r(2, 3, 4)]),
    ("sum_keepdims", lambda a: T.sum(a, axis=1, keepdims=True), [_r(2, 3, 4)]),
    ("mean", lambda a: T.mean(a), [_r(3, 4)]),
    ("reshape", lambda a: T.reshape(a, (6, 2)), [_r(3, 4)]),
    ("transpose", lambda a: T.transpose(a, (2, 0, 1)), [_r(2, 3, 4)]),
    ("getitem", lambda a: a[1:, ::2], [_r(3, 5)]),
    ("concat", lambda a, b: T.concat([a, b], axis=1), [_r(2, 2), _r(2, 3)]),
    ("stack", lambda a, b: T.stack([a, b], axis=0), [_r(3), _r(3)]),
    ("broadcast_to", lambda a: T.broadcast_to(a, (2, 3, 4)), [_r(3, 1)]),
    ("sum_to", lambda a: T.sum_to(a, (3, 1)), [_r(2, 3, 4)]),
    ("leaky_relu", lambda a: nn.leaky_relu(a, 0.01), [_away_from_zero(2, 3, 4)]),
    ("batch_norm2d", lambda x, g, b: nn.batch_norm2d(x, g, b), [_r(2, 3, 3, 3), _r(3), _r(3)]),
    ("pixel_shuffle", lambda a: nn.pixel_shuffle(a, 2), [_r(1, 8, 2, 3)]),
    ("softmax", lambda a: nn.softmax(a, axis=1), [_r(2, 3, 2, 2)]),
    ("log_softmax", lambda a: nn.log_softmax(a, axis=1), [_r(2, 3, 2, 2)]),
    ("softmax_cross_entropy", lambda a: nn.softmax_cross_entropy(a, _target), [_r(2, 3, 3, 3)]),
]

for _s in (1, 2):
    for _d in (1, 2, 4):
        OP_CASES.append((
            f"conv2d_s{_s}_d{_d}",
            (lambda s, d: lambda x, w, b: nn.conv2d(x, w, b, stride=s, dilation=d, padding=d))(_s, _d),
            [_r(2, 2, 6, 6), _r(3, 2, 3, 3), _r(3)],
        ))

OP_CASES += [
    ("conv2d_input_grad", lambda g, w: nn.conv2d_input_grad(g, w, (1, 2, 5, 5), 2, 1, 1), [_r(1, 3, 3, 3), _r(3, 2, 3, 3)]),
    ("conv2d_weight_grad", lambda x, g: nn.conv2d_weight_grad(x, g, (3, 2, 3, 3), 1, 2, 2), [_r(1, 2, 5, 5), _r(1, 3, 5, 5)]),
    ("conv_transpose2d", lambda x, w: nn.conv_transpose2d(x, w, stride=2), [_r(1, 3, 2, 2), _r(3, 2, 2, 2)]),
]
