"""Finite-difference sweep over every differentiable building block.

Each case maps a seed to ``(function, input)``; the function returns a scalar
Tensor. Non-scalar outputs are contracted with a fixed random weight tensor so
that every output coordinate contributes to the checked gradient.
"""

import numpy as np

from tldrseg import autodiff as ad
from tldrseg import nets
from tldrseg.autodiff import Tensor, cross_entropy, finite_difference_check
from tldrseg.texture import gram, texture_gen_loss, texture_reg_loss

TOLERANCE = 1e-4


def _contract(out, rng):
    weights = Tensor(rng.normal(size=out.shape))
    return ad.sum_(out * weights)


def _unary(fn, shape):
    def case(seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=shape)
        probe = np.random.default_rng(seed + 1000)
        w_shape = fn(Tensor(x)).shape
        weights = Tensor(probe.normal(size=w_shape))
        return (lambda t: ad.sum_(fn(t) * weights)), x

    return case


def _with_constant(fn, shape, other_shape):
    def case(seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=shape)
        other = Tensor(rng.normal(size=other_shape))
        w_shape = fn(Tensor(x), other).shape
        weights = Tensor(np.random.default_rng(seed + 1000).normal(size=w_shape))
        return (lambda t: ad.sum_(fn(t, other) * weights)), x

    return case


def _relu_case(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 3, 4))
    x[np.abs(x) < 1e-3] = 0.1  # keep away from the kink
    weights = Tensor(rng.normal(size=x.shape))
    return (lambda t: ad.sum_(ad.relu(t) * weights)), x


def _conv_weight_case(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(2, 2, 5, 5)))
    b = Tensor(rng.normal(size=3))
    w = rng.normal(size=(3, 2, 3, 3))
    weights = Tensor(rng.normal(size=(2, 3, 3, 3)))
    return (lambda t: ad.sum_(ad.conv2d(x, t, b, stride=2, pad=1) * weights)), w


def _conv_bias_case(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(2, 2, 4, 4)))
    w = Tensor(rng.normal(size=(3, 2, 3, 3)))
    weights = Tensor(rng.normal(size=(2, 3, 4, 4)))
    return (lambda t: ad.sum_(ad.conv2d(x, w, t, pad=1) * weights)), rng.normal(size=3)


def _ce_case(seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 4, size=(2, 3, 3))
    labels[0, 0, 0] = 255
    return (lambda t: cross_entropy(t, labels)), rng.normal(size=(2, 4, 3, 3))


def _gram_case(seed):
    rng = np.random.default_rng(seed)
    weights = Tensor(rng.normal(size=(2, 3, 3)))
    return (lambda t: ad.sum_(gram(t) * weights)), rng.normal(size=(2, 3, 4, 3))


def _tr_case(seed):
    rng = np.random.default_rng(seed)
    ref = [Tensor(rng.normal(size=(2, 3, 3))), Tensor(rng.normal(size=(2, 4, 4)))]
    other = Tensor(rng.normal(size=(2, 4, 2, 2)))

    def f(t):
        return texture_reg_loss(ref, [gram(t), gram(other)], [5e-3, 5e-4])

    return f, rng.normal(size=(2, 3, 4, 4))


def _tg_case(seed):
    rng = np.random.default_rng(seed)
    style = rng.normal(size=(2, 3, 4, 4))
    mask = rng.random((2, 3, 3)) < 0.6
    mask[0, 0, 0] = True

    def f(t):
        return texture_gen_loss([gram(Tensor(style) + t)], [gram(t)], [mask], [5e-3])

    return f, rng.normal(size=(2, 3, 4, 4))


def _total_case(seed):
    from tldrseg.train import TrainConfig, total_loss

    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 3, size=(1, 4, 4))
    ref = Tensor(rng.normal(size=(1, 3, 3)))
    style = Tensor(rng.normal(size=(1, 3, 4, 4)))
    mask = rng.random((1, 3, 3)) < 0.7
    mask[0, 0, 1] = True
    cfg = TrainConfig(t_total=10, t_warm=1)

    def f(t):
        p_sr = ad.scale(t, 1.7)
        tr = texture_reg_loss([ref], [gram(t)], [0.3])
        tg = texture_gen_loss([gram(style)], [gram(t)], [mask], [0.2])
        total, _ = total_loss(t, p_sr, labels, tr, tg, 3, cfg)
        return total

    return f, rng.normal(size=(1, 3, 4, 4))


def _network_case(seed):
    enc = nets.build_encoder(nets.EncoderConfig(channels=(2, 3, 3, 4), seed=seed))
    dec = nets.build_decoder(nets.DecoderConfig(num_classes=3, width=3, encoder_channels=(2, 3, 3, 4),
                                                seed=seed, zero_head=False))
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 3, size=(1, 16, 16))

    def f(t):
        return cross_entropy(nets.decode(dec, nets.encode(enc, t), (16, 16)), labels)

    return f, rng.random((1, 3, 16, 16))


CASES = {
    "conv2d": _unary(lambda t: ad.conv2d(t, Tensor(np.linspace(-1, 1, 54).reshape(3, 2, 3, 3)), pad=1, stride=2),
                     (2, 2, 5, 5)),
    "conv2d/weight": _conv_weight_case,
    "conv2d/bias": _conv_bias_case,
    "relu": _relu_case,
    "max-pool2": _unary(ad.max_pool2, (2, 2, 4, 4)),
    "avg-pool2": _unary(ad.avg_pool2, (2, 2, 4, 4)),
    "bilinear-upsample": _unary(lambda t: ad.upsample(t, (7, 5)), (1, 2, 3, 2)),
    "matmul": _with_constant(ad.matmul, (3, 4), (4, 2)),
    "batched-matmul": _with_constant(ad.bmm, (2, 3, 4), (2, 4, 2)),
    "transpose": _unary(lambda t: ad.transpose(t, (2, 0, 1)), (2, 3, 4)),
    "add": _with_constant(lambda a, b: a + b, (3, 4), (3, 4)),
    "sub": _with_constant(lambda a, b: b - a, (3, 4), (3, 4)),
    "mul-elementwise": _with_constant(lambda a, b: a * b, (3, 4), (3, 4)),
    "scalar-mul": _unary(lambda t: ad.scale(t, -2.5), (3, 4)),
    "sum": _unary(lambda t: ad.sum_(t, axis=1), (3, 4, 2)),
    "mean": _unary(lambda t: ad.mean(t, axis=(0, 2)), (3, 4, 2)),
    "frobenius-norm": _unary(lambda t: ad.frobenius_norm(t), (3, 4)),
    "reshape": _unary(lambda t: ad.reshape(t, (4, 6)), (2, 3, 4)),
    "cross_entropy": _ce_case,
    "gram": _gram_case,
    "texture_reg_loss": _tr_case,
    "texture_gen_loss": _tg_case,
    "total_loss": _total_case,
    "decode(encode(image))": _network_case,
}


def run_suite(seeds=range(20), epsilon=1e-6, cases=None):
    """Worst relative error per case over ``seeds``."""
    worst = {}
    for name, case in (cases or CASES).items():
        err = 0.0
        for seed in seeds:
            fn, x = case(seed)
            err = max(err, finite_difference_check(fn, x, epsilon))
        worst[name] = err
    return worst
