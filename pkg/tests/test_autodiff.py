import math

import numpy as np
import pytest

from tldrseg import autodiff as ad
from tldrseg.autodiff import Tensor, backward, cross_entropy, finite_difference_check
from tldrseg.errors import ContractError, DegenerateBatchError, DimensionError, FormatError, LabelError, NumericError


def naive_matmul(a, b):
    n, k = len(a), len(b)
    m = len(b[0])
    out = [[0.0] * m for _ in range(n)]
    for i in range(n):
        for j in range(m):
            for p in range(k):
                out[i][j] += a[i][p] * b[p][j]
    return out


def test_conv2d_identity_kernel():
    x = np.arange(9.0).reshape(1, 1, 3, 3)
    out = ad.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), stride=1, pad=0)
    np.testing.assert_array_equal(out.data, x)


def test_relu_definition():
    np.testing.assert_array_equal(ad.relu(Tensor([-1.0, 0.0, 2.0])).data, [0, 0, 2])


def test_matmul_against_triple_loop():
    a, b = [[1, 2], [3, 4]], [[5, 6], [7, 8]]
    assert naive_matmul(a, b) == [[19, 22], [43, 50]]
    np.testing.assert_array_equal(ad.matmul(Tensor(a), Tensor(b)).data, naive_matmul(a, b))
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 3))
    np.testing.assert_allclose(ad.matmul(Tensor(a), Tensor(b)).data, naive_matmul(a.tolist(), b.tolist()), atol=1e-12)


def naive_conv(x, w, b, stride, pad):
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.zeros((n, cin, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad:pad + h, pad:pad + wd] = x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for bi in range(n):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[bi, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
                    out[bi, o, i, j] = (patch * w[o]).sum() + (b[o] if b is not None else 0.0)
    return out


@pytest.mark.parametrize("stride,pad,k", [(1, 0, 3), (1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 0, 1)])
def test_conv2d_matches_loop_oracle(stride, pad, k):
    rng = np.random.default_rng(stride * 10 + pad + k)
    x, w, b = rng.normal(size=(2, 3, 6, 6)), rng.normal(size=(4, 3, k, k)), rng.normal(size=4)
    out = ad.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, pad=pad)
    np.testing.assert_allclose(out.data, naive_conv(x, w, b, stride, pad), atol=1e-12)


def test_pools_and_upsample_values():
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    np.testing.assert_array_equal(ad.max_pool2(Tensor(x)).data[0, 0], [[5, 7], [13, 15]])
    np.testing.assert_array_equal(ad.avg_pool2(Tensor(x)).data[0, 0], [[2.5, 4.5], [10.5, 12.5]])
    # constant maps stay constant under interpolation
    up = ad.upsample(Tensor(np.full((1, 2, 3, 3), 7.0)), (6, 9))
    np.testing.assert_allclose(up.data, 7.0)
    # identity size is the identity map
    y = np.random.default_rng(0).normal(size=(1, 1, 4, 5))
    np.testing.assert_allclose(ad.upsample(Tensor(y), (4, 5)).data, y)


def test_shape_mismatch_reports_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(3, 2\)"):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((3, 2)))
    with pytest.raises(DimensionError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_non_finite_input_rejected():
    with pytest.raises(NumericError):
        Tensor([1.0, float("nan")])
    with pytest.raises(NumericError):
        ad.scale(Tensor([1e308]), 1e10)


def test_records_node_only_when_gradients_needed():
    a = Tensor(np.ones(3))
    assert (a + a).node is None
    b = Tensor(np.ones(3), requires_grad=True)
    assert (a + b).node is not None


# ---------------------------------------------------------------------------
# cross entropy
# ---------------------------------------------------------------------------


def test_cross_entropy_uniform_logits():
    loss = cross_entropy(Tensor(np.zeros((3, 4, 5))), np.zeros((4, 5), dtype=int))
    assert loss.item() == pytest.approx(math.log(3), abs=1e-12)


def test_cross_entropy_confident_binary():
    logits = np.zeros((2, 1, 1))
    logits[1] = 10.0
    loss = cross_entropy(Tensor(logits), np.array([[1]]))
    # closed form: -log(sigmoid(10))
    assert loss.item() == pytest.approx(math.log1p(math.exp(-10)), rel=1e-12)
    assert loss.item() == pytest.approx(4.54e-5, rel=1e-3)


def test_cross_entropy_ignore_masks_pixels():
    rng = np.random.default_rng(1)
    logits = rng.normal(size=(3, 2, 2))
    labels = np.full((2, 2), 255)
    labels[0, 1] = 2
    single = cross_entropy(Tensor(logits[:, 0:1, 1:2]), np.array([[2]]))
    assert cross_entropy(Tensor(logits), labels).item() == pytest.approx(single.item(), abs=1e-15)


def test_cross_entropy_errors():
    with pytest.raises(DegenerateBatchError):
        cross_entropy(Tensor(np.zeros((3, 2, 2))), np.full((2, 2), 255))
    with pytest.raises(LabelError):
        cross_entropy(Tensor(np.zeros((3, 2, 2))), np.full((2, 2), 3))


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def test_backward_sum_gives_ones():
    x = Tensor(np.random.default_rng(0).normal(size=(2, 3, 4)), requires_grad=True)
    grads = backward(ad.sum_(x))
    np.testing.assert_array_equal(grads[x.id], np.ones((2, 3, 4)))
    np.testing.assert_array_equal(x.grad, np.ones((2, 3, 4)))


def test_backward_frobenius_closed_form():
    x = Tensor([[3.0, 4.0]], requires_grad=True)
    grads = backward(ad.frobenius_norm(x))
    np.testing.assert_allclose(grads[x.id], [[0.6, 0.8]], atol=1e-15)


def test_frobenius_zero_point_gradient_is_zero():
    x = Tensor(np.zeros((2, 2)), requires_grad=True)
    np.testing.assert_array_equal(backward(ad.frobenius_norm(x))[x.id], 0)


def test_backward_linearity():
    rng = np.random.default_rng(5)
    data = rng.normal(size=(3, 3))

    def f1(t):
        return ad.sum_(t * t)

    def f2(t):
        return ad.frobenius_norm(ad.matmul(t, t))

    grads = []
    for f in (f1, f2):
        x = Tensor(data, requires_grad=True)
        grads.append(backward(f(x))[x.id])
    x = Tensor(data, requires_grad=True)
    both = backward(f1(x) + f2(x))[x.id]
    np.testing.assert_allclose(both, grads[0] + grads[1], atol=1e-12)


def test_diamond_graph_accumulates():
    # y = a*b + a*c with b = 2a, c = 3a -> dy/da = 2*2a + 2*3a per path sum
    a0 = np.array([0.7, -1.3])
    a = Tensor(a0, requires_grad=True)
    b = ad.scale(a, 2.0)
    c = ad.scale(a, 3.0)
    y = ad.sum_(a * b + a * c)
    got = backward(y)[a.id]
    # brute force per path: d(2a^2)/da + d(3a^2)/da
    np.testing.assert_allclose(got, 4 * a0 + 6 * a0, atol=1e-15)


def test_backward_rejects_non_scalar_and_reuse():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        backward(x * x)
    loss = ad.sum_(x * x)
    backward(loss)
    with pytest.raises(ContractError):
        backward(loss)


def test_tape_is_forward_ordered():
    x = Tensor(np.ones(2), requires_grad=True)
    y = ad.relu(x)
    z = ad.scale(y, 2.0)
    loss = ad.sum_(z + y)
    tape = ad.Tape.from_root(loss)
    assert [n.kind for n in tape.nodes] == ["relu", "scalar-mul", "add", "sum"]


def test_determinism_bitwise():
    rng = np.random.default_rng(11)
    x, w = rng.normal(size=(2, 3, 8, 8)), rng.normal(size=(4, 3, 3, 3))

    def run():
        xt, wt = Tensor(x), Tensor(w, requires_grad=True)
        loss = ad.frobenius_norm(ad.conv2d(xt, wt, pad=1))
        return loss.item(), backward(loss)[wt.id]

    (l1, g1), (l2, g2) = run(), run()
    assert l1 == l2
    assert np.array_equal(g1, g2)


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------


def test_fd_sum_of_squares():
    x = np.random.default_rng(0).normal(size=(2, 3))
    assert finite_difference_check(lambda t: ad.sum_(t * t), x, 1e-5) < 1e-6


def test_fd_constant_function_is_exact():
    assert finite_difference_check(lambda t: Tensor(3.0), np.ones((2, 2)), 1e-5) == 0.0


def test_fd_cross_entropy():
    rng = np.random.default_rng(2)
    labels = rng.integers(0, 4, size=(2, 3, 3))
    x = rng.normal(size=(2, 4, 3, 3))
    assert finite_difference_check(lambda t: cross_entropy(t, labels), x, 1e-6) < 1e-4


def test_fd_rejects_bad_epsilon():
    with pytest.raises(ContractError):
        finite_difference_check(lambda t: ad.sum_(t), np.ones(2), 0.1)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def test_tensor_roundtrip_bitwise(tmp_path):
    x = Tensor(np.random.default_rng(0).normal(size=(3, 2, 5)))
    path = tmp_path / "t.bin"
    ad.save_tensor(x, path)
    y = ad.load_tensor(path)
    assert y.shape == x.shape
    assert np.array_equal(x.data, y.data)
    raw = path.read_bytes()
    assert raw.endswith(np.ascontiguousarray(x.data, dtype="<f8").tobytes())


def test_tensor_truncated_payload(tmp_path):
    buf = ad.tensor_to_bytes(Tensor(np.ones(4)))
    with pytest.raises(FormatError) as err:
        ad.tensor_from_bytes(buf[:-3])
    assert err.value.offset is not None
