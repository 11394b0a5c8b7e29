import numpy as np
import pytest

from red import autodiff as ad


def test_conv2d_zero_kernel_annihilates():
    x = ad.constant(np.random.default_rng(0).random((5, 5, 2)))
    k = ad.constant(np.zeros((3, 3, 2, 3)))
    out = ad.conv2d_same(x, k)
    assert out.shape == (5, 5, 3)
    np.testing.assert_array_equal(out.data, 0.0)


def test_conv2d_1x1_kernel_scales():
    rng = np.random.default_rng(1)
    x = ad.constant(rng.random((4, 6, 1)))
    w = 0.37
    k = ad.constant(np.full((1, 1, 1, 1), w))
    out = ad.conv2d_same(x, k)
    np.testing.assert_allclose(out.data, w * x.data, rtol=0, atol=1e-15)


def _conv_oracle(x, k):
    # direct summation over the zero-padded window
    H, W, cin = x.shape
    kh, kw, _, cout = k.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    out = np.zeros((H, W, cout))
    for i in range(H):
        for j in range(W):
            for d in range(cout):
                acc = 0.0
                for u in range(kh):
                    for v in range(kw):
                        ii, jj = i + u - ph, j + v - pw
                        if 0 <= ii < H and 0 <= jj < W:
                            acc += (x[ii, jj, :] * k[u, v, :, d]).sum()
                out[i, j, d] = acc
    return out


def test_conv2d_ones_center_and_corners():
    x = ad.constant(np.ones((3, 3, 1)))
    k = ad.constant(np.ones((3, 3, 1, 1)))
    out = ad.conv2d_same(x, k).data[:, :, 0]
    assert out[1, 1] == 9.0
    for corner in ((0, 0), (0, 2), (2, 0), (2, 2)):
        assert out[corner] == 4.0
    np.testing.assert_allclose(out, _conv_oracle(x.data, k.data)[:, :, 0])


def test_conv2d_matches_direct_summation_oracle():
    rng = np.random.default_rng(2)
    x = rng.uniform(-1, 1, (6, 5, 3))
    k = rng.uniform(-1, 1, (3, 3, 3, 2))
    out = ad.conv2d_same(ad.constant(x), ad.constant(k))
    np.testing.assert_allclose(out.data, _conv_oracle(x, k), rtol=1e-12, atol=1e-12)


def test_conv2d_rejects_bad_shapes():
    with pytest.raises(ValueError):
        ad.conv2d_same(ad.constant(np.zeros((4, 4, 2))), ad.constant(np.zeros((2, 2, 2, 1))))
    with pytest.raises(ValueError):
        ad.conv2d_same(ad.constant(np.zeros((4, 4, 2))), ad.constant(np.zeros((3, 3, 3, 1))))


def test_conv2d_is_linear():
    rng = np.random.default_rng(3)
    x = rng.uniform(-1, 1, (5, 5, 2))
    y = rng.uniform(-1, 1, (5, 5, 2))
    k = ad.constant(rng.uniform(-1, 1, (3, 3, 2, 2)))
    a, b = 1.7, -0.4
    lhs = ad.conv2d_same(ad.constant(a * x + b * y), k).data
    rhs = a * ad.conv2d_same(ad.constant(x), k).data + b * ad.conv2d_same(ad.constant(y), k).data
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-10)


def test_sigmoid_tanh_hadamard_values():
    assert ad.sigmoid(ad.constant([0.0])).data[0] == 0.5
    assert ad.tanh(ad.constant([0.0])).data[0] == 0.0
    np.testing.assert_array_equal(
        ad.hadamard(ad.constant([2.0, 3.0]), ad.constant([4.0, 5.0])).data, [8.0, 15.0]
    )


def test_elementwise_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        ad.add(ad.constant([1.0, 2.0]), ad.constant([1.0]))
    with pytest.raises(ValueError):
        ad.mul(ad.constant([1.0, 2.0]), ad.constant([[1.0, 2.0]]))


def test_backward_sum_gives_ones():
    w = ad.parameter(np.random.default_rng(4).random((3, 4)))
    with ad.Tape() as tape:
        loss = ad.tsum(w)
    grads = ad.backward(tape, loss)
    np.testing.assert_array_equal(grads[w], np.ones((3, 4)))


def test_backward_zero_scale_annihilates():
    w = ad.parameter(np.random.default_rng(5).random(6))
    with ad.Tape() as tape:
        loss = ad.scale(ad.tsum(ad.mul(w, w)), 0.0)
    grads = ad.backward(tape, loss)
    np.testing.assert_array_equal(grads[w], np.zeros(6))


def test_backward_requires_scalar_loss():
    w = ad.parameter([1.0, 2.0])
    with ad.Tape() as tape:
        y = ad.mul(w, w)
    with pytest.raises(ValueError):
        ad.backward(tape, y)


def test_backward_composite_matches_finite_differences():
    rng = np.random.default_rng(6)
    w = ad.parameter(rng.uniform(-1, 1, (3, 3)))
    v = ad.parameter(rng.uniform(-1, 1, 3))

    def f():
        with ad.Tape():
            h = ad.tanh(ad.matvec(w, v))
            g = ad.sigmoid(ad.mul(h, h))
            return ad.tsum(g)

    err = ad.finite_diff_check(f, [w, v], step=1e-5)
    assert err < 1e-4


@pytest.mark.parametrize("case", ["add", "sub", "mul", "affine", "sigmoid", "tanh",
                                  "matvec", "vdot", "clamp", "weighted_sum", "reshape", "conv"])
def test_per_op_adjoint_matches_central_differences(case):
    rng = np.random.default_rng(hash(case) % 2**32)
    a = ad.parameter(rng.uniform(-1, 1, (4, 4, 2)))
    b = ad.parameter(rng.uniform(-1, 1, (4, 4, 2)))
    m = ad.parameter(rng.uniform(-1, 1, (3, 5)))
    v = ad.parameter(rng.uniform(-1, 1, 5))
    k = ad.parameter(rng.uniform(-1, 1, (3, 3, 2, 2)))

    builders = {
        "add": (lambda: ad.add(a, b), [a, b]),
        "sub": (lambda: ad.sub(a, b), [a, b]),
        "mul": (lambda: ad.mul(a, b), [a, b]),
        "affine": (lambda: ad.affine(a, -1.3, 0.25), [a]),
        "sigmoid": (lambda: ad.sigmoid(a), [a]),
        "tanh": (lambda: ad.tanh(a), [a]),
        "matvec": (lambda: ad.matvec(m, v), [m, v]),
        "vdot": (lambda: ad.vdot(v, v), [v]),
        "clamp": (lambda: ad.clamp(ad.scale(a, 2.0), -1.0, 1.0), [a]),
        "weighted_sum": (lambda: ad.weighted_sum([a, b], [0.3, -1.1]), [a, b]),
        "reshape": (lambda: ad.reshape(a, (8, 4)), [a]),
        "conv": (lambda: ad.conv2d_same(a, k), [a, k]),
    }
    build, params = builders[case]

    def f():
        with ad.Tape():
            out = build()
            # fixed random projection to a scalar keeps every coordinate live
            proj = ad.constant(np.linspace(0.3, 1.7, out.size).reshape(out.shape))
            return ad.tsum(ad.mul(out, proj))

    assert ad.finite_diff_check(f, params, step=1e-5) < 1e-4


def test_tape_replay_is_deterministic():
    rng = np.random.default_rng(8)
    w = ad.parameter(rng.uniform(-1, 1, (4, 4, 2)))
    k = ad.parameter(rng.uniform(-1, 1, (3, 3, 2, 2)))

    def grads():
        with ad.Tape() as tape:
            loss = ad.tsum(ad.tanh(ad.conv2d_same(w, k)))
        return ad.backward(tape, loss)

    g1, g2 = grads(), grads()
    assert (g1[w] == g2[w]).all() and (g1[k] == g2[k]).all()


def test_finite_diff_check_quadratic_is_exact():
    w = ad.parameter([3.0])

    def f():
        with ad.Tape():
            return ad.tsum(ad.mul(w, w))

    assert ad.finite_diff_check(f, [w], step=1e-5) < 1e-8


def test_finite_diff_check_constant_function():
    w = ad.parameter([1.0, -2.0])

    def f():
        with ad.Tape():
            return ad.scale(ad.tsum(w), 0.0)

    # both analytic and central difference are zero everywhere
    assert ad.finite_diff_check(f, [w], step=1e-5) == 0.0


def test_gradient_accumulates_over_reuse():
    w = ad.parameter([2.0])
    with ad.Tape() as tape:
        loss = ad.tsum(ad.add(ad.mul(w, w), w))  # w^2 + w -> dw = 2w + 1
    grads = ad.backward(tape, loss)
    np.testing.assert_allclose(grads[w], [5.0])
