import numpy as np
import pytest

from red import autodiff as ad
from red.gru import GruParams, gru_step, init_gru_params, init_state


def _zero_params(k=3, c=2, cs=2):
    z = lambda cin: ad.parameter(np.zeros((k, k, cin, cs)))
    return GruParams(w_zh=z(cs), w_zx=z(c), w_rh=z(cs), w_rx=z(c), w_sh=z(cs), w_sx=z(c))


def test_init_state_zero():
    s = init_state(18, 8)
    assert s.shape == (18, 18, 8)
    assert s.data.sum() == 0.0
    np.testing.assert_array_equal(init_state(5, 3).data, init_state(5, 3).data)


def test_zero_kernels_halve_previous_state():
    rng = np.random.default_rng(0)
    p = _zero_params()
    s_prev = ad.constant(rng.uniform(-0.9, 0.9, (4, 4, 2)))
    x = ad.constant(rng.random((4, 4, 2)))
    s = gru_step(s_prev, x, p)
    # z = sigmoid(0) = 0.5 and the candidate is tanh(0) = 0
    np.testing.assert_allclose(s.data, 0.5 * s_prev.data, rtol=0, atol=1e-15)


def test_zero_state_zero_input_is_fixed_point():
    rng = np.random.default_rng(1)
    p = init_gru_params(3, 2, 4, rng)
    s = gru_step(init_state(4, 4), ad.constant(np.zeros((4, 4, 2))), p)
    np.testing.assert_array_equal(s.data, 0.0)


def test_scalar_case_analytic_values():
    one = lambda: ad.parameter(np.ones((1, 1, 1, 1)))
    zero = lambda: ad.parameter(np.zeros((1, 1, 1, 1)))
    p = GruParams(w_zh=zero(), w_zx=one(), w_rh=zero(), w_rx=zero(), w_sh=zero(), w_sx=one())
    s = gru_step(init_state(1, 1), ad.constant(np.ones((1, 1, 1))), p)
    z = 1.0 / (1.0 + np.exp(-1.0))
    cand = np.tanh(1.0)
    assert z == pytest.approx(0.73106, abs=1e-5)
    assert cand == pytest.approx(0.76159, abs=1e-5)
    assert s.item() == pytest.approx(z * cand, abs=1e-12)
    assert s.item() == pytest.approx(0.55677, abs=1e-5)


def test_shape_mismatch_rejected():
    p = _zero_params(c=2, cs=2)
    with pytest.raises(ValueError):
        gru_step(init_state(4, 3), ad.constant(np.zeros((4, 4, 2))), p)
    with pytest.raises(ValueError):
        gru_step(init_state(4, 2), ad.constant(np.zeros((4, 4, 3))), p)


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(2)
    p = init_gru_params(3, 2, 2, rng)
    s_prev = ad.parameter(rng.uniform(-0.5, 0.5, (4, 4, 2)))
    x = ad.constant(rng.uniform(0, 1, (4, 4, 2)))
    proj = ad.constant(np.linspace(0.2, 1.0, 32).reshape(4, 4, 2))

    def f():
        with ad.Tape():
            return ad.tsum(ad.mul(gru_step(s_prev, x, p), proj))

    params = list(p.kernels()) + [s_prev]
    assert ad.finite_diff_check(f, params, step=1e-5) < 1e-4


def test_state_stays_strictly_inside_unit_interval():
    rng = np.random.default_rng(3)
    p = init_gru_params(3, 2, 3, rng)
    # amplify the kernels well beyond trained magnitudes
    for kern in p.kernels():
        kern.data *= 5.0
    s = init_state(6, 3)
    for _ in range(50):
        x = ad.constant(rng.random((6, 6, 2)))
        s = gru_step(s, x, p)
        assert np.abs(s.data).max() < 1.0


def test_gate_injection_seam():
    rng = np.random.default_rng(4)
    p = init_gru_params(3, 2, 2, rng)
    s_prev = ad.constant(rng.uniform(-0.5, 0.5, (4, 4, 2)))
    x = ad.constant(rng.random((4, 4, 2)))

    frozen = gru_step(s_prev, x, p, _gate_override={"z": 0.0})
    np.testing.assert_allclose(frozen.data, s_prev.data, rtol=0, atol=1e-15)

    replaced = gru_step(s_prev, x, p, _gate_override={"z": 1.0})
    # with z pinned to 1 the new state is exactly the candidate
    v = ad.sigmoid(ad.add(ad.conv2d_same(s_prev, p.w_rh), ad.conv2d_same(x, p.w_rx)))
    cand = ad.tanh(
        ad.add(ad.conv2d_same(ad.mul(v, s_prev), p.w_sh), ad.conv2d_same(x, p.w_sx))
    )
    np.testing.assert_allclose(replaced.data, cand.data, rtol=0, atol=1e-15)
