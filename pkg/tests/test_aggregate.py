import numpy as np
import pytest

from red import autodiff as ad
from red.aggregate import (
    AggregationConfig,
    aggregate_gradient,
    aggregate_nodes,
    k_argmax,
    k_max_aggregate,
    temp_predict,
)
from red.errors import ConfigError


def oracle_kmax(yhat, k, gamma, t0):
    """Independent direct evaluation of the weighted top-k average."""
    T = len(yhat)
    ranked = sorted(range(t0, T + 1), key=lambda t: (-yhat[t - 1], t))[:k]
    num = sum((1 - gamma**t) * yhat[t - 1] for t in ranked)
    den = sum(1 - gamma**t for t in ranked)
    return num / den


def test_temp_predict_zero_state_is_half():
    s = ad.constant(np.zeros((3, 3, 2)))
    w = ad.parameter(np.random.default_rng(0).uniform(-1, 1, 18))
    assert temp_predict(s, w).item() == 0.5


def test_temp_predict_zero_head_is_half():
    s = ad.constant(np.random.default_rng(1).uniform(-1, 1, (3, 3, 2)))
    assert temp_predict(s, ad.parameter(np.zeros(18))).item() == 0.5


def test_temp_predict_scalar_value():
    s = ad.constant(np.ones((1, 1, 1)))
    w = ad.parameter([2.0])
    y = temp_predict(s, w).item()
    assert y == pytest.approx(0.5 * (1 + np.tanh(2.0)), abs=1e-12)
    assert y == pytest.approx(0.98201, abs=1e-5)


def test_temp_predict_always_in_unit_interval():
    rng = np.random.default_rng(2)
    for _ in range(50):
        s = ad.constant(rng.uniform(-1.5, 1.5, (2, 2, 2)))
        w = ad.parameter(rng.uniform(-1.5, 1.5, 8))
        assert 0.0 < temp_predict(s, w).item() < 1.0


def test_config_validation_happens_at_construction():
    with pytest.raises(ConfigError):
        AggregationConfig(k=5, gamma=0.9, t0=3, T=6)  # only 4 candidates
    with pytest.raises(ConfigError):
        AggregationConfig(k=0, gamma=0.9, t0=1, T=4)
    with pytest.raises(ConfigError):
        AggregationConfig(k=1, gamma=1.0, t0=1, T=4)
    with pytest.raises(ConfigError):
        AggregationConfig(k=1, gamma=0.5, t0=0, T=4)


def test_k1_equals_max_after_warmup():
    cfg = AggregationConfig(k=1, gamma=0.7, t0=2, T=5)
    y = [0.9, 0.2, 0.6, 0.3, 0.55]
    assert k_max_aggregate(y, cfg) == 0.6  # 0.9 is before t0


def test_constant_sequence_is_fixed_point():
    for k, gamma, t0 in [(1, 0.0, 1), (3, 0.95, 2), (5, 0.5, 1)]:
        cfg = AggregationConfig(k=k, gamma=gamma, t0=t0, T=6)
        assert k_max_aggregate([0.37] * 6, cfg) == pytest.approx(0.37, abs=1e-12)


def test_worked_example_weights():
    cfg = AggregationConfig(k=2, gamma=0.5, t0=1, T=4)
    y = [0.2, 0.9, 0.5, 0.7]
    assert k_argmax(y, cfg) == [2, 4]
    expected = (0.75 * 0.9 + 0.9375 * 0.7) / 1.6875
    assert k_max_aggregate(y, cfg) == pytest.approx(expected, abs=1e-15)
    grads = aggregate_gradient(y, cfg)
    np.testing.assert_allclose(grads, [0.0, 0.75 / 1.6875, 0.0, 0.9375 / 1.6875], atol=1e-15)


def test_ties_break_toward_smaller_t():
    cfg = AggregationConfig(k=2, gamma=0.5, t0=1, T=4)
    assert k_argmax([0.5, 0.9, 0.9, 0.9], cfg) == [2, 3]


def test_gradient_zero_outside_selection_and_k1_unit():
    cfg = AggregationConfig(k=1, gamma=0.9, t0=1, T=5)
    y = [0.1, 0.8, 0.3, 0.2, 0.4]
    grads = aggregate_gradient(y, cfg)
    np.testing.assert_array_equal(grads, [0.0, 1.0, 0.0, 0.0, 0.0])


def test_gradient_matches_finite_differences_off_ties():
    rng = np.random.default_rng(3)
    checked = 0
    while checked < 25:
        T = int(rng.integers(4, 12))
        t0 = int(rng.integers(1, T))
        k = int(rng.integers(1, T - t0 + 2))
        cfg = AggregationConfig(k=k, gamma=float(rng.uniform(0, 0.99)), t0=t0, T=T)
        y = rng.uniform(0, 1, T)
        if np.min(np.abs(np.subtract.outer(y, y)[~np.eye(T, dtype=bool)])) < 1e-6:
            continue  # skip near ties, where the selection may flip
        grads = aggregate_gradient(y, cfg)
        h = 1e-7
        for t in range(1, T + 1):
            yp, ym = y.copy(), y.copy()
            yp[t - 1] += h
            ym[t - 1] -= h
            fd = (k_max_aggregate(yp, cfg) - k_max_aggregate(ym, cfg)) / (2 * h)
            assert grads[t - 1] == pytest.approx(fd, abs=1e-6)
        checked += 1


def test_aggregate_invariants_random_instances():
    rng = np.random.default_rng(4)
    for _ in range(200):
        T = int(rng.integers(2, 20))
        t0 = int(rng.integers(1, T + 1))
        k = int(rng.integers(1, T - t0 + 2))
        cfg = AggregationConfig(k=k, gamma=float(rng.uniform(0, 1)), t0=t0, T=T)
        y = rng.uniform(0, 1, T)
        out = k_max_aggregate(y, cfg)
        sel = [y[t - 1] for t in k_argmax(y, cfg)]
        assert 0.0 <= out <= 1.0
        assert min(sel) - 1e-12 <= out <= max(sel) + 1e-12
        assert out == pytest.approx(oracle_kmax(list(y), k, cfg.gamma, t0), abs=1e-12)


def test_steps_before_warmup_never_contribute():
    cfg = AggregationConfig(k=2, gamma=0.8, t0=3, T=6)
    rng = np.random.default_rng(5)
    base = rng.uniform(0, 1, 6)
    out = k_max_aggregate(base, cfg)
    grads = aggregate_gradient(base, cfg)
    assert grads[0] == grads[1] == 0.0
    for trial in range(10):
        mutated = base.copy()
        mutated[:2] = rng.uniform(0, 1, 2)
        assert k_max_aggregate(mutated, cfg) == out


def test_monotone_in_selected_values():
    cfg = AggregationConfig(k=3, gamma=0.9, t0=1, T=8)
    rng = np.random.default_rng(6)
    y = rng.uniform(0.2, 0.8, 8)
    K = k_argmax(y, cfg)
    out = k_max_aggregate(y, cfg)
    bumped = y.copy()
    bumped[K[0] - 1] += 0.1  # stays selected: it only grows
    assert k_max_aggregate(bumped, cfg) >= out


def test_late_selection_weights_approach_topk_mean():
    # once 1 - gamma^t is ~1 for every selected t the average is unweighted
    cfg = AggregationConfig(k=3, gamma=0.5, t0=35, T=40)
    rng = np.random.default_rng(7)
    y = rng.uniform(0, 1, 40)
    top = sorted(y[34:], reverse=True)[:3]
    assert k_max_aggregate(y, cfg) == pytest.approx(np.mean(top), abs=1e-9)


def test_aggregate_nodes_matches_value_path_and_differentiates():
    cfg = AggregationConfig(k=2, gamma=0.5, t0=1, T=4)
    vals = [0.2, 0.9, 0.5, 0.7]
    leaves = [ad.parameter([v]) for v in vals]
    with ad.Tape() as tape:
        nodes = [ad.reshape(leaf, ()) for leaf in leaves]
        out = aggregate_nodes(nodes, cfg)
    assert out.item() == pytest.approx(k_max_aggregate(vals, cfg), abs=1e-15)
    grads = ad.backward(tape, out)
    expected = aggregate_gradient(vals, cfg)
    for t, leaf in enumerate(leaves, start=1):
        got = grads.get(leaf, np.zeros(1))[0]
        assert got == pytest.approx(expected[t - 1], abs=1e-15)
