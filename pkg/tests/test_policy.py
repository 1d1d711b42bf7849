import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import dense_features, naive_log_prob, perturbed, random_params
from dispolab.errors import ConfigurationError, ContractViolation, NumericalError
from dispolab.policy import (FeatureMap, PolicyParams, active_features, distribution, grad_log_prob,
                             init_params, load_checkpoint, log_prob, n_features, sample_token,
                             save_checkpoint, snapshot, token_entropy)

V, K = 15, 8


def test_uniform_log_prob_at_zero_weights():
    params = init_params(V, K)
    for tok in range(V):
        assert log_prob(params, [1, 2, 3], tok) == pytest.approx(-math.log(V), abs=1e-15)


@pytest.mark.parametrize("vocab", [4, 15])
def test_large_margin_log_prob(vocab):
    params = init_params(vocab, 2)
    params.weights[0, 3] = 20.0  # bias feature always active
    expected = -math.log1p((vocab - 1) * math.exp(-20.0))  # softmax([20, 0, ...]) by hand
    got = log_prob(params, [0, 1], 3)
    assert got == pytest.approx(expected, abs=1e-15)
    assert abs(got) < 1e-7
    if vocab <= 5:
        assert abs(got) < 1e-8


@pytest.mark.parametrize("fmap", list(FeatureMap))
def test_features_match_dense_layout(rng, fmap):
    for _ in range(50):
        prefix = list(rng.integers(0, 5, size=int(rng.integers(0, 6))))
        idx = active_features(prefix, 5, 3, fmap)
        dense = np.zeros(n_features(5, 3, fmap))
        dense[idx] = 1.0
        np.testing.assert_array_equal(dense, dense_features(prefix, 5, 3, fmap))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(list(FeatureMap)))
def test_probabilities_normalize(seed, fmap):
    rng = np.random.default_rng(seed)
    params = random_params(rng, 6, 3, fmap, scale=3.0)
    prefix = list(rng.integers(0, 6, size=5))
    total = sum(math.exp(log_prob(params, prefix, t)) for t in range(6))
    assert abs(total - 1.0) <= 1e-12
    assert 0.0 <= token_entropy(params, prefix) <= math.log(6) + 1e-12


def test_log_prob_matches_naive_dense_computation(rng):
    params = random_params(rng, 6, 3, FeatureMap.ONE_HOT_PAIRS)
    for _ in range(20):
        prefix = list(rng.integers(0, 6, size=4))
        tok = int(rng.integers(0, 6))
        assert log_prob(params, prefix, tok) == pytest.approx(
            naive_log_prob(params.weights, prefix, tok, 6, 3, FeatureMap.ONE_HOT_PAIRS), abs=1e-12)


def test_log_prob_rejects_bad_token_and_nonfinite():
    params = init_params(5, 2)
    with pytest.raises(ContractViolation):
        log_prob(params, [0], 5)
    params.weights[0, 0] = np.inf
    with pytest.raises(NumericalError):
        log_prob(params, [0], 0)


def test_params_validate_shape():
    with pytest.raises(ConfigurationError):
        PolicyParams(5, 2, FeatureMap.ONE_HOT_CONCAT, np.zeros((3, 5)))


def test_sampling_degenerate_distribution(rng):
    params = init_params(V, K)
    params.weights[0, 7] = 1000.0
    assert {sample_token(params, [1], rng) for _ in range(500)} == {7}


def test_sampling_uniform_frequencies():
    params = init_params(V, K)
    rng = np.random.default_rng(0)
    n = 100_000
    counts = np.bincount([sample_token(params, [], rng) for _ in range(n)], minlength=V)
    p = 1.0 / V
    sigma = math.sqrt(n * p * (1 - p))  # binomial standard deviation
    assert np.all(np.abs(counts - n * p) <= 5 * sigma)


def test_sampling_is_reproducible(rng):
    params = random_params(rng, V, 2)
    draw = lambda: [sample_token(params, [i % V], np.random.default_rng(7)) for i in range(50)]
    a = draw()
    assert a == draw()
    r1, r2 = np.random.default_rng(3), np.random.default_rng(3)
    assert [sample_token(params, [1, 2], r1) for _ in range(200)] == \
           [sample_token(params, [1, 2], r2) for _ in range(200)]


def test_grad_at_zero_weights_closed_form():
    params = init_params(V, K)
    prefix = [1, 10, 2, 12]
    g = grad_log_prob(params, prefix, 4)
    feats = params.features(prefix)
    expected = np.zeros_like(g)
    expected[feats] = -1.0 / V
    expected[feats, 4] = 1 - 1.0 / V
    np.testing.assert_allclose(g, expected, atol=1e-15)


def _fd_grad(params, prefix, token, h=1e-5):
    w = params.weights
    fd = np.zeros_like(w)
    for idx in np.ndindex(w.shape):
        plus, minus = w.copy(), w.copy()
        plus[idx] += h
        minus[idx] -= h
        fd[idx] = (log_prob(PolicyParams(params.vocab_size, params.context_window, params.feature_map, plus), prefix, token)
                   - log_prob(PolicyParams(params.vocab_size, params.context_window, params.feature_map, minus), prefix, token)) / (2 * h)
    return fd


def test_grad_matches_finite_differences_on_100_triples():
    rng = np.random.default_rng(2024)
    for trial in range(100):
        fmap = FeatureMap.ONE_HOT_PAIRS if trial % 4 == 0 else FeatureMap.ONE_HOT_CONCAT
        params = random_params(rng, 4, 2, fmap, scale=1.0)
        prefix = list(rng.integers(0, 4, size=int(rng.integers(0, 5))))
        token = int(rng.integers(0, 4))
        g = grad_log_prob(params, prefix, token)
        fd = _fd_grad(params, prefix, token)
        assert np.linalg.norm(g - fd) <= 1e-6 * np.linalg.norm(fd)


def test_grad_rows_sum_to_zero(rng):
    params = random_params(rng, V, 3, scale=2.0)
    g = grad_log_prob(params, [1, 2, 3, 4], 5)
    assert np.max(np.abs(g.sum(axis=1))) <= 1e-12


def test_entropy_examples():
    params = init_params(V, K)
    assert token_entropy(params, [3]) == pytest.approx(math.log(V), abs=1e-14)
    params.weights[0, 2] = 50.0
    assert token_entropy(params, [3]) < 1e-3
    two = init_params(V, K)
    two.weights[0, 2:] = -1000.0  # probability mass only on tokens 0 and 1
    assert token_entropy(two, [3]) == pytest.approx(math.log(2), abs=1e-15)


def test_snapshot_is_frozen_and_detached(rng):
    live = random_params(rng, V, 2)
    ref = snapshot(live)
    prefix = [3, 4]
    before = [log_prob(ref, prefix, t) for t in range(V)]
    assert before == [log_prob(live, prefix, t) for t in range(V)]
    live.weights += 1.0
    assert before == [log_prob(ref, prefix, t) for t in range(V)]
    with pytest.raises(ValueError):
        ref.weights[0, 0] = 1.0
    twin = snapshot(PolicyParams(ref.vocab_size, ref.context_window, ref.feature_map, ref.weights.copy()))
    assert before == [log_prob(twin, prefix, t) for t in range(V)]


def test_ratio_drifts_after_one_gradient_step(rng):
    live = random_params(rng, V, 2)
    ref = snapshot(live)
    prefix, tok = [1, 2], 6
    updated = PolicyParams(V, 2, live.feature_map, live.weights + 0.1 * grad_log_prob(live, prefix, tok))
    r = math.exp(log_prob(updated, prefix, tok) - log_prob(ref, prefix, tok))
    assert r > 1.0
    assert math.exp(log_prob(live, prefix, tok) - log_prob(ref, prefix, tok)) == 1.0


@pytest.mark.parametrize("fmap", list(FeatureMap))
def test_checkpoint_round_trip(tmp_path, rng, fmap):
    params = random_params(rng, 5, 3, fmap)
    path = tmp_path / "policy.ckpt"
    save_checkpoint(params, path)
    loaded = load_checkpoint(path)
    assert (loaded.vocab_size, loaded.context_window, loaded.feature_map) == (5, 3, fmap)
    np.testing.assert_array_equal(loaded.weights, params.weights)
    raw = path.read_bytes()
    assert raw[:8] == b"DSPOCKPT"
    # little-endian float64 payload after the 24-byte header
    np.testing.assert_array_equal(np.frombuffer(raw[24:], dtype="<f8"), params.weights.ravel())


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"not a checkpoint at all....")
    with pytest.raises(ConfigurationError):
        load_checkpoint(path)


def test_gaussian_init_is_seeded():
    a = init_params(5, 2, init="gaussian", seed=3)
    b = init_params(5, 2, init="gaussian", seed=3)
    np.testing.assert_array_equal(a.weights, b.weights)
    assert np.std(a.weights) < 0.05
    with pytest.raises(ConfigurationError):
        init_params(5, 2, init="xavier")
