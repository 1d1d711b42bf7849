from __future__ import annotations

from itertools import combinations

import numpy as np
import pytest
from scipy.special import log_softmax

from dispolab.objectives import compute_advantages
from dispolab.policy import FeatureMap, PolicyParams, distribution, init_params, snapshot
from dispolab.sampler import GroupBatch, Rollout
from dispolab.tasks import VOCAB, RewardOutcome, make_task


def dense_features(prefix, V, k, feature_map):
    """Independent dense rendering of the documented feature layout."""
    window = list(prefix[-k:])[::-1]
    pairs = list(combinations(range(k), 2)) if feature_map == FeatureMap.ONE_HOT_PAIRS else []
    phi = np.zeros(1 + k * V + len(pairs) * V * V)
    phi[0] = 1.0
    for j, tok in enumerate(window):
        phi[1 + j * V + tok] = 1.0
    for p, (j1, j2) in enumerate(pairs):
        if j2 < len(window):
            phi[1 + k * V + p * V * V + window[j1] * V + window[j2]] = 1.0
    return phi


def naive_log_prob(weights, prefix, token, V, k, feature_map):
    phi = dense_features(prefix, V, k, feature_map)
    return float(log_softmax(phi @ weights)[token])


def random_params(rng, V, k, feature_map=FeatureMap.ONE_HOT_CONCAT, scale=0.5):
    from dispolab.policy import n_features
    shape = (n_features(V, k, feature_map), V)
    return PolicyParams(V, k, feature_map, scale * rng.standard_normal(shape))


def make_rollout(rng, ref, question, length, base_reward):
    tokens = tuple(int(t) for t in rng.integers(0, ref.vocab_size, size=length))
    context = list(question)
    feats, ref_lps, contexts = [], [], []
    for tok in tokens:
        contexts.append(list(context))
        feats.append(ref.features(context))
        ref_lps.append(float(distribution(ref, context).log_probs[tok]))
        context.append(tok)
    reward = RewardOutcome(base_reward, 0.0, float(base_reward))
    ro = Rollout(0, tokens, np.array(ref_lps), reward, feats)
    # consumed by the dense oracle below
    ro.contexts, ro.window, ro.fmap = contexts, ref.context_window, ref.feature_map
    return ro


def make_random_batch(rng, ref, n_groups=2, G=4, max_len=4, shaped=False):
    """Groups of random token rollouts with mixed +/-1 rewards, scored under ``ref``."""
    task = make_task("ADD_MOD", (1, 2), 10)
    groups = []
    for _ in range(n_groups):
        signs = rng.choice([-1, 1], size=G)
        signs[0], signs[1] = 1, -1
        rng.shuffle(signs)
        question = [int(t) for t in rng.integers(0, ref.vocab_size, size=3)]
        rollouts = [make_rollout(rng, ref, question, int(rng.integers(1, max_len + 1)), int(s))
                    for s in signs]
        if shaped:
            for ro in rollouts:
                pen = -float(rng.uniform(0, 0.5))
                ro.reward = RewardOutcome(ro.reward.base_reward, pen,
                                          max(-1.0, ro.reward.base_reward + pen))
        adv = compute_advantages([ro.reward.shaped_reward for ro in rollouts])
        groups.append(GroupBatch(task, rollouts, adv, not adv.degenerate))
    return groups


def perturbed(params, rng, scale):
    return PolicyParams(params.vocab_size, params.context_window, params.feature_map,
                        params.weights + scale * rng.standard_normal(params.weights.shape))


SYM = {s: i for i, s in enumerate(VOCAB.symbols)}


def scripted_snapshot(answer_weights):
    """Bigram policy: '=' -> 'A' -> answer digits (logit per digit) -> 'E'."""
    params = init_params(VOCAB.size, 1, FeatureMap.ONE_HOT_CONCAT)
    w = params.weights
    w[1 + SYM["="], SYM["A"]] = 60.0
    for digit, logit in answer_weights.items():
        w[1 + SYM["A"], SYM[digit]] = logit
    for d in "0123456789":
        w[1 + SYM[d], SYM["E"]] = 60.0
    return snapshot(params)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_instance(rng):
    """(live, ref snapshot, batch) with V=4, k=2 (36 parameters) and drifted ratios."""
    live = random_params(rng, 4, 2)
    ref = snapshot(perturbed(live, rng, 0.4))
    return live, ref, make_random_batch(rng, ref)


# -- independent objective oracle ---------------------------------------------

STOP_GRADIENT = {"REINFORCE", "CISPO", "DISPO"}
PER_RESPONSE = {"REINFORCE", "GRPO"}


def oracle_weight(r, adv, cfg):
    """Stop-gradient weight of the REINFORCE-style objectives."""
    alg = cfg.algorithm.value
    if alg == "REINFORCE":
        return r
    if alg == "CISPO":
        return float(np.clip(r, 1 - cfg.eps_low, 1 + cfg.eps_high))
    lo, hi = ((cfg.eps_plus_low, cfg.eps_plus_high) if adv > 0
              else (cfg.eps_minus_low, cfg.eps_minus_high))
    return float(np.clip(r, 1 - lo, 1 + hi))


def make_oracle(batch, cfg, base_weights, per_response=None):
    """Scalar objective J(weights) over dense features; stop-gradient factors are frozen at ``base_weights``."""
    alg = cfg.algorithm.value
    if per_response is None:
        per_response = alg in PER_RESPONSE
    phis, toks, lp_refs, advs, norms = [], [], [], [], []
    n_groups = len(batch)
    for group in batch:
        G = len(group.rollouts)
        tokens_in_group = sum(len(ro.tokens) for ro in group.rollouts)
        for i, ro in enumerate(group.rollouts):
            adv = group.advantage_set.advantages[i]
            if cfg.correct_only and ro.reward.base_reward < 0:
                continue
            norm = 1 / (n_groups * G * len(ro.tokens)) if per_response else 1 / (n_groups * tokens_in_group)
            for ctx, tok, lp_ref in zip(ro.contexts, ro.tokens, ro.ref_log_probs):
                phis.append(dense_features(ctx, base_weights.shape[1], ro.window, ro.fmap))
                toks.append(tok)
                lp_refs.append(lp_ref)
                advs.append(adv)
                norms.append(norm)
    phi, toks = np.array(phis), np.array(toks)
    lp_ref, adv, norm = np.array(lp_refs), np.array(advs), np.array(norms)
    rows = np.arange(len(toks))

    def token_log_probs(weights):
        return log_softmax(phi @ weights, axis=1)[rows, toks]

    if alg in STOP_GRADIENT:
        r0 = np.exp(token_log_probs(base_weights) - lp_ref)
        frozen = np.array([oracle_weight(r, a, cfg) for r, a in zip(r0, adv)])
        return lambda w: float(np.sum(norm * frozen * adv * token_log_probs(w)))

    def surrogate(w):
        r = np.exp(token_log_probs(w) - lp_ref)
        clipped = np.clip(r, 1 - cfg.eps_low, 1 + cfg.eps_high)
        return float(np.sum(norm * np.minimum(r * adv, clipped * adv)))
    return surrogate


def fd_gradient(fn, w, h=1e-5):
    grad = np.zeros_like(w)
    for idx in np.ndindex(w.shape):
        plus, minus = w.copy(), w.copy()
        plus[idx] += h
        minus[idx] -= h
        grad[idx] = (fn(plus) - fn(minus)) / (2 * h)
    return grad


# -- acceptance summary ---------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
