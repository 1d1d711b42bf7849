"""Linear-softmax autoregressive policy over windowed one-hot context features.

Feature layout (row index into ``weights``):

* ``0`` -- constant bias feature;
* ``1 + j*V + tok`` -- token ``tok`` sits in slot ``j`` of the window, where
  slot 0 is the most recent token;
* ``ONE_HOT_PAIRS`` only: ``1 + k*V + p*V*V + t1*V + t2`` -- the ``p``-th slot
  pair ``(j1 < j2)`` (lexicographic order) holds tokens ``(t1, t2)``.

Slots before the start of the sequence carry no feature.  The logits of a
context are the sum of the weight rows of its active features, so every
quantity here has an exact closed-form gradient.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, ContractViolation, NumericalError


class FeatureMap(str, enum.Enum):
    ONE_HOT_CONCAT = "ONE_HOT_CONCAT"
    ONE_HOT_PAIRS = "ONE_HOT_PAIRS"

    @classmethod
    def parse(cls, value: "FeatureMap | str") -> "FeatureMap":
        try:
            return cls(str(getattr(value, "value", value)).upper())
        except ValueError:
            valid = ", ".join(f.value for f in cls)
            raise ConfigurationError(f"unknown feature map {value!r}; valid: {valid}") from None


def n_features(vocab_size: int, context_window: int, feature_map: FeatureMap) -> int:
    n = 1 + context_window * vocab_size
    if feature_map is FeatureMap.ONE_HOT_PAIRS:
        n += len(_slot_pairs(context_window)) * vocab_size * vocab_size
    return n


@lru_cache(maxsize=None)
def _slot_pairs(context_window: int) -> tuple[tuple[int, int], ...]:
    return tuple(combinations(range(context_window), 2))


def active_features(prefix: Sequence[int], vocab_size: int, context_window: int,
                    feature_map: FeatureMap) -> np.ndarray:
    """Indices of the active (value 1) features for the next-token context."""
    V, k = vocab_size, context_window
    window = [int(t) for t in prefix[-k:]][::-1] if k else []
    idx = [0]
    idx.extend(1 + j * V + tok for j, tok in enumerate(window))
    if feature_map is FeatureMap.ONE_HOT_PAIRS:
        base = 1 + k * V
        n = len(window)
        for p, (j1, j2) in enumerate(_slot_pairs(k)):
            if j2 < n:
                idx.append(base + p * V * V + window[j1] * V + window[j2])
    return np.asarray(idx, dtype=np.intp)


@dataclass
class PolicyParams:
    """Live, mutable policy parameters; ``weights`` has shape (n_features, V)."""

    vocab_size: int
    context_window: int
    feature_map: FeatureMap
    weights: np.ndarray

    def __post_init__(self):
        self.feature_map = FeatureMap.parse(self.feature_map)
        if self.vocab_size < 2 or self.context_window < 1:
            raise ConfigurationError("need vocab_size >= 2 and context_window >= 1")
        expected = (n_features(self.vocab_size, self.context_window, self.feature_map), self.vocab_size)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != expected:
            raise ConfigurationError(f"weights shape {self.weights.shape} != expected {expected}")
        if not np.all(np.isfinite(self.weights)):
            raise NumericalError("policy weights contain non-finite values")

    def features(self, prefix: Sequence[int]) -> np.ndarray:
        return active_features(prefix, self.vocab_size, self.context_window, self.feature_map)

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.vocab_size, self.context_window, self.feature_map, self.weights.copy())


@dataclass(frozen=True)
class PolicySnapshot:
    """Frozen copy of the parameters at rollout time (the reference policy)."""

    vocab_size: int
    context_window: int
    feature_map: FeatureMap
    weights: np.ndarray

    def features(self, prefix: Sequence[int]) -> np.ndarray:
        return active_features(prefix, self.vocab_size, self.context_window, self.feature_map)


def init_params(vocab_size: int, context_window: int = 8,
                feature_map: FeatureMap | str = FeatureMap.ONE_HOT_CONCAT,
                init: str = "zeros", scale: float = 0.01, seed: int = 0) -> PolicyParams:
    """Zero (uniform policy) or small Gaussian initialization."""
    fmap = FeatureMap.parse(feature_map)
    shape = (n_features(vocab_size, context_window, fmap), vocab_size)
    if init == "zeros":
        weights = np.zeros(shape)
    elif init == "gaussian":
        weights = scale * np.random.default_rng(seed).standard_normal(shape)
    else:
        raise ConfigurationError(f"unknown init {init!r}; valid: zeros, gaussian")
    return PolicyParams(vocab_size, context_window, fmap, weights)


def snapshot(params: PolicyParams) -> PolicySnapshot:
    weights = params.weights.copy()
    weights.setflags(write=False)
    return PolicySnapshot(params.vocab_size, params.context_window, params.feature_map, weights)


@dataclass(frozen=True)
class TokenDistribution:
    logits: np.ndarray
    log_probs: np.ndarray
    entropy: float

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)


def distribution_from_features(weights: np.ndarray, feats: np.ndarray) -> TokenDistribution:
    logits = weights[feats].sum(axis=0)
    if not np.all(np.isfinite(logits)):
        raise NumericalError("non-finite logits", {"logits": logits.tolist()})
    top = int(np.argmax(logits))
    shift = logits[top]
    rest = np.exp(logits - shift)
    rest[top] = 0.0
    # log1p keeps near-deterministic log-probabilities accurate
    log_probs = (logits - shift) - np.log1p(rest.sum())
    probs = np.exp(log_probs)
    entropy = float(-np.dot(probs, log_probs))
    return TokenDistribution(logits, log_probs, max(entropy, 0.0))


def distribution(params: PolicyParams | PolicySnapshot, prefix: Sequence[int]) -> TokenDistribution:
    return distribution_from_features(params.weights, params.features(prefix))


def _check_token(params, token: int) -> None:
    if not 0 <= token < params.vocab_size:
        raise ContractViolation(f"token id {token} outside [0, {params.vocab_size})")


def log_prob(params: PolicyParams | PolicySnapshot, prefix: Sequence[int], token: int) -> float:
    _check_token(params, token)
    return float(distribution(params, prefix).log_probs[token])


def token_entropy(params: PolicyParams | PolicySnapshot, prefix: Sequence[int]) -> float:
    """Shannon entropy (nats) of the next-token distribution."""
    return distribution(params, prefix).entropy


def sample_from(dist: TokenDistribution, rng: np.random.Generator) -> int:
    cdf = np.cumsum(dist.probs)
    # side="right" never lands on a zero-probability token
    token = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(token, len(cdf) - 1)


def sample_token(params: PolicyParams | PolicySnapshot, prefix: Sequence[int],
                 rng: np.random.Generator) -> int:
    """Draw the next token at temperature 1.0."""
    return sample_from(distribution(params, prefix), rng)


def grad_log_prob(params: PolicyParams | PolicySnapshot, prefix: Sequence[int], token: int) -> np.ndarray:
    """d log pi(token | prefix) / d weights, same shape as ``weights``."""
    _check_token(params, token)
    feats = params.features(prefix)
    dist = distribution_from_features(params.weights, feats)
    grad = np.zeros_like(params.weights, dtype=np.float64)
    grad[feats] += score_row(dist, token)
    return grad


def score_row(dist: TokenDistribution, token: int) -> np.ndarray:
    """``one_hot(token) - softmax``: the gradient row shared by every active feature."""
    row = -dist.probs
    row[token] += 1.0
    return row


# -- checkpoints -------------------------------------------------------------

_MAGIC = b"DSPOCKPT"
_VERSION = 1
_HEADER = struct.Struct("<8sIIII")  # magic, version, V, k, feature-map code
_FMAP_CODES = {FeatureMap.ONE_HOT_CONCAT: 0, FeatureMap.ONE_HOT_PAIRS: 1}


def save_checkpoint(params: PolicyParams | PolicySnapshot, path: str | Path) -> None:
    """Write a little-endian binary checkpoint: header then float64 weights."""
    path = Path(path)
    header = _HEADER.pack(_MAGIC, _VERSION, params.vocab_size, params.context_window,
                          _FMAP_CODES[params.feature_map])
    try:
        with path.open("wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(params.weights, dtype="<f8").tobytes())
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path: str | Path) -> PolicyParams:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ConfigurationError(f"{path}: truncated checkpoint header")
    magic, version, V, k, code = _HEADER.unpack_from(data)
    if magic != _MAGIC or version != _VERSION:
        raise ConfigurationError(f"{path}: not a version-{_VERSION} policy checkpoint")
    fmap = {v: f for f, v in _FMAP_CODES.items()}.get(code)
    if fmap is None:
        raise ConfigurationError(f"{path}: unknown feature map code {code}")
    weights = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    shape = (n_features(V, k, fmap), V)
    if weights.size != shape[0] * shape[1]:
        raise ConfigurationError(f"{path}: weight count {weights.size} does not match header")
    return PolicyParams(V, k, fmap, weights.reshape(shape))
