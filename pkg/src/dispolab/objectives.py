"""Advantages, importance-weight clipping and gradient assembly for the
REINFORCE / GRPO / DAPO / CISPO / DISPO family.

Every objective's per-token gradient has the form

    norm * m * A * grad log pi(token | context)

where ``A`` is the group-relative advantage, ``norm`` the length
normalization and ``m`` the effective multiplier returned by
:func:`effective_multiplier`.  Gradients are returned in the ASCENT
direction of the objective.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, ContractViolation
from .policy import PolicyParams, distribution_from_features, score_row

if TYPE_CHECKING:
    from .sampler import GroupBatch


class Algorithm(str, enum.Enum):
    REINFORCE = "REINFORCE"
    GRPO = "GRPO"
    DAPO = "DAPO"
    CISPO = "CISPO"
    DISPO = "DISPO"

    @classmethod
    def parse(cls, value: "Algorithm | str") -> "Algorithm":
        try:
            return cls(str(getattr(value, "value", value)).upper())
        except ValueError:
            valid = ", ".join(a.value for a in cls)
            raise ConfigurationError(f"unknown algorithm {value!r}; valid: {valid}") from None


class Regime(str, enum.Enum):
    R1_AMP_POS = "R1_AMP_POS"
    R2_SUP_POS = "R2_SUP_POS"
    R3_AMP_NEG = "R3_AMP_NEG"
    R4_SUP_NEG = "R4_SUP_NEG"
    NEUTRAL = "NEUTRAL"


class Normalization(str, enum.Enum):
    RESPONSE = "response"  # 1 / (G * |o_i|)
    TOKEN = "token"  # 1 / sum_i |o_i|


@dataclass(frozen=True)
class ClipConfig:
    """All clipping knobs.  ``correct_only`` zeroes incorrect-response gradients."""

    algorithm: Algorithm = Algorithm.DISPO
    eps_low: float = 0.2
    eps_high: float = 0.28
    eps_plus_low: float = 0.2
    eps_plus_high: float = 10.0
    eps_minus_low: float = 1.0
    eps_minus_high: float = 100.0
    correct_only: bool = False

    def __post_init__(self):
        object.__setattr__(self, "algorithm", Algorithm.parse(self.algorithm))
        eps = {name: getattr(self, name) for name in
               ("eps_low", "eps_high", "eps_plus_low", "eps_plus_high", "eps_minus_low", "eps_minus_high")}
        for name, value in eps.items():
            if not (math.isfinite(value) and value >= 0):
                raise ConfigurationError(f"{name} must be finite and >= 0, got {value}")
        alg = self.algorithm
        if alg in (Algorithm.GRPO, Algorithm.DAPO, Algorithm.CISPO) and self.eps_low > 1:
            raise ConfigurationError(f"eps_low must be <= 1 for {alg.value}, got {self.eps_low}")
        if alg is Algorithm.GRPO and self.eps_low != self.eps_high:
            raise ConfigurationError("GRPO uses a symmetric window: eps_low must equal eps_high")
        if alg is Algorithm.DISPO and (self.eps_plus_low > 1 or self.eps_minus_low > 1):
            raise ConfigurationError("eps_plus_low and eps_minus_low must be <= 1")

    @classmethod
    def reinforce(cls, **kw) -> "ClipConfig":
        return cls(Algorithm.REINFORCE, **kw)

    @classmethod
    def grpo(cls, eps: float = 0.2, **kw) -> "ClipConfig":
        return cls(Algorithm.GRPO, eps_low=eps, eps_high=eps, **kw)

    @classmethod
    def dapo(cls, eps_low: float = 0.2, eps_high: float = 0.28, **kw) -> "ClipConfig":
        return cls(Algorithm.DAPO, eps_low=eps_low, eps_high=eps_high, **kw)

    @classmethod
    def cispo(cls, eps_low: float = 1.0, eps_high: float = 100.0, **kw) -> "ClipConfig":
        return cls(Algorithm.CISPO, eps_low=eps_low, eps_high=eps_high, **kw)

    @classmethod
    def dispo(cls, eps_plus_low: float = 0.2, eps_plus_high: float = 10.0,
              eps_minus_low: float = 1.0, eps_minus_high: float = 100.0, **kw) -> "ClipConfig":
        return cls(Algorithm.DISPO, eps_plus_low=eps_plus_low, eps_plus_high=eps_plus_high,
                   eps_minus_low=eps_minus_low, eps_minus_high=eps_minus_high, **kw)

    @property
    def default_normalization(self) -> Normalization:
        if self.algorithm in (Algorithm.GRPO, Algorithm.REINFORCE):
            return Normalization.RESPONSE
        return Normalization.TOKEN


# -- advantages ----------------------------------------------------------------

@dataclass(frozen=True)
class AdvantageSet:
    rewards: np.ndarray
    mean: float
    std: float
    advantages: np.ndarray | None
    degenerate: bool


def compute_advantages(rewards: Sequence[float]) -> AdvantageSet:
    """Group-standardized rewards using the population (1/G) standard deviation.

    A group whose rewards are all equal is flagged ``degenerate`` and carries
    no advantages.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.ndim != 1 or rewards.size < 2:
        raise ContractViolation("need a 1-D reward vector with G >= 2")
    mean = float(rewards.mean())
    if np.all(rewards == rewards[0]):
        return AdvantageSet(rewards, mean, 0.0, None, True)
    dev = rewards - mean
    scale = float(np.max(np.abs(dev)))
    # rescaling first keeps tiny spreads from underflowing to zero
    std = scale * float(np.sqrt(np.mean((dev / scale) ** 2)))
    return AdvantageSet(rewards, mean, std, (rewards - mean) / std, False)


# -- clipping ------------------------------------------------------------------

def clip_ratio(r: float, low: float, high: float) -> float:
    """``min(max(r, low), high)``."""
    if low > high:
        raise ConfigurationError(f"clip bounds inverted: low={low} > high={high}")
    return min(max(r, low), high)


def decoupled_ratio(r: float, advantage: float, cfg: ClipConfig) -> float:
    """Sign-dependent clip of the importance weight."""
    if cfg.algorithm is not Algorithm.DISPO:
        raise ContractViolation("decoupled_ratio needs a DISPO config")
    if advantage > 0:
        return clip_ratio(r, 1.0 - cfg.eps_plus_low, 1.0 + cfg.eps_plus_high)
    if advantage < 0:
        return clip_ratio(r, 1.0 - cfg.eps_minus_low, 1.0 + cfg.eps_minus_high)
    raise ContractViolation("advantage must be nonzero")


def effective_multiplier(r: float, advantage: float, cfg: ClipConfig) -> tuple[float, bool]:
    """The scalar ``m`` multiplying ``A * grad log pi`` and whether the token is gated.

    REINFORCE-style objectives keep the (clipped) weight under a stop-gradient
    and never gate.  The GRPO/DAPO min-surrogate has zero derivative once the
    ratio leaves the trust region on the side favoured by the advantage; on
    the boundary itself the unclipped branch is taken.
    """
    if advantage == 0:
        raise ContractViolation("advantage must be nonzero")
    if not r > 0:
        raise ContractViolation(f"importance ratio must be positive, got {r}")
    alg = cfg.algorithm
    if alg is Algorithm.REINFORCE:
        return r, False
    if alg is Algorithm.CISPO:
        return clip_ratio(r, 1.0 - cfg.eps_low, 1.0 + cfg.eps_high), False
    if alg is Algorithm.DISPO:
        return decoupled_ratio(r, advantage, cfg), False
    # GRPO / DAPO
    if advantage > 0 and r > 1.0 + cfg.eps_high:
        return 0.0, True
    if advantage < 0 and r < 1.0 - cfg.eps_low:
        return 0.0, True
    return r, False


def classify_regime(r: float, advantage: float) -> Regime:
    if advantage == 0:
        raise ContractViolation("advantage must be nonzero")
    if r == 1.0:
        return Regime.NEUTRAL
    if advantage > 0:
        return Regime.R1_AMP_POS if r > 1.0 else Regime.R2_SUP_POS
    return Regime.R3_AMP_NEG if r > 1.0 else Regime.R4_SUP_NEG


def profile_gradient_weight(cfg: ClipConfig, advantage_sign: int | str, r_grid: Iterable[float]) -> np.ndarray:
    """Effective multiplier along a grid of importance ratios."""
    sign = _parse_sign(advantage_sign)
    grid = np.asarray(list(r_grid), dtype=np.float64)
    if grid.size and (np.any(grid <= 0) or np.any(np.diff(grid) < 0)):
        raise ContractViolation("r_grid must be strictly positive and sorted")
    return np.array([effective_multiplier(float(r), float(sign), cfg)[0] for r in grid])


def _parse_sign(sign: int | str) -> int:
    if sign in (1, "+", "+1", "pos", "positive"):
        return 1
    if sign in (-1, "-", "-1", "neg", "negative"):
        return -1
    raise ContractViolation(f"advantage sign must be +1 or -1, got {sign!r}")


# -- gradient assembly -----------------------------------------------------------

@dataclass(frozen=True)
class TokenUpdateRecord:
    group: int
    response: int
    position: int
    log_prob_live: float
    log_prob_ref: float
    ratio: float
    advantage: float
    regime: Regime
    effective_multiplier: float
    gradient_gated: bool
    excluded: bool = False  # zero contribution because of correct_only or a zero advantage
    entropy: float = 0.0


def accumulate_gradient(batch: Sequence["GroupBatch"], cfg: ClipConfig, live: PolicyParams,
                        normalization: Normalization | str | None = None,
                        ) -> tuple[np.ndarray, list[TokenUpdateRecord]]:
    """Ascent gradient of the selected objective over a micro-batch of groups.

    Groups are averaged; within a group the token normalization is either
    per-response ``1/(G |o_i|)`` or shared ``1/sum_i |o_i|``.  Tokens are
    visited in (group, response, position) order so the reduction is
    deterministic.  Each rollout's ``live_log_probs`` is refreshed in place.
    """
    norm_kind = Normalization(normalization) if normalization is not None else cfg.default_normalization
    grad = np.zeros_like(live.weights)
    records: list[TokenUpdateRecord] = []
    n_groups = len(batch)
    for g, group in enumerate(batch):
        adv_set = group.advantage_set
        if adv_set.degenerate or not group.kept:
            raise ContractViolation(f"group {g} is degenerate; filter it before the update")
        G = len(group.rollouts)
        total_tokens = sum(ro.length for ro in group.rollouts)
        for i, ro in enumerate(group.rollouts):
            adv = float(adv_set.advantages[i])
            if norm_kind is Normalization.RESPONSE:
                norm = 1.0 / (n_groups * G * ro.length)
            else:
                norm = 1.0 / (n_groups * total_tokens)
            excluded = adv == 0 or (cfg.correct_only and ro.reward.base_reward < 0)
            live_lps = np.empty(ro.length)
            for t in range(ro.length):
                dist = distribution_from_features(live.weights, ro.features[t])
                token = ro.tokens[t]
                lp_live = float(dist.log_probs[token])
                lp_ref = float(ro.ref_log_probs[t])
                live_lps[t] = lp_live
                r = math.exp(lp_live - lp_ref)
                if adv == 0:
                    regime, m, gated = Regime.NEUTRAL, 0.0, False
                else:
                    regime = classify_regime(r, adv)
                    m, gated = effective_multiplier(r, adv, cfg)
                if not (excluded or gated):
                    coef = m * adv * norm
                    grad[ro.features[t]] += coef * score_row(dist, token)
                records.append(TokenUpdateRecord(g, i, t, lp_live, lp_ref, r, adv, regime,
                                                 m, gated, excluded, dist.entropy))
            ro.live_log_probs = live_lps
    return grad, records


def regime_counts(records: Iterable[TokenUpdateRecord]) -> dict[str, int]:
    counts = {reg.value: 0 for reg in Regime}
    for rec in records:
        counts[rec.regime.value] += 1
    return counts
