"""Shaped-reward math for GRPO-style RL plus the unbiased Pass@K estimator.

The verbosity (RV) and cognitive-difficulty (CD) penalties are zero when the
score lies inside its target interval and grow linearly (slope 1) with the
distance to the nearest interval boundary outside it. The total reward adds
the conventional format and accuracy rewards with tunable weights on the two
penalties; setting both weights to zero recovers vanilla GRPO reward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .errors import ContractError


@dataclass(frozen=True)
class RewardConfig:
    """Target score intervals and penalty weights."""

    lo_rv: float = 0.0
    hi_rv: float = 1.0
    lo_cd: float = 0.0
    hi_cd: float = 1.0
    lambda_rv: float = 1.0
    lambda_cd: float = 1.0

    def __post_init__(self):
        if not (self.lo_rv <= self.hi_rv):
            raise ContractError(f"rv interval inverted: {self.lo_rv} > {self.hi_rv}")
        if not (self.lo_cd <= self.hi_cd):
            raise ContractError(f"cd interval inverted: {self.lo_cd} > {self.hi_cd}")
        if self.lambda_rv < 0 or self.lambda_cd < 0:
            raise ContractError("penalty weights must be >= 0")


@dataclass(frozen=True)
class RewardBreakdown:
    r_fmt: float
    r_acc: float
    r_rv: float
    r_cd: float
    lambda_rv: float
    lambda_cd: float
    total: float


def clip(v: float, lo: float, hi: float) -> float:
    if lo > hi:
        raise ContractError(f"clip bounds inverted: {lo} > {hi}")
    return min(max(v, lo), hi)


def _interval_penalty(f: float, lo: float, hi: float) -> float:
    if lo > hi:
        raise ContractError(f"interval inverted: {lo} > {hi}")
    if not (0.0 <= f <= 1.0):
        raise ContractError(f"score must be in [0,1], got {f}")
    return -abs(f - clip(f, lo, hi))


def reward_rv(f_rv: float, lo: float, hi: float) -> float:
    """Verbosity penalty: 0 inside [lo, hi], else minus the distance to the
    nearest boundary."""
    return _interval_penalty(f_rv, lo, hi)


def reward_cd(f_cd: float, lo: float, hi: float) -> float:
    """Cognitive-difficulty penalty, same shape as reward_rv."""
    return _interval_penalty(f_cd, lo, hi)


def total_reward(r_fmt: float, r_acc: float, f_rv: float, f_cd: float,
                 cfg: RewardConfig) -> RewardBreakdown:
    """Combine format, accuracy, and the weighted RV/CD penalties.

    With lambda_rv = lambda_cd = 0 the total is exactly r_fmt + r_acc.
    """
    r_rv = reward_rv(f_rv, cfg.lo_rv, cfg.hi_rv)
    r_cd = reward_cd(f_cd, cfg.lo_cd, cfg.hi_cd)
    total = r_fmt + r_acc + cfg.lambda_rv * r_rv + cfg.lambda_cd * r_cd
    return RewardBreakdown(
        r_fmt=r_fmt, r_acc=r_acc, r_rv=r_rv, r_cd=r_cd,
        lambda_rv=cfg.lambda_rv, lambda_cd=cfg.lambda_cd, total=total,
    )


def group_advantages(rewards: Sequence[float]) -> list[float]:
    """Group-relative advantages: (r - mean) / population std.

    Zero-variance groups yield all-zero advantages. Requires n >= 2.
    """
    n = len(rewards)
    if n < 2:
        raise ContractError(f"group size must be >= 2, got {n}")
    mean = sum(rewards) / n
    var = sum((r - mean) ** 2 for r in rewards) / n
    if var == 0.0:
        return [0.0] * n
    std = math.sqrt(var)
    return [(r - mean) / std for r in rewards]


def pass_at_k(n: int, c: int, k: int) -> float:
    """Unbiased Pass@K estimate from n samples with c correct:
    1 - C(n-c, k) / C(n, k), exact rational arithmetic before the final float.
    """
    if not (0 <= c <= n):
        raise ContractError(f"need 0 <= c <= n, got c={c}, n={n}")
    if not (1 <= k <= n):
        raise ContractError(f"need 1 <= k <= n, got k={k}, n={n}")
    if c == 0:
        return 0.0
    if n - c < k:
        return 1.0
    return float(1 - Fraction(math.comb(n - c, k), math.comb(n, k)))


def format_reward(text: str, open_delim: str = "\\boxed{", close_delim: str = "}") -> float:
    """Reference binary format check: answer enclosed in the expected delimiter."""
    i = text.find(open_delim)
    if i < 0:
        return 0.0
    return 1.0 if text.find(close_delim, i + len(open_delim)) >= 0 else 0.0


def accuracy_reward(answer: str, reference: str) -> float:
    """Reference binary accuracy: exact match after whitespace/case normalization."""
    def norm(s: str) -> str:
        return " ".join(s.strip().lower().split())

    return 1.0 if norm(answer) == norm(reference) else 0.0
