"""Group-relative advantage normalization and the clipped policy objective.

Policy-representation-agnostic: likelihood ratios and the KL-to-reference
scalar are supplied by the caller, so these functions are plain arithmetic
over a rollout group.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class GRPOConfig:
    group_size: int = 8
    clip_epsilon: float = 0.2
    kl_beta: float = 0.01
    std_floor: float = 1e-8

    def __post_init__(self):
        if self.group_size < 2:
            raise ValueError("group_size must be at least 2")
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ValueError("clip_epsilon must lie in (0, 1)")
        if self.kl_beta < 0.0:
            raise ValueError("kl_beta must be non-negative")
        if not self.std_floor > 0.0:
            raise ValueError("std_floor must be positive")


@dataclass(frozen=True)
class RolloutGroup:
    rewards: tuple[float, ...]
    ratios: tuple[float, ...]
    kl_to_ref: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "rewards", tuple(float(r) for r in self.rewards))
        object.__setattr__(self, "ratios", tuple(float(r) for r in self.ratios))
        if len(self.rewards) != len(self.ratios):
            raise ValueError("rewards and ratios must have the same length")
        if len(self.rewards) < 2:
            raise ValueError("a rollout group needs at least 2 responses")
        if any(r <= 0.0 or not math.isfinite(r) for r in self.ratios):
            raise ValueError("likelihood ratios must be positive and finite")


def group_advantages(rewards: Sequence[float], cfg: GRPOConfig) -> list[float]:
    """Per-response (r - mean)/std with population std; zeros when degenerate."""
    n = len(rewards)
    if n < 2:
        raise ValueError("need at least 2 rewards to normalize")
    mean = sum(rewards) / n
    variance = sum((r - mean) ** 2 for r in rewards) / n
    std = math.sqrt(variance)
    if std < cfg.std_floor:
        return [0.0] * n
    return [(r - mean) / std for r in rewards]


def clipped_surrogate_term(ratio: float, advantage: float, eps: float) -> float:
    if ratio <= 0.0:
        raise ValueError("ratio must be positive")
    clipped = min(max(ratio, 1.0 - eps), 1.0 + eps)
    return min(ratio * advantage, clipped * advantage)


def grpo_objective(group: RolloutGroup, cfg: GRPOConfig) -> float:
    """Mean clipped surrogate over the group minus the KL penalty."""
    advantages = group_advantages(group.rewards, cfg)
    g = len(group.rewards)
    surrogate = (
        sum(
            clipped_surrogate_term(rho, adv, cfg.clip_epsilon)
            for rho, adv in zip(group.ratios, advantages)
        )
        / g
    )
    return surrogate - cfg.kl_beta * group.kl_to_ref
