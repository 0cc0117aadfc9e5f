"""Advantage normalization and clipped-objective fixtures and properties."""

import math
import random

import pytest

from detcount.grpo import (
    GRPOConfig,
    RolloutGroup,
    clipped_surrogate_term,
    group_advantages,
    grpo_objective,
)

CFG = GRPOConfig()


def test_advantages_fixture_three():
    adv = group_advantages([1.0, 2.0, 3.0], CFG)
    assert adv[1] == 0.0
    assert adv[0] == pytest.approx(-1.2247, abs=1e-4)
    assert adv[2] == pytest.approx(1.2247, abs=1e-4)


def test_advantages_fixture_degenerate():
    assert group_advantages([5.0, 5.0, 5.0], CFG) == [0.0, 0.0, 0.0]


def test_advantages_fixture_pair():
    assert group_advantages([0.0, 4.0], CFG) == [-1.0, 1.0]


def test_advantages_reject_short_groups():
    with pytest.raises(ValueError):
        group_advantages([1.0], CFG)
    with pytest.raises(ValueError):
        group_advantages([], CFG)


def test_advantages_normalized_for_random_groups():
    rng = random.Random(31)
    for _ in range(1000):
        rewards = [rng.uniform(-5, 10) for _ in range(8)]
        if max(rewards) - min(rewards) < 1e-6:
            continue
        adv = group_advantages(rewards, CFG)
        mean = sum(adv) / len(adv)
        std = math.sqrt(sum((a - mean) ** 2 for a in adv) / len(adv))
        assert abs(mean) <= 1e-9
        assert abs(std - 1.0) <= 1e-6


def test_advantages_scale_shift_invariant():
    rng = random.Random(37)
    for _ in range(200):
        rewards = [rng.uniform(0, 9) for _ in range(6)]
        if max(rewards) - min(rewards) < 1e-9:
            continue
        a, b = rng.uniform(0.1, 5.0), rng.uniform(-10, 10)
        base = group_advantages(rewards, CFG)
        scaled = group_advantages([a * r + b for r in rewards], CFG)
        for x, y in zip(base, scaled):
            assert x == pytest.approx(y, abs=1e-9)


def test_surrogate_fixtures():
    assert clipped_surrogate_term(1.0, 0.7, 0.2) == pytest.approx(0.7, abs=1e-12)
    assert clipped_surrogate_term(1.5, 1.0, 0.2) == pytest.approx(1.2, abs=1e-12)
    assert clipped_surrogate_term(0.5, -1.0, 0.2) == pytest.approx(-0.8, abs=1e-12)


def test_surrogate_rejects_nonpositive_ratio():
    with pytest.raises(ValueError):
        clipped_surrogate_term(0.0, 1.0, 0.2)


def test_surrogate_bounds():
    rng = random.Random(41)
    for _ in range(500):
        ratio = rng.uniform(0.01, 3.0)
        adv = rng.uniform(-3, 3)
        term = clipped_surrogate_term(ratio, adv, 0.2)
        assert abs(term) <= max(ratio, 1.2) * abs(adv) + 1e-12
        if adv > 0:
            assert term <= ratio * adv + 1e-12


def test_objective_zero_when_uninformative():
    group = RolloutGroup(rewards=(3.0, 3.0, 3.0), ratios=(1.0, 1.0, 1.0))
    assert grpo_objective(group, CFG) == 0.0


def test_objective_symmetric_pair():
    group = RolloutGroup(rewards=(0.0, 4.0), ratios=(1.0, 1.0))
    cfg = GRPOConfig(kl_beta=0.0)
    assert grpo_objective(group, cfg) == 0.0


def test_objective_worked_example():
    group = RolloutGroup(rewards=(4.0, 0.0), ratios=(1.5, 0.5), kl_to_ref=1.0)
    cfg = GRPOConfig(kl_beta=0.1)
    assert grpo_objective(group, cfg) == pytest.approx(0.1, abs=1e-12)


def test_objective_mean_advantage_when_ratios_one():
    rng = random.Random(43)
    cfg = GRPOConfig(kl_beta=0.0)
    for _ in range(100):
        rewards = tuple(rng.uniform(0, 9) for _ in range(8))
        group = RolloutGroup(rewards=rewards, ratios=(1.0,) * 8)
        assert grpo_objective(group, cfg) == pytest.approx(0.0, abs=1e-9)


def test_objective_uses_actual_group_length():
    # Group of 4 under a config declaring G=8: mean is over 4.
    group = RolloutGroup(rewards=(0.0, 4.0, 0.0, 4.0), ratios=(1.0,) * 4)
    assert grpo_objective(group, GRPOConfig(kl_beta=0.0)) == 0.0


def test_kl_penalty_scales_linearly():
    group = RolloutGroup(rewards=(1.0, 2.0), ratios=(1.0, 1.0), kl_to_ref=2.0)
    lo = grpo_objective(group, GRPOConfig(kl_beta=0.1))
    hi = grpo_objective(group, GRPOConfig(kl_beta=0.3))
    assert lo - hi == pytest.approx(0.4, abs=1e-12)


def test_rollout_group_validation():
    with pytest.raises(ValueError):
        RolloutGroup(rewards=(1.0, 2.0), ratios=(1.0,))
    with pytest.raises(ValueError):
        RolloutGroup(rewards=(1.0,), ratios=(1.0,))
    with pytest.raises(ValueError):
        RolloutGroup(rewards=(1.0, 2.0), ratios=(1.0, 0.0))
    with pytest.raises(ValueError):
        RolloutGroup(rewards=(1.0, 2.0), ratios=(1.0, math.inf))


def test_grpo_config_validation():
    with pytest.raises(ValueError):
        GRPOConfig(group_size=1)
    with pytest.raises(ValueError):
        GRPOConfig(clip_epsilon=0.0)
    with pytest.raises(ValueError):
        GRPOConfig(clip_epsilon=1.0)
    with pytest.raises(ValueError):
        GRPOConfig(kl_beta=-0.1)
