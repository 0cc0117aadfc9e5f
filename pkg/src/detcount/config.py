"""Configuration file loading and per-request override handling.

One JSON document configures everything: a "reward" section for
RewardConfig, a "grpo" section for GRPOConfig, and free-form "env" and
"train" sections consumed by the toy trainer. The DETCOUNT_CONFIG
environment variable supplies a default path when the CLI flag is absent.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path

from .grpo import GRPOConfig
from .rewards import RewardConfig

ENV_CONFIG_VAR = "DETCOUNT_CONFIG"
SECTIONS = ("reward", "grpo", "env", "train")

# Per-request overrides stay shallow: weights and threshold only.
OVERRIDE_KEYS = frozenset(
    {"w1", "w2", "w3", "w4", "match_threshold", "threshold_unit"}
)


@dataclass(frozen=True)
class AppConfig:
    reward: RewardConfig
    grpo: GRPOConfig
    env: dict
    train: dict


def _build(cls, section: dict, name: str):
    if not isinstance(section, dict):
        raise ValueError(f"config section {name!r} must be an object")
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ValueError(f"unknown keys in config section {name!r}: {unknown}")
    return cls(**section)


def reward_config_from_dict(section: dict) -> RewardConfig:
    return _build(RewardConfig, section, "reward")


def grpo_config_from_dict(section: dict) -> GRPOConfig:
    return _build(GRPOConfig, section, "grpo")


def load_config(path: str | os.PathLike | None = None) -> AppConfig:
    """Load a config file, falling back to DETCOUNT_CONFIG, then defaults."""
    if path is None:
        path = os.environ.get(ENV_CONFIG_VAR) or None
    if path is None:
        return AppConfig(RewardConfig(), GRPOConfig(), {}, {})
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ValueError("config root must be a JSON object")
    unknown = sorted(set(data) - set(SECTIONS))
    if unknown:
        raise ValueError(f"unknown config sections: {unknown}")
    env = data.get("env", {})
    train = data.get("train", {})
    if not isinstance(env, dict) or not isinstance(train, dict):
        raise ValueError("config sections 'env' and 'train' must be objects")
    return AppConfig(
        reward=reward_config_from_dict(data.get("reward", {})),
        grpo=grpo_config_from_dict(data.get("grpo", {})),
        env=env,
        train=train,
    )


def apply_reward_overrides(cfg: RewardConfig, overrides: dict) -> RewardConfig:
    """Return cfg with request-scoped fields replaced; other keys rejected."""
    if not overrides:
        return cfg
    unknown = sorted(set(overrides) - OVERRIDE_KEYS)
    if unknown:
        raise ValueError(f"overrides not permitted for: {unknown}")
    return dataclasses.replace(cfg, **overrides)


def parse_threshold_flag(value: str) -> dict:
    """Turn a --threshold flag ("9px" or "0.05") into reward overrides."""
    text = value.strip().lower()
    if text.endswith("px"):
        return {
            "match_threshold": float(text[:-2]),
            "threshold_unit": "pixels",
        }
    return {"match_threshold": float(text), "threshold_unit": "fraction"}
