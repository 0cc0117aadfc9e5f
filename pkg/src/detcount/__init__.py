"""Verifiable rewards, group-relative policy optimization math, and
evaluation metrics for detect-to-count responses, plus a line-oriented
scoring service for training loops."""

from .config import AppConfig, apply_reward_overrides, load_config
from .grpo import GRPOConfig, RolloutGroup, group_advantages, grpo_objective
from .matching import CostMatrix, FORBIDDEN, hungarian_min_cost, match_points
from .metrics import (
    GroundTruthRecord,
    MetricsReport,
    PredictionRecord,
    average_precision_recall,
    evaluate_dataset,
    game,
    mae_and_match_rate,
    miou,
)
from .parsing import (
    Detection,
    FormatReport,
    ParsedResponse,
    parse_response,
    serialize_response,
)
from .rewards import (
    RewardBreakdown,
    RewardConfig,
    RewardContext,
    score_text,
    total_reward,
)
from .service import score_request, serve_stream
from .toyenv import EnvParams, TrainParams, run_ablation, train_toy_grpo

__all__ = [
    "AppConfig",
    "CostMatrix",
    "Detection",
    "EnvParams",
    "FORBIDDEN",
    "FormatReport",
    "GRPOConfig",
    "GroundTruthRecord",
    "MetricsReport",
    "ParsedResponse",
    "PredictionRecord",
    "RewardBreakdown",
    "RewardConfig",
    "RewardContext",
    "RolloutGroup",
    "TrainParams",
    "apply_reward_overrides",
    "average_precision_recall",
    "evaluate_dataset",
    "game",
    "group_advantages",
    "grpo_objective",
    "hungarian_min_cost",
    "load_config",
    "mae_and_match_rate",
    "match_points",
    "miou",
    "parse_response",
    "run_ablation",
    "score_request",
    "score_text",
    "serialize_response",
    "serve_stream",
    "total_reward",
    "train_toy_grpo",
]
