"""Client SDK for the detcount scoring service: spawn or connect, then
score rollout groups synchronously while a reader thread handles the wire."""

from .session import (
    ClientSession,
    ScoredResponse,
    ScoreTimeout,
    ScoringError,
    SessionError,
)

__all__ = [
    "ClientSession",
    "ScoredResponse",
    "ScoreTimeout",
    "ScoringError",
    "SessionError",
]
