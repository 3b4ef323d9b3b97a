from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from xpass.zones import DataError, ZoneLabel

FPS = 25
WINDOW_FRAMES = 50
N_PLAYERS = 11
N_ENTITIES = 2 * N_PLAYERS + 1
N_FEATURES = 2 * N_ENTITIES  # ball z is dropped
BALL_INDEX = 2 * N_PLAYERS


class SampleSkipped(DataError):
    reason = "skipped"


class InsufficientHistory(SampleSkipped):
    reason = "insufficient_history"


class TrackingGap(SampleSkipped):
    reason = "tracking_gap"


@dataclass
class Frame:
    """One tracking snapshot in pitch metres (origin bottom-left)."""

    frame_id: int
    t: float
    home_xy: np.ndarray  # (11, 2)
    away_xy: np.ndarray  # (11, 2)
    ball_xy: np.ndarray  # (2,)
    valid: np.ndarray  # (23,) bool: home 0..10, away 11..21, ball 22
    period: int = 1


@dataclass
class PassEvent:
    event_id: str
    team_id: str
    passer_id: str
    t_event: float
    start_xy: tuple
    end_xy: tuple
    outcome: str = "complete"
    attack_direction: str = "left_to_right"
    period: int = 1
    start_frame: int | None = None


@dataclass
class SequenceSample:
    features: np.ndarray  # (50, 46) float32 in [0, 1]
    context: np.ndarray  # (C,) float32
    label: ZoneLabel
    event_id: str

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        self.context = np.asarray(self.context, dtype=np.float32).reshape(-1)
        self.label = ZoneLabel(int(self.label[0]), int(self.label[1]))
