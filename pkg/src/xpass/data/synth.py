"""Seeded synthetic pass scenes with a rule-defined (hence learnable) end zone.

Each scene is 51 frames at 25 Hz: 50 observed frames plus the pass moment
``t``.  Every player follows a constant-acceleration path; the ball is
dribbled by one attacker, sitting a short, slowly turning offset ahead of
them.  Under the default rule the pass ends in the zone of the attacker
nearest the ball at ``t``.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from xpass.data.types import FPS, N_ENTITIES, N_PLAYERS, WINDOW_FRAMES, SequenceSample
from xpass.zones import PITCH_LENGTH, PITCH_WIDTH, ZoneGrid, get_grid, to_zone

_SCALE = np.array([PITCH_LENGTH, PITCH_WIDTH])
MAX_SPEED = 4.0  # m/s at t
MAX_ACCEL = 1.0  # m/s^2
BALL_OFFSET = (0.2, 0.6)  # metres from the carrier
MIN_SEPARATION = 2.0  # other attackers stay at least this far from the ball at t


def nearest_teammate(scene_t: np.ndarray) -> tuple[float, float]:
    """End point = position of the attacker closest to the ball (first on ties)."""
    d = np.linalg.norm(scene_t[:N_PLAYERS] - scene_t[-1], axis=1)
    return tuple(scene_t[int(np.argmin(d))])


RULES: dict[str, Callable] = {"nearest_teammate": nearest_teammate}


def _paths(rng, n_entities: int, n_frames: int) -> np.ndarray:
    """(n_frames, n_entities, 2) constant-acceleration paths ending inside the pitch."""
    T = (n_frames - 1) / FPS
    end = rng.uniform([1.0, 1.0], [PITCH_LENGTH - 1.0, PITCH_WIDTH - 1.0], size=(n_entities, 2))
    ang = rng.uniform(0, 2 * np.pi, n_entities)
    v = rng.uniform(0, MAX_SPEED, n_entities)[:, None] * np.stack([np.cos(ang), np.sin(ang)], 1)
    acc = rng.uniform(-MAX_ACCEL, MAX_ACCEL, size=(n_entities, 2))
    tau = (np.arange(n_frames) / FPS - T)[:, None, None]  # <= 0, zero at t
    p = end[None] + v[None] * tau + 0.5 * acc[None] * tau ** 2
    return np.clip(p, 0.0, _SCALE)


def _scene(rng) -> np.ndarray:
    n_frames = WINDOW_FRAMES + 1
    while True:
        players = _paths(rng, 2 * N_PLAYERS, n_frames)
        carrier = int(rng.integers(N_PLAYERS))
        r = rng.uniform(*BALL_OFFSET)
        a0 = rng.uniform(0, 2 * np.pi)
        spin = rng.uniform(-1.0, 1.0)  # rad/s
        ang = a0 + spin * (np.arange(n_frames) / FPS)
        ball = players[:, carrier] + r * np.stack([np.cos(ang), np.sin(ang)], 1)
        ball = np.clip(ball, 0.0, _SCALE)
        others = np.delete(players[-1, :N_PLAYERS], carrier, axis=0)
        if np.linalg.norm(others - ball[-1], axis=1).min() >= MIN_SEPARATION:
            return np.concatenate([players, ball[:, None]], axis=1)


def synth_scenes(n: int, seed: int) -> np.ndarray:
    """(n, 51, 23, 2) raw scenes in metres, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    return np.stack([_scene(rng) for _ in range(n)]) if n else np.zeros((0, WINDOW_FRAMES + 1, N_ENTITIES, 2))


def scene_to_sample(scene: np.ndarray, grid: ZoneGrid, rule="nearest_teammate",
                    event_id: str = "") -> SequenceSample:
    fn = RULES[rule] if isinstance(rule, str) else rule
    ex, ey = fn(scene[WINDOW_FRAMES])
    feats = np.clip(scene[:WINDOW_FRAMES] / _SCALE, 0.0, 1.0).reshape(WINDOW_FRAMES, 2 * N_ENTITIES)
    return SequenceSample(feats, np.zeros(0), to_zone(ex, ey, grid), event_id)


def synth_generate(n: int, seed: int, rule="nearest_teammate", grid="coarse") -> list[SequenceSample]:
    if n < 1:
        raise ValueError("n must be >= 1")
    grid = get_grid(grid)
    scenes = synth_scenes(n, seed)
    return [scene_to_sample(s, grid, rule, f"synth-{seed}-{i}") for i, s in enumerate(scenes)]
