"""Turn frames + pass events into fixed-length, side-normalised model inputs."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from xpass.data.types import (
    FPS, N_ENTITIES, N_PLAYERS, WINDOW_FRAMES, Frame, InsufficientHistory, PassEvent,
    SampleSkipped, SequenceSample, TrackingGap,
)
from xpass.zones import PITCH_LENGTH, PITCH_WIDTH, ZoneGrid, label_pass_end

log = logging.getLogger(__name__)

MAX_GAP_FRAMES = 10
_SCALE = np.array([PITCH_LENGTH, PITCH_WIDTH])


class UsageError(ValueError):
    pass


def _event_index(frames: list[Frame], event: PassEvent) -> int:
    """Index of the first frame of the event's period at or after t_event."""
    tol = 0.5 / FPS
    for i, fr in enumerate(frames):
        if fr.period == event.period and fr.t >= event.t_event - tol:
            return i
    return len(frames)


def fill_gaps(track: np.ndarray, valid: np.ndarray, max_gap: int = MAX_GAP_FRAMES) -> np.ndarray:
    """Linearly interpolate invalid runs of at most ``max_gap`` frames.

    track: (T, 2); runs touching the window edge hold the nearest valid value.
    Raises TrackingGap for a longer run or an entity with no valid frame.
    """
    T = len(track)
    if not valid.any():
        raise TrackingGap("entity never valid in window")
    out = track.copy()
    idx = np.flatnonzero(valid)
    run = 0
    for i in range(T + 1):
        if i < T and not valid[i]:
            run += 1
            continue
        if run > max_gap:
            raise TrackingGap(f"gap of {run} frames")
        run = 0
    t = np.arange(T)
    for d in range(2):
        out[:, d] = np.interp(t, idx, track[idx, d])
    return out


def extract_window(frames: list[Frame], event: PassEvent, grid: ZoneGrid,
                   context=None) -> SequenceSample:
    """The 50 frames strictly before the pass, possession team first.

    Play is mirrored in x when the possession team attacks right-to-left,
    and the end-zone label is mirrored with it.
    """
    end = _event_index(frames, event)
    start = end - WINDOW_FRAMES
    if start < 0:
        raise InsufficientHistory(f"event {event.event_id}: {end} frames of history")
    win = frames[start:end]
    if any(f.period != event.period for f in win) or \
            win[-1].frame_id - win[0].frame_id != WINDOW_FRAMES - 1:
        raise InsufficientHistory(f"event {event.event_id}: window crosses a break")
    own_home = event.team_id.lower().startswith("home")
    pos = np.empty((WINDOW_FRAMES, N_ENTITIES, 2))
    valid = np.empty((WINDOW_FRAMES, N_ENTITIES), dtype=bool)
    for k, fr in enumerate(win):
        own, opp = (fr.home_xy, fr.away_xy) if own_home else (fr.away_xy, fr.home_xy)
        pos[k, :N_PLAYERS] = own
        pos[k, N_PLAYERS:2 * N_PLAYERS] = opp
        pos[k, -1] = fr.ball_xy
        v_own = fr.valid[:N_PLAYERS] if own_home else fr.valid[N_PLAYERS:2 * N_PLAYERS]
        v_opp = fr.valid[N_PLAYERS:2 * N_PLAYERS] if own_home else fr.valid[:N_PLAYERS]
        valid[k] = np.concatenate([v_own, v_opp, fr.valid[-1:]])
    valid &= ~np.isnan(pos).any(axis=2)
    for e in range(N_ENTITIES):
        pos[:, e] = fill_gaps(pos[:, e], valid[:, e])
    if event.attack_direction == "right_to_left":
        pos[..., 0] = PITCH_LENGTH - pos[..., 0]
    feats = np.clip(pos / _SCALE, 0.0, 1.0).reshape(WINDOW_FRAMES, 2 * N_ENTITIES)
    label = label_pass_end(event, grid)
    ctx = np.zeros(0) if context is None else context
    return SequenceSample(feats, ctx, label, event.event_id)


@dataclass
class IngestStats:
    pass_rows: int = 0
    emitted: int = 0
    missing_end: int = 0
    insufficient_history: int = 0
    tracking_gap: int = 0
    discarded_events: int = 0

    def conserved(self) -> bool:
        return self.pass_rows == (self.emitted + self.missing_end
                                  + self.insufficient_history + self.tracking_gap)


def build_samples(frames: list[Frame], events: list[PassEvent], grid: ZoneGrid,
                  stats: IngestStats | None = None) -> list[SequenceSample]:
    stats = stats if stats is not None else IngestStats(pass_rows=len(events))
    out = []
    for ev in events:
        try:
            out.append(extract_window(frames, ev, grid))
        except SampleSkipped as exc:
            setattr(stats, exc.reason, getattr(stats, exc.reason) + 1)
            log.info("skipped %s: %s", ev.event_id, exc)
    stats.emitted += len(out)
    return out


def split_sizes(n: int, fractions=(0.7, 0.1, 0.2)) -> tuple[int, int, int]:
    n_train = int(round(n * fractions[0]))
    n_val = int(round(n * fractions[1]))
    return n_train, n_val, n - n_train - n_val


def split_indices(n: int, seed: int) -> dict:
    if n < 10:
        raise UsageError(f"need at least 10 samples to split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    a, b, _ = split_sizes(n)
    return {"train": np.sort(perm[:a]), "val": np.sort(perm[a:a + b]), "test": np.sort(perm[a + b:])}


def split_dataset(samples: list, seed: int):
    """Seeded 70/10/20 train/val/test partition; order within a split follows the input."""
    idx = split_indices(len(samples), seed)
    return tuple([samples[i] for i in idx[k]] for k in ("train", "val", "test"))
