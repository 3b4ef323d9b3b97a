"""Readers for the Metrica Sports sample-data CSV layout.

Tracking files carry three header rows (team, jersey number, column names)
followed by ``Period,Frame,Time [s],<x,y per player>...,Ball x,y`` rows.
Event files have one header row with the columns
``Team,Type,Subtype,Period,Start Frame,Start Time [s],End Frame,End Time [s],
From,To,Start X,Start Y,End X,End Y``.

Coordinates are normalised with y pointing down unless a sidecar
``<file>.json`` says ``{"units": "meters"}``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import dataclass

import numpy as np

from xpass.data.types import N_PLAYERS, Frame, PassEvent
from xpass.zones import PITCH_LENGTH, PITCH_WIDTH, DataError

log = logging.getLogger(__name__)


class ParseError(DataError):
    def __init__(self, path, line, msg):
        super().__init__(f"{path}:{line}: {msg}")
        self.line = line


class SchemaError(DataError):
    pass


@dataclass
class FrameFragment:
    """One team's view of a tracking frame: every listed player plus the ball."""

    period: int
    frame_id: int
    t: float
    player_ids: tuple
    xy: np.ndarray  # (n_players, 2) metres, NaN where missing
    ball_xy: np.ndarray  # (2,)


def read_units(path) -> dict:
    """Sidecar unit declaration; defaults to Metrica's normalised, y-down layout."""
    meta = {"units": "normalized", "y_down": True}
    side = str(path) + ".json"
    if os.path.exists(side):
        with open(side) as fh:
            meta.update(json.load(fh))
    if meta["units"] not in ("normalized", "meters"):
        raise SchemaError(f"{side}: units must be 'normalized' or 'meters'")
    return meta


def _to_meters(x, y, meta):
    if meta["units"] == "normalized":
        x = x * PITCH_LENGTH
        y = (1.0 - y) * PITCH_WIDTH if meta.get("y_down", True) else y * PITCH_WIDTH
    return x, y


def _num(cell: str, path, line) -> float:
    cell = cell.strip()
    if cell == "" or cell.lower() == "nan":
        return math.nan
    try:
        return float(cell)
    except ValueError:
        raise ParseError(path, line, f"non-numeric cell {cell!r}") from None


def parse_tracking(path, team_side: str) -> list[FrameFragment]:
    meta = read_units(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 3:
        raise ParseError(path, len(rows) + 1, "missing header rows")
    header = [h.strip() for h in rows[2]]
    if [h.lower() for h in header[:3]] != ["period", "frame", "time [s]"]:
        raise SchemaError(f"{path}: expected Period,Frame,Time [s] leading columns, got {header[:3]}")
    players, ball_col = [], None
    i = 3
    while i < len(header):
        name = header[i]
        if name == "":
            i += 1
            continue
        if name.startswith(f"{team_side}_") or name.startswith("Player"):
            players.append((name, i))
        elif name == "Ball":
            ball_col = i
        else:
            raise SchemaError(f"{path}: unknown player column {name!r}")
        i += 2
    if ball_col is None:
        raise SchemaError(f"{path}: no Ball column")
    ids = tuple(name for name, _ in players)
    frags = []
    for lineno, row in enumerate(rows[3:], start=4):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < ball_col + 2:
            raise ParseError(path, lineno, f"expected {ball_col + 2} cells, found {len(row)}")
        try:
            period, frame_id = int(row[0]), int(row[1])
        except ValueError:
            raise ParseError(path, lineno, "period/frame must be integers") from None
        t = _num(row[2], path, lineno)
        xy = np.empty((len(players), 2))
        for k, (_, col) in enumerate(players):
            xy[k] = _to_meters(_num(row[col], path, lineno), _num(row[col + 1], path, lineno), meta)
        ball = np.array(_to_meters(_num(row[ball_col], path, lineno),
                                   _num(row[ball_col + 1], path, lineno), meta))
        frags.append(FrameFragment(period, frame_id, t, ids, xy, ball))
    return frags


def _assign_slots(frags: list[FrameFragment]) -> np.ndarray:
    """Map each frame's 11 on-pitch slots to player columns.

    Slots start on the first 11 columns that are valid in the first frame
    (header order).  A slot is released only after its player's last valid
    frame, so short dropouts keep their slot; a column that has not played
    yet (a substitute) takes the first released slot once it appears.
    """
    if not frags:
        return np.zeros((0, N_PLAYERS), dtype=int)
    ok = np.stack([~np.isnan(fr.xy).any(axis=1) for fr in frags])
    n = ok.shape[1]
    seen = ok.any(axis=0)
    first = np.where(seen, ok.argmax(axis=0), len(frags))
    last = np.where(seen, len(frags) - 1 - ok[::-1].argmax(axis=0), -1)
    slots = np.full((len(frags), N_PLAYERS), -1, dtype=int)
    current = [-1] * N_PLAYERS
    used: set = set()
    for f_idx in range(len(frags)):
        for s in range(N_PLAYERS):
            if current[s] >= 0 and last[current[s]] < f_idx:
                current[s] = -1
        waiting = [c for c in range(n) if c not in used and first[c] <= f_idx <= last[c]]
        for s in range(N_PLAYERS):
            if current[s] < 0 and waiting:
                current[s] = waiting.pop(0)
                used.add(current[s])
        slots[f_idx] = current
    return slots


def merge_fragments(home: list[FrameFragment], away: list[FrameFragment]) -> list[Frame]:
    """Join home/away fragments by frame id into 23-entity frames."""
    away_by_id = {(f.period, f.frame_id): i for i, f in enumerate(away)}
    pairs = [(h, away[away_by_id[(h.period, h.frame_id)]]) for h in home
             if (h.period, h.frame_id) in away_by_id]
    hs = _assign_slots([p[0] for p in pairs])
    as_ = _assign_slots([p[1] for p in pairs])
    frames = []
    for k, (h, a) in enumerate(pairs):
        def pick(fr, slots):
            out = np.full((N_PLAYERS, 2), np.nan)
            for s, c in enumerate(slots):
                if c >= 0:
                    out[s] = fr.xy[c]
            return out

        hxy, axy = pick(h, hs[k]), pick(a, as_[k])
        ball = h.ball_xy if not np.isnan(h.ball_xy).any() else a.ball_xy
        valid = np.concatenate([~np.isnan(hxy).any(1), ~np.isnan(axy).any(1), [not np.isnan(ball).any()]])
        frames.append(Frame(h.frame_id, h.t, hxy, axy, ball.copy(), valid, h.period))
    return frames


PASS_TYPES = {"PASS"}


def parse_events(path, stats: dict | None = None) -> list[PassEvent]:
    """Pass rows of a Metrica event file, coordinates in metres.

    Non-pass rows are counted under ``stats['discarded']``; pass rows without
    an end location are skipped with a warning and counted under
    ``stats['missing_end']``.
    """
    meta = read_units(path)
    stats = {} if stats is None else stats
    stats.update(pass_rows=0, discarded=0, missing_end=0)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            return []
        col = {name: i for i, name in enumerate(header)}
        need = ["Team", "Type", "Period", "Start Frame", "Start Time [s]", "From",
                "Start X", "Start Y", "End X", "End Y"]
        missing = [n for n in need if n not in col]
        if missing:
            raise SchemaError(f"{path}: missing event columns {missing}")
        events = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                raise ParseError(path, lineno, f"expected {len(header)} cells, found {len(row)}")
            if row[col["Type"]].strip().upper() not in PASS_TYPES:
                stats["discarded"] += 1
                continue
            stats["pass_rows"] += 1
            sx, sy = _to_meters(_num(row[col["Start X"]], path, lineno),
                                _num(row[col["Start Y"]], path, lineno), meta)
            ex, ey = _to_meters(_num(row[col["End X"]], path, lineno),
                                _num(row[col["End Y"]], path, lineno), meta)
            if math.isnan(ex) or math.isnan(ey):
                log.warning("%s:%d: pass without end location skipped", path, lineno)
                stats["missing_end"] += 1
                continue
            try:
                period = int(row[col["Period"]])
                start_frame = int(row[col["Start Frame"]])
            except ValueError:
                raise ParseError(path, lineno, "period/frame must be integers") from None
            subtype = row[col["Subtype"]].strip() if "Subtype" in col else ""
            events.append(PassEvent(
                event_id=f"{os.path.basename(str(path))}:{lineno}",
                team_id=row[col["Team"]].strip(),
                passer_id=row[col["From"]].strip(),
                t_event=_num(row[col["Start Time [s]"]], path, lineno),
                start_xy=(sx, sy),
                end_xy=(ex, ey),
                outcome="incomplete" if "INTERCEPT" in subtype.upper() else "complete",
                period=period,
                start_frame=start_frame,
            ))
    return events


def attack_directions(frames: list[Frame]) -> dict:
    """(team, period) -> attack direction, from mean team x in each period's first frame."""
    out, seen = {}, set()
    for fr in frames:
        if fr.period in seen:
            continue
        seen.add(fr.period)
        home_x = np.nanmean(fr.home_xy[:, 0])
        away_x = np.nanmean(fr.away_xy[:, 0])
        home_ltr = home_x < away_x
        out[("Home", fr.period)] = "left_to_right" if home_ltr else "right_to_left"
        out[("Away", fr.period)] = "right_to_left" if home_ltr else "left_to_right"
    return out
