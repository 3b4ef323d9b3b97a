"""Writers for small matches in the public Metrica sample-data layout.

``write_match`` produces a deterministic 220-frame, single-period match with
a known outcome for every pass row (see PASSES).
"""

import csv
import os

import numpy as np

N_FRAMES = 220
HOME_COLS = 14  # 11 starters + 3 bench players
AWAY_COLS = 11
SUB_FRAME = 120  # home column 4 is replaced by column 11 from here on
LONG_GAP = range(170, 185)  # away column 2 missing for 15 frames
SHORT_GAP = range(120, 125)  # home column 1 missing for 5 frames

# (team, start frame, end x/y normalised or None, expected outcome)
PASSES = [
    ("Home", 100, (0.70, 0.30), "emitted"),
    ("Home", 30, (0.40, 0.60), "insufficient_history"),
    ("Away", 160, (0.20, 0.50), "emitted"),
    ("Home", 200, (0.60, 0.40), "tracking_gap"),
    ("Away", 140, None, "missing_end"),
]
OTHER_EVENTS = [("Home", "SET PIECE", 5), ("Away", "BALL LOST", 110), ("Home", "CHALLENGE", 150)]


def _tracks(seed=3):
    rng = np.random.default_rng(seed)
    t = np.arange(N_FRAMES)[:, None] / 25.0
    home0 = np.column_stack([rng.uniform(0.05, 0.45, HOME_COLS), rng.uniform(0.05, 0.95, HOME_COLS)])
    away0 = np.column_stack([rng.uniform(0.55, 0.95, AWAY_COLS), rng.uniform(0.05, 0.95, AWAY_COLS)])
    hv = rng.uniform(-0.005, 0.005, (HOME_COLS, 2))
    av = rng.uniform(-0.005, 0.005, (AWAY_COLS, 2))
    home = home0[None] + hv[None] * t[:, :, None]
    away = away0[None] + av[None] * t[:, :, None]
    ball = home[:, 9] + 0.004
    home[:, 11:] = np.nan
    home[SUB_FRAME:, 11] = home[SUB_FRAME:, 4]
    home[SUB_FRAME:, 4] = np.nan
    home[list(SHORT_GAP), 1] = np.nan
    away[list(LONG_GAP), 2] = np.nan
    return home, away, ball


def _cell(v):
    return "NaN" if np.isnan(v) else f"{v:.6f}"


def write_tracking(path, side, xy, ball):
    n = xy.shape[1]
    names = [f"Player{k + 1 if side == 'Home' else k + 15}" for k in range(n)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["", "", ""] + sum([[side, ""] for _ in names], []) + ["", ""])
        w.writerow(["", "", ""] + sum([[name[6:], ""] for name in names], []) + ["", ""])
        w.writerow(["Period", "Frame", "Time [s]"] + sum([[name, ""] for name in names], []) + ["Ball", ""])
        for f in range(N_FRAMES):
            row = ["1", str(f + 1), f"{(f + 1) / 25:.2f}"]
            for k in range(n):
                row += [_cell(xy[f, k, 0]), _cell(xy[f, k, 1])]
            w.writerow(row + [_cell(ball[f, 0]), _cell(ball[f, 1])])


def write_events(path):
    rows = []
    for team, frame, end, _ in PASSES:
        ex, ey = ("NaN", "NaN") if end is None else (f"{end[0]:.4f}", f"{end[1]:.4f}")
        rows.append((frame, [team, "PASS", "", "1", str(frame), f"{frame / 25:.2f}", str(frame + 20),
                             f"{(frame + 20) / 25:.2f}", "Player10", "Player8", "0.3", "0.5", ex, ey]))
    for team, kind, frame in OTHER_EVENTS:
        rows.append((frame, [team, kind, "", "1", str(frame), f"{frame / 25:.2f}", str(frame),
                             f"{frame / 25:.2f}", "Player3", "", "0.5", "0.5", "", ""]))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["Team", "Type", "Subtype", "Period", "Start Frame", "Start Time [s]", "End Frame",
                    "End Time [s]", "From", "To", "Start X", "Start Y", "End X", "End Y"])
        for _, r in sorted(rows, key=lambda p: p[0]):
            w.writerow(r)


def write_match(directory):
    """Write home/away tracking and events; returns the three paths."""
    home, away, ball = _tracks()
    paths = [os.path.join(directory, n) for n in
             ("Sample_Game_1_RawTrackingData_Home_Team.csv",
              "Sample_Game_1_RawTrackingData_Away_Team.csv",
              "Sample_Game_1_RawEventsData.csv")]
    write_tracking(paths[0], "Home", home, ball)
    write_tracking(paths[1], "Away", away, ball)
    write_events(paths[2])
    return paths


def expected_counts():
    counts = {"pass_rows": len(PASSES), "emitted": 0, "missing_end": 0,
              "insufficient_history": 0, "tracking_gap": 0, "discarded_events": len(OTHER_EVENTS)}
    for *_, outcome in PASSES:
        counts[outcome] += 1
    return counts
