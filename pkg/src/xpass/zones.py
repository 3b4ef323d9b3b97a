"""Pitch discretisation into per-axis zone labels.

Two grids are supported on a 105 x 68 m pitch: ``coarse`` (35 x 34 cells of
3 m x 2 m) and ``fine`` (105 x 68 cells of 1 m x 1 m).  Labels are zero
indexed with the origin at the bottom-left corner of the pitch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

PITCH_LENGTH = 105.0
PITCH_WIDTH = 68.0


class DataError(ValueError):
    """Input data is malformed or unusable."""


class ZoneLabel(NamedTuple):
    zx: int
    zy: int


@dataclass(frozen=True)
class ZoneGrid:
    scheme: str
    nx: int
    ny: int
    pitch_length_m: float = PITCH_LENGTH
    pitch_width_m: float = PITCH_WIDTH

    @property
    def cell_length(self) -> float:
        return self.pitch_length_m / self.nx

    @property
    def cell_width(self) -> float:
        return self.pitch_width_m / self.ny

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny


COARSE = ZoneGrid("coarse", 35, 34)
FINE = ZoneGrid("fine", 105, 68)
GRIDS = {"coarse": COARSE, "fine": FINE}


def get_grid(scheme: str | ZoneGrid) -> ZoneGrid:
    if isinstance(scheme, ZoneGrid):
        return scheme
    try:
        return GRIDS[scheme.lower()]
    except KeyError:
        raise ValueError(f"unknown grid scheme {scheme!r}; expected 'coarse' or 'fine'") from None


def _axis_index(v: float, cell: float, n: int) -> int:
    # cell edges belong to the higher cell; the far edge clamps down
    i = math.floor(v / cell)
    return min(max(i, 0), n - 1)


def to_zone(x_m: float, y_m: float, grid: ZoneGrid) -> ZoneLabel:
    if math.isnan(x_m) or math.isnan(y_m):
        raise DataError(f"NaN coordinate ({x_m}, {y_m})")
    return ZoneLabel(_axis_index(x_m, grid.cell_length, grid.nx),
                     _axis_index(y_m, grid.cell_width, grid.ny))


def zone_center(label: ZoneLabel | tuple, grid: ZoneGrid) -> tuple[float, float]:
    zx, zy = label
    if not (0 <= zx < grid.nx and 0 <= zy < grid.ny):
        raise IndexError(f"zone {tuple(label)} outside {grid.nx}x{grid.ny} grid")
    return (zx + 0.5) * grid.cell_length, (zy + 0.5) * grid.cell_width


def mirror_x(x_m: float) -> float:
    """Reflect an x coordinate so play runs toward increasing x."""
    return PITCH_LENGTH - x_m


def label_pass_end(event, grid: ZoneGrid) -> ZoneLabel:
    """Zone of a pass's end location, after orienting play left-to-right."""
    ex, ey = event.end_xy
    if ex is None or ey is None or not (math.isfinite(ex) and math.isfinite(ey)):
        raise DataError(f"pass {event.event_id} has no end location")
    if event.attack_direction == "right_to_left":
        ex = mirror_x(ex)
    return to_zone(ex, ey, grid)
