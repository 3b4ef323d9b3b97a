from __future__ import annotations

import dataclasses

from xpass.data.metrica import attack_directions, merge_fragments, parse_events, parse_tracking
from xpass.data.store import make_dataset
from xpass.data.windows import IngestStats, build_samples
from xpass.zones import get_grid


def ingest(tracking_home, tracking_away, events_path, grid="coarse", seed: int = 0):
    """Parse a Metrica-format match into a Dataset plus pass-accounting stats."""
    grid = get_grid(grid)
    frames = merge_fragments(parse_tracking(tracking_home, "Home"),
                             parse_tracking(tracking_away, "Away"))
    ev_stats: dict = {}
    events = parse_events(events_path, ev_stats)
    dirs = attack_directions(frames)
    events = [dataclasses.replace(e, attack_direction=dirs.get((e.team_id, e.period), e.attack_direction))
              for e in events]
    stats = IngestStats(pass_rows=ev_stats.get("pass_rows", 0),
                        missing_end=ev_stats.get("missing_end", 0),
                        discarded_events=ev_stats.get("discarded", 0))
    samples = build_samples(frames, events, grid, stats)
    ds = make_dataset(samples, grid, seed) if len(samples) >= 10 else \
        make_dataset(samples, grid, seed, splits={"train": [], "val": [], "test": list(range(len(samples)))})
    ds.meta["ingest"] = dataclasses.asdict(stats)
    return ds, stats
