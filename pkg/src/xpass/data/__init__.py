from xpass.data.types import (
    BALL_INDEX, FPS, N_ENTITIES, N_FEATURES, N_PLAYERS, WINDOW_FRAMES,
    Frame, InsufficientHistory, PassEvent, SampleSkipped, SequenceSample, TrackingGap,
)
from xpass.data.metrica import merge_fragments, parse_events, parse_tracking, attack_directions
from xpass.data.windows import (
    IngestStats, UsageError, build_samples, extract_window, fill_gaps, split_dataset, split_indices,
)
from xpass.data.synth import synth_generate, synth_scenes
from xpass.data.store import Dataset, make_dataset, read_dataset, stack_samples, write_dataset
from xpass.data.ingest import ingest

__all__ = [
    "BALL_INDEX", "FPS", "N_ENTITIES", "N_FEATURES", "N_PLAYERS", "WINDOW_FRAMES",
    "Frame", "PassEvent", "SequenceSample", "SampleSkipped", "InsufficientHistory", "TrackingGap",
    "parse_tracking", "parse_events", "merge_fragments", "attack_directions",
    "IngestStats", "UsageError", "build_samples", "extract_window", "fill_gaps",
    "split_dataset", "split_indices", "synth_generate", "synth_scenes",
    "Dataset", "make_dataset", "read_dataset", "stack_samples", "write_dataset", "ingest",
]
