"""Binary dataset container.

Layout: ``XPASSDS1`` | u64 LE header length | UTF-8 JSON header |
float32 LE features (N x 50 x 46) | float32 LE context (N x C) |
int32 LE labels (N x 2).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from xpass.data.types import N_FEATURES, WINDOW_FRAMES, SequenceSample
from xpass.data.windows import split_indices
from xpass.zones import DataError, ZoneGrid, get_grid

MAGIC = b"XPASSDS1"


@dataclass
class Dataset:
    samples: list
    grid: ZoneGrid
    splits: dict  # name -> sorted index array
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def split(self, name: str) -> list:
        if name not in self.splits:
            raise KeyError(f"no split {name!r}; have {sorted(self.splits)}")
        return [self.samples[i] for i in self.splits[name]]

    def find(self, event_id: str) -> SequenceSample:
        for s in self.samples:
            if s.event_id == event_id:
                return s
        raise KeyError(f"event {event_id!r} not in dataset")

    def arrays(self, name: str | None = None):
        """(features [N,50,46], context [N,C], labels [N,2]) for a split or all samples."""
        samples = self.samples if name is None else self.split(name)
        return stack_samples(samples, context_dim(self.samples))


def context_dim(samples) -> int:
    return int(samples[0].context.shape[0]) if samples else 0


def stack_samples(samples, c_dim: int | None = None):
    c_dim = context_dim(samples) if c_dim is None else c_dim
    n = len(samples)
    feats = np.zeros((n, WINDOW_FRAMES, N_FEATURES), dtype=np.float32)
    ctx = np.zeros((n, c_dim), dtype=np.float32)
    labels = np.zeros((n, 2), dtype=np.int32)
    for i, s in enumerate(samples):
        feats[i] = s.features
        ctx[i] = s.context
        labels[i] = s.label
    return feats, ctx, labels


def make_dataset(samples, grid, seed: int = 0, splits: dict | None = None, **meta) -> Dataset:
    grid = get_grid(grid)
    if splits is None:
        splits = split_indices(len(samples), seed)
    splits = {k: np.asarray(v, dtype=np.int64) for k, v in splits.items()}
    return Dataset(list(samples), grid, splits, seed, dict(meta))


def write_dataset(path, ds: Dataset) -> None:
    feats, ctx, labels = ds.arrays()
    header = {
        "format": MAGIC.decode(),
        "grid": ds.grid.scheme,
        "n_samples": len(ds.samples),
        "seq_len": WINDOW_FRAMES,
        "n_features": N_FEATURES,
        "context_dim": ctx.shape[1],
        "seed": ds.seed,
        "event_ids": [s.event_id for s in ds.samples],
        "splits": {k: [int(i) for i in v] for k, v in sorted(ds.splits.items())},
        "meta": ds.meta,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(feats.astype("<f4").tobytes())
        fh.write(ctx.astype("<f4").tobytes())
        fh.write(labels.astype("<i4").tobytes())


def read_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC:
        raise DataError(f"{path}: not an XPASSDS1 dataset")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    n, L, F, Cd = header["n_samples"], header["seq_len"], header["n_features"], header["context_dim"]
    off = 16 + hlen
    need = off + 4 * (n * L * F + n * Cd + 2 * n)
    if len(raw) != need:
        raise DataError(f"{path}: expected {need} bytes, found {len(raw)}")
    feats = np.frombuffer(raw, "<f4", n * L * F, off).reshape(n, L, F)
    off += 4 * n * L * F
    ctx = np.frombuffer(raw, "<f4", n * Cd, off).reshape(n, Cd)
    off += 4 * n * Cd
    labels = np.frombuffer(raw, "<i4", 2 * n, off).reshape(n, 2)
    samples = [SequenceSample(feats[i].copy(), ctx[i].copy(), tuple(labels[i]), eid)
               for i, eid in enumerate(header["event_ids"])]
    return Dataset(samples, get_grid(header["grid"]),
                   {k: np.asarray(v, dtype=np.int64) for k, v in header["splits"].items()},
                   header["seed"], header.get("meta", {}))
