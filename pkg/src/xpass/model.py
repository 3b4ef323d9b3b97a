"""The pass-destination network.

Frames are embedded (linear projection + sinusoidal positions + optional
match context), a learnable classification token is prepended, and each
encoder stack alternates attention blocks with conv/ELU/max-pool
distilling.  Stack ``s`` sees the most recent ``ceil(seq_len / 2**s)``
frames.  The token outputs of all stacks are concatenated and mapped to
x-zone and y-zone logits.
"""

from __future__ import annotations

import dataclasses
import json
import math
import struct
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from xpass import compute as C
from xpass.attention import PROBSPARSE, AttentionConfig, ConfigError, MultiHeadWeights, multi_head
from xpass.compute import Tensor
from xpass.zones import DataError, ZoneGrid, get_grid

CKPT_MAGIC = b"XPASSCK1"


@dataclass
class ModelConfig:
    d_model: int = 512
    n_heads: int = 8
    n_stacks: int = 2
    blocks_per_stack: int = 3
    grid: str = "coarse"
    input_dim: int = 46
    seq_len: int = 50
    d_ff: int | None = None
    sampling_factor: int = 5
    mode: str = PROBSPARSE
    seed: int = 0
    context_dim: int = 0
    dropout: float = 0.0

    def __post_init__(self):
        if self.d_ff is None:
            self.d_ff = 2 * self.d_model
        if self.blocks_per_stack < 1 or self.n_stacks < 1:
            raise ConfigError("need at least one stack and one block per stack")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        self.attention  # validates heads / mode / factor
        get_grid(self.grid)

    @property
    def zone_grid(self) -> ZoneGrid:
        return get_grid(self.grid)

    @property
    def attention(self) -> AttentionConfig:
        return AttentionConfig(self.d_model, self.n_heads, self.sampling_factor, self.mode)

    def stack_frames(self, s: int) -> int:
        return -(-self.seq_len // (2 ** s))

    def frame_lengths(self, s: int) -> list[int]:
        """Frame-token count entering each block of stack ``s``."""
        n = [self.stack_frames(s)]
        for _ in range(self.blocks_per_stack - 1):
            n.append(C.pooled_length(n[-1]))
        return n

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(0, d, 2)[None, :]
    angle = pos / np.power(10000.0, i / d)
    pe = np.zeros((n, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d // 2])
    return pe


class ModelWeights(OrderedDict):
    """name -> parameter Tensor, in a fixed creation order."""

    def parameters(self) -> list[Tensor]:
        return list(self.values())

    def count(self) -> int:
        return int(sum(p.data.size for p in self.values()))

    def zero_grad(self):
        for p in self.values():
            p.zero_grad()

    def copy(self) -> "ModelWeights":
        return ModelWeights((k, Tensor(v.data.copy(), requires_grad=True, dtype=v.data.dtype))
                            for k, v in self.items())

    def attn(self, prefix: str) -> MultiHeadWeights:
        return MultiHeadWeights(*(self[f"{prefix}.{n}"] for n in ("wq", "wk", "wv", "wo")),
                                *(self[f"{prefix}.{n}"] for n in ("bq", "bk", "bv", "bo")))


def init_weights(config: ModelConfig, dtype=None) -> ModelWeights:
    """Uniform(+-1/sqrt(fan_in)) for every body matrix and bias; LN gain 1; token zero.

    The output heads start at zero, so an untrained model predicts the
    uniform heatmap and its loss sits exactly at chance.
    """
    rng = np.random.default_rng(config.seed)
    dtype = dtype or C.default_dtype()
    D, F = config.d_model, config.d_ff
    grid = config.zone_grid
    w = ModelWeights()

    def uni(name, shape, fan_in):
        b = 1.0 / math.sqrt(fan_in)
        w[name] = Tensor(rng.uniform(-b, b, size=shape), requires_grad=True, dtype=dtype)

    def const(name, shape, value):
        w[name] = Tensor(np.full(shape, value), requires_grad=True, dtype=dtype)

    uni("embed.proj", (config.input_dim, D), config.input_dim)
    const("embed.cls", (D,), 0.0)
    if config.context_dim:
        uni("embed.context", (config.context_dim, D), config.context_dim)
    for s in range(config.n_stacks):
        for b in range(config.blocks_per_stack):
            p = f"s{s}.b{b}"
            const(f"{p}.ln1.g", (D,), 1.0)
            const(f"{p}.ln1.b", (D,), 0.0)
            for n in ("wq", "wk", "wv", "wo"):
                uni(f"{p}.attn.{n}", (D, D), D)
            for n in ("bq", "bk", "bv", "bo"):
                uni(f"{p}.attn.{n}", (D,), D)
            const(f"{p}.ln2.g", (D,), 1.0)
            const(f"{p}.ln2.b", (D,), 0.0)
            uni(f"{p}.ff.w1", (D, F), D)
            uni(f"{p}.ff.b1", (F,), D)
            uni(f"{p}.ff.w2", (F, D), F)
            uni(f"{p}.ff.b2", (D,), F)
            if b < config.blocks_per_stack - 1:
                uni(f"s{s}.d{b}.kernel", (3, D, D), 3 * D)
        const(f"s{s}.ln_f.g", (D,), 1.0)
        const(f"s{s}.ln_f.b", (D,), 0.0)
    H = config.n_stacks * D
    const("head_x.w", (H, grid.nx), 0.0)
    const("head_x.b", (grid.nx,), 0.0)
    const("head_y.w", (H, grid.ny), 0.0)
    const("head_y.b", (grid.ny,), 0.0)
    return w


def zero_heads(weights: ModelWeights) -> None:
    for k in ("head_x.w", "head_x.b", "head_y.w", "head_y.b"):
        weights[k].data[...] = 0.0


# ---- forward pieces ----------------------------------------------------------------


def embed(features, weights: ModelWeights, config: ModelConfig, context=None) -> Tensor:
    """[B, L, F] frames -> [B, L+1, D] tokens with the classification token at row 0."""
    x = features if isinstance(features, Tensor) else Tensor(features, dtype=weights["embed.proj"].dtype)
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape((1,) + x.shape)
    B, L, Fdim = x.shape
    if Fdim != config.input_dim or L > config.seq_len:
        raise ConfigError(f"features {x.shape[1:]} do not fit input_dim={config.input_dim}, "
                          f"seq_len={config.seq_len}")
    D = config.d_model
    pe = sinusoidal_positions(L + 1, D).astype(x.dtype)
    frames = C.linear(x, weights["embed.proj"]) + pe[1:]
    cls = C.add(weights["embed.cls"].reshape(1, 1, D) + pe[:1], np.zeros((B, 1, D), dtype=x.dtype))
    out = C.concat([cls, frames], axis=1)
    if config.context_dim:
        if context is None:
            raise ConfigError("model expects a context vector")
        ctx = context if isinstance(context, Tensor) else Tensor(np.asarray(context).reshape(B, -1), dtype=x.dtype)
        out = out + C.linear(ctx, weights["embed.context"]).reshape(B, 1, D)
    return out[0] if squeeze else out


def distill(x: Tensor, kernel: Tensor) -> Tensor:
    """maxpool(elu(conv1d(frames))) on rows 1..; row 0 (the token) passes through."""
    token, frames = x[..., :1, :], x[..., 1:, :]
    return C.concat([token, C.maxpool1d(C.elu(C.conv1d(frames, kernel)))], axis=-2)


def attention_block(x: Tensor, weights: ModelWeights, prefix: str, config: ModelConfig, rng,
                    reports=None, train_rng=None) -> Tensor:
    h = C.layer_norm(x, weights[f"{prefix}.ln1.g"], weights[f"{prefix}.ln1.b"])
    a = multi_head(h, weights.attn(f"{prefix}.attn"), config.attention, rng, reports)
    x = x + _dropout(a, config.dropout, train_rng)
    h = C.layer_norm(x, weights[f"{prefix}.ln2.g"], weights[f"{prefix}.ln2.b"])
    h = C.elu(C.linear(h, weights[f"{prefix}.ff.w1"], weights[f"{prefix}.ff.b1"]))
    h = C.linear(h, weights[f"{prefix}.ff.w2"], weights[f"{prefix}.ff.b2"])
    return x + _dropout(h, config.dropout, train_rng)


def _dropout(x: Tensor, p: float, rng) -> Tensor:
    if p <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return C.mul(x, keep)


def encoder_stack_forward(x: Tensor, weights: ModelWeights, config: ModelConfig, stack_index: int,
                          seed=0, reports=None, train_rng=None, trace=None) -> Tensor:
    """Run one stack over embedded tokens [B, 1+L, D]; returns the token row [B, D]."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    expected = config.frame_lengths(stack_index)
    for b in range(config.blocks_per_stack):
        if x.shape[-2] - 1 != expected[b]:
            raise AssertionError(f"stack {stack_index} block {b}: {x.shape[-2] - 1} frames, "
                                 f"expected {expected[b]}")
        if trace is not None:
            trace.append((stack_index, b, x.shape[-2] - 1))
        x = attention_block(x, weights, f"s{stack_index}.b{b}", config, rng, reports, train_rng)
        if b < config.blocks_per_stack - 1:
            x = distill(x, weights[f"s{stack_index}.d{b}.kernel"])
    x = C.layer_norm(x, weights[f"s{stack_index}.ln_f.g"], weights[f"s{stack_index}.ln_f.b"])
    return x[..., 0, :]


def forward_batch(features, weights: ModelWeights, config: ModelConfig, context=None, seed=None,
                  reports=None, train_rng=None, trace=None):
    """Logits for a batch: features [B, L, F] -> ([B, nx], [B, ny])."""
    seed = config.seed if seed is None else seed
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    tokens = embed(features, weights, config, context)
    outs = []
    for s in range(config.n_stacks):
        keep = config.stack_frames(s)
        x = tokens if keep == tokens.shape[-2] - 1 else \
            C.concat([tokens[..., :1, :], tokens[..., tokens.shape[-2] - keep:, :]], axis=-2)
        outs.append(encoder_stack_forward(x, weights, config, s, rng, reports, train_rng, trace))
    h = C.concat(outs, axis=-1) if len(outs) > 1 else outs[0]
    lx = C.linear(h, weights["head_x.w"], weights["head_x.b"])
    ly = C.linear(h, weights["head_y.w"], weights["head_y.b"])
    return lx, ly


def forward(sample, weights: ModelWeights, config: ModelConfig, seed=None):
    """Per-sample logits (Tensor[nx], Tensor[ny])."""
    ctx = sample.context[None] if config.context_dim else None
    lx, ly = forward_batch(sample.features[None], weights, config, ctx, seed)
    return lx[0], ly[0]


def loss(logits_x: Tensor, logits_y: Tensor, label) -> Tensor:
    """Summed per-axis cross-entropy; accepts one label or a [B, 2] batch."""
    lab = np.asarray(label, dtype=np.int64).reshape(-1, 2)
    if logits_x.ndim == 1:
        logits_x, logits_y = logits_x.reshape(1, -1), logits_y.reshape(1, -1)
    return C.cross_entropy(logits_x, lab[:, 0]) + C.cross_entropy(logits_y, lab[:, 1])


def heatmap(logits_x, logits_y, grid: ZoneGrid | None = None) -> np.ndarray:
    """Joint cell probabilities as the outer product of the two axis softmaxes.

    Works on single logit vectors (-> [nx, ny]) or batches (-> [B, nx, ny]).
    """
    lx = logits_x.data if isinstance(logits_x, Tensor) else np.asarray(logits_x)
    ly = logits_y.data if isinstance(logits_y, Tensor) else np.asarray(logits_y)
    px = C.softmax_np(lx.astype(np.float64))
    py = C.softmax_np(ly.astype(np.float64))
    if grid is not None and (px.shape[-1], py.shape[-1]) != (grid.nx, grid.ny):
        raise ConfigError(f"logit sizes {px.shape[-1]}x{py.shape[-1]} do not match grid {grid.nx}x{grid.ny}")
    return px[..., :, None] * py[..., None, :]


# ---- checkpoint file ---------------------------------------------------------------


def save_checkpoint(path, config: ModelConfig, weights: ModelWeights, meta: dict | None = None) -> None:
    """XPASSCK1 | u64 LE header length | JSON header | float32 LE parameter blocks."""
    manifest, offset = [], 0
    for name, p in weights.items():
        manifest.append({"name": name, "shape": list(p.shape), "offset": offset})
        offset += 4 * p.data.size
    header = {"format": CKPT_MAGIC.decode(), "config": config.to_dict(), "params": manifest,
              "meta": meta or {}}
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for p in weights.values():
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def load_checkpoint(path):
    """-> (ModelConfig, ModelWeights, meta); weights come back as float32."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != CKPT_MAGIC:
        raise DataError(f"{path}: not an XPASSCK1 checkpoint")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    config = ModelConfig(**header["config"])
    base = 16 + hlen
    weights = ModelWeights()
    for entry in header["params"]:
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(raw, "<f4", n, base + entry["offset"]).reshape(entry["shape"])
        weights[entry["name"]] = Tensor(arr.astype(np.float32), requires_grad=True, dtype=np.float32)
    return config, weights, header.get("meta", {})
