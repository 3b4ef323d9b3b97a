"""Training loop, evaluation metrics and counterfactual movement analysis."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from xpass import compute as C
from xpass.attention import ConfigError
from xpass.data.store import Dataset, stack_samples
from xpass.data.types import BALL_INDEX, N_ENTITIES
from xpass.model import ModelConfig, ModelWeights, forward_batch, heatmap, init_weights, loss
from xpass.zones import PITCH_LENGTH, PITCH_WIDTH, get_grid

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 32
    max_epochs: int = 30
    patience: int = 5
    seed: int = 0
    grid: str = "coarse"
    eval_batch_size: int = 256

    def __post_init__(self):
        if self.patience < 1 or self.batch_size < 1:
            raise ConfigError("patience and batch_size must be >= 1")


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    def to_dict(self) -> dict:
        return {"train_loss": [float(v) for v in self.train_loss],
                "val_loss": [float(v) for v in self.val_loss],
                "best_epoch": self.best_epoch, "stopped_early": self.stopped_early}


def _as_arrays(split):
    if isinstance(split, tuple):
        return split
    return stack_samples(split)


def predict_logits(weights: ModelWeights, config: ModelConfig, features, context=None,
                   batch_size: int = 256, seed=None):
    """Tape-free logits for a whole array of samples, in fixed-size chunks."""
    lxs, lys = [], []
    with C.no_grad():
        for i in range(0, len(features), batch_size):
            ctx = None if context is None or not config.context_dim else context[i:i + batch_size]
            lx, ly = forward_batch(features[i:i + batch_size], weights, config, ctx, seed)
            lxs.append(lx.data)
            lys.append(ly.data)
    if not lxs:
        grid = config.zone_grid
        return np.zeros((0, grid.nx)), np.zeros((0, grid.ny))
    return np.concatenate(lxs), np.concatenate(lys)


def mean_cel(lx: np.ndarray, ly: np.ndarray, labels: np.ndarray) -> float:
    """Per-sample x-axis plus y-axis cross-entropy, averaged (float64)."""
    rows = np.arange(len(labels))
    ax = -C.log_softmax_np(lx.astype(np.float64))[rows, labels[:, 0]]
    ay = -C.log_softmax_np(ly.astype(np.float64))[rows, labels[:, 1]]
    return float(np.mean(ax + ay))


def train(dataset, model_config: ModelConfig, train_config: TrainConfig,
          weights: ModelWeights | None = None, progress=None):
    """Adam on shuffled mini-batches with patience-based early stopping.

    ``dataset`` is a Dataset (its train/val splits are used) or a
    ``(train_samples, val_samples)`` pair.  Returns the weights of the best
    validation epoch and the History.
    """
    if isinstance(dataset, Dataset):
        if dataset.grid.scheme != model_config.grid:
            raise ConfigError(f"dataset grid {dataset.grid.scheme} != model grid {model_config.grid}")
        tr, va = dataset.split("train"), dataset.split("val")
    else:
        tr, va = dataset
    if not len(tr) or not len(va):
        raise ValueError("training needs non-empty train and validation splits")
    xf, xc, xl = _as_arrays(tr)
    vf, vc, vl = _as_arrays(va)
    weights = init_weights(model_config) if weights is None else weights
    opt = C.Adam(weights.parameters(), lr=train_config.lr, beta1=train_config.beta1,
                 beta2=train_config.beta2)
    hist = History()
    best_val, best_weights, waited = math.inf, weights.copy(), 0
    n, bs = len(xf), train_config.batch_size
    for epoch in range(train_config.max_epochs):
        order = np.random.default_rng([train_config.seed, epoch]).permutation(n)
        total = 0.0
        for i in range(0, n, bs):
            idx = order[i:i + bs]
            step_rng = np.random.default_rng([train_config.seed, epoch, i])
            ctx = xc[idx] if model_config.context_dim else None
            try:
                lx, ly = forward_batch(xf[idx], weights, model_config, ctx, seed=step_rng,
                                       train_rng=step_rng if model_config.dropout else None)
                L = loss(lx, ly, xl[idx])
            except C.NonFiniteError as exc:
                raise TrainingError(f"non-finite forward at epoch {epoch}, batch ids {idx.tolist()}: {exc}") from exc
            if not np.isfinite(L.data):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch ids {idx.tolist()}, "
                                    f"max logit {max(np.abs(lx.data).max(), np.abs(ly.data).max())}")
            opt.zero_grad()
            try:
                L.backward()
                opt.step()
            except C.NonFiniteError as exc:
                raise TrainingError(f"non-finite gradient at epoch {epoch}, batch ids {idx.tolist()}: {exc}") from exc
            total += float(L.data) * len(idx)
        hist.train_loss.append(total / n)
        vlx, vly = predict_logits(weights, model_config, vf, vc, train_config.eval_batch_size)
        val = mean_cel(vlx, vly, vl)
        hist.val_loss.append(val)
        log.info("epoch %d train %.4f val %.4f", epoch, hist.train_loss[-1], val)
        if progress:
            progress(epoch, hist.train_loss[-1], val)
        if val < best_val:
            best_val, best_weights, waited = val, weights.copy(), 0
            hist.best_epoch = epoch
        else:
            waited += 1
            if waited >= train_config.patience:
                hist.stopped_early = True
                break
    return best_weights, hist


# ---- metrics --------------------------------------------------------------------------


def top_k_accuracy(probabilities, labels, k: int) -> float:
    """Share of rows whose true index is among the k most probable.

    Ties rank the lower index first.
    """
    p = np.asarray(probabilities)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if k < 1 or k > p.shape[-1]:
        raise ValueError(f"k={k} outside [1, {p.shape[-1]}]")
    if len(labels) == 0:
        return 0.0
    rows = np.arange(len(labels))
    pt = p[rows, labels][:, None]
    cols = np.arange(p.shape[-1])[None, :]
    rank = (p > pt).sum(axis=1) + ((p == pt) & (cols < labels[:, None])).sum(axis=1)
    return float(np.mean(rank < k))


@dataclass
class EvalReport:
    cel: float
    n: int
    top_x: dict
    top_y: dict
    top_joint: dict
    per_zone_x: dict = field(default_factory=dict)  # true x-zone -> (count, top-1 hits)
    per_zone_y: dict = field(default_factory=dict)

    def lines(self) -> list[str]:
        out = [f"cel={self.cel:.6f}", f"n={self.n}"]
        for name, d in (("x", self.top_x), ("y", self.top_y), ("joint", self.top_joint)):
            for k in (1, 3, 5):
                out.append(f"top{k}_{name}={d[k]:.6f}")
        return out

    def table(self) -> str:
        rows = [f"{'axis':<6}{'top-1':>10}{'top-3':>10}{'top-5':>10}"]
        for name, d in (("x", self.top_x), ("y", self.top_y), ("joint", self.top_joint)):
            rows.append(f"{name:<6}" + "".join(f"{d[k]:>10.4f}" for k in (1, 3, 5)))
        rows.append(f"CEL {self.cel:.4f} over {self.n} samples")
        return "\n".join(rows)


def _per_zone(probs, labels, n):
    hits = probs.argmax(axis=1) == labels
    return {int(z): (int((labels == z).sum()), int(hits[labels == z].sum()))
            for z in range(n) if (labels == z).any()}


def report_from_logits(lx, ly, labels, grid) -> EvalReport:
    grid = get_grid(grid)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1, 2)
    px = C.softmax_np(lx.astype(np.float64))
    py = C.softmax_np(ly.astype(np.float64))
    joint = heatmap(lx, ly).reshape(len(labels), -1)
    cells = labels[:, 0] * grid.ny + labels[:, 1]
    return EvalReport(
        cel=mean_cel(lx, ly, labels), n=len(labels),
        top_x={k: top_k_accuracy(px, labels[:, 0], k) for k in (1, 3, 5)},
        top_y={k: top_k_accuracy(py, labels[:, 1], k) for k in (1, 3, 5)},
        top_joint={k: top_k_accuracy(joint, cells, k) for k in (1, 3, 5)},
        per_zone_x=_per_zone(px, labels[:, 0], grid.nx),
        per_zone_y=_per_zone(py, labels[:, 1], grid.ny),
    )


def evaluate(checkpoint, split, grid=None) -> EvalReport:
    """Metrics of ``checkpoint`` = (ModelConfig, ModelWeights) on a list of samples.

    ``grid`` names the dataset's grid and must match the model's.
    """
    config, weights = checkpoint[:2]
    if grid is not None and get_grid(grid).scheme != config.grid:
        raise ConfigError(f"dataset grid {get_grid(grid).scheme} != model grid {config.grid}")
    if not len(split):
        raise ValueError("cannot evaluate an empty split")
    f, c, labels = _as_arrays(split)
    lx, ly = predict_logits(weights, config, f, c)
    return report_from_logits(lx, ly, labels, config.grid)


# ---- counterfactual movement ------------------------------------------------------------


def js_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """Jensen-Shannon divergence in nats; bounded by ln 2."""
    p = np.asarray(p, dtype=np.float64).ravel()
    q = np.asarray(q, dtype=np.float64).ravel()
    m = 0.5 * (p + q)

    def kl(a):
        nz = a > 0
        return float(np.sum(a[nz] * np.log(a[nz] / m[nz])))

    return 0.5 * kl(p) + 0.5 * kl(q)


def displace(features: np.ndarray, entity_index: int, dx: float, dy: float) -> np.ndarray:
    """Rigidly shift one entity's whole trajectory by (dx, dy) metres, clamped to the pitch."""
    if not 0 <= entity_index < N_ENTITIES:
        raise ValueError(f"entity index {entity_index} outside [0, {N_ENTITIES})")
    if entity_index == BALL_INDEX:
        raise ValueError("the ball cannot be displaced: its path defines the event")
    out = np.array(features, dtype=np.float32, copy=True)
    out[:, 2 * entity_index] = np.clip(out[:, 2 * entity_index] + dx / PITCH_LENGTH, 0.0, 1.0)
    out[:, 2 * entity_index + 1] = np.clip(out[:, 2 * entity_index + 1] + dy / PITCH_WIDTH, 0.0, 1.0)
    return out


def counterfactual_diff(checkpoint, sample, entity_index: int, displacement):
    """(original heatmap, displaced heatmap, JS divergence) for one entity's shifted path."""
    config, weights = checkpoint[:2]
    dx, dy = displacement
    moved = displace(sample.features, entity_index, dx, dy)
    ctx = sample.context[None] if config.context_dim else None
    maps = []
    for f in (sample.features, moved):
        lx, ly = predict_logits(weights, config, f[None], ctx)
        maps.append(heatmap(lx[0], ly[0]))
    return maps[0], maps[1], js_divergence(maps[0], maps[1])
