"""Scaled dot-product attention: the full (canonical) form and ProbSparse.

ProbSparse ranks queries by the max-minus-mean of their scores against a
random subset of keys, gives the top ``u`` queries exact attention over all
keys and fills every other query's output with the mean of V.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from xpass import compute as C
from xpass.compute import DimensionError, Tensor

CANONICAL = "canonical"
PROBSPARSE = "probsparse"


class ConfigError(ValueError):
    """Inconsistent model or attention hyperparameters."""


@dataclass
class AttentionConfig:
    d_model: int = 512
    n_heads: int = 8
    sampling_factor: int = 5
    mode: str = PROBSPARSE

    def __post_init__(self):
        if self.n_heads < 1 or self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.sampling_factor < 1:
            raise ConfigError("sampling factor must be >= 1")
        if self.mode not in (CANONICAL, PROBSPARSE):
            raise ConfigError(f"unknown attention mode {self.mode!r}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


@dataclass
class SparsityReport:
    scores: np.ndarray  # M-bar per query, [..., L_Q]
    selected: np.ndarray  # [..., u], sorted by score descending
    u: int
    sampled_key_count: int
    dot_product_count: int  # per attention instance (one batch item, one head)
    sampled_keys: np.ndarray | None = None


def top_count(c: int, n: int) -> int:
    """min(n, ceil(c ln n)) -- used for both sampled keys and active queries."""
    if n <= 1:
        return n
    return min(n, int(math.ceil(c * math.log(n))))


def _check_qkv(Q: Tensor, K: Tensor, V: Tensor):
    if Q.shape[-1] != K.shape[-1]:
        raise DimensionError(f"query dim {Q.shape} does not match key dim {K.shape}")
    if K.shape[-2] != V.shape[-2]:
        raise DimensionError(f"keys {K.shape} and values {V.shape} differ in length")


def canonical_attention(Q: Tensor, K: Tensor, V: Tensor) -> Tensor:
    _check_qkv(Q, K, V)
    scale = 1.0 / math.sqrt(Q.shape[-1])
    scores = C.mul(C.matmul(Q, K.swapaxes(-1, -2)), scale)
    return C.matmul(C.softmax_rows(scores), V)


def sample_keys(L_K: int, c: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform subset of key rows, without replacement, in ascending order."""
    n = top_count(c, L_K)
    return np.sort(rng.choice(L_K, size=n, replace=False))


def sparsity_measure(Q, K_sample, c: int = 5) -> SparsityReport:
    """Max-minus-mean query scores against the sampled keys.

    Q: [..., L_Q, d] and K_sample: [..., s, d] (arrays or tensors).
    """
    q = Q.data if isinstance(Q, Tensor) else np.asarray(Q)
    ks = K_sample.data if isinstance(K_sample, Tensor) else np.asarray(K_sample)
    if ks.shape[-2] == 0:
        raise ValueError("sparsity_measure: empty key sample")
    if q.shape[-1] != ks.shape[-1]:
        raise DimensionError(f"query dim {q.shape} does not match key dim {ks.shape}")
    L_Q = q.shape[-2]
    s = ks.shape[-2]
    qk = np.matmul(q, np.swapaxes(ks, -1, -2)) / math.sqrt(q.shape[-1])
    m_bar = qk.max(axis=-1) - qk.mean(axis=-1)
    u = top_count(c, L_Q)
    # stable sort on -M: ties keep the lower query index first
    order = np.argsort(-m_bar, axis=-1, kind="stable")[..., :u]
    return SparsityReport(scores=m_bar, selected=order, u=u,
                          sampled_key_count=s, dot_product_count=L_Q * s)


def probsparse_attention(Q: Tensor, K: Tensor, V: Tensor, config: AttentionConfig | int = 5,
                         seed=0, n_top: int | None = None, return_report: bool = False):
    """ProbSparse self-attention over [..., L, d] operands.

    ``seed`` may be an int or a numpy Generator; one key subset is drawn per
    call and shared by all leading (batch/head) axes.  ``n_top`` overrides
    the number of active queries.
    """
    _check_qkv(Q, K, V)
    c = config.sampling_factor if isinstance(config, AttentionConfig) else int(config)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    L_Q, L_K = Q.shape[-2], K.shape[-2]
    keys = sample_keys(L_K, c, rng)
    report = sparsity_measure(Q.data, K.data[..., keys, :], c)
    report.sampled_keys = keys
    u = report.u if n_top is None else max(0, min(int(n_top), L_Q))
    if u != report.u:
        report.selected = np.argsort(-report.scores, axis=-1, kind="stable")[..., :u]
        report.u = u
    report.dot_product_count += u * L_K

    filler = C.broadcast_rows(C.tmean(V, axis=-2, keepdims=True), L_Q)
    if u == 0:
        out = filler
    else:
        q_top = C.take_rows(Q, report.selected)
        out = C.scatter_rows(filler, canonical_attention(q_top, K, V), report.selected)
    return (out, report) if return_report else out


def attention_dot_products(L_Q: int, L_K: int, c: int, mode: str) -> int:
    """Analytic dot-product count for one attention instance."""
    if mode == CANONICAL:
        return L_Q * L_K
    return L_Q * top_count(c, L_K) + top_count(c, L_Q) * L_K


@dataclass
class MultiHeadWeights:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    bq: Tensor | None = None
    bk: Tensor | None = None
    bv: Tensor | None = None
    bo: Tensor | None = None

    def parameters(self) -> dict:
        return {k: v for k, v in vars(self).items() if v is not None}


def _split_heads(x: Tensor, h: int) -> Tensor:
    *lead, L, d = x.shape
    return x.reshape(tuple(lead) + (L, h, d // h)).swapaxes(-2, -3)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, L, dh = x.shape
    return x.swapaxes(-2, -3).reshape(tuple(lead) + (L, h * dh))


def multi_head(X: Tensor, weights: MultiHeadWeights, config: AttentionConfig, seed=0,
               reports: list | None = None) -> Tensor:
    """Self-attention over X [..., L, d_model] with ``config.n_heads`` heads."""
    if X.shape[-1] != config.d_model:
        raise ConfigError(f"input width {X.shape[-1]} != d_model {config.d_model}")
    h = config.n_heads
    q = _split_heads(C.linear(X, weights.wq, weights.bq), h)
    k = _split_heads(C.linear(X, weights.wk, weights.bk), h)
    v = _split_heads(C.linear(X, weights.wv, weights.bv), h)
    if config.mode == CANONICAL:
        ctx = canonical_attention(q, k, v)
    else:
        ctx, rep = probsparse_attention(q, k, v, config, seed, return_report=True)
        if reports is not None:
            reports.append(rep)
    return C.linear(_merge_heads(ctx), weights.wo, weights.bo)
