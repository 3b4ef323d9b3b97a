import math

import numpy as np
import pytest

from xpass import compute as C
from xpass.attention import ConfigError
from xpass.data.synth import synth_generate
from xpass.model import (
    ModelConfig, distill, embed, encoder_stack_forward, forward, forward_batch, heatmap, init_weights,
    load_checkpoint, loss, save_checkpoint, sinusoidal_positions, zero_heads,
)
from xpass.zones import COARSE, FINE, DataError
from tests.helpers import model_gradcheck, random_heads

T = C.Tensor
SMALL = dict(d_model=16, n_heads=2)


@pytest.fixture(scope="module")
def sample():
    return synth_generate(2, 3)[0]


def test_logit_shapes(sample):
    for grid, shape in (("coarse", (35, 34)), ("fine", (105, 68))):
        cfg = ModelConfig(grid=grid, **SMALL)
        lx, ly = forward(sample, init_weights(cfg), cfg)
        assert (lx.shape[0], ly.shape[0]) == shape


def test_embed_is_additive_positional_when_zero():
    cfg = ModelConfig(d_model=64, n_heads=8)
    w = init_weights(cfg)
    out = embed(np.zeros((50, 46)), w, cfg).data
    assert out.shape == (51, 64)
    np.testing.assert_allclose(out, sinusoidal_positions(51, 64), atol=1e-6)


def test_embed_with_context_broadcasts():
    cfg = ModelConfig(context_dim=3, **SMALL)
    w = init_weights(cfg)
    ctx = np.array([[1.0, -2.0, 0.5]])
    out = embed(np.zeros((1, 50, 46)), w, cfg, ctx).data[0]
    shift = ctx[0] @ w["embed.context"].data
    np.testing.assert_allclose(out - sinusoidal_positions(51, 16), np.broadcast_to(shift, (51, 16)), atol=1e-5)
    with pytest.raises(ConfigError):
        embed(np.zeros((1, 50, 46)), w, cfg)


def test_token_row_independent_of_features(rng):
    cfg = ModelConfig(**SMALL)
    w = init_weights(cfg)
    w["embed.cls"].data[:] = rng.standard_normal(16)
    a = embed(rng.uniform(size=(50, 46)), w, cfg).data
    b = embed(rng.uniform(size=(50, 46)), w, cfg).data
    assert np.array_equal(a[0], b[0]) and not np.array_equal(a[1:], b[1:])


def test_embed_shape_error():
    cfg = ModelConfig(**SMALL)
    with pytest.raises(ConfigError):
        embed(np.zeros((50, 45)), init_weights(cfg), cfg)


def test_distill_chain_and_token_bypass(rng):
    x = T(rng.standard_normal((1 + 50, 4)))
    k = T(rng.standard_normal((3, 4, 4)))
    y = distill(x, k)
    z = distill(y, k)
    assert (y.shape[0] - 1, z.shape[0] - 1) == (25, 13)
    assert np.array_equal(y.data[0], x.data[0]) and np.array_equal(z.data[0], x.data[0])


def test_distill_identity_kernel_is_max_downsampling(rng):
    frames = rng.uniform(0, 1, (9, 3))
    kernel = np.zeros((3, 3, 3))
    kernel[1] = np.eye(3)
    out = distill(T(np.vstack([np.zeros((1, 3)), frames])), T(kernel)).data[1:]
    padded = np.vstack([np.zeros((1, 3)), frames, np.zeros((1, 3))])
    ref = np.stack([padded[2 * i:2 * i + 3].max(0) for i in range(5)])
    np.testing.assert_allclose(out, ref, rtol=1e-6)


def test_shape_chain_trace(sample):
    cfg = ModelConfig(**SMALL)
    trace = []
    forward_batch(sample.features[None], init_weights(cfg), cfg, trace=trace)
    assert trace == [(0, 0, 50), (0, 1, 25), (0, 2, 13), (1, 0, 25), (1, 1, 13), (1, 2, 7)]
    assert cfg.frame_lengths(0) == [50, 25, 13] and cfg.frame_lengths(1) == [25, 13, 7]


def test_single_block_stack(sample):
    cfg = ModelConfig(blocks_per_stack=1, n_stacks=1, **SMALL)
    w = init_weights(cfg)
    assert not any(".d" in k and "kernel" in k for k in w)
    x = embed(sample.features, w, cfg).reshape(1, 51, 16)
    assert encoder_stack_forward(x, w, cfg, 0).shape == (1, 16)
    with pytest.raises(ConfigError):
        ModelConfig(blocks_per_stack=0)


def _ln(v, g, b):
    mu = v.mean()
    return (v - mu) / math.sqrt(((v - mu) ** 2).mean() + 1e-5) * g + b


def _elu(v):
    return np.where(v > 0, v, np.expm1(np.minimum(v, 0)))


def test_uniform_attention_loop_oracle(rng):
    with C.precision(np.float64):
        cfg = ModelConfig(d_model=8, n_heads=2, n_stacks=1, blocks_per_stack=2, seq_len=6, mode="canonical")
        w = init_weights(cfg)
        for n in ("wq", "wk", "bq", "bk"):
            for b in range(2):
                w[f"s0.b{b}.attn.{n}"].data[:] = 0.0  # every score equal -> uniform weights
        x0 = rng.standard_normal((7, 8))
        got = encoder_stack_forward(T(x0[None]), w, cfg, 0).data[0]

    P = {k: v.data for k, v in w.items()}
    x = [row.copy() for row in x0]
    for b in range(2):
        p = f"s0.b{b}"
        vals = [_ln(r, P[f"{p}.ln1.g"], P[f"{p}.ln1.b"]) @ P[f"{p}.attn.wv"] + P[f"{p}.attn.bv"] for r in x]
        mean_v = sum(vals) / len(vals)
        a = mean_v @ P[f"{p}.attn.wo"] + P[f"{p}.attn.bo"]
        x = [r + a for r in x]
        out = []
        for r in x:
            h = _ln(r, P[f"{p}.ln2.g"], P[f"{p}.ln2.b"])
            out.append(r + _elu(h @ P[f"{p}.ff.w1"] + P[f"{p}.ff.b1"]) @ P[f"{p}.ff.w2"] + P[f"{p}.ff.b2"])
        x = out
        if b == 0:
            K = P["s0.d0.kernel"]
            frames = x[1:]
            L = len(frames)
            conv = []
            for i in range(L):
                acc = np.zeros(8)
                for k in range(3):
                    j = i + k - 1
                    if 0 <= j < L:
                        acc += frames[j] @ K[k]
                conv.append(_elu(acc))
            pooled = []
            for i in range((L + 1) // 2):
                win = [conv[j] if 0 <= j < L else np.zeros(8) for j in (2 * i - 1, 2 * i, 2 * i + 1)]
                pooled.append(np.max(win, axis=0))
            x = [x[0]] + pooled
    ref = _ln(x[0], P["s0.ln_f.g"], P["s0.ln_f.b"])
    np.testing.assert_allclose(got, ref, atol=1e-10)


def test_zero_head_loss_is_analytic(rng):
    for grid in ("coarse", "fine"):
        cfg = ModelConfig(grid=grid, seed=int(rng.integers(100)), **SMALL)
        w = init_weights(cfg)
        zero_heads(w)
        g = cfg.zone_grid
        feats = rng.uniform(size=(4, 50, 46))
        labels = np.stack([rng.integers(g.nx, size=4), rng.integers(g.ny, size=4)], 1)
        value = float(loss(*forward_batch(feats, w, cfg), labels).data)
        assert abs(value - (math.log(g.nx) + math.log(g.ny))) < 1e-5
        if grid == "coarse":
            assert abs(value - 7.0819) < 1e-3


def test_untrained_model_predicts_uniform(sample):
    cfg = ModelConfig(**SMALL)
    lx, ly = forward(sample, init_weights(cfg), cfg)
    assert not lx.data.any() and not ly.data.any()
    assert loss(lx, ly, sample.label).item() == pytest.approx(math.log(35) + math.log(34), abs=1e-5)


def test_loss_examples(rng):
    with C.precision(np.float64):
        lx, ly = T(rng.standard_normal(35)), T(rng.standard_normal(34))
        total = loss(lx, ly, (3, 7)).item()
        sep = C.cross_entropy(lx.reshape(1, 35), [3]).item() + C.cross_entropy(ly.reshape(1, 34), [7]).item()
        assert total == pytest.approx(sep, abs=1e-12)
        hot_x, hot_y = np.zeros(35), np.zeros(34)
        hot_x[3], hot_y[7] = 40, 40
        assert loss(T(hot_x), T(hot_y), (3, 7)).item() < 1e-8
    with pytest.raises(IndexError):
        loss(T(np.zeros(35)), T(np.zeros(34)), (35, 0))


def test_heatmap_properties(rng):
    u = heatmap(np.zeros(35), np.zeros(34), COARSE)
    np.testing.assert_allclose(u, 1 / 1190)
    hx, hy = np.full(35, -50.0), np.full(34, -50.0)
    hx[4], hy[30] = 50, 50
    assert heatmap(hx, hy)[4, 30] == pytest.approx(1.0)
    lx, ly = rng.standard_normal(105) * 3, rng.standard_normal(68) * 3
    H = heatmap(lx, ly, FINE)
    assert abs(H.sum() - 1) < 1e-6
    assert np.unravel_index(H.argmax(), H.shape) == (lx.argmax(), ly.argmax())
    assert np.linalg.matrix_rank(H, tol=1e-12) == 1
    np.testing.assert_allclose(H.sum(1), C.softmax_np(lx), atol=1e-6)
    np.testing.assert_allclose(H.sum(0), C.softmax_np(ly), atol=1e-6)
    with pytest.raises(ConfigError):
        heatmap(lx, ly, COARSE)


def test_determinism_and_param_count(sample):
    cfg = ModelConfig(**SMALL)
    w1, w2 = init_weights(cfg), init_weights(cfg)
    assert w1.count() == w2.count()
    for w in (w1, w2):
        random_heads(w, np.random.default_rng(3))
    a = forward(sample, w1, cfg)
    b = forward(sample, w2, cfg)
    assert np.array_equal(a[0].data, b[0].data) and np.array_equal(a[1].data, b[1].data)
    lx, _ = forward_batch(np.stack([sample.features] * 2), w1, cfg)
    assert np.array_equal(lx.data[0], lx.data[1])
    D, F = 16, 32
    block = 2 * 2 * D + 4 * (D * D + D) + D * F + F + F * D + D
    expect = 46 * D + D + 2 * (3 * block + 2 * 3 * D * D + 2 * D) + 2 * D * (35 + 34) + 35 + 34
    assert w1.count() == expect


def test_checkpoint_round_trip(tmp_path, sample):
    cfg = ModelConfig(**SMALL, seed=4)
    w = init_weights(cfg)
    p = tmp_path / "m.ck"
    save_checkpoint(p, cfg, w, {"note": 1})
    cfg2, w2, meta = load_checkpoint(p)
    assert cfg2 == cfg and meta == {"note": 1} and list(w2) == list(w)
    a, b = forward(sample, w, cfg), forward(sample, w2, cfg2)
    assert np.array_equal(a[0].data, b[0].data) and np.array_equal(a[1].data, b[1].data)
    save_checkpoint(tmp_path / "n.ck", cfg2, w2, meta)
    assert p.read_bytes() == (tmp_path / "n.ck").read_bytes()
    (tmp_path / "bad.ck").write_bytes(b"XXXXXXXX" + p.read_bytes()[8:])
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "bad.ck")


def test_end_to_end_gradient_check():
    worst = model_gradcheck()
    assert max(worst.values()) < 1e-4, {k: v for k, v in worst.items() if v >= 1e-4}
