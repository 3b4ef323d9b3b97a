"""Numerical checks shared by the unit and acceptance suites."""

import numpy as np

from xpass import compute as C
from xpass.model import ModelConfig, forward_batch, init_weights, loss


def random_heads(weights, rng, scale=0.3):
    """Untrained models start with zero heads; tests needing a non-uniform map use this."""
    for k in ("head_x.w", "head_x.b", "head_y.w", "head_y.b"):
        weights[k].data[...] = rng.standard_normal(weights[k].data.shape) * scale


def model_gradcheck(entries_per_param=12, seed=0, h=1e-5):
    """Worst relative error of model gradients vs central differences.

    d_model=16, seq_len=8, canonical attention, float64.  Every parameter
    tensor is checked; tensors larger than ``entries_per_param`` are checked
    on a seeded random subset of their entries.  Errors are scaled by at
    least 1e-5 so exactly-zero gradients (the key bias, which softmax
    ignores) are compared in absolute terms.
    """
    rng = np.random.default_rng(seed)
    with C.precision(np.float64):
        cfg = ModelConfig(d_model=16, n_heads=2, seq_len=8, mode="canonical", seed=seed)
        w = init_weights(cfg)
        # zero-initialised token and heads would hide most gradient paths
        w["embed.cls"].data[:] = rng.standard_normal(16) * 0.5
        random_heads(w, rng)
        feats = rng.uniform(size=(3, 8, 46))
        labels = np.array([[1, 2], [30, 33], [17, 0]])

        def f():
            with C.no_grad():
                return float(loss(*forward_batch(feats, w, cfg), labels).data)

        w.zero_grad()
        loss(*forward_batch(feats, w, cfg), labels).backward()
        worst = {}
        for name, p in w.items():
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size) if flat.size <= entries_per_param else \
                rng.choice(flat.size, entries_per_param, replace=False)
            num = np.empty(len(idx))
            for j, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + h
                fp = f()
                flat[i] = orig - h
                fm = f()
                flat[i] = orig
                num[j] = (fp - fm) / (2 * h)
            worst[name] = C.relative_error(p.grad.reshape(-1)[idx], num, floor=1e-5)
    return worst
