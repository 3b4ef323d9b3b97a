import numpy as np
import pytest

from xpass import compute as C


def gradcheck(build, arrays, h, seed=0):
    """Max relative error between tape gradients and central differences.

    ``build(*tensors)`` returns a Tensor; it is reduced against a fixed random
    weighting so every output entry matters.
    """
    tensors = [C.Tensor(a, requires_grad=True, dtype=a.dtype) for a in arrays]
    out = build(*tensors)
    w = np.random.default_rng(seed + 1000).standard_normal(out.shape).astype(out.dtype)
    (out * w).sum().backward()

    def f():
        with C.no_grad():
            return float(np.sum(build(*tensors).data.astype(np.float64) * w))

    return max(C.relative_error(t.grad, C.numerical_grad(f, t.data, h)) for t in tensors)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
