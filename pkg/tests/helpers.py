"""Finite-difference oracle shared by the gradient tests."""

import numpy as np

from hit.tensor import Tensor, backward


def numeric_grad(f, arrays, h=1e-5):
    """Central differences of scalar ``f(*arrays)`` w.r.t. every entry of every array."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            up = f(*arrays)
            a[i] = old - h
            down = f(*arrays)
            a[i] = old
            g[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def check_gradients(build, arrays, rng, rtol=1e-5, floor=1e-8):
    """Compare reverse-mode and central-difference gradients of ``sum(build(*x) * w)``.

    ``w`` is a fixed random projection so every output entry matters.
    """
    probe = build(*[Tensor(a) for a in arrays])
    w = rng.normal(size=probe.shape)

    def scalar(*xs):
        return float(np.sum(build(*[Tensor(x) for x in xs]).data * w))

    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = build(*leaves)
    from hit import tensor as T

    backward(T.sum(T.mul(out, w)))
    numeric = numeric_grad(scalar, [a.copy() for a in arrays])
    for leaf, num in zip(leaves, numeric):
        err = np.abs(leaf.grad - num) / np.maximum(np.maximum(np.abs(leaf.grad), np.abs(num)), floor)
        assert err.max() < rtol, f"max relative error {err.max():.3g}"
