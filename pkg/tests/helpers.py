"""Finite-difference oracles shared by the test modules."""

import numpy as np


def central_diff(f, arrays, step=1e-6):
    """Central differences of scalar ``f(*arrays)`` w.r.t. every entry.

    The step for entry ``p`` is ``step * (1 + |p|)``.
    """
    grads = []
    for k, a in enumerate(arrays):
        g = np.zeros_like(a, dtype=np.float64)
        for idx in np.ndindex(a.shape):
            h = step * (1.0 + abs(a[idx]))
            plus = [b.copy() for b in arrays]
            minus = [b.copy() for b in arrays]
            plus[k][idx] += h
            minus[k][idx] -= h
            g[idx] = (f(*plus) - f(*minus)) / (2 * h)
        grads.append(g)
    return grads


def rel_err(a, b):
    a, b = np.concatenate([np.ravel(x) for x in a]), np.concatenate([np.ravel(x) for x in b])
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))
