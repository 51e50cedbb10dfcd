"""Exact L1 optimal transport between equal-size uniform empirical measures.

All couplings are bijections between the two point sets.  Costs are mean
Euclidean distances, never squared.  Couplings that tie in exact arithmetic
always report bit-identical costs: in one dimension the cost is summed in
rational arithmetic, otherwise with ``math.fsum``.
"""

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.optimize import linear_sum_assignment

MAX_BRUTE_FORCE = 8


@dataclass
class TransportPlan:
    """Bijection ``source[i] -> target[i]`` with per-pair distances."""

    source: np.ndarray
    target: np.ndarray
    distances: np.ndarray
    cost: float

    def __len__(self):
        return len(self.distances)


def _as_points(a):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError(f"expected a point set of shape (n, d), got {a.shape}")
    return a


def _check_pair(xs, ys):
    xs, ys = _as_points(xs), _as_points(ys)
    if len(xs) != len(ys):
        raise ValueError(f"unequal counts: {len(xs)} source vs {len(ys)} target points")
    if xs.shape[1] != ys.shape[1]:
        raise ValueError(f"dimension mismatch: {xs.shape[1]} vs {ys.shape[1]}")
    if len(xs) == 0:
        raise ValueError("empty point sets")
    return xs, ys


def _batch(x):
    """Potentials take one point ``(d,)`` or a batch ``(B, d)``."""
    return np.atleast_2d(np.asarray(x, dtype=np.float64))


def distance_matrix(xs, ys):
    xs, ys = _as_points(xs), _as_points(ys)
    return np.sqrt(((xs[:, None, :] - ys[None, :, :]) ** 2).sum(-1))


def _mean_cost(xs, ys, perm):
    """Mean distance of the matching ``xs[i] -> ys[perm[i]]``."""
    n = len(xs)
    if xs.shape[1] == 1:
        total = sum(abs(Fraction(float(xs[i, 0])) - Fraction(float(ys[j, 0])))
                    for i, j in enumerate(perm))
        return float(total / n)
    d = np.sqrt(((xs - ys[perm]) ** 2).sum(-1))
    return math.fsum(d) / n


def _plan(xs, ys, perm):
    perm = np.asarray(perm)
    src, tgt = xs, ys[perm]
    dist = np.sqrt(((src - tgt) ** 2).sum(-1))
    return TransportPlan(src.copy(), tgt.copy(), dist, _mean_cost(xs, ys, perm))


def w1_1d(xs, ys):
    """W1 on the line via the sorted (monotone) matching."""
    xs, ys = _check_pair(xs, ys)
    if xs.shape[1] != 1:
        raise ValueError("w1_1d needs scalar samples")
    ix = np.argsort(xs[:, 0], kind="stable")
    iy = np.argsort(ys[:, 0], kind="stable")
    plan = _plan(xs[ix], ys[iy], np.arange(len(xs)))
    return plan.cost, plan


def w1_hungarian(xs, ys):
    """W1 as a minimum-cost assignment on the distance matrix."""
    xs, ys = _check_pair(xs, ys)
    rows, cols = linear_sum_assignment(distance_matrix(xs, ys))
    perm = np.empty(len(xs), dtype=np.int64)
    perm[rows] = cols
    plan = _plan(xs, ys, perm)
    return plan.cost, plan


def brute_force_w1(xs, ys):
    """Minimum over all n! bijections; only for n <= 8."""
    xs, ys = _check_pair(xs, ys)
    n = len(xs)
    if n > MAX_BRUTE_FORCE:
        raise ValueError(f"brute force limited to n <= {MAX_BRUTE_FORCE}, got {n}")
    perms = np.array(list(itertools.permutations(range(n))))
    costs = distance_matrix(xs, ys)[np.arange(n), perms].sum(axis=1)
    # float sums only pick the winner; the reported cost uses the exact path
    return _mean_cost(xs, ys, perms[np.argmin(costs)])


def min_transport_length(plan):
    """Empirical essential infimum of the transport distance."""
    return float(np.min(plan.distances))


@dataclass
class TranslationPotential:
    """``u(x) = -<x, v>/|v|``, a Kantorovich potential from any mu to mu + v."""

    v: np.ndarray

    def __post_init__(self):
        self.v = np.atleast_1d(np.asarray(self.v, dtype=np.float64))
        norm = np.linalg.norm(self.v)
        if norm == 0:
            raise ValueError("translation vector must be non-zero")
        self.direction = self.v / norm

    @property
    def input_dim(self):
        return len(self.v)

    def __call__(self, x):
        return -_batch(x) @ self.direction

    def grad_x(self, x):
        x = _batch(x)
        return np.tile(-self.direction, (len(x), 1))

    def hessian(self, y):
        d = len(self.v)
        return np.zeros((d, d))

    def hessians(self, ys):
        d = len(self.v)
        return np.zeros((len(_batch(ys)), d, d))


@dataclass
class RadialPotential:
    """``u(x) = |x - center|``, the potential for transport onto a point mass."""

    center: np.ndarray

    def __post_init__(self):
        self.center = np.atleast_1d(np.asarray(self.center, dtype=np.float64))

    @property
    def input_dim(self):
        return len(self.center)

    def __call__(self, x):
        return np.linalg.norm(_batch(x) - self.center, axis=1)

    def grad_x(self, x):
        diff = _batch(x) - self.center
        r = np.linalg.norm(diff, axis=1, keepdims=True)
        if np.any(r == 0):
            raise ValueError("gradient undefined at the center")
        return diff / r

    def hessian(self, y):
        diff = np.asarray(y, dtype=np.float64).reshape(-1) - self.center
        r = np.linalg.norm(diff)
        if r == 0:
            raise ValueError("hessian undefined at the center")
        e = diff / r
        return (np.eye(len(e)) - np.outer(e, e)) / r

    def hessians(self, ys):
        diff = _batch(ys) - self.center
        r = np.linalg.norm(diff, axis=1)
        if np.any(r == 0):
            raise ValueError("hessian undefined at the center")
        e = diff / r[:, None]
        eye = np.eye(diff.shape[1])[None]
        return (eye - e[:, :, None] * e[:, None, :]) / r[:, None, None]


def analytic_potential_translation(v):
    return TranslationPotential(v)


def analytic_potential_radial(center):
    return RadialPotential(center)
