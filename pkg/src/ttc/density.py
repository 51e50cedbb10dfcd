"""Density of the measure after one TTC step.

For ``f0(x) = x - eta grad u(x)`` and ``g0(y) = y + eta grad u(y)`` the pushed
density satisfies ``rho~(f0(x)) = rho(x) |det Dg0(f0(x))|``, with
``Dg0 = I + eta Hess u``.  Equivalently ``rho~(y) = rho(g0(y)) |det Dg0(y)|``
on the image of the step, which is the form used for histogram checks.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import Graph
from .critic import CriticNet, _param_bindings, _param_inputs, input_gradient


@dataclass
class DensityField:
    """A density with a support descriptor.

    ``support`` is ``("box", lo, hi)`` or ``("annulus", center, r0, r1)``.
    """

    rho: object
    support: tuple

    def __call__(self, x):
        return self.rho(x)

    def sample_support(self, rng, n):
        """Uniform points on the support and the support volume."""
        kind = self.support[0]
        if kind == "box":
            lo = np.atleast_1d(np.asarray(self.support[1], dtype=np.float64))
            hi = np.atleast_1d(np.asarray(self.support[2], dtype=np.float64))
            pts = lo + (hi - lo) * rng.uniform(size=(n, len(lo)))
            return pts, float(np.prod(hi - lo))
        if kind == "annulus":
            _, center, r0, r1 = self.support
            r = np.sqrt(rng.uniform(r0 ** 2, r1 ** 2, size=n))
            phi = rng.uniform(0, 2 * np.pi, size=n)
            pts = np.asarray(center) + np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)
            return pts, np.pi * (r1 ** 2 - r0 ** 2)
        raise ValueError(f"unknown support kind {kind!r}")

    def integral(self, rng, n=100_000):
        """Monte Carlo estimate of the total mass."""
        pts, vol = self.sample_support(rng, n)
        return vol * float(np.mean(self.rho(pts)))


def network_hessian(critic: CriticNet, y):
    """Hessian of a critic at one point by differentiating the input gradient again."""
    y = np.asarray(y, dtype=np.float64).reshape(1, -1)
    d = critic.input_dim
    g = Graph()
    params = _param_inputs(g, len(critic.weights))
    x = g.input("x")
    gx = input_gradient(g, x, params, len(critic.weights), critic.activation)
    rows = []
    for k in range(d):
        e = np.zeros((1, d))
        e[0, k] = 1.0
        rows.append(g.grad(g.sum(g.mul(gx, g.const(e))), [x])[0])
    vals = g.evaluate({"x": y, **_param_bindings(critic)}, rows)
    return np.vstack([v.reshape(1, d) for v in vals])


def fd_hessian(u, y, h=1e-4):
    """Central differences of ``grad_x``; a cross-check for the autodiff path."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    d = len(y)
    H = np.empty((d, d))
    for k in range(d):
        e = np.zeros(d)
        e[k] = h
        H[:, k] = (u.grad_x(y + e)[0] - u.grad_x(y - e)[0]) / (2 * h)
    return 0.5 * (H + H.T)


def hessian(u, y, finite_difference=False):
    if finite_difference:
        return fd_hessian(u, y)
    if isinstance(u, CriticNet):
        return network_hessian(u, y)
    return u.hessian(y)


def jacobian_g0(u, eta, y, finite_difference=False):
    """``Dg0(y) = I + eta * Hess u(y)``."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    u.grad_x(y[None, :])  # raises where the gradient is undefined
    return np.eye(len(y)) + eta * hessian(u, y, finite_difference)


def step_map(u, eta, x):
    """``f0(x) = x - eta grad u(x)`` for a batch."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return x - eta * u.grad_x(x)


def inverse_step_map(u, eta, y):
    """``g0(y) = y + eta grad u(y)``."""
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    return y + eta * u.grad_x(y)


def pushforward_density(rho, u, eta, x):
    """Return ``(f0(x), rho(x) |det Dg0(f0(x))|)`` for a single point ``x``."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = step_map(u, eta, x)[0]
    # LAPACK getrf: LU with partial pivoting
    det = np.linalg.det(jacobian_g0(u, eta, y))
    return y, float(np.asarray(rho(x[None, :])).reshape(-1)[0]) * abs(det)


def pushed_density_fn(rho, u, eta):
    """Vectorized ``y -> rho(g0(y)) |det Dg0(y)|`` (density of the pushed measure)."""
    def rho_tilde(y):
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        x = inverse_step_map(u, eta, y)
        base = np.asarray(rho(x), dtype=np.float64).reshape(-1)
        if hasattr(u, "hessians"):
            jac = np.eye(y.shape[1])[None] + eta * u.hessians(y)
            return base * np.abs(np.linalg.det(jac))
        out = np.zeros(len(y))
        for i in np.flatnonzero(base):
            out[i] = base[i] * abs(np.linalg.det(jacobian_g0(u, eta, y[i])))
        return out
    return rho_tilde


# -- histogram check

def _bin_masses(rho_tilde, bins, geometry, center, order=8):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    if geometry == "interval":
        edges = np.asarray(bins, dtype=np.float64)
        a, b = edges[:-1, None], edges[1:, None]
        pts = 0.5 * (b - a) * nodes + 0.5 * (a + b)
        vals = rho_tilde(pts.reshape(-1, 1)).reshape(pts.shape)
        return 0.5 * (b - a)[:, 0] * (vals * weights).sum(axis=1)
    if geometry == "radial":
        edges = np.asarray(bins, dtype=np.float64)
        n_phi = 32
        phi = 2 * np.pi * np.arange(n_phi) / n_phi
        out = np.empty(len(edges) - 1)
        for i, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
            r = 0.5 * (b - a) * nodes + 0.5 * (a + b)
            R, P = np.meshgrid(r, phi, indexing="ij")
            pts = np.asarray(center) + np.stack([R * np.cos(P), R * np.sin(P)], -1).reshape(-1, 2)
            vals = rho_tilde(pts).reshape(R.shape) * R
            # trapezoid in angle is exact for trigonometric polynomials
            out[i] = 0.5 * (b - a) * (weights @ vals.mean(axis=1)) * 2 * np.pi
        return out
    if geometry == "box":
        ex, ey = (np.asarray(e, dtype=np.float64) for e in bins)
        out = np.empty((len(ex) - 1, len(ey) - 1))
        for i in range(len(ex) - 1):
            xs = 0.5 * (ex[i + 1] - ex[i]) * nodes + 0.5 * (ex[i + 1] + ex[i])
            for j in range(len(ey) - 1):
                ys = 0.5 * (ey[j + 1] - ey[j]) * nodes + 0.5 * (ey[j + 1] + ey[j])
                X, Y = np.meshgrid(xs, ys, indexing="ij")
                vals = rho_tilde(np.stack([X.ravel(), Y.ravel()], 1)).reshape(X.shape)
                out[i, j] = (0.25 * (ex[i + 1] - ex[i]) * (ey[j + 1] - ey[j])
                             * weights @ vals @ weights)
        return out.ravel()
    raise ValueError(f"unknown geometry {geometry!r}")


def _bin_counts(samples, bins, geometry, center):
    if geometry == "interval":
        return np.histogram(samples[:, 0], bins=np.asarray(bins))[0]
    if geometry == "radial":
        r = np.linalg.norm(samples - np.asarray(center), axis=1)
        return np.histogram(r, bins=np.asarray(bins))[0]
    ex, ey = bins
    return np.histogram2d(samples[:, 0], samples[:, 1], bins=[ex, ey])[0].ravel()


def verify_density_histogram(rho_tilde, sampler, bins, n_samples, rng, geometry="interval",
                             center=(0.0, 0.0)):
    """Total-variation distance between pushed samples and a predicted density.

    ``sampler(rng, n)`` draws pushed points; ``bins`` are histogram edges
    (a pair of edge arrays for ``geometry="box"``).  Mass outside the bins
    counts as one extra cell on both sides.
    """
    if n_samples < 10_000:
        raise ValueError("need at least 1e4 samples")
    if geometry == "box":
        if len(bins) != 2 or min(len(bins[0]), len(bins[1])) < 2:
            raise ValueError("box geometry needs two edge arrays")
    elif bins is None or len(bins) < 2:
        raise ValueError("need at least one bin")
    samples = np.atleast_2d(np.asarray(sampler(rng, n_samples), dtype=np.float64))
    if samples.shape[0] == 1 and n_samples > 1:
        samples = samples.T
    emp = _bin_counts(samples, bins, geometry, center) / n_samples
    pred = _bin_masses(rho_tilde, bins, geometry, center)
    out_emp = 1.0 - emp.sum()
    out_pred = 1.0 - pred.sum()
    return 0.5 * (np.abs(emp - pred).sum() + abs(out_emp - out_pred))
