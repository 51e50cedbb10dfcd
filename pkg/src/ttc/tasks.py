"""Toy source/target distributions.

Every sampler has the signature ``sampler(rng, n) -> (n, d)`` float64 array
and draws only from the generator it is given.
"""

import numpy as np

RING_RADIUS = 2.0
RING_STD = 0.05
SIGNAL_DIM = 16
ANNULUS = (1.0, 2.0)


def _interval(rng, n):
    return rng.uniform(0.0, 1.0, size=(n, 1))


def _square(rng, n):
    return rng.uniform(0.0, 1.0, size=(n, 2))


def _gauss8ring(rng, n):
    k = rng.integers(0, 8, size=n)
    angles = k * (np.pi / 4)
    centers = RING_RADIUS * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return centers + RING_STD * rng.standard_normal((n, 2))


def _swissroll(rng, n):
    t = 1.5 * np.pi * (1 + 2 * rng.uniform(size=n))
    pts = np.stack([t * np.cos(t), t * np.sin(t)], axis=1) / 5.0
    return pts + 0.05 * rng.standard_normal((n, 2))


def _annulus(rng, n):
    r0, r1 = ANNULUS
    # uniform in area: r^2 uniform on [r0^2, r1^2]
    r = np.sqrt(rng.uniform(r0 ** 2, r1 ** 2, size=n))
    phi = rng.uniform(0, 2 * np.pi, size=n)
    return np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)


def _point(rng, n):
    return 1e-3 * rng.standard_normal((n, 2))


def clean_signals(rng, n, dim=SIGNAL_DIM):
    """Smooth sinusoids on [0, 1]: a 4-parameter family inside R^dim."""
    offset = rng.uniform(0.4, 0.6, size=(n, 1))
    amp = rng.uniform(0.1, 0.35, size=(n, 1))
    freq = rng.uniform(0.5, 2.0, size=(n, 1))
    phase = rng.uniform(0.0, 2 * np.pi, size=(n, 1))
    t = np.arange(dim) / dim
    return np.clip(offset + amp * np.sin(2 * np.pi * freq * t + phase), 0.0, 1.0)


def add_noise(rng, clean, sigma):
    """Gaussian corruption clamped back into the unit box."""
    return np.clip(clean + sigma * rng.standard_normal(clean.shape), 0.0, 1.0)


def _noisy_signals(sigma):
    def sample(rng, n):
        return add_noise(rng, clean_signals(rng, n), sigma)
    return sample


_TASKS = {
    "interval": (_interval, 1),
    "shifted_interval": (lambda rng, n: _interval(rng, n) + 2.0, 1),
    "square": (_square, 2),
    "shifted_square": (lambda rng, n: _square(rng, n) + np.array([2.0, 0.0]), 2),
    "gauss8ring": (_gauss8ring, 2),
    "swissroll": (_swissroll, 2),
    "annulus": (_annulus, 2),
    "point": (_point, 2),
    "signal": (clean_signals, SIGNAL_DIM),
}

TASK_NAMES = sorted(_TASKS) + ["noisy_signal"]


def task_dim(name):
    if name == "noisy_signal":
        return SIGNAL_DIM
    if name not in _TASKS:
        raise ValueError(f"unknown task {name!r}; known: {', '.join(TASK_NAMES)}")
    return _TASKS[name][1]


def sampler(name, sigma=0.0):
    """Sampler for a named task; ``sigma`` only applies to ``noisy_signal``."""
    if name == "noisy_signal":
        return _noisy_signals(sigma)
    task_dim(name)
    return _TASKS[name][0]


def sample_task(name, rng, n, sigma=0.0):
    return sampler(name, sigma)(rng, n)


# closed-form densities used by the density checks

def interval_density(x):
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    return ((x >= 0) & (x <= 1)).astype(np.float64)


def annulus_density(x):
    r = np.linalg.norm(np.atleast_2d(x), axis=1)
    r0, r1 = ANNULUS
    return np.where((r >= r0) & (r <= r1), 1.0 / (np.pi * (r1 ** 2 - r0 ** 2)), 0.0)
