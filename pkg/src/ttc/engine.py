"""The TTC outer loop: train critics in sequence and push samples along them."""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .critic import AdamConfig, estimate_w1, init_critic, train_critic

UNBOUNDED = math.inf


class StepClampWarning(UserWarning):
    """A non-positive W1 estimate was clamped to a zero step."""


@dataclass
class ExperimentConfig:
    n_critics: int = 3
    critic_iters: int = 2000
    batch_size: int = 50
    theta: float = 0.9
    lam: float = 1000.0
    eps_c: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0
    hidden: tuple = (128, 128, 128)
    source: str = "square"
    target: str = "shifted_square"
    sigma: float = 0.0

    def validate(self):
        if self.n_critics < 1:
            raise ValueError("n_critics: N >= 1 required")
        if self.critic_iters < 100:
            raise ValueError("critic_iters: C >= 100 required")
        if self.batch_size < 1:
            raise ValueError("batch_size: M >= 1 required")
        if not 0 < self.theta < 1:
            raise ValueError("theta: must lie in (0, 1)")
        if self.lam <= 0:
            raise ValueError("lambda: must be positive")
        if self.sigma < 0:
            raise ValueError("sigma: must be non-negative")
        return self

    @property
    def adam(self):
        return AdamConfig(self.eps_c, self.beta1, self.beta2)

    def layer_dims(self, input_dim):
        return [input_dim, *self.hidden, 1]


@dataclass
class CriticStack:
    """Critics ``u_n`` with step sizes ``eta_n``; ``x -> x - eta_n grad u_n(x)``
    applied in order is the TTC generator.

    A critic is anything with ``grad_x(points) -> gradients``; trained stacks
    hold :class:`CriticNet` instances, verification stacks hold analytic
    potentials.
    """

    theta: float
    input_dim: int
    critics: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    w1_estimates: list = field(default_factory=list)
    clamped: list = field(default_factory=list)

    def __len__(self):
        return len(self.critics)

    def append(self, critic, w1_hat):
        eta, clamped = step_size(w1_hat, self.theta, flag=True)
        if clamped:
            warnings.warn(f"critic {len(self.critics)}: W1 estimate {w1_hat:.6g} <= 0, "
                          "step clamped to 0", StepClampWarning, stacklevel=2)
        self.critics.append(critic)
        self.steps.append(eta)
        self.w1_estimates.append(float(w1_hat))
        self.clamped.append(clamped)
        return eta

    def check(self):
        n = len(self.critics)
        if not (len(self.steps) == len(self.w1_estimates) == len(self.clamped) == n):
            raise ValueError("stack fields differ in length")
        for i, (eta, w1, cl) in enumerate(zip(self.steps, self.w1_estimates, self.clamped)):
            if eta < 0:
                raise ValueError(f"critic {i}: negative step")
            if not cl and abs(eta - self.theta * w1) > 1e-12:
                raise ValueError(f"critic {i}: step {eta} != theta * W1 estimate")
            if cl and eta != 0:
                raise ValueError(f"critic {i}: clamped step must be 0")
        return self


def step_size(w1_hat, theta, flag=False):
    """``max(0, theta * w1_hat)``; with ``flag`` also report whether it clamped."""
    if not 0 < theta < 1:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    clamped = w1_hat <= 0
    eta = 0.0 if clamped else theta * float(w1_hat)
    return (eta, clamped) if flag else eta


def push_sample(stack, x0, n=None):
    """Apply the first ``n`` TTC steps (all of them by default) to ``x0``.

    ``x0`` is one point of shape ``(d,)`` or a batch of shape ``(B, d)``.
    """
    n = len(stack) if n is None else n
    if not 0 <= n <= len(stack):
        raise ValueError(f"n must be in [0, {len(stack)}], got {n}")
    x = np.asarray(x0, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.ndim != 2 or x.shape[1] != stack.input_dim:
        raise ValueError(f"expected points of dimension {stack.input_dim}, got shape {np.shape(x0)}")
    for critic, eta in zip(stack.critics[:n], stack.steps[:n]):
        if eta:
            x = x - eta * critic.grad_x(x)
    return x[0] if single else x


def pushed_sampler(stack, source_sampler):
    """Sampler for ``mu_n``: draw from the source, push through ``stack``."""
    def sample(rng, m):
        return push_sample(stack, source_sampler(rng, m))
    return sample


def ttc_train(config, source_sampler, target_sampler, input_dim, callback=None):
    """Algorithm-1 training loop.

    Critic 0 starts from a fresh Glorot initialization seeded by
    ``config.seed``; critic ``n`` starts from trained critic ``n-1``.  Each
    critic gets a fresh Adam state.  ``callback(n, i, loss, stack)`` is called
    after every critic iteration.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    stack = CriticStack(config.theta, input_dim)
    critic = init_critic(config.layer_dims(input_dim), config.seed)
    for n in range(config.n_critics):
        cb = None
        if callback is not None:
            cb = lambda i, loss, n=n: callback(n, i, loss, stack)
        critic, history = train_critic(critic, pushed_sampler(stack, source_sampler),
                                       target_sampler, config.critic_iters,
                                       config.batch_size, config.lam, config.adam, rng, cb)
        stack.append(critic, estimate_w1(history))
    return stack


def analytic_ttc(source, target, potential, theta, n_steps, w1):
    """TTC driven by exact potentials and exact W1 step sizes.

    ``potential`` is a fixed potential (anything with ``grad_x``) or a
    factory ``potential(pushed, target)``.  ``w1(xs, ys)`` is the oracle
    distance.  Returns the stack and the oracle W1 at iterates ``0..n_steps``.
    """
    x = np.asarray(source, dtype=np.float64)
    stack = CriticStack(theta, x.shape[1])
    dists = [w1(x, target)]
    for _ in range(n_steps):
        u = potential if hasattr(potential, "grad_x") else potential(x, target)
        eta = stack.append(u, dists[-1])
        x = x - eta * u.grad_x(x)
        dists.append(w1(x, target))
    return stack, dists


def predicted_w1(n, theta, w1_0):
    """Geometric decay ``(1 - theta)^n * w1_0``."""
    if n < 0:
        raise ValueError("n must be non-negative")
    return (1.0 - theta) ** n * w1_0


def n_theta(ell0, w1_0, theta):
    """Number of steps covered by the geometric-rate guarantee.

    Returns the integer N with ``(1-theta)^N > 1 - ell0/w1_0 >= (1-theta)^(N+1)``,
    ``-1`` when ``ell0 == 0`` and :data:`UNBOUNDED` when ``ell0 == w1_0``.
    """
    if not 0 < theta < 1:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    if w1_0 <= 0:
        raise ValueError("w1_0 must be positive")
    if ell0 < 0:
        raise ValueError("ell0 must be non-negative")
    if ell0 > w1_0:
        raise ValueError(f"ell0 = {ell0} exceeds w1_0 = {w1_0}; an essinf cannot exceed the mean")
    if ell0 == w1_0:
        return UNBOUNDED
    q = 1.0 - theta
    target = 1.0 - ell0 / w1_0
    n = math.ceil(math.log(target) / math.log(q)) - 1
    # log rounding can misplace the ceiling on exact powers; settle it with integer powers
    while q ** (n + 1) > target:
        n += 1
    while n >= 0 and q ** n <= target:
        n -= 1
    return n
