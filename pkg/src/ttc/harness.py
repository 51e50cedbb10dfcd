"""Experiment drivers: generator misalignment, toy WGAN-GP, denoising, and
the adversarial-regularization comparison."""

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Graph
from .critic import (SLOPE, AdamConfig, AdamState, _param_bindings, _param_inputs, adam_step,
                     critic_minibatch_loss, init_critic, mlp)
from .engine import ExperimentConfig, push_sample, ttc_train
from .tasks import add_noise, clean_signals, sampler


# -- generator

@dataclass
class ToyGenerator:
    """MLP ``G_w: R^k -> R^d`` fed with standard normal latents."""

    layer_dims: list
    weights: list
    biases: list

    @property
    def latent_dim(self):
        return self.layer_dims[0]

    @property
    def output_dim(self):
        return self.layer_dims[-1]

    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_params(self, params):
        return replace(self, weights=[np.array(p) for p in params[0::2]],
                       biases=[np.array(p) for p in params[1::2]])

    def __call__(self, z):
        h = np.atleast_2d(np.asarray(z, dtype=np.float64))
        if h.shape[1] != self.latent_dim:
            raise ValueError(f"expected latents of dimension {self.latent_dim}, got {h.shape}")
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.where(h > 0, h, SLOPE * h)
        return h

    def sample(self, rng, n):
        return self(rng.standard_normal((n, self.latent_dim)))


def init_generator(layer_dims, seed):
    c = init_critic(list(layer_dims[:-1]) + [1], seed)  # reuse the Glorot draw for hidden layers
    rng = np.random.default_rng([seed, 1])
    fan_in, fan_out = layer_dims[-2], layer_dims[-1]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    weights = c.weights[:-1] + [rng.uniform(-bound, bound, size=(fan_in, fan_out))]
    biases = c.biases[:-1] + [np.zeros(fan_out)]
    return ToyGenerator(list(layer_dims), weights, biases)


class GeneratorGraph:
    """Gradient of ``mean_i <G_w(z_i), c_i>`` w.r.t. ``w`` for fixed cotangents ``c_i``.

    With ``c_i = grad u(G_w(z_i))`` this is the gradient of the generator
    loss ``mean_i u(G_w(z_i))``, without putting the critic in the graph.
    """

    def __init__(self, n_layers):
        g = self.graph = Graph()
        self.params = _param_inputs(g, n_layers)
        z, cot = g.input("z"), g.input("cot")
        out = mlp(g, z, self.params, n_layers)
        self.loss = g.mul(g.sum(g.mul(out, cot)), g.input("inv_m"))
        self.grads = g.grad(self.loss, self.params)

    def __call__(self, gen, z, cot):
        return self.graph.evaluate({"z": z, "cot": cot, "inv_m": np.asarray(1.0 / len(z)),
                                    **_param_bindings(gen)}, self.grads)


_GEN_GRAPHS = {}


def generator_loss_grad(gen, critic, z):
    """Parameter gradient of ``mean_i u(G(z_i))``."""
    n = len(gen.weights)
    if n not in _GEN_GRAPHS:
        _GEN_GRAPHS[n] = GeneratorGraph(n)
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    return _GEN_GRAPHS[n](gen, z, critic.grad_x(gen(z)))


# -- misalignment

@dataclass
class MisalignmentResult:
    """Per-probe cosines between generator movement and ``-grad u``.

    ``defined`` is False where the displacement or the critic gradient
    vanishes (cosine reported as NaN).  ``drift`` is the cosine change when
    the probe learning rate is halved; ``first_order`` is ``drift < 1e-3``.
    """

    cosines: np.ndarray
    defined: np.ndarray
    drift: np.ndarray

    @property
    def first_order(self):
        return self.drift < 1e-3

    def valid(self):
        return self.cosines[self.defined]


def _cosines(delta, direction):
    nd = np.linalg.norm(delta, axis=1)
    ng = np.linalg.norm(direction, axis=1)
    ok = (nd > 0) & (ng > 0)
    cos = np.full(len(delta), np.nan)
    cos[ok] = np.clip((delta[ok] * direction[ok]).sum(1) / (nd[ok] * ng[ok]), -1.0, 1.0)
    return cos, ok


def _displacement(gen, critic, probe_zs, batch_zs, step_rule, lr, adam_state):
    params = gen.params()
    grads = generator_loss_grad(gen, critic, batch_zs)
    if step_rule == "sgd":
        new = [p - lr * g for p, g in zip(params, grads)]
    elif step_rule == "adam":
        state = adam_state or AdamState.zeros(params, AdamConfig(lr, 0.5, 0.999))
        state = replace(state, config=replace(state.config, lr=lr))
        new, _ = adam_step(params, grads, state)
    else:
        raise ValueError(f"unknown step rule {step_rule!r}")
    return gen.with_params(new)(probe_zs) - gen(probe_zs)


def misalignment_cosines(generator, critic, probe_zs, batch_zs, step_rule="sgd", tiny_lr=1e-6,
                         adam_state=None):
    """Cosine between the movement of ``G(z)`` under one optimizer step on the
    minibatch ``batch_zs`` and the transport direction ``-grad u(G(z))``.

    ``adam_state`` (for ``step_rule="adam"``) is the optimizer state the
    generator was trained with; it is copied, never modified.
    """
    probe_zs = np.atleast_2d(np.asarray(probe_zs, dtype=np.float64))
    batch_zs = np.atleast_2d(np.asarray(batch_zs, dtype=np.float64))
    direction = -critic.grad_x(generator(probe_zs))
    delta = _displacement(generator, critic, probe_zs, batch_zs, step_rule, tiny_lr, adam_state)
    half = _displacement(generator, critic, probe_zs, batch_zs, step_rule, tiny_lr / 2, adam_state)
    cos, ok = _cosines(delta, direction)
    cos_half, ok_half = _cosines(half, direction)
    drift = np.where(ok & ok_half, np.abs(cos - cos_half), np.inf)
    return MisalignmentResult(cos, ok, drift)


# -- toy WGAN-GP

@dataclass
class ToyWGANConfig:
    target: str = "gauss8ring"
    latent_dim: int = 8
    gen_hidden: tuple = (64, 64)
    critic_hidden: tuple = (64, 64, 64)
    gen_iters: int = 2000
    critic_per_gen: int = 5
    batch_size: int = 64
    lam: float = 1000.0
    lr_critic: float = 1e-4
    lr_gen: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0
    snapshots: tuple = (0.02, 0.5, 1.0)
    stage_names: tuple = ("early", "mid", "late")


@dataclass
class Snapshot:
    stage: str
    iteration: int
    generator: ToyGenerator
    critic: object
    gen_adam: AdamState


@dataclass
class ToyWGANRun:
    snapshots: list
    critic_losses: list = field(default_factory=list)

    def stage(self, name):
        for s in self.snapshots:
            if s.stage == name:
                return s
        raise KeyError(name)


def train_toy_wgan(config):
    """Alternating WGAN-GP: ``critic_per_gen`` critic steps, then one generator step.

    Snapshots (generator, critic, generator Adam state) are taken after the
    generator step at each fraction in ``config.snapshots``.
    """
    target = sampler(config.target)
    d = target(np.random.default_rng(0), 1).shape[1]
    rng = np.random.default_rng(config.seed)
    gen = init_generator([config.latent_dim, *config.gen_hidden, d], config.seed)
    critic = init_critic([d, *config.critic_hidden, 1], config.seed + 1)
    c_params = critic.params()
    c_state = AdamState.zeros(c_params, AdamConfig(config.lr_critic, config.beta1, config.beta2))
    g_state = AdamState.zeros(gen.params(), AdamConfig(config.lr_gen, config.beta1, config.beta2))
    marks = {max(1, int(round(f * config.gen_iters))): name
             for f, name in zip(config.snapshots, config.stage_names)}
    run = ToyWGANRun([])
    m = config.batch_size
    for it in range(1, config.gen_iters + 1):
        for _ in range(config.critic_per_gen):
            xs = gen.sample(rng, m)
            ys = target(rng, m)
            ts = rng.uniform(size=m)
            loss, grads = critic_minibatch_loss(critic, xs, ys, ts, config.lam)
            if not np.isfinite(loss):
                raise FloatingPointError(f"critic loss diverged at generator iteration {it}")
            run.critic_losses.append(loss)
            c_params, c_state = adam_step(c_params, grads, c_state)
            critic = critic.with_params(c_params)
        z = rng.standard_normal((m, config.latent_dim))
        g_params, g_state = adam_step(gen.params(), generator_loss_grad(gen, critic, z), g_state)
        gen = gen.with_params(g_params)
        if not all(np.all(np.isfinite(p)) for p in g_params):
            raise FloatingPointError(f"generator diverged at iteration {it}")
        if it in marks:
            run.snapshots.append(Snapshot(marks[it], it, gen, critic, g_state))
    return run


def misalignment_experiment(config, n_probe=256, batch=None, step_rule="sgd", tiny_lr=1e-6):
    """Train a toy WGAN and probe each snapshot.  Returns ``{stage: MisalignmentResult}``."""
    run = train_toy_wgan(config)
    rng = np.random.default_rng([config.seed, 7])
    batch = batch or config.batch_size
    out = {}
    for snap in run.snapshots:
        probe = rng.standard_normal((n_probe, config.latent_dim))
        zs = rng.standard_normal((batch, config.latent_dim))
        out[snap.stage] = misalignment_cosines(snap.generator, snap.critic, probe, zs, step_rule,
                                               tiny_lr, snap.gen_adam)
    return out


# -- denoising

def psnr(clean, restored, peak=1.0):
    """Peak signal-to-noise ratio in dB; ``inf`` for a perfect restoration."""
    clean = np.asarray(clean, dtype=np.float64)
    restored = np.asarray(restored, dtype=np.float64)
    if clean.shape != restored.shape:
        raise ValueError(f"shape mismatch {clean.shape} vs {restored.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((clean - restored) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def denoise(stack, noisy):
    """Push noisy signals through every step of the stack."""
    noisy = np.asarray(noisy, dtype=np.float64)
    if noisy.shape[-1] != stack.input_dim:
        raise ValueError(f"signals have dimension {noisy.shape[-1]}, stack expects {stack.input_dim}")
    return push_sample(stack, noisy)


def denoising_test_set(rng, n, sigma):
    clean = clean_signals(rng, n)
    return clean, add_noise(rng, clean, sigma)


def denoising_experiment(config, n_test=200, test_seed=None):
    """Train a noisy-to-clean stack and score it on a fresh paired test set.

    Returns ``(stack, rows)`` with rows ``(index, psnr_noisy, psnr_denoised)``.
    """
    stack = ttc_train(config, sampler("noisy_signal", config.sigma), sampler("signal"),
                      clean_signals(np.random.default_rng(0), 1).shape[1])
    rng = np.random.default_rng([config.seed if test_seed is None else test_seed, 99])
    clean, noisy = denoising_test_set(rng, n_test, config.sigma)
    restored = denoise(stack, noisy)
    rows = [(i, psnr(c, n), psnr(c, r)) for i, (c, n, r) in enumerate(zip(clean, noisy, restored))]
    return stack, rows


def denoising_config(sigma=0.15, seed=0, **kw):
    """Desk-scale denoising defaults: theta 0.7, ten critics."""
    base = dict(n_critics=10, critic_iters=2000, theta=0.7, seed=seed, sigma=sigma,
                source="noisy_signal", target="signal")
    base.update(kw)
    return ExperimentConfig(**base)


# -- adversarial regularization

def _grid_search(objective, center, radius, levels=30, points=41):
    best = np.asarray(center, dtype=np.float64)
    d = len(best)
    for _ in range(levels):
        axes = [np.linspace(c - radius, c + radius, points) for c in best]
        grid = np.array(list(itertools.product(*axes))) if d > 1 else axes[0][:, None]
        vals = objective(grid)
        best = grid[np.argmin(vals)]
        radius *= 4.0 / (points - 1)
    return best


def advreg_solve(u0, x0, eta, steps=200, lr=0.5, tol=1e-12):
    """Minimize ``0.5 |x - x0|^2 + eta u0(x)``.

    Gradient descent from ``x0``; if it does not reach a stationary point and
    ``d <= 2``, a zooming grid search over the ball of radius ``eta`` around
    ``x0`` (where every minimizer lies) is run and the better point returned.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1)

    def objective(pts):
        pts = np.atleast_2d(pts)
        return 0.5 * ((pts - x0) ** 2).sum(1) + eta * np.asarray(u0(pts)).reshape(-1)

    x = x0.copy()
    converged = False
    for _ in range(steps):
        try:
            g = (x - x0) + eta * u0.grad_x(x[None, :])[0]
        except ValueError:
            break  # landed on a point where u0 is not differentiable
        if np.linalg.norm(g) < tol:
            converged = True
            break
        x = x - lr * g
    if converged:
        return x
    if len(x0) > 2:
        raise RuntimeError("gradient descent did not converge and grid search needs d <= 2")
    # |x* - x0| <= eta since u0 is 1-Lipschitz
    y = _grid_search(objective, x0, eta * 1.05)
    return y if objective(y)[0] <= objective(x)[0] else x
