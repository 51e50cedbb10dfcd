"""Critic networks, the penalized WGAN loss, Adam, and critic training."""

from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Graph, Node

SLOPE = 0.2
ACTIVATIONS = ("leaky_relu", "tanh")


@dataclass
class CriticNet:
    """Fully connected critic ``u: R^d -> R``.

    ``weights[i]`` has shape ``(layer_dims[i], layer_dims[i+1])`` so a batch
    ``x`` of shape ``(B, d)`` maps through ``x @ W + b``.
    """

    layer_dims: list
    weights: list
    biases: list
    activation: str = "leaky_relu"

    def __post_init__(self):
        self.layer_dims = [int(d) for d in self.layer_dims]
        if self.layer_dims[-1] != 1:
            raise ValueError("critic output dimension must be 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("layer count does not match layer_dims")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_dims[i], self.layer_dims[i + 1])
            if w.shape != shape or b.shape != (shape[1],):
                raise ValueError(f"layer {i}: expected weight {shape}, got {w.shape}/{b.shape}")

    @property
    def input_dim(self):
        return self.layer_dims[0]

    def params(self):
        """Flat parameter list ``[W0, b0, W1, b1, ...]``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_params(self, params):
        return replace(self, weights=[np.array(p) for p in params[0::2]],
                       biases=[np.array(p) for p in params[1::2]])

    def copy(self):
        return self.with_params(self.params())

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(f"critic expects inputs of dimension {self.input_dim}, got shape {x.shape}")
        return x

    def _act(self, z):
        if self.activation == "tanh":
            return np.tanh(z)
        return np.where(z > 0, z, SLOPE * z)

    def _act_deriv(self, z):
        if self.activation == "tanh":
            return 1.0 - np.tanh(z) ** 2
        # negative-slope branch at exactly 0
        return np.where(z > 0, 1.0, SLOPE)

    def __call__(self, x):
        """Critic values, shape ``(B,)``."""
        h = self._check(x)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = self._act(h)
        return h[:, 0]

    def grad_x(self, x):
        """Input gradients of the critic, shape ``(B, d)``.

        Hand-written backprop for pushing samples; the differentiable version
        lives in :func:`input_gradient`.
        """
        h = self._check(x)
        pre = []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if i < last:
                pre.append(z)
                h = self._act(z)
        g = np.repeat(self.weights[-1].T, h.shape[0], axis=0)
        for i in range(last - 1, -1, -1):
            g = (g * self._act_deriv(pre[i])) @ self.weights[i].T
        return g


def init_critic(layer_dims, seed, activation="leaky_relu"):
    """Glorot-uniform weights, zero biases, deterministic in ``seed``."""
    dims = list(layer_dims)
    if len(dims) < 2 or any(int(d) <= 0 for d in dims):
        raise ValueError(f"invalid layer dims {layer_dims!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return CriticNet(dims, weights, biases, activation)


# -- graph construction

def mlp(g: Graph, x: Node, params, n_layers, activation="leaky_relu"):
    """Fully connected network on the rows of ``x``; no activation on the last layer."""
    h = x
    for i in range(n_layers):
        h = g.add_row(g.matmul(h, params[2 * i]), params[2 * i + 1])
        if i < n_layers - 1:
            h = g.tanh(h) if activation == "tanh" else g.leaky_relu(h, SLOPE)
    return h


def build_critic(g: Graph, x: Node, params, n_layers, activation="leaky_relu"):
    """Critic values of the rows of ``x`` as a ``(B,)`` node."""
    return g.sum_cols(mlp(g, x, params, n_layers, activation))


def input_gradient(g: Graph, x: Node, params, n_layers, activation="leaky_relu"):
    """Node for ``grad_x u`` at each row of ``x``; differentiable in ``params``.

    Rows are independent, so the gradient of the batch sum is the per-row
    gradient.
    """
    u = build_critic(g, x, params, n_layers, activation)
    return g.grad(g.sum(u), [x])[0]


def _param_inputs(g, n_layers, prefix=""):
    params = []
    for i in range(n_layers):
        params += [g.input(f"{prefix}W{i}"), g.input(f"{prefix}b{i}")]
    return params


def _param_bindings(net, prefix=""):
    out = {}
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        out[f"{prefix}W{i}"] = w
        out[f"{prefix}b{i}"] = b
    return out


def critic_input_gradient(critic, x):
    """Evaluate ``grad_x u(x)`` through the autodiff graph."""
    x = critic._check(x)
    g = Graph()
    n = len(critic.weights)
    params = _param_inputs(g, n)
    xn = g.input("x")
    gx = input_gradient(g, xn, params, n, critic.activation)
    return g.evaluate({"x": x, **_param_bindings(critic)}, [gx])[0]


class PenaltyGraph:
    """``lam * sum_j (|grad_x u(x_j)| - 1)_+^2`` and its parameter gradients."""

    def __init__(self, n_layers, lam, activation="leaky_relu"):
        g = self.graph = Graph()
        self.params = _param_inputs(g, n_layers)
        x = g.input("x")
        gx = input_gradient(g, x, self.params, n_layers, activation)
        hinge = g.relu(g.sub(g.row_norms(gx), g.ones_like(g.sum_cols(gx))))
        self.penalty = g.scale(g.sum(g.square(hinge)), lam)
        self.grads = g.grad(self.penalty, self.params)

    def __call__(self, critic, x):
        vals = self.graph.evaluate({"x": critic._check(x), **_param_bindings(critic)},
                                   [self.penalty] + self.grads)
        return float(vals[0]), vals[1:]


def penalty_param_gradient(critic, x_tilde, lam):
    """Penalty value and its gradient w.r.t. ``critic.params()`` (summed over rows)."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    return PenaltyGraph(len(critic.weights), lam, critic.activation)(critic, x_tilde)


class LossGraph:
    """Compiled minibatch critic loss

        mean_j [ u(y_j) - u(x_j) + lam (|grad u(xt_j)| - 1)_+^2 ],
        xt_j = (1 - t_j) x_j + t_j y_j

    plus its gradient with respect to every weight and bias.
    """

    def __init__(self, n_layers, lam, activation="leaky_relu"):
        self.n_layers = n_layers
        self.lam = lam
        g = self.graph = Graph()
        self.params = _param_inputs(g, n_layers)
        xs, ys, ts = g.input("xs"), g.input("ys"), g.input("ts")
        xt = g.add(xs, g.mul(g.bcast_cols(ts, xs), g.sub(ys, xs)))
        u_x = build_critic(g, xs, self.params, n_layers, activation)
        u_y = build_critic(g, ys, self.params, n_layers, activation)
        gx = input_gradient(g, xt, self.params, n_layers, activation)
        norms = g.row_norms(gx)
        hinge = g.relu(g.sub(norms, g.ones_like(norms)))
        terms = g.add(g.sub(u_y, u_x), g.scale(g.square(hinge), lam))
        self.m = g.input("inv_m")  # 1/M, bound per call so batch size can vary
        self.loss = g.mul(g.sum(terms), self.m)
        self.grads = g.grad(self.loss, self.params)

    def __call__(self, critic, xs, ys, ts, with_grad=True):
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        ts = np.asarray(ts, dtype=np.float64).reshape(-1)
        if not (len(xs) == len(ys) == len(ts)) or len(xs) == 0:
            raise ValueError(f"batch size mismatch: {len(xs)}, {len(ys)}, {len(ts)}")
        xs, ys = critic._check(xs), critic._check(ys)
        bind = {"xs": xs, "ys": ys, "ts": ts, "inv_m": np.asarray(1.0 / len(xs)),
                **_param_bindings(critic)}
        outs = [self.loss] + (self.grads if with_grad else [])
        vals = self.graph.evaluate(bind, outs)
        return float(vals[0]), vals[1:]


_LOSS_GRAPHS = {}


def loss_graph(n_layers, lam, activation="leaky_relu"):
    key = (n_layers, float(lam), activation)
    if key not in _LOSS_GRAPHS:
        _LOSS_GRAPHS[key] = LossGraph(n_layers, lam, activation)
    return _LOSS_GRAPHS[key]


def critic_minibatch_loss(critic, xs, ys, ts, lam):
    """Penalized minibatch loss and its parameter gradients."""
    return loss_graph(len(critic.weights), lam, critic.activation)(critic, xs, ys, ts)


# -- Adam

@dataclass
class AdamConfig:
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    config: AdamConfig = field(default_factory=AdamConfig)

    @classmethod
    def zeros(cls, params, config=None):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params],
                   0, config or AdamConfig())


def adam_step(params, grads, state):
    """One bias-corrected Adam step; returns ``(new_params, new_state)``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state differ in length")
    cfg = state.config
    t = state.t + 1
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}")
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * (g * g)
        new_p.append(p - cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t, cfg)


# -- training

def train_critic(critic, source_sampler, target_sampler, C, M, lam, adam=None, rng=None,
                 callback=None):
    """Run ``C`` Adam steps on the penalized loss.

    Samplers are ``sampler(rng, n) -> (n, d)`` arrays.  Each iteration draws
    the source batch, then the target batch, then the interpolation weights,
    all from ``rng``.  Returns the trained critic and the list of ``C`` losses.
    """
    if C < 1 or M < 1:
        raise ValueError("C and M must be positive")
    rng = rng if rng is not None else np.random.default_rng()
    adam = adam or AdamConfig()
    lg = loss_graph(len(critic.weights), lam, critic.activation)
    params = critic.params()
    state = AdamState.zeros(params, adam)
    history = []
    for i in range(C):
        xs = np.asarray(source_sampler(rng, M), dtype=np.float64)
        ys = np.asarray(target_sampler(rng, M), dtype=np.float64)
        if xs.shape != (M, critic.input_dim) or ys.shape != (M, critic.input_dim):
            raise ValueError(f"sampler returned {xs.shape} / {ys.shape}, "
                             f"expected ({M}, {critic.input_dim})")
        ts = rng.uniform(size=M)
        loss, grads = lg(critic, xs, ys, ts)
        if not np.isfinite(loss):
            raise FloatingPointError(f"critic loss diverged at iteration {i}")
        history.append(loss)
        params, state = adam_step(params, grads, state)
        critic = critic.with_params(params)
        if callback is not None:
            callback(i, loss)
    return critic, history


def estimate_w1(history, window=100):
    """Negated mean of the trailing ``window`` losses."""
    if len(history) < window:
        raise ValueError(f"need at least {window} losses, got {len(history)}")
    return -float(np.mean(history[-window:]))
