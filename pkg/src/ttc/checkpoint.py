"""Binary checkpoint for trained critic stacks.

Layout (little-endian throughout)::

    b"TTC1"                      magic
    u32  version                 (1)
    f64  theta
    u32  N                       number of critics
    N times:
        u32  L                   number of weight layers
        u32  dims[L + 1]
        L times:
            f64  W[dims[i] * dims[i+1]]   row-major, W has shape (in, out)
            f64  b[dims[i+1]]
        f64  eta
        f64  w1_estimate
        u8   clamped flag

An empty stack (N = 0) has no way to record its input dimension and loads
with ``input_dim = 0``.
"""

import struct

import numpy as np

from .critic import CriticNet
from .engine import CriticStack

MAGIC = b"TTC1"
VERSION = 1


class CheckpointError(Exception):
    """Unreadable, truncated or foreign checkpoint data."""


def dumps(stack):
    out = [MAGIC, struct.pack("<Id", VERSION, float(stack.theta)), struct.pack("<I", len(stack))]
    for critic, eta, w1, cl in zip(stack.critics, stack.steps, stack.w1_estimates, stack.clamped):
        if not isinstance(critic, CriticNet) or critic.activation != "leaky_relu":
            raise TypeError("only leaky-ReLU CriticNet stacks can be checkpointed")
        dims = critic.layer_dims
        out.append(struct.pack(f"<I{len(dims)}I", len(dims) - 1, *dims))
        for w, b in zip(critic.weights, critic.biases):
            out.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
            out.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
        out.append(struct.pack("<ddB", float(eta), float(w1), 1 if cl else 0))
    return b"".join(out)


class _Reader:
    def __init__(self, data):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, n):
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64)


def loads(data):
    r = _Reader(data)
    if bytes(r.take(4)) != MAGIC:
        raise CheckpointError("bad magic; not a TTC checkpoint")
    version, theta = r.unpack("<Id")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (n,) = r.unpack("<I")
    stack = None
    critics = []
    for _ in range(n):
        (layers,) = r.unpack("<I")
        if layers == 0:
            raise CheckpointError("critic with no layers")
        dims = list(r.unpack(f"<{layers + 1}I"))
        weights, biases = [], []
        for i in range(layers):
            weights.append(r.floats(dims[i] * dims[i + 1]).reshape(dims[i], dims[i + 1]))
            biases.append(r.floats(dims[i + 1]))
        eta, w1, cl = r.unpack("<ddB")
        try:
            critic = CriticNet(dims, weights, biases)
        except ValueError as exc:
            raise CheckpointError(str(exc)) from exc
        critics.append((critic, eta, w1, bool(cl)))
    if r.pos != len(r.data):
        raise CheckpointError("trailing bytes after checkpoint")
    stack = CriticStack(theta, critics[0][0].input_dim if critics else 0)
    for critic, eta, w1, cl in critics:
        stack.critics.append(critic)
        stack.steps.append(eta)
        stack.w1_estimates.append(w1)
        stack.clamped.append(cl)
    try:
        return stack.check()
    except ValueError as exc:
        raise CheckpointError(str(exc)) from exc


def save(stack, path):
    with open(path, "wb") as f:
        f.write(dumps(stack))


def load(path):
    with open(path, "rb") as f:
        return loads(f.read())
