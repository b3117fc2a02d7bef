"""Dense-network substrate: reverse-mode autodiff on numpy arrays, tanh MLPs,
Gaussian/categorical action heads, and a bias-corrected Adam optimizer.

Everything runs on float64 numpy and is deterministic for a fixed seed on a
single thread.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

LOGSTD_MIN = -5.0
LOGSTD_MAX = 2.0


class DimensionMismatch(ValueError):
    """Input width does not match the first layer of the network."""


# ---------------------------------------------------------------------------
# Reverse-mode tape


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    """A numpy array plus the tape closure that routes gradients to parents."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None):
        self.data = np.asarray(data, dtype=float)
        self.grad = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    # -- graph walk ---------------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() expects a scalar loss")
        order, seen = [], set()

        def visit(t):
            if id(t) in seen:
                return
            seen.add(id(t))
            for p in t._parents:
                visit(p)
            order.append(t)

        visit(self)
        for t in order:
            t.grad = np.zeros_like(t.data)
        self.grad = np.ones_like(self.data)
        for t in reversed(order):
            if t._backward is not None:
                t._backward()

    # -- primitive ops ------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data + other.data, (self, other))

        def back():
            self.grad += _unbroadcast(out.grad, self.data.shape)
            other.grad += _unbroadcast(out.grad, other.data.shape)

        out._backward = back
        return out

    def __mul__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data * other.data, (self, other))

        def back():
            self.grad += _unbroadcast(out.grad * other.data, self.data.shape)
            other.grad += _unbroadcast(out.grad * self.data, other.data.shape)

        out._backward = back
        return out

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    __radd__ = __add__
    __rmul__ = __mul__

    def matmul(self, other):
        other = as_tensor(other)
        out = Tensor(self.data @ other.data, (self, other))

        def back():
            self.grad += out.grad @ other.data.T
            other.grad += self.data.T @ out.grad

        out._backward = back
        return out

    def __matmul__(self, other):
        return self.matmul(other)

    def tanh(self):
        th = np.tanh(self.data)
        out = Tensor(th, (self,))
        out._backward = lambda: self.grad.__iadd__(out.grad * (1.0 - th * th))
        return out

    def exp(self):
        e = np.exp(self.data)
        out = Tensor(e, (self,))
        out._backward = lambda: self.grad.__iadd__(out.grad * e)
        return out

    def log(self):
        out = Tensor(np.log(self.data), (self,))
        out._backward = lambda: self.grad.__iadd__(out.grad / self.data)
        return out

    def square(self):
        out = Tensor(self.data * self.data, (self,))
        out._backward = lambda: self.grad.__iadd__(out.grad * 2.0 * self.data)
        return out

    def softplus(self):
        # log(1 + e^x), computed stably; derivative is the sigmoid.
        out = Tensor(np.logaddexp(0.0, self.data), (self,))

        def back():
            self.grad += out.grad / (1.0 + np.exp(-self.data))

        out._backward = back
        return out

    def clip(self, lo, hi):
        out = Tensor(np.clip(self.data, lo, hi), (self,))
        inside = (self.data > lo) & (self.data < hi)
        out._backward = lambda: self.grad.__iadd__(out.grad * inside)
        return out

    def minimum(self, other):
        other = as_tensor(other)
        take_self = self.data <= other.data
        out = Tensor(np.where(take_self, self.data, other.data), (self, other))

        def back():
            self.grad += _unbroadcast(out.grad * take_self, self.data.shape)
            other.grad += _unbroadcast(out.grad * ~take_self, other.data.shape)

        out._backward = back
        return out

    def sum(self, axis=None):
        out = Tensor(self.data.sum(axis=axis), (self,))

        def back():
            g = out.grad
            if axis is not None:
                g = np.expand_dims(g, axis)
            self.grad += np.broadcast_to(g, self.data.shape)

        out._backward = back
        return out

    def mean(self, axis=None):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis) * (1.0 / n)

    def logsumexp(self, axis):
        m = self.data.max(axis=axis, keepdims=True)
        e = np.exp(self.data - m)
        s = e.sum(axis=axis, keepdims=True)
        out = Tensor(np.squeeze(m + np.log(s), axis=axis), (self,))

        def back():
            g = np.expand_dims(out.grad, axis)
            self.grad += g * (e / s)

        out._backward = back
        return out

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(shape), (self,))
        out._backward = lambda: self.grad.__iadd__(
            out.grad.reshape(self.data.shape))
        return out

    def gather(self, index):
        """Pick one entry per row: out[b] = self[b, index[b]]."""
        index = np.asarray(index, dtype=int)
        rows = np.arange(self.data.shape[0])
        out = Tensor(self.data[rows, index], (self,))

        def back():
            np.add.at(self.grad, (rows, index), out.grad)

        out._backward = back
        return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def zero_grads(params) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# MLP


def orthogonal_init(rng, n_in, n_out, gain) -> np.ndarray:
    a = rng.normal(size=(max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))  # fix the QR sign ambiguity
    if n_in < n_out:
        q = q.T
    return np.ascontiguousarray(gain * q[:n_in, :n_out])


@dataclass
class Mlp:
    """Affine+tanh chain with a linear final layer; weights are (in, out)."""

    weights: list
    biases: list

    @property
    def sizes(self):
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


def init_mlp(sizes, rng, hidden_gain=np.sqrt(2.0), out_gain=0.01) -> Mlp:
    weights, biases = [], []
    for k, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        gain = out_gain if k == len(sizes) - 2 else hidden_gain
        weights.append(Tensor(orthogonal_init(rng, n_in, n_out, gain)))
        biases.append(Tensor(np.zeros(n_out)))
    return Mlp(weights, biases)


def mlp_forward(mlp: Mlp, x) -> Tensor:
    x = as_tensor(x)
    if x.data.shape[-1] != mlp.weights[0].data.shape[0]:
        raise DimensionMismatch(
            f"input width {x.data.shape[-1]} != {mlp.weights[0].data.shape[0]}"
        )
    h = x
    last = len(mlp.weights) - 1
    for k, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        h = h @ w + b
        if k != last:
            h = h.tanh()
    return h


def mlp_forward_np(mlp: Mlp, x) -> np.ndarray:
    """Tape-free forward pass for rollout hot paths."""
    h = np.asarray(x, dtype=float)
    last = len(mlp.weights) - 1
    for k, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        h = h @ w.data + b.data
        if k != last:
            h = np.tanh(h)
    return h


# ---------------------------------------------------------------------------
# Distribution heads

_LOG_2PI = np.log(2.0 * np.pi)


def gaussian_logprob(mean, log_std, actions) -> Tensor:
    """Diagonal-Gaussian log density per row."""
    mean, log_std = as_tensor(mean), as_tensor(log_std)
    d = mean.data.shape[-1]
    z = (as_tensor(actions) - mean) * (-log_std).exp()
    return (z.square() * -0.5).sum(axis=-1) - log_std.sum() - 0.5 * d * _LOG_2PI


def gaussian_entropy(log_std) -> Tensor:
    log_std = as_tensor(log_std)
    d = log_std.data.size
    return log_std.sum() + 0.5 * d * (1.0 + _LOG_2PI)


def gaussian_sample(mean, log_std, rng) -> np.ndarray:
    mean = np.asarray(mean, dtype=float)
    return mean + np.exp(log_std) * rng.standard_normal(mean.shape)


def categorical_logprob(logits, index) -> Tensor:
    logits = as_tensor(logits)
    return logits.gather(index) - logits.logsumexp(axis=1)


def categorical_entropy(logits) -> Tensor:
    """Per-row softmax entropy, differentiable through the logits."""
    logits = as_tensor(logits)
    logp = logits - logits.logsumexp(axis=1).reshape(-1, 1)
    return -(logp.exp() * logp).sum(axis=1)


def softmax(logits) -> np.ndarray:
    logits = np.asarray(logits, dtype=float)
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def categorical_sample(logits, rng):
    p = softmax(logits)
    if p.ndim == 1:
        return int(rng.choice(len(p), p=p))
    u = rng.random(p.shape[0])
    idx = (p.cumsum(axis=1) < u[:, None]).sum(axis=1)
    return np.minimum(idx, p.shape[1] - 1)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params, lr: float = 5e-4) -> AdamState:
    return AdamState(
        m=[np.zeros_like(p.data) for p in params],
        v=[np.zeros_like(p.data) for p in params],
        lr=lr,
    )


def adam_step(params, state: AdamState) -> None:
    """Bias-corrected moment update; parameters with grad None are skipped."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, m, v in zip(params, state.m, state.v):
        if p.grad is None:
            continue
        m *= b1
        m += (1.0 - b1) * p.grad
        v *= b2
        v += (1.0 - b2) * p.grad * p.grad
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------------------
# Checkpoint container (MLP1)

_MAGIC = b"MLP1"


def save_arrays(path, arrays: dict, meta: dict | None = None) -> None:
    """Write named float64 arrays to a little-endian, length-prefixed binary."""
    names = list(arrays)
    head = {
        "version": 1,
        "names": names,
        "shapes": {n: list(np.shape(arrays[n])) for n in names},
        "meta": meta or {},
    }
    blob = json.dumps(head).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for n in names:
            raw = np.ascontiguousarray(arrays[n], dtype="<f8").tobytes()
            fh.write(struct.pack("<Q", len(raw)))
            fh.write(raw)


def load_arrays(path):
    """Read an MLP1 file back into ({name: array}, meta)."""
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path}: not an MLP1 checkpoint")
        (head_len,) = struct.unpack("<I", fh.read(4))
        head = json.loads(fh.read(head_len))
        if head.get("version") != 1:
            raise ValueError(f"unsupported MLP1 version {head.get('version')}")
        arrays = {}
        for n in head["names"]:
            (nbytes,) = struct.unpack("<Q", fh.read(8))
            arr = np.frombuffer(fh.read(nbytes), dtype="<f8")
            arrays[n] = arr.reshape(head["shapes"][n]).copy()
    return arrays, head["meta"]
