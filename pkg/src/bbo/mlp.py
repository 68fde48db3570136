"""Feedforward networks with a flat parameter vector, manual backprop and Adam.

Parameter layout (per layer, in order): weight matrix ``W`` of shape
``(fan_in, fan_out)`` stored row-major, followed by bias ``b`` of length
``fan_out``. Hidden layers use the configured activation; the output layer is
always affine.

Every routine also accepts a *stack* of parameter vectors with shape
``(L, n_params)`` together with inputs of shape ``(L, B, fan_in)``. This lets an
ensemble of identically shaped networks run as one batched matmul, which is
how the actor-critic trains all members at once.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import Rng

ACTIVATIONS = ("relu", "tanh", "identity")
_MAGIC = b"BBOMLP01"


def n_params_for(sizes) -> int:
    return int(sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:])))


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name, z, h):
    # derivative of the activation given pre-activation z and output h
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    if name == "tanh":
        return 1.0 - h * h
    return np.ones_like(z)


class MLP:
    """A fully-connected network ``sizes[0] -> ... -> sizes[-1]``.

    Args:
        sizes: layer widths including input and output.
        activation: hidden nonlinearity, one of ``relu``, ``tanh``, ``identity``.
        params: flat parameter vector (or ``(L, n_params)`` stack). Zeros if omitted.
    """

    def __init__(self, sizes, activation="relu", params=None):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.sizes = tuple(int(s) for s in sizes)
        self.activation = activation
        self.n_params = n_params_for(self.sizes)
        if params is None:
            params = np.zeros(self.n_params)
        params = np.asarray(params, dtype=float)
        if params.shape[-1] != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {params.shape[-1]}")
        self.params = params

    def copy(self, params=None) -> "MLP":
        return MLP(self.sizes, self.activation, self.params.copy() if params is None else params)

    # ------------------------------------------------------------------ layout
    def unflatten(self, params):
        """Return a list of ``(W, b)`` views into ``params`` (no copies)."""
        params = np.asarray(params)
        lead = params.shape[:-1]
        out, k = [], 0
        for fi, fo in zip(self.sizes[:-1], self.sizes[1:]):
            w = params[..., k : k + fi * fo].reshape(*lead, fi, fo)
            k += fi * fo
            b = params[..., k : k + fo]
            k += fo
            out.append((w, b))
        return out

    def flatten(self, layers) -> np.ndarray:
        parts = []
        for w, b in layers:
            lead = w.shape[:-2]
            parts.append(w.reshape(*lead, -1))
            parts.append(b)
        return np.concatenate(parts, axis=-1)

    # ----------------------------------------------------------------- forward
    def _prep(self, x, params):
        params = self.params if params is None else np.asarray(params, dtype=float)
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[-1] != self.sizes[0]:
            raise ValueError(f"input has {x.shape[-1]} features, network expects {self.sizes[0]}")
        return x, params, squeeze

    def forward(self, x, params=None) -> np.ndarray:
        out, _ = self.forward_cache(x, params)
        return out

    __call__ = forward

    def forward_cache(self, x, params=None):
        x, params, squeeze = self._prep(x, params)
        layers = self.unflatten(params)
        cache = {"inputs": [], "pre": [], "post": [], "squeeze": squeeze, "params": params}
        h = x
        last = len(layers) - 1
        for i, (w, b) in enumerate(layers):
            cache["inputs"].append(h)
            z = h @ w + b[..., None, :]
            if i < last:
                a = _act(self.activation, z)
            else:
                a = z
            cache["pre"].append(z)
            cache["post"].append(a)
            h = a
        out = h[0] if squeeze else h
        return out, cache

    # ---------------------------------------------------------------- backward
    def backward(self, cache, dout, input_grad=False):
        """Vector-Jacobian product of the network outputs.

        Args:
            cache: from :meth:`forward_cache`.
            dout: upstream gradient, same shape as the forward output.
            input_grad: also return the gradient w.r.t. the inputs.

        Returns:
            Flat parameter gradient (summed over the batch axis), and the input
            gradient when requested.
        """
        params = cache["params"]
        layers = self.unflatten(params)
        d = np.asarray(dout, dtype=float)
        if cache["squeeze"]:
            d = d[None, :]
        grads = [None] * len(layers)
        last = len(layers) - 1
        for i in range(last, -1, -1):
            w, _ = layers[i]
            if i < last:
                d = d * _act_grad(self.activation, cache["pre"][i], cache["post"][i])
            x_in = cache["inputs"][i]
            gw = np.swapaxes(x_in, -1, -2) @ d
            gb = d.sum(axis=-2)
            grads[i] = (gw, gb)
            if i > 0 or input_grad:
                d = d @ np.swapaxes(w, -1, -2)
        flat = self.flatten(grads)
        if input_grad:
            dx = d[0] if cache["squeeze"] else d
            return flat, dx
        return flat

    def value_and_grad(self, x, params=None):
        """Scalar output and its gradient w.r.t. the flat parameters for one input."""
        if self.sizes[-1] != 1:
            raise ValueError("value_and_grad needs a scalar-output network")
        x = np.asarray(x, dtype=float)
        if x.ndim != 1:
            raise ValueError("value_and_grad takes a single input vector")
        out, cache = self.forward_cache(x, params)
        grad = self.backward(cache, np.ones(1))
        return float(out[0]), grad

    def batch_value_and_jacobian(self, x, params=None):
        """Per-sample values ``(B,)`` and parameter Jacobian ``(B, n_params)``.

        Costs B backward passes worth of memory; meant for small nets and
        batches (TDC feature maps, tests).
        """
        if self.sizes[-1] != 1:
            raise ValueError("jacobian needs a scalar-output network")
        x = np.atleast_2d(np.asarray(x, dtype=float))
        p = self.params if params is None else np.asarray(params, dtype=float)
        stack = np.broadcast_to(p, (x.shape[0], p.shape[-1]))
        out, cache = self.forward_cache(x[:, None, :], stack)
        jac = self.backward(cache, np.ones_like(out))
        return out[:, 0, 0], jac

    def hessian_vector_product(self, x, vec, params=None, coef=None, h=1e-5):
        """``sum_b c_b d^2 f(x_b)/dp^2 @ vec`` by central differences of the analytic gradient.

        ``coef`` weights each sample's output (ones by default).
        """
        p = self.params if params is None else np.asarray(params, dtype=float)
        vec = np.asarray(vec, dtype=float)
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            return np.zeros_like(p)
        step = h / norm

        def grad_sum(q):
            out, cache = self.forward_cache(x, q)
            d = np.ones_like(out) if coef is None else np.asarray(coef, dtype=float).reshape(out.shape)
            return self.backward(cache, d)

        return (grad_sum(p + step * vec) - grad_sum(p - step * vec)) / (2.0 * step)

    # --------------------------------------------------------------- checkpoint
    def save(self, path) -> None:
        """Write sizes, activation and parameters as little-endian binary.

        Layout: 8-byte magic ``BBOMLP01``; uint32 layer count ``n``; uint32
        activation id (index into :data:`ACTIVATIONS`); ``n`` uint32 sizes;
        uint32 stack depth ``L`` (1 for a single network); then
        ``L * n_params`` float64 values.
        """
        Path(path).write_bytes(self.to_bytes())

    def to_bytes(self) -> bytes:
        p = np.atleast_2d(self.params)
        head = _MAGIC + struct.pack("<II", len(self.sizes), ACTIVATIONS.index(self.activation))
        head += struct.pack(f"<{len(self.sizes)}I", *self.sizes)
        head += struct.pack("<I", p.shape[0])
        return head + p.astype("<f8").tobytes()

    @classmethod
    def load(cls, path) -> "MLP":
        return cls.from_bytes(Path(path).read_bytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "MLP":
        if data[:8] != _MAGIC:
            raise ValueError("not a BBO network checkpoint")
        n, act = struct.unpack_from("<II", data, 8)
        sizes = struct.unpack_from(f"<{n}I", data, 16)
        off = 16 + 4 * n
        (depth,) = struct.unpack_from("<I", data, off)
        off += 4
        p = np.frombuffer(data, dtype="<f8", offset=off).astype(float)
        p = p.reshape(depth, -1)
        return cls(sizes, ACTIVATIONS[act], p[0] if depth == 1 else p)


def glorot_init(sizes, rng: Rng) -> np.ndarray:
    """Glorot-uniform weights, zero biases, in the flat layout of :class:`MLP`."""
    parts = []
    for fi, fo in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fi + fo))
        parts.append(rng.uniform(-bound, bound, fi * fo))
        parts.append(np.zeros(fo))
    return np.concatenate(parts)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **kw) -> "AdamState":
        params = np.asarray(params, dtype=float)
        return cls(np.zeros_like(params), np.zeros_like(params), **kw)


def adam_step(params, grads, state: AdamState, lr: float):
    """One bias-corrected Adam step. Returns ``(new_params, new_state)``.

    Raises:
        FloatingPointError: if any gradient entry is not finite.
    """
    grads = np.asarray(grads, dtype=float)
    if grads.shape != np.shape(params):
        raise ValueError("params and grads differ in shape")
    if not np.all(np.isfinite(grads)):
        raise FloatingPointError("non-finite gradient passed to Adam")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, AdamState(m, v, t, state.beta1, state.beta2, state.eps)


@dataclass
class Adam:
    """Stateful convenience wrapper around :func:`adam_step`."""

    lr: float
    state: AdamState = field(default=None)

    def step(self, params, grads):
        if self.state is None:
            self.state = AdamState.zeros_like(params)
        params, self.state = adam_step(params, grads, self.state, self.lr)
        return params
