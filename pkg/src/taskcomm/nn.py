"""Minimal dense-network substrate with exact reverse-mode gradients.

Everything downstream (observation encoder, per-agent Q-networks, the
scheduler Q-network and the monotonic mixer hypernetwork) is built from the
same primitive: a stack of affine layers with elementwise activations,
parameterized by one flat float64 vector. Keeping parameters flat makes
optimizer state, target-network copies and checkpointing trivial.

Gradients are computed manually (no autodiff); correctness is pinned by
finite-difference tests.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("relu", "elu", "identity", "abs")


@dataclass(frozen=True)
class LayerSpec:
    """One affine layer: out = act(W x + b), W is (out_dim, in_dim)."""

    in_dim: int
    out_dim: int
    activation: str = "identity"

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError(f"layer dims must be >= 1, got {self.in_dim}x{self.out_dim}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_params(self) -> int:
        return self.in_dim * self.out_dim + self.out_dim


def mlp_spec(dims, hidden_activation="elu", out_activation="identity"):
    """Build a LayerSpec list from a list of dims [in, h1, ..., out]."""
    layers = []
    for i in range(len(dims) - 1):
        act = out_activation if i == len(dims) - 2 else hidden_activation
        layers.append(LayerSpec(dims[i], dims[i + 1], act))
    return layers


def n_params(spec) -> int:
    return sum(layer.n_params for layer in spec)


def param_views(spec, params):
    """Zero-copy (W, b) views into the flat parameter vector."""
    if params.shape != (n_params(spec),):
        raise ValueError(f"params length {params.shape} does not match spec ({n_params(spec)},)")
    views = []
    offset = 0
    for layer in spec:
        w_len = layer.in_dim * layer.out_dim
        w = params[offset:offset + w_len].reshape(layer.out_dim, layer.in_dim)
        b = params[offset + w_len:offset + layer.n_params]
        views.append((w, b))
        offset += layer.n_params
    return views


def init_params(spec, rng) -> np.ndarray:
    """Uniform fan-in initialization; wider range for relu/elu, zero biases."""
    params = np.zeros(n_params(spec), dtype=np.float64)
    for (w, b), layer in zip(param_views(spec, params), spec):
        if layer.activation in ("relu", "elu"):
            limit = np.sqrt(6.0 / layer.in_dim)
        else:
            limit = np.sqrt(3.0 / layer.in_dim)
        w[...] = rng.uniform(-limit, limit, size=w.shape)
        b[...] = 0.0
    return params


def _act(z, name):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "elu":
        # max(z,0) + expm1(min(z,0)) == elu(z), branch-free
        out = np.maximum(z, 0.0)
        out += np.expm1(np.minimum(z, 0.0))
        return out
    if name == "abs":
        return np.abs(z)
    return z


def _act_grad(z, name):
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    if name == "elu":
        return np.exp(np.minimum(z, 0.0))  # exp(0) = 1 on the positive side
    if name == "abs":
        return np.sign(z)
    return np.ones_like(z)


def forward(spec, params, x, views=None):
    """Run the network; returns (output, cache) with cache kept for backward.

    x may be a single vector (in_dim,) or a batch (batch, in_dim). Passing
    precomputed param_views skips re-slicing the flat vector (the views stay
    valid as long as the vector is only ever updated in place).
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[1] != spec[0].in_dim:
        raise ValueError(f"input dim {h.shape[1]} does not match spec in_dim {spec[0].in_dim}")
    if views is None:
        views = param_views(spec, params)
    inputs, preacts = [], []
    for (w, b), layer in zip(views, spec):
        inputs.append(h)
        z = h @ w.T + b
        preacts.append(z)
        h = _act(z, layer.activation)
    y = h[0] if single else h
    return y, (inputs, preacts, single)


def apply(spec, params, x, views=None):
    """Forward pass without gradient bookkeeping (rollout / target side)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[1] != spec[0].in_dim:
        raise ValueError(f"input dim {h.shape[1]} does not match spec in_dim {spec[0].in_dim}")
    if views is None:
        views = param_views(spec, params)
    for (w, b), layer in zip(views, spec):
        h = h @ w.T
        h += b
        _act_inplace(h, layer.activation)
    return h[0] if single else h


def _act_inplace(z, name):
    """Activation applied in place on a freshly produced preactivation."""
    if name == "relu":
        np.maximum(z, 0.0, out=z)
    elif name == "elu":
        e = np.expm1(np.minimum(z, 0.0))
        np.maximum(z, 0.0, out=z)
        z += e
    elif name == "abs":
        np.abs(z, out=z)


def backward(spec, params, cache, grad_out, views=None, need_input_grad=True):
    """Exact gradients of a scalar loss given dloss/doutput.

    Returns (grad_params, grad_input); batched upstream gradients are summed
    into a single flat parameter gradient. need_input_grad=False skips the
    first layer's input gradient (a pure waste when the input is data).
    """
    inputs, preacts, single = cache
    g = np.asarray(grad_out, dtype=np.float64)
    g = g[None, :] if single else g
    if g.shape != preacts[-1].shape:
        raise ValueError(f"upstream gradient shape {g.shape} does not match output {preacts[-1].shape}")
    grad = np.zeros(n_params(spec), dtype=np.float64)
    gviews = param_views(spec, grad)
    if views is None:
        views = param_views(spec, params)
    for i in range(len(spec) - 1, -1, -1):
        w, _ = views[i]
        gw, gb = gviews[i]
        dz = g * _act_grad(preacts[i], spec[i].activation)
        np.matmul(dz.T, inputs[i], out=gw)
        dz.sum(axis=0, out=gb)
        if i > 0 or need_input_grad:
            g = dz @ w
        else:
            g = None
    return grad, ((g[0] if single else g) if g is not None else None)


class Sgd:
    """Plain gradient descent on a flat parameter vector."""

    def __init__(self, learning_rate):
        self.learning_rate = learning_rate

    def step(self, params, grad):
        params -= self.learning_rate * grad

    def state_arrays(self):
        return {}

    def load_state(self, arrays):
        pass


class Adam:
    """Adam with bias correction, operating in place on a flat vector."""

    def __init__(self, learning_rate, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = None
        self.v = None
        self._tmp = None
        self.t = 0

    def step(self, params, grad):
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        if self._tmp is None:
            self._tmp = np.empty_like(params)
        self.t += 1
        m, v, tmp = self.m, self.v, self._tmp
        m *= self.beta1
        m += (1.0 - self.beta1) * grad
        v *= self.beta2
        np.multiply(grad, grad, out=tmp)
        tmp *= 1.0 - self.beta2
        v += tmp
        # tmp becomes the update: lr * m_hat / (sqrt(v_hat) + eps)
        np.multiply(v, 1.0 / (1.0 - self.beta2 ** self.t), out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += self.eps
        np.divide(m, tmp, out=tmp)
        tmp *= self.learning_rate / (1.0 - self.beta1 ** self.t)
        params -= tmp

    def state_arrays(self):
        if self.m is None:
            return {"t": np.array([0], dtype=np.int64)}
        return {"t": np.array([self.t], dtype=np.int64), "m": self.m, "v": self.v}

    def load_state(self, arrays):
        self.t = int(arrays["t"][0])
        self.m = arrays["m"].copy() if "m" in arrays else None
        self.v = arrays["v"].copy() if "v" in arrays else None


def serialize_params(spec, params) -> bytes:
    """Length-prefixed JSON shape manifest followed by little-endian float64."""
    manifest = json.dumps(
        [{"in": l.in_dim, "out": l.out_dim, "act": l.activation} for l in spec],
        sort_keys=True,
    ).encode("utf-8")
    body = np.ascontiguousarray(params, dtype="<f8").tobytes()
    return struct.pack("<I", len(manifest)) + manifest + body


def deserialize_params(blob: bytes):
    """Inverse of serialize_params; returns (spec, params)."""
    (mlen,) = struct.unpack_from("<I", blob, 0)
    manifest = json.loads(blob[4:4 + mlen].decode("utf-8"))
    spec = [LayerSpec(m["in"], m["out"], m["act"]) for m in manifest]
    params = np.frombuffer(blob[4 + mlen:], dtype="<f8").astype(np.float64)
    if params.shape[0] != n_params(spec):
        raise ValueError("parameter blob length does not match its manifest")
    return spec, params
