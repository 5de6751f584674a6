"""ReLU multilayer perceptrons with hand-written backprop and Adam.

Parameters are a flat list ``[W0, b0, W1, b1, ...]``. A leading "stack" axis
is optional: weights of shape ``(M, fan_in, fan_out)`` with biases
``(M, 1, fan_out)`` evaluate M independent networks at once through batched
``matmul``; plain ``(fan_in, fan_out)`` / ``(1, fan_out)`` is a single net.
"""
from __future__ import annotations

import numpy as np


def init_mlp(sizes, rng: np.random.Generator, n_stack: int | None = None, out_scale: float = 1.0):
    """He-uniform hidden layers, Glorot-uniform output layer scaled by ``out_scale``."""
    params = []
    lead = () if n_stack is None else (n_stack,)
    n_layers = len(sizes) - 1
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = i == n_layers - 1
        limit = np.sqrt(6.0 / (fan_in + fan_out)) * out_scale if last else np.sqrt(6.0 / fan_in)
        params.append(rng.uniform(-limit, limit, size=lead + (fan_in, fan_out)))
        params.append(np.zeros(lead + (1, fan_out)))
    return params


def forward(params, x):
    """Return the network output and the activations needed by :func:`backward`."""
    acts = [x]
    h = x
    n_layers = len(params) // 2
    for i in range(n_layers):
        z = h @ params[2 * i] + params[2 * i + 1]
        h = np.maximum(z, 0.0) if i < n_layers - 1 else z
        acts.append(h)
    return h, acts


def backward(params, acts, dout):
    """Gradients of a scalar loss w.r.t. ``params`` given ``dL/d(output)``."""
    grads = [None] * len(params)
    n_layers = len(params) // 2
    delta = dout
    for i in reversed(range(n_layers)):
        h_in = acts[i]
        grads[2 * i] = np.swapaxes(h_in, -1, -2) @ delta
        grads[2 * i + 1] = delta.sum(axis=-2, keepdims=True)
        if i > 0:
            delta = (delta @ np.swapaxes(params[2 * i], -1, -2)) * (acts[i] > 0.0)
    return grads


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads, mask=None):
        """In-place update. ``mask`` (broadcastable per stacked net) freezes nets where 0."""
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            upd = self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
            if mask is not None:
                upd = upd * mask
            p -= upd

    def state(self):
        return {"t": self.t, "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v]}


def copy_params(params):
    return [p.copy() for p in params]


def n_params(params) -> int:
    return int(sum(p.size for p in params))
