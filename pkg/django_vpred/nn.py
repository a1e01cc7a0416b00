"""
Layer primitives with hand-written backward passes.

Each forward returns what its backward needs; nothing is stored globally.
Everything runs in float64.
"""
from collections import OrderedDict

import numpy as np
from scipy.special import expit, softmax

from .exceptions import ShapeMismatchError

LN_EPS = 1e-6


class Params:
    """An ordered collection of named float64 arrays plus shape metadata."""

    def __init__(self, arrays, **meta):
        self.arrays = OrderedDict((name, np.asarray(value, dtype=np.float64)) for name, value in arrays.items())
        self.meta = dict(meta)

    def __getitem__(self, name):
        return self.arrays[name]

    def __iter__(self):
        return iter(self.arrays)

    def items(self):
        return self.arrays.items()

    def shapes(self):
        return OrderedDict((name, list(value.shape)) for name, value in self.arrays.items())

    def copy(self):
        return type(self)(OrderedDict((name, value.copy()) for name, value in self.arrays.items()), **self.meta)

    def with_arrays(self, arrays):
        return type(self)(arrays, **self.meta)

    def check_compatible(self, other):
        if self.shapes() != other.shapes():
            raise ShapeMismatchError('Parameter sets have different shapes')

    def all_finite(self):
        return all(np.all(np.isfinite(value)) for value in self.arrays.values())

    def __getattr__(self, name):
        meta = self.__dict__.get('meta', {})
        if name in meta:
            return meta[name]
        raise AttributeError(name)


def affine(x, w, b):
    return x @ w + b


def affine_backward(grad, x, w):
    """(dx, dw, db) for y = x @ w + b over any leading axes."""
    flat_x = x.reshape(-1, x.shape[-1])
    flat_g = grad.reshape(-1, grad.shape[-1])
    return grad @ w.T, flat_x.T @ flat_g, flat_g.sum(axis=0)


def layer_norm(x):
    """Normalise the last axis (no learned affine); returns (y, 1/std)."""
    centred = x - x.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centred ** 2).mean(axis=-1, keepdims=True) + LN_EPS)
    return centred * inv_std, inv_std


def layer_norm_backward(grad, y, inv_std):
    return inv_std * (
        grad - grad.mean(axis=-1, keepdims=True) - y * (grad * y).mean(axis=-1, keepdims=True)
    )


def silu(x):
    sig = expit(x)
    return x * sig, sig


def silu_backward(grad, x, sig):
    return grad * (sig + x * sig * (1.0 - sig))


def attention(a, valid, wq, wk, wv):
    """
    Single-head softmax attention of every position over the valid keys.
    ``a``: (B, S, w); ``valid``: (B, S) booleans, at least one per row.
    """
    q, k, v = a @ wq, a @ wk, a @ wv
    scale = 1.0 / np.sqrt(a.shape[-1])
    scores = np.where(valid[:, None, :], q @ k.transpose(0, 2, 1) * scale, -np.inf)
    probs = softmax(scores, axis=-1)
    return probs @ v, (q, k, v, probs, scale)


def attention_backward(grad, a, cache, wq, wk, wv):
    q, k, v, probs, scale = cache
    dprobs = grad @ v.transpose(0, 2, 1)
    dv = probs.transpose(0, 2, 1) @ grad
    dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
    dq = dscores @ k * scale
    dk = dscores.transpose(0, 2, 1) @ q * scale
    flat = a.reshape(-1, a.shape[-1])
    dwq = flat.T @ dq.reshape(-1, dq.shape[-1])
    dwk = flat.T @ dk.reshape(-1, dk.shape[-1])
    dwv = flat.T @ dv.reshape(-1, dv.shape[-1])
    da = dq @ wq.T + dk @ wk.T + dv @ wv.T
    return da, dwq, dwk, dwv


def sinusoidal_table(rows, width, base=10000.0):
    half = width // 2
    freqs = np.exp(-np.log(base) * np.arange(half) / max(half - 1, 1))
    angles = np.arange(rows)[:, None] * freqs[None, :]
    table = np.zeros((rows, width))
    table[:, :half] = np.sin(angles)
    table[:, half:2 * half] = np.cos(angles)
    return table
