"""Minimal reverse-mode autodiff over float64 numpy arrays.

The module provides exactly what the policy and its training loop need: a
handful of primitive operations recorded on an explicit tape, fused layers
(layer norm, softmax, multi-head self-attention, diagonal-Gaussian log
density), a bias-corrected Adam step, and a deterministic random stream
that is always passed explicitly.

Conventions
-----------
* Every value is a float64 ``Array``. Ops take an optional ``Tape``; with
  ``tape=None`` they are plain numpy forward computations.
* ``backward`` walks the tape once in reverse creation order (a valid
  reverse topological order) and accumulates gradients on ``Array.grad``.
  Leaves that never reach the loss keep a zero gradient.
* Broadcasting is supported in ``add``/``sub``/``mul`` only (bias adds,
  scalar blends); gradients are summed back over broadcast axes.
"""

import math

import numpy as np

__all__ = [
    "Array",
    "Tape",
    "AttentionWeights",
    "AdamState",
    "Rng",
    "constant",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "reduce_sum",
    "reduce_mean",
    "relu",
    "sigmoid",
    "exp",
    "log",
    "square",
    "softmax",
    "log_softmax",
    "layer_norm",
    "linear",
    "multi_head_self_attention",
    "gaussian_log_prob",
    "clip",
    "minimum",
    "backward",
    "adam_step",
]


class Array:
    """A float64 ndarray plus an accumulated gradient."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Array(shape={self.data.shape})"


def constant(data):
    return Array(data)


class Tape:
    """Ordered record of primitive ops for one forward pass.

    Each record is ``(out, pull)`` where ``pull(g)`` scatters the output
    gradient ``g`` into the operands. Execution order is a topological
    order of the graph, so the reverse walk visits every op exactly once
    with its output gradient already complete.
    """

    __slots__ = ("records",)

    def __init__(self):
        self.records = []

    def record(self, out, pull):
        self.records.append((out, pull))


def _rec(tape, out, pull):
    if tape is not None:
        tape.record(out, pull)


def _accum(arr, g):
    if arr.grad is None:
        arr.grad = np.zeros_like(arr.data)
    arr.grad += g


def _unbroadcast(g, shape):
    # Sum the upstream gradient back down to the operand's shape.
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(tape, a, b):
    out = Array(a.data + b.data)

    def pull(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    _rec(tape, out, pull)
    return out


def sub(tape, a, b):
    out = Array(a.data - b.data)

    def pull(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    _rec(tape, out, pull)
    return out


def mul(tape, a, b):
    out = Array(a.data * b.data)

    def pull(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    _rec(tape, out, pull)
    return out


def scale(tape, a, s):
    s = float(s)
    out = Array(a.data * s)

    def pull(g):
        _accum(a, g * s)

    _rec(tape, out, pull)
    return out


def matmul(tape, a, b):
    """Stacked matrix product via np.matmul; batch dims must match."""
    out = Array(np.matmul(a.data, b.data))

    def pull(g):
        _accum(a, np.matmul(g, np.swapaxes(b.data, -1, -2)))
        _accum(b, np.matmul(np.swapaxes(a.data, -1, -2), g))

    _rec(tape, out, pull)
    return out


def transpose(tape, a, axes):
    axes = tuple(axes)
    out = Array(np.transpose(a.data, axes))
    inv = tuple(np.argsort(axes))

    def pull(g):
        _accum(a, np.transpose(g, inv))

    _rec(tape, out, pull)
    return out


def reshape(tape, a, shape):
    old = a.data.shape
    out = Array(a.data.reshape(shape))

    def pull(g):
        _accum(a, g.reshape(old))

    _rec(tape, out, pull)
    return out


def concat(tape, parts, axis):
    out = Array(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.data.shape[axis] for p in parts]

    def pull(g):
        start = 0
        for p, n in zip(parts, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, start + n)
            _accum(p, g[tuple(sl)])
            start += n

    _rec(tape, out, pull)
    return out


def reduce_sum(tape, a, axis=None, keepdims=False):
    out = Array(a.data.sum(axis=axis, keepdims=keepdims))

    def pull(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape).copy())
            return
        gg = g
        if not keepdims:
            gg = np.expand_dims(gg, axis)
        _accum(a, np.broadcast_to(gg, a.data.shape).copy())

    _rec(tape, out, pull)
    return out


def reduce_mean(tape, a, axis=None, keepdims=False):
    out = Array(a.data.mean(axis=axis, keepdims=keepdims))
    count = a.data.size if axis is None else a.data.shape[axis]

    def pull(g):
        gg = g / count
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        _accum(a, np.broadcast_to(gg, a.data.shape).copy())

    _rec(tape, out, pull)
    return out


def relu(tape, a):
    out = Array(np.maximum(a.data, 0.0))
    mask = a.data > 0.0

    def pull(g):
        _accum(a, g * mask)

    _rec(tape, out, pull)
    return out


def sigmoid(tape, a):
    # tanh form avoids overflow for large |x|.
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    out = Array(s)

    def pull(g):
        _accum(a, g * s * (1.0 - s))

    _rec(tape, out, pull)
    return out


def exp(tape, a):
    e = np.exp(a.data)
    out = Array(e)

    def pull(g):
        _accum(a, g * e)

    _rec(tape, out, pull)
    return out


def log(tape, a):
    out = Array(np.log(a.data))

    def pull(g):
        _accum(a, g / a.data)

    _rec(tape, out, pull)
    return out


def square(tape, a):
    out = Array(a.data * a.data)

    def pull(g):
        _accum(a, 2.0 * g * a.data)

    _rec(tape, out, pull)
    return out


def softmax(tape, a):
    """Softmax over the last axis with max subtraction."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Array(s)

    def pull(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        _accum(a, (g - dot) * s)

    _rec(tape, out, pull)
    return out


def log_softmax(tape, a):
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    ls = shifted - lse
    out = Array(ls)
    s = np.exp(ls)

    def pull(g):
        _accum(a, g - s * g.sum(axis=-1, keepdims=True))

    _rec(tape, out, pull)
    return out


def layer_norm(tape, x, gain, shift, eps=1e-5):
    """Normalize over the last axis, then apply elementwise gain and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Array(gain.data * xhat + shift.data)

    def pull(g):
        lead = tuple(range(g.ndim - 1))
        _accum(shift, g.sum(axis=lead))
        _accum(gain, (g * xhat).sum(axis=lead))
        gx = g * gain.data
        _accum(
            x,
            inv
            * (
                gx
                - gx.mean(axis=-1, keepdims=True)
                - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
            ),
        )

    _rec(tape, out, pull)
    return out


def linear(tape, x, w, b):
    """x @ w + b over the last axis; x may carry any leading shape."""
    lead = x.data.shape[:-1]
    k = x.data.shape[-1]
    x2 = reshape(tape, x, (-1, k))
    y2 = add(tape, matmul(tape, x2, w), b)
    return reshape(tape, y2, lead + (w.data.shape[1],))


class AttentionWeights:
    """Projection weights for one multi-head self-attention block."""

    __slots__ = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "n_heads")

    def __init__(self, wq, bq, wk, bk, wv, bv, wo, bo, n_heads):
        self.wq, self.bq = wq, bq
        self.wk, self.bk = wk, bk
        self.wv, self.bv = wv, bv
        self.wo, self.bo = wo, bo
        self.n_heads = n_heads

    def arrays(self):
        return [self.wq, self.bq, self.wk, self.bk, self.wv, self.bv, self.wo, self.bo]


def multi_head_self_attention(tape, x, w):
    """Scaled dot-product self-attention over tokens.

    ``x`` has shape (batch, tokens, d); the d model axis is split across
    ``w.n_heads`` heads. Permuting tokens permutes the output rows the
    same way (checked in tests).
    """
    b, l, d = x.data.shape
    h = w.n_heads
    dh = d // h
    if h * dh != d:
        raise ValueError(f"model dim {d} not divisible by {h} heads")

    def split(t):
        t = reshape(tape, t, (b, l, h, dh))
        t = transpose(tape, t, (0, 2, 1, 3))
        return reshape(tape, t, (b * h, l, dh))

    q = split(linear(tape, x, w.wq, w.bq))
    k = split(linear(tape, x, w.wk, w.bk))
    v = split(linear(tape, x, w.wv, w.bv))
    scores = scale(tape, matmul(tape, q, transpose(tape, k, (0, 2, 1))), 1.0 / math.sqrt(dh))
    attn = softmax(tape, scores)
    ctx = matmul(tape, attn, v)
    ctx = reshape(tape, ctx, (b, h, l, dh))
    ctx = transpose(tape, ctx, (0, 2, 1, 3))
    ctx = reshape(tape, ctx, (b, l, d))
    return linear(tape, ctx, w.wo, w.bo)


_LOG_2PI = math.log(2.0 * math.pi)


def gaussian_log_prob(tape, x, mu, sigma):
    """Elementwise log density of N(mu, sigma^2) evaluated at x."""
    z = (x.data - mu.data) / sigma.data
    out = Array(-0.5 * z * z - np.log(sigma.data) - 0.5 * _LOG_2PI)

    def pull(g):
        _accum(x, _unbroadcast(g * (-z / sigma.data), x.data.shape))
        _accum(mu, _unbroadcast(g * (z / sigma.data), mu.data.shape))
        _accum(sigma, _unbroadcast(g * ((z * z - 1.0) / sigma.data), sigma.data.shape))

    _rec(tape, out, pull)
    return out


def clip(tape, a, lo, hi):
    out = Array(np.clip(a.data, lo, hi))
    mask = (a.data >= lo) & (a.data <= hi)

    def pull(g):
        _accum(a, g * mask)

    _rec(tape, out, pull)
    return out


def minimum(tape, a, b):
    out = Array(np.minimum(a.data, b.data))
    take_a = a.data <= b.data

    def pull(g):
        _accum(a, _unbroadcast(g * take_a, a.data.shape))
        _accum(b, _unbroadcast(g * (~take_a), b.data.shape))

    _rec(tape, out, pull)
    return out


def backward(tape, loss, params=None):
    """Accumulate d(loss)/d(leaf) for everything on the tape.

    ``loss`` must be scalar. When ``params`` is given their gradients are
    zero-initialized first, so leaves that never reach the loss end up
    with exact zeros; the collected gradient list is returned in order.
    """
    if loss.data.size != 1:
        raise ValueError("loss must be a scalar")
    if params is not None:
        for p in params:
            p.grad = np.zeros_like(p.data)
    loss.grad = np.ones_like(loss.data)
    for out, pull in reversed(tape.records):
        if out.grad is None:
            continue
        pull(out.grad)
    if params is not None:
        return [p.grad for p in params]
    return None


class AdamState:
    """First/second moment buffers plus step count for one parameter list."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def adam_step(state, params, grads):
    """One bias-corrected Adam update, applied to params in place."""
    if len(params) != len(state.m) or len(grads) != len(state.m):
        raise ValueError("param/grad count does not match optimizer state")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient in adam_step")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class Rng:
    """Deterministic random stream, passed explicitly everywhere.

    Backed by numpy's PCG64 seeded from a SeedSequence, so an identical
    seed always reproduces the identical draw sequence. ``spawn`` derives
    an independent child stream from the parent entropy plus an integer
    key path; children do not disturb the parent stream.
    """

    def __init__(self, seed):
        if isinstance(seed, np.random.SeedSequence):
            self._ss = seed
        else:
            self._ss = np.random.SeedSequence(int(seed))
        self._gen = np.random.Generator(np.random.PCG64(self._ss))

    def spawn(self, *key):
        parent = tuple(self._ss.spawn_key)
        return Rng(
            np.random.SeedSequence(
                entropy=self._ss.entropy, spawn_key=parent + tuple(int(k) for k in key)
            )
        )

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, size=None):
        return self._gen.standard_normal(size)

    def integers(self, low, high, size=None):
        """Draw integers from [low, high)."""
        return self._gen.integers(low, high, size=size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def pick_distinct(self, pool, k, exclude=()):
        """k distinct indices from range(pool), rejecting ``exclude``.

        Rejection sampling, one integer draw per attempt, in order; this
        exact draw order is part of the engine's reproducibility contract.
        """
        exclude = set(exclude)
        chosen = []
        if pool - len(exclude) < k:
            raise ValueError("not enough distinct indices available")
        while len(chosen) < k:
            j = int(self._gen.integers(0, pool))
            if j in exclude or j in chosen:
                continue
            chosen.append(j)
        return chosen

    def choice_weighted(self, weights):
        """One index drawn proportionally to the given nonnegative weights."""
        w = np.asarray(weights, dtype=np.float64)
        total = w.sum()
        if not (total > 0.0):
            raise ValueError("weights must have positive sum")
        cdf = np.cumsum(w / total)
        u = self._gen.uniform()
        return int(np.searchsorted(cdf, u, side="right").clip(0, len(w) - 1))
