"""Observation encoding: normalized positions + mantissa-exponent fitness.

A fitness value y is decomposed as y = m * 10**(eta * e) with |m| in
[0.1, 1) and e = (decimal exponent)/eta, so wildly different objective
scales land in comparable ranges; y = 0 maps to (0, 0). The decomposition
runs on the exact decimal expansion of the float (``decimal.Decimal``),
which makes it robust to scale: multiplying y by an exact power of ten
shifts the exponent slot and leaves the mantissa bit-identical.
"""

import math
from dataclasses import dataclass
from decimal import Decimal

import numpy as np

__all__ = ["Observation", "mantissa_exponent", "reconstruct", "encode"]


@dataclass
class Observation:
    """Per-dimension, per-individual feature triples plus a time scalar."""

    features: np.ndarray  # (D, N, 3): (position, mantissa, exponent)
    s_time: float | None  # None when the time feature is disabled
    eta: float = 10.0

    @property
    def dim(self):
        return self.features.shape[0]

    @property
    def n_pop(self):
        return self.features.shape[1]


def _decompose(y):
    if y == 0.0:
        return 0.0, 0
    d = Decimal(float(y))
    e = d.adjusted() + 1
    m = float(d.scaleb(-e))
    # The exact real lies in [0.1, 1); the nearest float can still round
    # up to +-1.0 at the top edge, so nudge one ulp back inward.
    if abs(m) >= 1.0:
        m = math.copysign(math.nextafter(1.0, 0.0), m)
    return m, e


def mantissa_exponent(y, eta=10.0):
    """Decompose y (scalar or array) into (mantissa, exponent/eta)."""
    arr = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("fitness must be finite for encoding")
    m = np.empty(arr.shape)
    e = np.empty(arr.shape)
    flat_m, flat_e = m.reshape(-1), e.reshape(-1)
    for i, v in enumerate(arr.reshape(-1)):
        mi, ei = _decompose(float(v))
        flat_m[i] = mi
        flat_e[i] = ei / eta
    if arr.ndim == 0:
        return float(m), float(e)
    return m, e


def reconstruct(mantissa, exponent, eta=10.0):
    """Inverse of mantissa_exponent (up to float rounding)."""
    return np.asarray(mantissa) * 10.0 ** (eta * np.asarray(exponent))


def encode(X, Y, lower, upper, t, horizon, eta=10.0, no_time=False, minmax_fitness=False):
    """Build the policy observation from a population snapshot.

    X is (N, D) within [lower, upper], Y is (N,) finite; t is the 1-based
    generation about to run, horizon the normalizer. Positions are scaled
    by the box width. ``minmax_fitness`` replaces the mantissa-exponent
    pair with a duplicated min-max normalized value; ``no_time`` drops the
    time scalar.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or Y.shape != (X.shape[0],):
        raise ValueError("X must be (N, D) with matching Y of shape (N,)")
    if not np.all(np.isfinite(Y)):
        raise ValueError("fitness must be finite for encoding")
    if not 0 <= t <= horizon:
        raise ValueError(f"generation {t} outside 0..{horizon}")
    n, d = X.shape

    pos = (X / (upper - lower)).T  # (D, N), literal width scaling

    if minmax_fitness:
        span = Y.max() - Y.min()
        mm = np.zeros(n) if span == 0.0 else (Y - Y.min()) / span
        a, b = mm, mm
    else:
        a, b = mantissa_exponent(Y, eta=eta)

    feats = np.empty((d, n, 3))
    feats[:, :, 0] = pos
    feats[:, :, 1] = a[None, :]
    feats[:, :, 2] = b[None, :]
    return Observation(features=feats, s_time=None if no_time else t / horizon, eta=eta)
