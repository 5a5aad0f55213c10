"""Synthetic black-box landscape suite (24 functions) plus a plug-in registry.

Each instance applies a seeded shift (and, for the non-separable functions,
a seeded rotation) to a published core formula; the asymmetry/oscillation
inner transforms are dropped, conditioning terms stay where the core
definition carries them. All instances are minimization problems on a
[-5, 5]^D box with a planted optimum: ``evaluate(instance, x_opt) == f_opt``.

Functions 1-5 are separable and use an identity rotation, so e.g. the
separable and rotated ellipsoid (fids 2 and 10) stay distinct landscapes.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .nd import Rng

__all__ = [
    "ProblemInstance",
    "make_instance",
    "evaluate",
    "optimum",
    "register_problem",
    "get_problem",
    "registered_problems",
    "TRAIN_IDS",
    "TEST_IDS",
    "ALL_IDS",
]

TRAIN_IDS = (1, 2, 3, 5, 15, 16, 17, 21)
ALL_IDS = tuple(range(1, 25))
TEST_IDS = tuple(i for i in ALL_IDS if i not in TRAIN_IDS)

_SEPARABLE = frozenset({1, 2, 3, 4, 5})


@dataclass(frozen=True)
class ProblemInstance:
    """One seeded landscape: evaluate via ``evaluate(instance, X)``."""

    fid: int
    dim: int
    seed: int
    x_opt: np.ndarray
    rotation: np.ndarray
    f_opt: float = 0.0
    lower: float = -5.0
    upper: float = 5.0
    aux: dict = field(default_factory=dict)

    @property
    def name(self):
        return f"f{self.fid}"

    def evaluate(self, X):
        return evaluate(self, X)

    @property
    def best_known(self):
        return self.f_opt


def _orthogonal(rng, dim):
    """QR of a seeded Gaussian matrix, sign-fixed to a positive R diagonal."""
    a = rng.normal((dim, dim))
    q, r = np.linalg.qr(a)
    d = np.sign(np.diag(r))
    d[d == 0.0] = 1.0
    return q * d


def _cond(alpha, dim):
    """Diagonal conditioning: alpha ** (0.5 * i/(D-1)), i = 0..D-1."""
    if dim == 1:
        return np.ones(1)
    return alpha ** (0.5 * np.arange(dim) / (dim - 1))


def make_instance(fid, dim, seed, f_opt=0.0):
    """Build the deterministic instance for (fid, dim, seed)."""
    if not 1 <= fid <= 24:
        raise ValueError(f"function id {fid} outside 1..24")
    if dim < 2:
        raise ValueError("suite requires dimension >= 2")
    rng = Rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(int(fid), int(dim))))

    x_opt = rng.uniform(-4.0, 4.0, dim)
    aux = {}
    if fid == 5:
        # Optimum sits on the boundary by definition.
        s = np.sign(x_opt)
        s[s == 0.0] = 1.0
        x_opt = 5.0 * s
    elif fid == 20:
        signs = np.where(rng.uniform(size=dim) < 0.5, -1.0, 1.0)
        aux["signs"] = signs
        x_opt = 0.5 * 4.2096874633 * signs
    elif fid == 24:
        signs = np.where(rng.uniform(size=dim) < 0.5, -1.0, 1.0)
        aux["signs"] = signs
        x_opt = 0.5 * 2.5 * signs

    rotation = np.eye(dim) if fid in _SEPARABLE else _orthogonal(rng, dim)

    if fid in (21, 22):
        n_peaks = 101 if fid == 21 else 21
        peaks = rng.uniform(-4.9, 4.9, (n_peaks, dim))
        peaks[0] = x_opt
        weights = np.empty(n_peaks)
        weights[0] = 10.0
        weights[1:] = 1.1 + 8.0 * np.arange(n_peaks - 1) / (n_peaks - 2)
        alphas = np.empty(n_peaks)
        alphas[0] = 1000.0
        alphas[1:] = 1000.0 ** (2.0 * rng.uniform(size=n_peaks - 1))
        # Quadratic-form diagonals, scaled so peak width is alpha-neutral.
        conds = np.empty((n_peaks, dim))
        for i in range(n_peaks):
            conds[i] = _cond(alphas[i], dim) ** 2 / alphas[i] ** 0.25
        aux.update(peaks=peaks, peak_weights=weights, peak_conds=conds)

    return ProblemInstance(
        fid=int(fid), dim=int(dim), seed=int(seed), x_opt=x_opt, rotation=rotation,
        f_opt=float(f_opt), aux=aux,
    )


def optimum(instance):
    return instance.x_opt.copy(), instance.f_opt


def evaluate(instance, X):
    """Batched objective values; X is (n, D) or (D,). Never NaN in the box.

    Points outside the box are evaluated as-is (callers repair first).
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != instance.dim:
        raise ValueError(f"expected dimension {instance.dim}, got {X.shape[1]}")
    y = _CORES[instance.fid](X, instance) + instance.f_opt
    return y


def _shift_rotate(X, inst):
    return (X - inst.x_opt) @ inst.rotation.T


def _rastrigin(Z):
    d = Z.shape[1]
    return 10.0 * (d - np.cos(2.0 * math.pi * Z).sum(axis=1)) + (Z * Z).sum(axis=1)


def _f1_sphere(X, inst):
    Z = X - inst.x_opt
    return (Z * Z).sum(axis=1)


def _f2_ellipsoid(X, inst):
    Z = X - inst.x_opt
    d = inst.dim
    c = 10.0 ** (6.0 * np.arange(d) / (d - 1))
    return (c * Z * Z).sum(axis=1)


def _f3_rastrigin(X, inst):
    Z = (X - inst.x_opt) * _cond(10.0, inst.dim)
    return _rastrigin(Z)


def _f4_bueche(X, inst):
    d = inst.dim
    Z = X - inst.x_opt
    s = np.broadcast_to(10.0 ** (0.5 * np.arange(d) / (d - 1)), Z.shape).copy()
    odd = np.arange(d) % 2 == 0  # 1-based odd coordinates
    s[:, odd] = np.where(Z[:, odd] > 0.0, 10.0 * s[:, odd], s[:, odd])
    return _rastrigin(s * Z)


def _f5_linear_slope(X, inst):
    d = inst.dim
    s = np.sign(inst.x_opt) * 10.0 ** (np.arange(d) / (d - 1))
    Z = np.where(X * inst.x_opt < 25.0, X, inst.x_opt)
    return (5.0 * np.abs(s) - s * Z).sum(axis=1)


def _f6_attractive_sector(X, inst):
    Z = _shift_rotate(X, inst) * _cond(10.0, inst.dim)
    s = np.where(Z * inst.x_opt > 0.0, 100.0, 1.0)
    return ((s * Z) ** 2).sum(axis=1) ** 0.9


def _f7_step_ellipsoid(X, inst):
    d = inst.dim
    zhat = _shift_rotate(X, inst) * _cond(10.0, d)
    ztil = np.where(
        np.abs(zhat) > 0.5, np.floor(0.5 + zhat), np.floor(0.5 + 10.0 * zhat) / 10.0
    )
    c = 10.0 ** (2.0 * np.arange(d) / (d - 1))
    body = (c * ztil * ztil).sum(axis=1)
    return 0.1 * np.maximum(np.abs(zhat[:, 0]) / 1e4, body)


def _rosenbrock(Z):
    return (100.0 * (Z[:, :-1] ** 2 - Z[:, 1:]) ** 2 + (Z[:, :-1] - 1.0) ** 2).sum(axis=1)


def _f8_rosenbrock(X, inst):
    c = max(1.0, math.sqrt(inst.dim) / 8.0)
    return _rosenbrock(c * (X - inst.x_opt) + 1.0)


def _f9_rosenbrock_rot(X, inst):
    c = max(1.0, math.sqrt(inst.dim) / 8.0)
    return _rosenbrock(c * _shift_rotate(X, inst) + 1.0)


def _f10_ellipsoid_rot(X, inst):
    Z = _shift_rotate(X, inst)
    d = inst.dim
    c = 10.0 ** (6.0 * np.arange(d) / (d - 1))
    return (c * Z * Z).sum(axis=1)


def _f11_discus(X, inst):
    Z = _shift_rotate(X, inst)
    return 1e6 * Z[:, 0] ** 2 + (Z[:, 1:] ** 2).sum(axis=1)


def _f12_bent_cigar(X, inst):
    Z = _shift_rotate(X, inst)
    return Z[:, 0] ** 2 + 1e6 * (Z[:, 1:] ** 2).sum(axis=1)


def _f13_sharp_ridge(X, inst):
    Z = _shift_rotate(X, inst) * _cond(10.0, inst.dim)
    return Z[:, 0] ** 2 + 100.0 * np.sqrt((Z[:, 1:] ** 2).sum(axis=1))


def _f14_different_powers(X, inst):
    Z = _shift_rotate(X, inst)
    d = inst.dim
    p = 2.0 + 4.0 * np.arange(d) / (d - 1)
    return np.sqrt((np.abs(Z) ** p).sum(axis=1))


def _f15_rastrigin_rot(X, inst):
    Z = _shift_rotate(X, inst) * _cond(10.0, inst.dim)
    return _rastrigin(Z)


_WEIER_K = np.arange(12)
_WEIER_F0 = float((0.5**_WEIER_K * np.cos(math.pi * 3.0**_WEIER_K)).sum())


def _f16_weierstrass(X, inst):
    Z = _shift_rotate(X, inst) * _cond(0.01, inst.dim)
    half_k = 0.5**_WEIER_K
    three_k = 3.0**_WEIER_K
    inner = (half_k * np.cos(2.0 * math.pi * three_k * (Z[..., None] + 0.5))).sum(axis=-1)
    return 10.0 * (inner.mean(axis=1) - _WEIER_F0) ** 3


def _schaffers(X, inst, alpha):
    Z = _shift_rotate(X, inst) * _cond(alpha, inst.dim)
    s = np.sqrt(Z[:, :-1] ** 2 + Z[:, 1:] ** 2)
    body = np.sqrt(s) + np.sqrt(s) * np.sin(50.0 * s**0.2) ** 2
    return body.mean(axis=1) ** 2


def _f17_schaffers(X, inst):
    return _schaffers(X, inst, 10.0)


def _f18_schaffers_ill(X, inst):
    return _schaffers(X, inst, 1000.0)


def _f19_griewank_rosenbrock(X, inst):
    c = max(1.0, math.sqrt(inst.dim) / 8.0)
    Z = c * _shift_rotate(X, inst) + 1.0
    s = 100.0 * (Z[:, :-1] ** 2 - Z[:, 1:]) ** 2 + (Z[:, :-1] - 1.0) ** 2
    return 10.0 / (inst.dim - 1) * (s / 4000.0 - np.cos(s)).sum(axis=1) + 10.0


_SCHW_ZSTAR = 100.0 * 4.2096874633
_SCHW_CONST = _SCHW_ZSTAR * math.sin(math.sqrt(_SCHW_ZSTAR)) / 100.0


def _f20_schwefel(X, inst):
    d = inst.dim
    signs = inst.aux["signs"]
    two_abs = 2.0 * np.abs(inst.x_opt)
    xhat = 2.0 * signs * X
    zhat = xhat.copy()
    zhat[:, 1:] += 0.25 * (xhat[:, :-1] - two_abs[:-1])
    Z = 100.0 * (_cond(10.0, d) * (zhat - two_abs) + two_abs)
    body = -(Z * np.sin(np.sqrt(np.abs(Z)))).sum(axis=1) / (100.0 * d)
    # The only core whose boundary penalty acts inside the box.
    pen = (np.maximum(0.0, np.abs(Z / 100.0) - 5.0) ** 2).sum(axis=1)
    return body + _SCHW_CONST + 100.0 * pen


def _gallagher(X, inst):
    peaks = inst.aux["peaks"]
    w = inst.aux["peak_weights"]
    conds = inst.aux["peak_conds"]
    d = inst.dim
    XR = X @ inst.rotation.T
    PR = peaks @ inst.rotation.T
    diff = XR[:, None, :] - PR[None, :, :]  # (n, peaks, D)
    q = (diff * diff * conds[None, :, :]).sum(axis=2)
    best = (w[None, :] * np.exp(-q / (2.0 * d))).max(axis=1)
    return (10.0 - best) ** 2


def _f23_katsuura(X, inst):
    d = inst.dim
    Z = _shift_rotate(X, inst) * _cond(100.0, d)
    j = 2.0 ** np.arange(1, 33)
    zj = Z[..., None] * j
    s = (np.abs(zj - np.round(zj)) / j).sum(axis=-1)
    factors = (1.0 + np.arange(1, d + 1) * s) ** (10.0 / d**1.2)
    return 10.0 / d**2 * factors.prod(axis=1) - 10.0 / d**2


def _f24_lunacek(X, inst):
    d = inst.dim
    signs = inst.aux["signs"]
    mu0 = 2.5
    s = 1.0 - 1.0 / (2.0 * math.sqrt(d + 20.0) - 8.2)
    mu1 = -math.sqrt((mu0**2 - 1.0) / s)
    xhat = 2.0 * signs * X
    Z = ((xhat - mu0) @ inst.rotation.T) * _cond(100.0, d)
    sphere0 = ((xhat - mu0) ** 2).sum(axis=1)
    sphere1 = d + s * ((xhat - mu1) ** 2).sum(axis=1)
    return np.minimum(sphere0, sphere1) + 10.0 * (
        d - np.cos(2.0 * math.pi * Z).sum(axis=1)
    )


_CORES = {
    1: _f1_sphere,
    2: _f2_ellipsoid,
    3: _f3_rastrigin,
    4: _f4_bueche,
    5: _f5_linear_slope,
    6: _f6_attractive_sector,
    7: _f7_step_ellipsoid,
    8: _f8_rosenbrock,
    9: _f9_rosenbrock_rot,
    10: _f10_ellipsoid_rot,
    11: _f11_discus,
    12: _f12_bent_cigar,
    13: _f13_sharp_ridge,
    14: _f14_different_powers,
    15: _f15_rastrigin_rot,
    16: _f16_weierstrass,
    17: _f17_schaffers,
    18: _f18_schaffers_ill,
    19: _f19_griewank_rosenbrock,
    20: _f20_schwefel,
    21: _gallagher,
    22: _gallagher,
    23: _f23_katsuura,
    24: _f24_lunacek,
}


# ------------------------------------------------------------------ registry
#
# A problem provider is any object with:
#   dim (int), lower/upper (floats), evaluate(X) -> (n,) array,
#   best_known (float or None), name (str).
# ProblemInstance satisfies this directly.

_REGISTRY = {}


def register_problem(name, factory):
    """Register a provider factory: factory(**kwargs) -> provider."""
    if not callable(factory):
        raise TypeError("factory must be callable")
    _REGISTRY[str(name)] = factory


def get_problem(name, **kwargs):
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise KeyError(
            f"unknown problem {name!r}; registered: {sorted(_REGISTRY)}"
        ) from None
    return factory(**kwargs)


def registered_problems():
    return sorted(_REGISTRY)
