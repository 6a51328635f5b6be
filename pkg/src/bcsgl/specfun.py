"""Scalar special functions of the BCS/GL expansion.

All functions accept floats or numpy arrays and return the same shape. They
are evaluated through forms that never form ``exp(|z|)`` for large ``|z|``,
and switch to Taylor series close to the removable singularity at ``z = 0``.
"""
from dataclasses import dataclass

import numpy as np

SERIES_THRESHOLD = 1e-4
LARGE_Z = 40.0
KT0_SERIES_THRESHOLD = 1e-6


@dataclass(frozen=True)
class DispersionParams:
    mu: float
    temperature: float
    delta0: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.mu):
            raise ValueError("mu must be finite")
        if not (self.temperature > 0 and np.isfinite(self.temperature)):
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if not (self.delta0 >= 0 and np.isfinite(self.delta0)):
            raise ValueError(f"delta0 must be non-negative, got {self.delta0}")

    @property
    def beta(self):
        return 1.0 / self.temperature


def _as_array(z):
    arr = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite argument")
    return arr


def _ret(arr, like):
    return float(arr) if np.ndim(like) == 0 else arr


def f_log(z):
    """-ln(1 + e^{-z}), overflow-free for either sign of z."""
    x = _as_array(z)
    out = -np.log1p(np.exp(-np.abs(x))) + np.minimum(x, 0.0)
    return _ret(out, z)


def rho_fermi(z):
    """Fermi function 1/(1 + e^z)."""
    x = _as_array(z)
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, e / (1.0 + e), 1.0 / (1.0 + e))
    return _ret(out, z)


def g0(z):
    """tanh(z/2)/z, extended by 1/2 at the origin."""
    x = _as_array(z)
    small = np.abs(x) < SERIES_THRESHOLD
    safe = np.where(small, 1.0, x)
    z2 = x * x
    out = np.where(small, 0.5 - z2 / 24.0 + z2 * z2 / 240.0, np.tanh(0.5 * safe) / safe)
    return _ret(out, z)


def _sinh_minus_id(x):
    # sinh(x) - x without cancellation; x >= 0 and x <= LARGE_Z
    out = np.sinh(x) - x
    small = x < 1.0
    if np.any(small):
        xs = x[small]
        x2 = xs * xs
        term = xs * x2 / 6.0
        acc = term.copy()
        for k in range(2, 12):
            term = term * x2 / ((2 * k) * (2 * k + 1))
            acc += term
        out[small] = acc
    return out


def g1(z):
    """-g0'(z) = (e^{2z} - 2z e^z - 1) / (z^2 (1 + e^z)^2); odd in z."""
    x = _as_array(z)
    a = np.atleast_1d(np.abs(x))
    out = np.empty_like(a)
    small = a < SERIES_THRESHOLD
    large = a > LARGE_Z
    mid = ~(small | large)
    if np.any(small):
        s = a[small]
        out[small] = s / 12.0 - s ** 3 / 60.0
    if np.any(mid):
        m = a[mid]
        # (sinh z - z) / (z^2 (1 + cosh z)) is the same expression without cancellation
        out[mid] = _sinh_minus_id(m) / (m * m * (1.0 + np.cosh(m)))
    if np.any(large):
        g = a[large]
        e = np.exp(-g)
        out[large] = (1.0 - 2.0 * g * e - e * e) / (g * g * (1.0 + e) ** 2)
    out = np.copysign(out, np.atleast_1d(x)).reshape(x.shape)
    return _ret(out, z)


def g2(z):
    """g1'(z) + 2 g1(z)/z = 2 e^z (e^z - 1) / (z (e^z + 1)^3); even in z.

    Evaluated as g0(z) sech^2(z/2) / 2, which is the same function.
    """
    x = _as_array(z)
    e = np.exp(-np.abs(x))
    sech2 = 4.0 * e / (1.0 + e) ** 2
    out = 0.5 * np.asarray(g0(x)) * sech2
    return _ret(out, z)


def g1_over_z(z):
    """g1(z)/z, continuous with value 1/12 at z = 0 (positive everywhere)."""
    x = _as_array(z)
    small = np.abs(x) < SERIES_THRESHOLD
    safe = np.where(small, 1.0, x)
    z2 = x * x
    out = np.where(small, 1.0 / 12.0 - z2 / 60.0, np.asarray(g1(safe)) / safe)
    return _ret(out, z)


def inv_k_t0(p, params):
    """1 / K_T^0(p) = beta g0(beta E); bounded by 1/(2T) and free of poles."""
    p = _as_array(p)
    xi = p * p - params.mu
    energy = np.hypot(xi, params.delta0)
    out = params.beta * np.asarray(g0(params.beta * energy))
    return _ret(out, p)


def k_t0(p, params):
    """Dispersion symbol E/tanh(E/2T) with E = sqrt((p^2 - mu)^2 + delta0^2)."""
    p_arr = _as_array(p)
    T = params.temperature
    xi = p_arr * p_arr - params.mu
    energy = np.hypot(xi, params.delta0)
    x = energy / (2.0 * T)
    small = x < KT0_SERIES_THRESHOLD
    safe = np.where(small, 1.0, energy)
    out = np.where(small, 2.0 * T + energy * energy / (6.0 * T),
                   safe / np.tanh(np.where(small, 1.0, x)))
    return _ret(out, p)


def x_over_tanh_half(x):
    """x / tanh(x/2) = 1/g0(x), the symbol of beta H / tanh(beta H / 2)."""
    return 1.0 / np.asarray(g0(x))
