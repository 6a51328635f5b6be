"""Translation-invariant BCS theory with a contact interaction in one dimension.

Everything here is expressed in microscopic momentum units ``q``; the
semiclassical parameter only enters through ``ModelParams.h`` and the
temperature ``T_c (1 - D h^2)``.
"""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate as sp_integrate
from scipy.special import roots_legendre

from .numerics import (DEFAULT_QUAD, DEFAULT_ROOT, RootSettings,
                       find_root_monotone, integrate_even_line, integrate_interval)
from .specfun import DispersionParams, g0, g1, g1_over_z, inv_k_t0, k_t0


class NoCriticalTemperature(ValueError):
    """The coupling is too weak for pairing: the gap equation has no solution for T > 0."""


@dataclass(frozen=True)
class ModelParams:
    a: float
    mu: float
    D: float
    h: float

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"coupling a must be positive, got {self.a}")
        if not self.D > 0:
            raise ValueError(f"D must be positive, got {self.D}")
        if not 0 < self.h < 1:
            raise ValueError(f"h must lie in (0, 1), got {self.h}")
        if not math.isfinite(self.mu):
            raise ValueError("mu must be finite")


@dataclass(frozen=True)
class GapSolution:
    temperature: float
    delta0: float
    residual: float
    beta: float


@dataclass(frozen=True)
class Alpha0Profile:
    grid: np.ndarray
    values: np.ndarray
    momenta: np.ndarray = field(repr=False)
    fourier: np.ndarray = field(repr=False)


def q_scale(mu, temperature=0.0, delta0=0.0):
    return max(1.0, math.sqrt(max(mu + temperature + delta0, 0.0)))


def pair_susceptibility(beta, mu, delta0=0.0, settings=DEFAULT_QUAD):
    """int 1/K_T^0(q) dq/2pi = beta int g0(beta E(q)) dq/2pi.

    At ``delta0 = 0`` this is the right side of the critical-temperature
    equation, so both equations share this single code path.
    """
    def integrand(q):
        energy = np.hypot(q * q - mu, delta0)
        return beta * g0(beta * energy) / (2.0 * math.pi)

    return integrate_even_line(integrand, settings, q_scale(mu, 1.0 / beta, delta0))


def tc_existence_bound(mu):
    """Infimum coupling for which T_c > 0 exists (zero when mu > 0)."""
    return 2.0 * math.sqrt(-mu) if mu < 0 else 0.0


def critical_temperature(a, mu, settings=DEFAULT_QUAD, root=DEFAULT_ROOT):
    """Unique T_c with beta_c int g0(beta_c (q^2 - mu)) dq/2pi = 1/a."""
    if not a > 0:
        raise ValueError("a must be positive")
    if a <= tc_existence_bound(mu):
        raise NoCriticalTemperature(
            f"a={a} <= 2 sqrt(-mu)={tc_existence_bound(mu)}: no pairing at any T > 0")
    target = 1.0 / a

    def excess(T):
        return pair_susceptibility(1.0 / T, mu, 0.0, settings) - target

    lo = hi = max(mu, 0.0) + 1.0
    f_start = excess(lo)
    for _ in range(60):
        if f_start > 0:  # T_c above the start point
            hi *= 2.0
            if excess(hi) < 0:
                break
            lo = hi
        else:
            lo *= 0.5
            if excess(lo) > 0:
                break
            hi = lo
    else:
        raise NoCriticalTemperature(f"could not bracket T_c for a={a}, mu={mu}")
    rs = RootSettings(x_tol=root.x_tol * hi, f_tol=root.f_tol, max_iter=root.max_iter)
    return find_root_monotone(excess, lo, hi, rs)


def gap_delta0(a, mu, temperature, settings=DEFAULT_QUAD, root=DEFAULT_ROOT, tc=None):
    """Solve the gap equation int dq / (2 pi K_T^0(q)) = 1/a for delta0 >= 0."""
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    beta = 1.0 / temperature
    target = 1.0 / a
    f0 = pair_susceptibility(beta, mu, 0.0, settings) - target
    if tc is not None and temperature >= tc:
        return GapSolution(temperature, 0.0, abs(f0), beta)
    if f0 <= 0:
        return GapSolution(temperature, 0.0, abs(f0), beta)

    def excess(delta):
        return pair_susceptibility(beta, mu, delta, settings) - target

    hi = max(temperature, 1.0)
    for _ in range(200):
        if excess(hi) < 0:
            break
        hi *= 2.0
    else:
        raise RuntimeError("could not bracket the gap")
    rs = RootSettings(x_tol=root.x_tol * hi, f_tol=root.f_tol, max_iter=root.max_iter)
    delta = find_root_monotone(excess, 0.0, hi, rs)
    return GapSolution(temperature, delta, abs(excess(delta)), beta)


def _c_integrals(beta_c, mu, settings):
    scale = q_scale(mu, 1.0 / beta_c)

    def numer(q):
        z = beta_c * (q * q - mu)
        return g0(z) - z * g1(z)

    def denom(q):
        return beta_c * beta_c * g1_over_z(beta_c * (q * q - mu))

    return (integrate_even_line(numer, settings, scale),
            integrate_even_line(denom, settings, scale))


def constant_c(a, mu, settings=DEFAULT_QUAD, tc=None):
    """Normalization constant c = 2 int[g0 - z g1] dq / (beta_c int g1(z)/(q^2 - mu) dq)."""
    tc = critical_temperature(a, mu, settings) if tc is None else tc
    num, den = _c_integrals(1.0 / tc, mu, settings)
    return 2.0 * num / den


def delta0_asymptotic(params, settings=DEFAULT_QUAD, c=None):
    """Leading-order gap at T = T_c (1 - D h^2): delta0 = h sqrt(c D)."""
    c = constant_c(params.a, params.mu, settings) if c is None else c
    return params.h * math.sqrt(c * params.D)


def near_critical_temperature(params, tc=None, settings=DEFAULT_QUAD):
    tc = critical_temperature(params.a, params.mu, settings) if tc is None else tc
    return tc * (1.0 - params.D * params.h ** 2)


def alpha0_profile(solution, mu, grid, settings=DEFAULT_QUAD, n_momenta=513):
    """Cooper-pair profile (delta0/2) int e^{iqx} / K_T^0(q) dq/2pi on ``grid``.

    Microscopic units: ``alpha0(0) = delta0 / (2a)`` when the gap equation holds.
    """
    if not solution.delta0 > 0:
        raise ValueError("alpha0 requires a positive gap")
    params = DispersionParams(mu, solution.temperature, solution.delta0)
    grid = np.asarray(grid, dtype=float)
    scale = q_scale(mu, solution.temperature, solution.delta0)
    values = np.empty_like(grid)
    cache = {}
    for i, x in enumerate(grid):
        key = abs(float(x))
        if key not in cache:
            cache[key] = _cosine_transform(params, key, settings, scale)
        values[i] = cache[key]
    momenta = np.linspace(0.0, 40.0 * scale, n_momenta)
    fourier = 0.5 * solution.delta0 * inv_k_t0(momenta, params)
    return Alpha0Profile(grid, values, momenta, fourier)


def _cosine_transform(params, x, settings, scale):
    def integrand(q):
        return 0.5 * params.delta0 * np.cos(q * x) * inv_k_t0(q, params) / (2.0 * math.pi)

    if x == 0.0:
        return integrate_even_line(integrand, settings, scale)
    # Smooth core on [0, Q] with panels narrower than a period; the remaining
    # tail decays only like cos(qx)/q^2 and goes to QUADPACK's Fourier rule.
    cutoff = 40.0 * scale
    n_panels = max(4, int(math.ceil(cutoff * x / math.pi)))
    core, _, _ = integrate_interval(integrand, 0.0, cutoff, settings, n_initial=n_panels,
                                    budget=max(settings.max_panels, 4 * n_panels))
    tail, _ = sp_integrate.quad(
        lambda q: 0.5 * params.delta0 * float(inv_k_t0(q, params)) / (2.0 * math.pi),
        cutoff, np.inf, weight="cos", wvar=x, epsabs=settings.abs_tol, limlst=100)
    return 2.0 * (core + tail)


def alpha0_decay_rate(solution, mu):
    """Exponential decay rate of alpha0(x).

    1/K_T^0 is an even analytic function of E^2 whose nearest singularities
    sit at (q^2 - mu)^2 = -(pi^2 T^2 + delta0^2); the decay rate is the
    imaginary part of the corresponding q.
    """
    gamma = math.sqrt((math.pi * solution.temperature) ** 2 + solution.delta0 ** 2)
    return abs(np.sqrt(complex(mu, gamma)).imag)


def alpha0_decay_length(solution, mu, reduction=0.01):
    """Distance beyond which |alpha0(x)| <= reduction * |alpha0(0)| (with margin 2)."""
    return 2.0 * math.log(1.0 / reduction) / alpha0_decay_rate(solution, mu)


def birman_schwinger_residual(solution, a, mu, settings=DEFAULT_QUAD):
    """|a int dq/(2 pi K_T^0) - 1|; zero exactly when alpha0 is the zero mode."""
    chi = pair_susceptibility(solution.beta, mu, solution.delta0, settings)
    return abs(a * chi - 1.0)


@dataclass(frozen=True)
class ZeroModeCheck:
    lambda_min: float
    scale: float
    cutoff: float
    n_points: int
    effective_coupling: float


def discrete_zero_mode(solution, a, mu, n_points=4096, settings=DEFAULT_QUAD):
    """Lowest eigenvalue of K_T^0 - contact coupling on a truncated momentum grid.

    Gauss-Legendre nodes on [-Q, Q] with Q = 40 max(1, sqrt(mu + T)). The modes
    above Q are eliminated exactly at zero energy, which turns the bare
    coupling into ``a_eff = a / (1 - a * tail)`` with ``tail`` the part of the
    pair susceptibility outside the grid. The rank-one perturbation of the
    diagonal kinetic symbol is then solved through its secular equation.
    """
    params = DispersionParams(mu, solution.temperature, solution.delta0)
    cutoff = 40.0 * max(1.0, math.sqrt(max(mu + solution.temperature, 0.0)))
    nodes, weights = roots_legendre(n_points)
    q = cutoff * nodes
    w = cutoff * weights
    kin = k_t0(q, params)
    total = pair_susceptibility(solution.beta, mu, solution.delta0, settings)
    inside, _, _ = integrate_interval(
        lambda s: inv_k_t0(s, params) / (2.0 * math.pi), 0.0, cutoff, settings)
    tail = total - 2.0 * inside
    a_eff = a / (1.0 - a * tail)
    v2 = a_eff * w / (2.0 * math.pi)
    k_min = float(kin.min())

    def secular(lam):
        return 1.0 - float(np.sum(v2 / (kin - lam)))

    # secular(lam) decreases on (-inf, k_min); exactly one root there
    lo = -1.0
    while secular(lo) < 0:
        lo *= 2.0
    hi = k_min * (1.0 - 1e-15)
    if secular(hi) > 0:
        lam = hi
    else:
        lam = find_root_monotone(secular, lo, hi, RootSettings(x_tol=1e-15 * max(1.0, k_min)))
    return ZeroModeCheck(lam, float(k_t0(math.sqrt(max(mu, 0.0)), params)), cutoff, n_points, a_eff)


def zero_mode_matrix(check, solution, mu):
    """Dense matrix of the same discretized operator (for eigensolver cross-checks)."""
    params = DispersionParams(mu, solution.temperature, solution.delta0)
    nodes, weights = roots_legendre(check.n_points)
    q = check.cutoff * nodes
    v = np.sqrt(check.effective_coupling * check.cutoff * weights / (2.0 * math.pi))
    return np.diag(k_t0(q, params)) - np.outer(v, v)
