"""Ginzburg-Landau coefficients b1, b2, b3 from line integrals over momentum."""
import math
from dataclasses import dataclass

from .numerics import DEFAULT_QUAD, integrate_even_line
from .specfun import g1, g1_over_z, g2
from .tinv import _c_integrals, critical_temperature, q_scale

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class GLCoefficients:
    b1: float
    b2: float
    b3: float
    c: float
    beta_c: float
    mu: float
    D: float

    def __post_init__(self):
        if not (self.b1 > 0 and self.b3 > 0 and self.c > 0):
            raise ValueError(f"sign invariants violated: b1={self.b1}, b3={self.b3}, c={self.c}")

    def with_b2(self, b2):
        return GLCoefficients(self.b1, b2, self.b3, self.c, self.beta_c, self.mu, self.D)


def _line(fn, beta_c, mu, settings):
    return integrate_even_line(fn, settings, q_scale(mu, 1.0 / beta_c))


def compute_coefficients(a, mu, D, settings=DEFAULT_QUAD, tc=None):
    if not D > 0:
        raise ValueError("D must be positive")
    tc = critical_temperature(a, mu, settings) if tc is None else tc
    beta = 1.0 / tc
    num, den = _c_integrals(beta, mu, settings)
    c = 2.0 * num / den
    cd = c * D

    def stiff(q):
        z = beta * (q * q - mu)
        return (g1(z) + 2.0 * beta * q * q * g2(z)) / TWO_PI

    def coupling(q):
        return g1(beta * (q * q - mu)) / TWO_PI

    def quartic(q):
        # g1(z)/(q^2 - mu) = beta * g1(z)/z, smooth through the Fermi points
        return beta * g1_over_z(beta * (q * q - mu)) / TWO_PI

    b1 = cd * beta ** 2 / 16.0 * _line(stiff, beta, mu, settings)
    b2 = cd * beta ** 2 / 4.0 * _line(coupling, beta, mu, settings)
    b3 = cd ** 2 * beta ** 2 / 16.0 * _line(quartic, beta, mu, settings)
    return GLCoefficients(b1, b2, b3, c, beta, mu, D)


def b1_alternative(a, mu, D, settings=DEFAULT_QUAD, tc=None):
    """Integrated-by-parts form: cD beta^2/4 int q^2 g1(z)/(q^2 - mu) dq/2pi."""
    tc = critical_temperature(a, mu, settings) if tc is None else tc
    beta = 1.0 / tc
    num, den = _c_integrals(beta, mu, settings)
    c = 2.0 * num / den

    def integrand(q):
        return q * q * beta * g1_over_z(beta * (q * q - mu)) / TWO_PI

    return c * D * beta ** 2 / 4.0 * _line(integrand, beta, mu, settings)
