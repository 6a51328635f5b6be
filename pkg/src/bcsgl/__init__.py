"""BCS theory of a one-dimensional Fermi gas near its critical temperature.

Translation-invariant solvers, Ginzburg-Landau coefficients and minimizers,
a Bloch-discretized Bogoliubov-de Gennes toolkit, and scaling checks tying
the two together.
"""
from .glcoef import GLCoefficients, compute_coefficients
from .glfield import ExternalPotential, PeriodicField, gl_energy, gl_minimize
from .tinv import ModelParams, NoCriticalTemperature, critical_temperature, gap_delta0

__version__ = "0.1.0"

__all__ = ["GLCoefficients", "compute_coefficients", "ExternalPotential", "PeriodicField",
           "gl_energy", "gl_minimize", "ModelParams", "NoCriticalTemperature",
           "critical_temperature", "gap_delta0"]
