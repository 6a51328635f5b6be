"""Periodic complex fields on the unit cell and the Ginzburg-Landau functional.

Fields are stored as Fourier coefficients c_k, k = -N..N, so that
psi(x) = sum_k c_k exp(2 pi i k x). Nonlinear terms are evaluated on a grid
large enough that the projection back onto |k| <= N is exact.
"""
import io
import math
from dataclasses import dataclass

import numpy as np

DEFAULT_MODES = 32


class GLMinimizationError(RuntimeError):
    def __init__(self, message, best=None, energy=float("nan"), grad_norm=float("inf")):
        super().__init__(message)
        self.best = best
        self.energy = energy
        self.grad_norm = grad_norm


@dataclass(frozen=True, eq=False)
class PeriodicField:
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex)
        if c.ndim != 1 or c.size % 2 != 1:
            raise ValueError("coefficients must be a 1-d array of odd length 2N+1")
        if not np.all(np.isfinite(c)):
            raise ValueError("non-finite Fourier coefficient")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def n_modes(self):
        return (self.coeffs.size - 1) // 2

    @property
    def indices(self):
        return np.arange(-self.n_modes, self.n_modes + 1)

    @property
    def momenta(self):
        return 2.0 * math.pi * self.indices

    @classmethod
    def zeros(cls, n_modes=DEFAULT_MODES):
        return cls(np.zeros(2 * n_modes + 1, dtype=complex))

    @classmethod
    def constant(cls, value=1.0, n_modes=DEFAULT_MODES):
        c = np.zeros(2 * n_modes + 1, dtype=complex)
        c[n_modes] = value
        return cls(c)

    @classmethod
    def from_modes(cls, modes, n_modes=DEFAULT_MODES):
        """Build from a mapping {k: c_k}."""
        c = np.zeros(2 * n_modes + 1, dtype=complex)
        for k, v in modes.items():
            if abs(k) > n_modes:
                raise ValueError(f"mode {k} exceeds the cutoff {n_modes}")
            c[k + n_modes] = v
        return cls(c)

    def coefficient(self, k):
        return self.coeffs[k + self.n_modes] if abs(k) <= self.n_modes else 0.0

    def resized(self, n_modes):
        out = np.zeros(2 * n_modes + 1, dtype=complex)
        m = min(n_modes, self.n_modes)
        out[n_modes - m:n_modes + m + 1] = self.coeffs[self.n_modes - m:self.n_modes + m + 1]
        return PeriodicField(out)

    def truncation_order(self, tol=0.0):
        """Largest |k| with |c_k| > tol."""
        nz = np.nonzero(np.abs(self.coeffs) > tol)[0]
        return 0 if nz.size == 0 else int(np.max(np.abs(nz - self.n_modes)))

    def __add__(self, other):
        n = max(self.n_modes, other.n_modes)
        return PeriodicField(self.resized(n).coeffs + other.resized(n).coeffs)

    def __sub__(self, other):
        return self + other.scaled(-1.0)

    def scaled(self, factor):
        return PeriodicField(self.coeffs * factor)

    def to_text(self):
        buf = io.StringIO()
        buf.write("# index real imag\n")
        for k, v in zip(self.indices, self.coeffs):
            buf.write(f"{k:d} {v.real:.17g} {v.imag:.17g}\n")
        return buf.getvalue()

    @classmethod
    def from_text(cls, text):
        rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        modes = {int(k): complex(float(re), float(im)) for k, re, im in rows}
        n = max(abs(k) for k in modes) if modes else 0
        return cls.from_modes(modes, n)


@dataclass(frozen=True, eq=False)
class ExternalPotential:
    field: PeriodicField

    def __post_init__(self):
        c = self.field.coeffs
        n = self.field.n_modes
        if abs(c[n]) > 1e-14 * max(1.0, np.abs(c).max()):
            raise ValueError("external potential must have zero mean")
        if not np.allclose(c, np.conj(c[::-1]), rtol=0, atol=1e-14 * max(1.0, np.abs(c).max())):
            raise ValueError("external potential must be real-valued")

    @classmethod
    def zero(cls):
        return cls(PeriodicField.zeros(1))

    @classmethod
    def from_trig(cls, cos_amps=(), sin_amps=()):
        """W(x) = sum_k a_k cos(2 pi k x) + b_k sin(2 pi k x), k = 1, 2, ..."""
        n = max(len(cos_amps), len(sin_amps), 1)
        c = np.zeros(2 * n + 1, dtype=complex)
        for k, amp in enumerate(cos_amps, start=1):
            c[n + k] += 0.5 * amp
            c[n - k] += 0.5 * amp
        for k, amp in enumerate(sin_amps, start=1):
            c[n + k] += -0.5j * amp
            c[n - k] += 0.5j * amp
        return cls(PeriodicField(c))

    @property
    def is_zero(self):
        return not np.any(self.field.coeffs)

    def sup_bound(self):
        return float(np.abs(self.field.coeffs).sum())


def _grid_size(*cutoffs):
    return 4 * max(max(cutoffs), 1) + 2


def evaluate(field, grid_points):
    """Samples of psi at x_j = j / grid_points."""
    n = field.n_modes
    if grid_points < 2 * n + 1:
        raise ValueError(f"grid of {grid_points} points undersamples {2 * n + 1} modes")
    buf = np.zeros(grid_points, dtype=complex)
    buf[field.indices % grid_points] = field.coeffs
    return np.fft.ifft(buf) * grid_points


def analyze(samples, n_modes):
    """Fourier coefficients |k| <= n_modes of uniform samples (inverse of ``evaluate``)."""
    samples = np.asarray(samples, dtype=complex)
    g = samples.size
    if g < 2 * n_modes + 1:
        raise ValueError("too few samples for the requested modes")
    spec = np.fft.fft(samples) / g
    return PeriodicField(spec[np.arange(-n_modes, n_modes + 1) % g])


def norms(field):
    """(L2, H1, H2, L4) norms on the unit cell."""
    c2 = np.abs(field.coeffs) ** 2
    p2 = field.momenta ** 2
    l2 = math.sqrt(math.fsum(c2))
    h1 = math.sqrt(math.fsum((1.0 + p2) * c2))
    h2 = math.sqrt(math.fsum((1.0 + p2 + p2 * p2) * c2))
    vals = evaluate(field, _grid_size(field.n_modes))
    l4 = float(np.mean(np.abs(vals) ** 4)) ** 0.25
    return l2, h1, h2, l4


def gradient_norm_sq(field):
    return math.fsum(field.momenta ** 2 * np.abs(field.coeffs) ** 2)


def potential_expectation(psi, w):
    """<psi | W | psi> = int W |psi|^2."""
    g = _grid_size(psi.n_modes, w.field.n_modes)
    return float(np.mean(evaluate(w.field, g).real * np.abs(evaluate(psi, g)) ** 2))


def gl_energy(psi, w, coeffs):
    g = _grid_size(psi.n_modes, w.field.n_modes)
    vals = evaluate(psi, g)
    dens = np.abs(vals) ** 2
    kinetic = gradient_norm_sq(psi)
    pot = float(np.mean(evaluate(w.field, g).real * dens)) if not w.is_zero else 0.0
    quartic = float(np.mean((1.0 - dens) ** 2))
    return coeffs.b1 * kinetic + coeffs.b2 * pot + coeffs.b3 * quartic


def gl_gradient(psi, w, coeffs):
    """L2 gradient 2(-b1 psi'' + b2 W psi - 2 b3 (1 - |psi|^2) psi), truncated to psi's modes.

    With this normalization E(psi + t phi) = E(psi) + t Re<grad, phi> + O(t^2).
    """
    n = psi.n_modes
    g = _grid_size(n, w.field.n_modes)
    vals = evaluate(psi, g)
    local = -2.0 * coeffs.b3 * (1.0 - np.abs(vals) ** 2) * vals
    if not w.is_zero:
        local = local + coeffs.b2 * evaluate(w.field, g).real * vals
    nonlinear = analyze(local, n).coeffs
    return PeriodicField(2.0 * (coeffs.b1 * psi.momenta ** 2 * psi.coeffs + nonlinear))


def field_l2(field):
    return math.sqrt(math.fsum(np.abs(field.coeffs) ** 2))


def _as_real(c):
    return np.concatenate([c.real, c.imag])


def _as_complex(x):
    m = x.size // 2
    return x[:m] + 1j * x[m:]


def gl_minimize(w, coeffs, init=None, tol=1e-10, max_iter=20_000, restart=50,
                armijo=1e-4, n_modes=DEFAULT_MODES):
    """Preconditioned Polak-Ribiere conjugate gradients with Armijo backtracking.

    Returns (psi, energy). The preconditioner divides each mode by the local
    curvature scale b1 p^2 + b3 + |b2| sup|W|; it does not change the fixed
    points, only the path.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    psi = PeriodicField.constant(1.0, n_modes) if init is None else init
    if w.field.n_modes > psi.n_modes:
        raise ValueError("potential has more modes than the field")
    p2 = psi.momenta ** 2
    precond = 1.0 / (2.0 * (coeffs.b1 * p2 + coeffs.b3 + abs(coeffs.b2) * w.sup_bound()))
    precond_r = np.concatenate([precond, precond])

    def energy_of(x):
        return gl_energy(PeriodicField(_as_complex(x)), w, coeffs)

    def grad_of(x):
        return _as_real(gl_gradient(PeriodicField(_as_complex(x)), w, coeffs).coeffs)

    x = _as_real(psi.coeffs)
    e = energy_of(x)
    gr = grad_of(x)
    z = precond_r * gr
    d = -z
    step = 1.0
    for it in range(max_iter):
        gnorm = math.sqrt(math.fsum(gr * gr))
        if gnorm <= tol:
            return PeriodicField(_as_complex(x)), e
        slope = float(gr @ d)
        if slope >= 0:  # not a descent direction; restart along the preconditioned gradient
            d = -z
            slope = float(gr @ d)
        t = min(1.0, 2.0 * step)
        noise = 64.0 * np.finfo(float).eps * (abs(e) + coeffs.b3)
        while True:
            x_new = x + t * d
            e_new = energy_of(x_new)
            if e_new <= e + armijo * t * slope:
                break
            if abs(e_new - e) <= noise:
                # energy differences are rounding noise here: take the secant
                # root of the directional derivative instead
                slope_t = float(grad_of(x_new) @ d)
                if slope_t > slope:
                    t = t * slope / (slope - slope_t)
                x_new = x + t * d
                e_new = energy_of(x_new)
                break
            t *= 0.5
            if t < 1e-20:
                raise GLMinimizationError("line search stalled", PeriodicField(_as_complex(x)),
                                          e, gnorm)
        step = t
        g_new = grad_of(x_new)
        z_new = precond_r * g_new
        if (it + 1) % restart == 0:
            beta_pr = 0.0
        else:
            beta_pr = max(0.0, float(z_new @ (g_new - gr)) / float(z @ gr))
        d = -z_new + beta_pr * d
        x, e, gr, z = x_new, e_new, g_new, z_new
    raise GLMinimizationError("iteration budget exhausted", PeriodicField(_as_complex(x)), e,
                              math.sqrt(float(gr @ gr)))
