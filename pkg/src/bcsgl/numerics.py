"""Adaptive quadrature over the real line and safeguarded root bracketing."""
import math
from dataclasses import dataclass

import numpy as np

# Gauss-Kronrod (7, 15) nodes on [-1, 1]; only the non-negative half is listed.
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])

NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
KRONROD_WEIGHTS = np.concatenate([_WGK[:-1], _WGK[::-1]])
GAUSS_WEIGHTS = np.zeros(15)
GAUSS_WEIGHTS[[1, 3, 5]] = _WG[:3]
GAUSS_WEIGHTS[[13, 11, 9]] = _WG[:3]
GAUSS_WEIGHTS[7] = _WG[3]


class QuadratureError(RuntimeError):
    """Raised when the panel budget is exhausted or the integrand misbehaves."""

    def __init__(self, message, estimate=float("nan"), error=float("inf")):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


class RootFindingError(RuntimeError):
    pass


@dataclass(frozen=True)
class QuadratureSettings:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-14
    tail_cutoff: float = 1e-16
    max_panels: int = 10_000

    def __post_init__(self):
        if min(self.rel_tol, self.abs_tol, self.tail_cutoff) <= 0:
            raise ValueError("quadrature tolerances must be positive")
        if self.max_panels < 16:
            raise ValueError("max_panels must be at least 16")

    def tightened(self, factor=10.0):
        return QuadratureSettings(self.rel_tol / factor, self.abs_tol / factor,
                                  self.tail_cutoff, self.max_panels * 4)


@dataclass(frozen=True)
class RootSettings:
    x_tol: float = 1e-14
    f_tol: float = 1e-300
    max_iter: int = 200

    def __post_init__(self):
        if self.x_tol <= 0 or self.f_tol <= 0:
            raise ValueError("root tolerances must be positive")


DEFAULT_QUAD = QuadratureSettings()
DEFAULT_ROOT = RootSettings()


def _gk_panels(fn, a, b):
    """Kronrod estimates and |K - G| error bounds for panels [a_i, b_i]."""
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    x = mid[:, None] + half[:, None] * NODES[None, :]
    fx = np.asarray(fn(x.ravel()), dtype=float).reshape(x.shape)
    if not np.all(np.isfinite(fx)):
        bad = x[~np.isfinite(fx)][0]
        raise QuadratureError(f"integrand returned a non-finite value at q={bad!r}")
    kron = half * (fx @ KRONROD_WEIGHTS)
    gauss = half * (fx @ GAUSS_WEIGHTS)
    return kron, np.abs(kron - gauss)


def integrate_interval(fn, a, b, settings=DEFAULT_QUAD, n_initial=4, budget=None):
    """Adaptive (7, 15) Gauss-Kronrod on [a, b]; returns (value, error, panels).

    ``fn`` must be vectorized over a 1-d array of abscissae.
    """
    budget = settings.max_panels if budget is None else budget
    edges = np.linspace(a, b, n_initial + 1)
    lo, hi = edges[:-1], edges[1:]
    val, err = _gk_panels(fn, lo, hi)
    while True:
        total = math.fsum(val)
        tol = max(settings.abs_tol, settings.rel_tol * abs(total))
        err_total = err.sum()
        if err_total <= tol:
            return total, err_total, len(lo)
        # split every panel whose error density exceeds the average allowance
        width = hi - lo
        split = err > tol * width / (b - a)
        split[np.argmax(err)] = True
        if len(lo) + split.sum() > budget:
            raise QuadratureError(
                f"panel budget exhausted on [{a}, {b}]", estimate=total, error=err_total)
        mid = 0.5 * (lo[split] + hi[split])
        new_lo = np.concatenate([lo[~split], lo[split], mid])
        new_hi = np.concatenate([hi[~split], mid, hi[split]])
        v_left, e_left = _gk_panels(fn, lo[split], mid)
        v_right, e_right = _gk_panels(fn, mid, hi[split])
        val = np.concatenate([val[~split], v_left, v_right])
        err = np.concatenate([err[~split], e_left, e_right])
        lo, hi = new_lo, new_hi


def integrate_even_line(integrand, settings=DEFAULT_QUAD, scale=1.0, *, return_error=False):
    """Integral over the whole real line of an even integrand, i.e. 2 * int_0^inf.

    The half line is covered by windows [0, s], [s, 2s], [2s, 4s], ... with
    ``s = scale``; each window is integrated adaptively and the sweep stops
    once two consecutive windows contribute less than ``tail_cutoff`` times
    the accumulated value.
    """
    if not scale > 0:
        raise ValueError("scale must be positive")
    pieces, errors = [], []
    used = 0
    lo, hi = 0.0, float(scale)
    quiet = 0
    for _ in range(400):
        remaining = settings.max_panels - used
        if remaining < 4:
            est = 2.0 * math.fsum(pieces)
            raise QuadratureError("panel budget exhausted before the tail converged",
                                  estimate=est, error=2.0 * sum(errors))
        try:
            value, error, n = integrate_interval(integrand, lo, hi, settings, budget=remaining)
        except QuadratureError as exc:
            est = 2.0 * (math.fsum(pieces) + (exc.estimate if np.isfinite(exc.estimate) else 0.0))
            raise QuadratureError(str(exc), estimate=est,
                                  error=2.0 * (sum(errors) + exc.error)) from None
        used += n
        pieces.append(value)
        errors.append(error)
        accumulated = abs(math.fsum(pieces))
        if abs(value) <= settings.tail_cutoff * accumulated or (accumulated == 0 and lo > 0):
            quiet += 1
            if quiet >= 2:
                break
        else:
            quiet = 0
        lo, hi = hi, 2.0 * hi
    else:
        raise QuadratureError("tail did not decay", estimate=2.0 * math.fsum(pieces),
                              error=float("inf"))
    result = 2.0 * math.fsum(pieces)
    if return_error:
        return result, 2.0 * sum(errors)
    return result


def find_root_monotone(fn, lo, hi, settings=DEFAULT_ROOT):
    """Root of a continuous monotone function on [lo, hi].

    Illinois-weighted regula falsi with a bisection step whenever the bracket
    fails to halve; every iterate stays inside the current bracket.
    """
    lo, hi = float(lo), float(hi)
    if not lo < hi:
        raise ValueError("need lo < hi")
    f_lo, f_hi = float(fn(lo)), float(fn(hi))
    for v, x in ((f_lo, lo), (f_hi, hi)):
        if not math.isfinite(v):
            raise RootFindingError(f"non-finite function value at x={x!r}")
    if f_lo == 0.0:
        return lo
    if f_hi == 0.0:
        return hi
    if (f_lo > 0) == (f_hi > 0):
        raise RootFindingError(f"no sign change on [{lo}, {hi}]: f={f_lo:.3e}, {f_hi:.3e}")
    w_lo, w_hi = f_lo, f_hi  # Illinois-weighted copies used for the secant
    side = 0
    width_before = hi - lo
    for it in range(settings.max_iter):
        if hi - lo <= settings.x_tol:
            break
        x = hi - w_hi * (hi - lo) / (w_hi - w_lo)
        if it % 3 == 2 and (hi - lo) > 0.5 * width_before:
            x = 0.5 * (lo + hi)
        if it % 3 == 2:
            width_before = hi - lo
        if not lo < x < hi:
            x = 0.5 * (lo + hi)
            if not lo < x < hi:
                break  # adjacent floats
        fx = float(fn(x))
        if not math.isfinite(fx):
            raise RootFindingError(f"non-finite function value at x={x!r}")
        if abs(fx) <= settings.f_tol:
            return x
        if (fx > 0) == (f_lo > 0):
            lo, f_lo, w_lo = x, fx, fx
            if side == -1:
                w_hi *= 0.5
            side = -1
        else:
            hi, f_hi, w_hi = x, fx, fx
            if side == 1:
                w_lo *= 0.5
            side = 1
    else:
        if hi - lo > settings.x_tol:
            raise RootFindingError(f"iteration budget exhausted; bracket [{lo}, {hi}]")
    return lo if abs(f_lo) <= abs(f_hi) else hi
