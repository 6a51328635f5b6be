import math

import numpy as np
import pytest
from scipy.special import roots_legendre

from bcsgl.numerics import (DEFAULT_QUAD, QuadratureError, QuadratureSettings, RootFindingError,
                            RootSettings, find_root_monotone, integrate_even_line,
                            integrate_interval)
from bcsgl.specfun import g0
from bcsgl.tinv import gap_delta0


def composite_gauss(fn, a, b, panels=2000, order=30):
    x, w = roots_legendre(order)
    edges = np.linspace(a, b, panels + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])[:, None]
    half = 0.5 * (edges[1:] - edges[:-1])[:, None]
    return float(np.sum(half * w * fn(mid + half * x)))


def test_gaussian():
    val = integrate_even_line(lambda q: np.exp(-q * q))
    assert val == pytest.approx(math.sqrt(math.pi), rel=1e-12)


def test_lorentzian():
    val = integrate_even_line(lambda q: 1.0 / (1.0 + q * q))
    assert val == pytest.approx(math.pi, rel=1e-12)


def test_g0_line_against_reference_rule():
    beta, mu = 2.0, 1.0

    def fn(q):
        return g0(beta * (q * q - mu))

    # reference: fixed composite rule on [0, 100]; beyond it tanh = 1 exactly in
    # double precision, so the tail is int dq / (beta (q^2 - mu)) in closed form
    L = 100.0
    core = composite_gauss(fn, 0.0, L)
    tail = math.log((L + 1.0) / (L - 1.0)) / (2.0 * beta)
    ref = 2.0 * (core + tail)
    assert integrate_even_line(fn, scale=1.0) == pytest.approx(ref, rel=1e-12)


def test_error_estimate_bounds_refinement():
    beta, mu = 3.0, 1.5

    def fn(q):
        return beta * g0(beta * (q * q - mu)) / (2 * math.pi)

    coarse, err = integrate_even_line(fn, QuadratureSettings(rel_tol=1e-8), 1.5,
                                      return_error=True)
    fine = integrate_even_line(fn, QuadratureSettings(rel_tol=5e-9), 1.5)
    assert abs(fine - coarse) <= err + 1e-15


def test_nan_integrand_reports_abscissa():
    with pytest.raises(QuadratureError, match="q="):
        integrate_even_line(lambda q: np.where(q > 2.0, np.nan, 1.0 / (1 + q ** 4)))


def test_budget_exhaustion_carries_estimate():
    settings = QuadratureSettings(rel_tol=1e-14, abs_tol=1e-300, max_panels=16)
    with pytest.raises(QuadratureError) as info:
        integrate_interval(lambda x: np.sin(200 * x) ** 2, 0.0, 10.0, settings)
    assert np.isfinite(info.value.estimate)
    assert info.value.error > 0


def test_settings_validation():
    with pytest.raises(ValueError):
        QuadratureSettings(rel_tol=0.0)
    with pytest.raises(ValueError):
        QuadratureSettings(max_panels=8)
    with pytest.raises(ValueError):
        RootSettings(x_tol=-1.0)
    assert DEFAULT_QUAD.tightened().rel_tol == pytest.approx(1e-11)


def test_root_linear():
    assert find_root_monotone(lambda x: x - 2.0, 0.0, 5.0) == pytest.approx(2.0, abs=1e-14)


def test_root_tanh():
    s = RootSettings(x_tol=1e-13)
    x = find_root_monotone(lambda x: math.tanh(x) - 0.5, 0.0, 3.0, s)
    assert x == pytest.approx(math.atanh(0.5), abs=1e-13)


def test_root_is_bracketed():
    s = RootSettings(x_tol=1e-10)
    fn = lambda x: x ** 3 - 0.3  # noqa: E731
    x = find_root_monotone(fn, 0.0, 2.0, s)
    assert fn(x - s.x_tol) <= 0 <= fn(x + s.x_tol)


def test_root_errors():
    with pytest.raises(RootFindingError, match="no sign change"):
        find_root_monotone(lambda x: x + 1.0, 0.0, 1.0)
    with pytest.raises(RootFindingError, match="non-finite"):
        find_root_monotone(lambda x: math.nan, 0.0, 1.0)


def test_gap_root_self_refinement(tc21):
    base = gap_delta0(2.0, 1.0, 0.8 * tc21, tc=tc21)
    fine = gap_delta0(2.0, 1.0, 0.8 * tc21, settings=DEFAULT_QUAD.tightened(),
                      root=RootSettings(x_tol=1e-15), tc=tc21)
    assert abs(base.delta0 - fine.delta0) <= 1e-10
