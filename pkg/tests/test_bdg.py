import io
import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import unitary_group

from bcsgl import bdg, glcoef, tinv
from bcsgl.asymp import klein_scalar_slack
from bcsgl.glfield import ExternalPotential, PeriodicField, gl_minimize
from bcsgl.specfun import DispersionParams, f_log, k_t0, rho_fermi

MU = 1.0


@pytest.fixture(scope="module")
def setup(tc21):
    params = tinv.ModelParams(2.0, MU, 1.0, 0.1)
    T = tinv.near_critical_temperature(params, tc21)
    d0 = tinv.gap_delta0(2.0, MU, T, tc=tc21).delta0
    disc = bdg.BlochDiscretization.for_model(0.1, MU, T, n_theta=8)
    return params, T, d0, disc


def random_potential(rng, n=2):
    return ExternalPotential.from_trig(rng.normal(size=n) * 0.4, rng.normal(size=n) * 0.4)


def random_delta(rng, n=2):
    c = (rng.normal(size=2 * n + 1) + 1j * rng.normal(size=2 * n + 1)) * 0.2
    return PeriodicField(c)


def test_assemble_examples(setup):
    _, T, d0, _ = setup
    disc = bdg.BlochDiscretization(6, 4, 0.1)
    free = bdg.assemble_h_delta(disc, MU, ExternalPotential.zero(), PeriodicField.zeros(1))
    for j in range(disc.n_theta):
        xi = disc.momenta(j) ** 2 - MU
        assert np.allclose(free.block(j), np.diag(np.concatenate([xi, -xi])), atol=0)
    const = bdg.assemble_h_delta(disc, MU, ExternalPotential.zero(), PeriodicField.constant(-d0, 1))
    blk = const.block(1)
    s = disc.size
    assert np.allclose(blk[:s, s:], -d0 * np.eye(s), atol=0)
    xi = disc.momenta(1) ** 2 - MU
    e = np.sqrt(xi ** 2 + d0 ** 2)
    assert np.allclose(const.eigenvalues(1), np.sort(np.concatenate([e, -e])), atol=1e-12)
    cosw = bdg.assemble_h_delta(disc, MU, ExternalPotential.from_trig([1.0]), PeriodicField.zeros(1))
    k = cosw.kinetic(0)
    assert np.allclose(np.diag(k, 1), 0.5 * disc.h ** 2) and np.allclose(np.diag(k, -1), 0.5 * disc.h ** 2)
    with pytest.raises(bdg.ResolutionError):
        bdg.assemble_h_delta(disc, MU, ExternalPotential.from_trig([0] * 7 + [1.0]), PeriodicField.zeros(1))


def test_hermitian_and_particle_hole():
    rng = np.random.default_rng(0)
    disc = bdg.BlochDiscretization(5, 6, 0.2)
    blocks = bdg.assemble_h_delta(disc, MU, random_potential(rng), random_delta(rng))
    s = disc.size
    u = np.block([[np.zeros((s, s)), np.eye(s)], [-np.eye(s), np.zeros((s, s))]])
    rev = np.eye(s)[::-1]
    p = np.kron(np.eye(2), rev)
    beta = 2.0
    state = bdg.fermi_state(blocks, beta)
    for j in range(disc.n_theta):
        hj = blocks.block(j)
        assert np.max(np.abs(hj - hj.conj().T)) <= 1e-12
        hm = blocks.block(disc.mirror(j))
        assert np.allclose(u @ hj @ u.T, -p @ hm.conj() @ p, atol=1e-12)
        gj, gm = state.matrices[j], state.matrices[disc.mirror(j)]
        assert np.allclose(u @ gj @ u.T, np.eye(2 * s) - p @ gm.conj() @ p, atol=1e-12)
    assert state.check_admissible()


def test_theta_grid_symmetric():
    disc = bdg.BlochDiscretization(3, 7, 0.1)
    assert np.allclose(disc.thetas, -disc.thetas[::-1], atol=1e-15)
    with pytest.raises(ValueError):
        bdg.BlochDiscretization(0, 4, 0.1)


def test_fermi_state_examples(setup):
    _, T, d0, disc = setup
    beta = 1.0 / T
    zero = bdg.fermi_state(bdg.ExplicitBlocks([np.zeros((4, 4))]), 3.0)
    assert np.allclose(zero.matrices[0], 0.5 * np.eye(4), atol=1e-15)
    free = bdg.fermi_state(bdg.assemble_h_delta(disc, MU, ExternalPotential.zero(),
                                                PeriodicField.zeros(1)), beta)
    for j in (0, 3):
        p = disc.momenta(j)
        assert np.allclose(free.gamma(j), np.diag(rho_fermi(beta * (p * p - MU))), atol=1e-14)
    with pytest.raises(ValueError):
        bdg.fermi_state(bdg.ExplicitBlocks([np.zeros((2, 2))]), 0.0)


def test_translation_invariant_pair_entries(setup):
    _, T, d0, disc = setup
    blocks = bdg.assemble_h_delta(disc, MU, ExternalPotential.zero(), PeriodicField.constant(-d0, 1))
    state = bdg.fermi_state(blocks, 1.0 / T)
    params = DispersionParams(MU, T, d0)
    worst = 0.0
    for j in range(disc.n_theta):
        alpha = state.alpha(j)
        # Delta = -Delta_0 gives alpha = +Delta_0 / (2 K)
        expected = d0 / (2.0 * k_t0(disc.momenta(j), params))
        worst = max(worst, np.max(np.abs(np.diag(alpha) - expected)))
        # eigensolver rounding is of order eps * ||H||
        scale = np.finfo(float).eps * np.max(np.abs(blocks.eigenvalues(j)))
        assert np.max(np.abs(alpha - np.diag(np.diag(alpha)))) <= 10 * scale
    assert worst <= 1e-12


def test_trace_per_unit_volume_multiplier():
    h = 0.1
    disc = bdg.BlochDiscretization(60, 8, h)
    mats = []
    for j in range(disc.n_theta):
        m = np.zeros((2 * disc.size, 2 * disc.size))
        m[:disc.size, :disc.size] = np.diag(np.exp(-disc.momenta(j) ** 2))
        mats.append(m)
    state = bdg.QuasiPeriodicState(tuple(mats), disc)
    ref = math.sqrt(math.pi) / (2 * math.pi * h)
    assert bdg.trace_per_unit_volume(state, "11") == pytest.approx(ref, rel=1e-8)
    for m_count in (3, 11):
        d = bdg.BlochDiscretization(4, m_count, h)
        ident = bdg.QuasiPeriodicState(tuple(np.eye(2 * d.size) for _ in range(m_count)), d)
        assert bdg.trace_per_unit_volume(ident, "11") == pytest.approx(d.size, abs=1e-13)


def test_trace_linearity():
    rng = np.random.default_rng(8)
    a = [rng.normal(size=(4, 4)) for _ in range(3)]
    b = [rng.normal(size=(4, 4)) for _ in range(3)]
    ta = bdg.trace_per_unit_volume(bdg.ExplicitBlocks(a))
    tb = bdg.trace_per_unit_volume(bdg.ExplicitBlocks(b))
    tab = bdg.trace_per_unit_volume(bdg.ExplicitBlocks([x + 2 * y for x, y in zip(a, b)]))
    assert tab == pytest.approx(ta + 2 * tb, rel=1e-13)


def test_entropy_examples():
    for val in (0.0, 1.0):
        st = bdg.QuasiPeriodicState((val * np.eye(6),))
        assert bdg.entropy(st) == pytest.approx(0.0, abs=1e-290)
    half = bdg.QuasiPeriodicState((0.5 * np.eye(6),))
    assert bdg.entropy(half) == pytest.approx(6 * math.log(2) / 2, rel=1e-15)
    bad = bdg.QuasiPeriodicState((1.1 * np.eye(2),))
    with pytest.raises(ValueError):
        bdg.entropy(bad)


def test_gibbs_identity():
    rng = np.random.default_rng(9)
    disc = bdg.BlochDiscretization(6, 4, 0.15)
    blocks = bdg.assemble_h_delta(disc, MU, random_potential(rng), random_delta(rng))
    beta = 1.7
    state = bdg.fermi_state(blocks, beta)
    energy = bdg.trace_per_unit_volume(
        bdg.ExplicitBlocks([blocks.block(j) @ state.matrices[j] for j in range(disc.n_theta)]))
    logz = -disc.weight * math.fsum(math.fsum(f_log(beta * blocks.eigenvalues(j)))
                                    for j in range(disc.n_theta))
    # spectrum pairs up as (lam, 1 - lam), so -Tr G ln G is half the fermionic entropy
    assert bdg.entropy(state) == pytest.approx(0.5 * (beta * np.real(energy) + logz), rel=1e-8)


def test_normal_state_free_energy(setup):
    _, T, _, disc = setup
    beta = 1.0 / T
    state, f0 = bdg.normal_state(disc, MU, ExternalPotential.zero(), T)
    assert all(np.max(np.abs(state.alpha(j))) == 0.0 for j in range(disc.n_theta))
    direct = bdg.bcs_free_energy(state, disc, MU, ExternalPotential.zero(), 2.0, T)
    assert direct == pytest.approx(f0, rel=1e-10)
    # -T int ln(1 + exp(-beta(q^2 - mu))) dq/(2 pi h)
    half, _ = quad(lambda q: -math.log1p(math.exp(-beta * (q * q - MU))), 0, np.inf,
                   epsabs=1e-14, epsrel=1e-13, points=None)
    ref = T * 2 * half / (2 * math.pi * disc.h)
    assert f0 == pytest.approx(ref, rel=1e-6)
    # alpha = 0: the coupling constant plays no role
    assert bdg.bcs_free_energy(state, disc, MU, ExternalPotential.zero(), 50.0, T) == direct


def test_pair_diagonal_translation_invariant(setup, tc21):
    params, T, d0, _ = setup
    vals = []
    for cov in (25.0, 50.0, 100.0):
        disc = bdg.BlochDiscretization.for_model(0.1, MU, T, n_theta=8, coverage_factor=cov)
        blocks = bdg.assemble_h_delta(disc, MU, ExternalPotential.zero(), PeriodicField.constant(-d0, 1))
        pair = bdg.pair_diagonal(bdg.fermi_state(blocks, 1.0 / T))
        assert np.ptp(pair.samples.real) <= 1e-12 and np.max(np.abs(pair.samples.imag)) <= 1e-12
        a_n = bdg.matched_coupling(disc, MU, T, d0)
        assert pair.samples[0].real == pytest.approx(d0 / (2 * 0.1 * a_n), rel=1e-11)
        vals.append(pair.samples[0].real)
    target = d0 / (2 * params.a * params.h)
    errs = [abs(v - target) for v in vals]
    assert errs[0] > errs[1] > errs[2]


def test_pair_diagonal_zero_and_brute_force():
    disc = bdg.BlochDiscretization(4, 3, 0.3)
    zero = bdg.fermi_state(bdg.assemble_h_delta(disc, MU, ExternalPotential.zero(),
                                                PeriodicField.zeros(1)), 2.0)
    assert np.all(bdg.pair_diagonal(zero).samples == 0)
    delta = PeriodicField.from_modes({0: -0.3, 1: 0.1 + 0.05j}, 1)
    state = bdg.fermi_state(bdg.assemble_h_delta(disc, MU, ExternalPotential.zero(), delta), 2.0)
    pair = bdg.pair_diagonal(state)
    xs = np.linspace(0.0, 1.0, 7, endpoint=False) + 0.03
    n = disc.indices
    brute = np.zeros(xs.size, dtype=complex)
    for j in range(disc.n_theta):
        a = state.alpha(j)
        for r, nr in enumerate(n):
            for c, nc in enumerate(n):
                brute += a[r, c] * np.exp(2j * math.pi * (nr - nc) * xs)
    brute /= disc.n_theta
    synth = np.array([np.sum(pair.coefficients.coeffs * np.exp(1j * pair.coefficients.momenta * x))
                      for x in xs])
    assert np.allclose(synth, brute, atol=1e-14)


def test_log_partition_difference(setup):
    _, T, d0, disc = setup
    beta = 1.0 / T
    zero = bdg.assemble_h_delta(disc, MU, ExternalPotential.zero(), PeriodicField.zeros(1))
    assert bdg.log_partition_difference(zero, zero, beta) == 0.0
    const = bdg.assemble_h_delta(disc, MU, ExternalPotential.zero(), PeriodicField.constant(-d0, 1))
    val = bdg.log_partition_difference(const, zero, beta)
    total = 0.0
    for j in range(disc.n_theta):
        xi = disc.momenta(j) ** 2 - MU
        e = np.hypot(xi, d0)
        total += np.sum(f_log(beta * e) + f_log(-beta * e) - f_log(beta * xi) - f_log(-beta * xi))
    assert val == pytest.approx(total / disc.n_theta, rel=1e-10)
    fine = bdg.BlochDiscretization(disc.n_modes, 2 * disc.n_theta, disc.h)
    cf = bdg.assemble_h_delta(fine, MU, ExternalPotential.zero(), PeriodicField.constant(-d0, 1))
    zf = bdg.assemble_h_delta(fine, MU, ExternalPotential.zero(), PeriodicField.zeros(1))
    assert abs(bdg.log_partition_difference(cf, zf, beta) - val) <= 1e-7


def test_worker_threads_are_deterministic(setup, monkeypatch):
    _, T, d0, disc = setup
    rng = np.random.default_rng(12)
    blocks = bdg.assemble_h_delta(disc, MU, random_potential(rng), random_delta(rng))
    zero = bdg.assemble_h_delta(disc, MU, blocks.w, PeriodicField.zeros(1))
    serial = bdg.log_partition_difference(blocks, zero, 1.0 / T)
    monkeypatch.setenv("BCSGL_WORKERS", "3")
    assert bdg.worker_count() == 3
    assert bdg.log_partition_difference(blocks, zero, 1.0 / T) == serial


@pytest.fixture(scope="module")
def gl_setup(tc21):
    w = ExternalPotential.from_trig([0.5])
    coeffs = glcoef.compute_coefficients(2.0, MU, 1.0, tc=tc21)
    psi, e = gl_minimize(w, coeffs)
    return w, coeffs, psi, e


def test_trial_bound_zero_psi(setup, tc21):
    params = setup[0]
    tb = bdg.trial_upper_bound(PeriodicField.zeros(4), params, ExternalPotential.zero(),
                               n_theta=4, tc=tc21)
    assert tb.f_trial == pytest.approx(0.0, abs=1e-12)
    assert tb.identity_residual <= 1e-9


def test_trial_bound_identity_and_sign(setup, gl_setup, tc21):
    params, T, d0, _ = setup
    w, _, psi, _ = gl_setup
    f_trial, residual = bdg.trial_upper_bound(psi, params, w, n_theta=8, tc=tc21)
    assert residual <= 1e-7 * max(1.0, abs(f_trial))
    assert f_trial < 0
    bare = bdg.trial_upper_bound(psi, params, w, n_theta=8, coupling="bare", tc=tc21)
    assert bare.coupling == 2.0 and bare.identity_residual <= 1e-7
    with pytest.raises(ValueError):
        bdg.trial_upper_bound(psi, params, w, n_theta=8, coupling="other", tc=tc21)
    with pytest.raises(bdg.ResolutionError):
        bdg.trial_upper_bound(psi, params, w, disc=bdg.BlochDiscretization(5, 4, 0.1), tc=tc21)


def test_trial_bound_matches_functional(setup, gl_setup, tc21):
    params, T, d0, _ = setup
    w, _, psi, _ = gl_setup
    tb = bdg.trial_upper_bound(psi, params, w, n_theta=4, tc=tc21)
    disc = bdg.BlochDiscretization.for_model(params.h, MU, T, 4, min_modes=w.field.n_modes)
    delta = bdg._delta_field(psi, d0)
    state = bdg.fermi_state(bdg.assemble_h_delta(disc, MU, w, delta), 1.0 / T)
    normal, _ = bdg.normal_state(disc, MU, w, T)
    diff = (bdg.bcs_free_energy(state, disc, MU, w, tb.coupling, T)
            - bdg.bcs_free_energy(normal, disc, MU, w, tb.coupling, T))
    assert diff == pytest.approx(tb.f_trial, rel=1e-8)


def _random_pair(rng, n, commuting=False):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    h0 = (a + a.conj().T) / math.sqrt(2 * n)
    _, vec = np.linalg.eigh(h0)
    u = vec if commuting else unitary_group.rvs(n, random_state=rng)
    g = (u * rng.uniform(0, 1, n)) @ u.conj().T
    return h0, 0.5 * (g + g.conj().T)


def test_relative_entropy_properties():
    rng = np.random.default_rng(21)
    h0, g = _random_pair(rng, 6)
    ref = bdg.fermi_state(bdg.ExplicitBlocks([h0]), 1.3)
    assert abs(bdg.relative_entropy(ref, ref)) <= 1e-10
    for i in range(100):
        h0, g = _random_pair(rng, int(rng.integers(2, 9)), commuting=i % 3 == 0)
        ref = bdg.fermi_state(bdg.ExplicitBlocks([h0]), 1.0)
        assert bdg.relative_entropy(bdg.QuasiPeriodicState((g,)), ref) >= -1e-12


def test_relative_entropy_commuting_scalar_formula():
    x, y = np.array([0.2, 0.9]), np.array([0.4, 0.3])
    u = unitary_group.rvs(2, random_state=np.random.default_rng(1))
    g = (u * x) @ u.conj().T
    g0 = (u * y) @ u.conj().T
    ref = bdg.QuasiPeriodicState((g0,))
    scalar = np.sum(x * np.log(x / y) + (1 - x) * np.log((1 - x) / (1 - y)))
    assert bdg.relative_entropy(bdg.QuasiPeriodicState((g,)), ref) == pytest.approx(scalar, rel=1e-12)
    with pytest.raises(ValueError):
        bdg.relative_entropy(bdg.QuasiPeriodicState((g,)), bdg.QuasiPeriodicState((np.diag([0.0, 0.5]),)))


def test_klein_bound_at_gibbs_state_vanishes():
    rng = np.random.default_rng(22)
    h0, _ = _random_pair(rng, 7)
    blocks = bdg.ExplicitBlocks([h0])
    ref = bdg.fermi_state(blocks, 0.8)
    assert abs(bdg.klein_lower_bound(ref, blocks, 0.8)) <= 1e-10


def test_klein_random_pairs():
    rng = np.random.default_rng(23)
    for i in range(60):
        h0, g = _random_pair(rng, int(rng.integers(2, 17)), commuting=i % 4 == 0)
        blocks = bdg.ExplicitBlocks([h0])
        beta = float(rng.uniform(0.3, 3.0))
        state = bdg.QuasiPeriodicState((g,))
        rel = bdg.relative_entropy(state, bdg.fermi_state(blocks, beta))
        assert rel - bdg.klein_lower_bound(state, blocks, beta) >= -1e-10


def test_klein_scalar_reduction():
    beta = 1.0
    for x, lam in [(0.3, 0.7), (0.95, -2.0), (0.01, 0.1)]:
        y = rho_fermi(beta * lam)
        blocks = bdg.ExplicitBlocks([np.array([[lam]])])
        state = bdg.QuasiPeriodicState((np.array([[x]], dtype=complex),))
        slack = bdg.relative_entropy(state, bdg.fermi_state(blocks, beta)) \
            - bdg.klein_lower_bound(state, blocks, beta)
        assert slack == pytest.approx(float(klein_scalar_slack(x, y)), abs=1e-12)
        assert slack >= 0


def test_h1_operator_norm():
    disc = bdg.BlochDiscretization(40, 8, 0.1)
    assert bdg.h1_operator_norm([np.zeros((disc.size, disc.size))] * 8, disc) == 0.0
    etas = [np.diag(np.exp(-disc.momenta(j) ** 2)) for j in range(disc.n_theta)]
    ref = math.sqrt(math.pi / 2) * 1.25 / (2 * math.pi * disc.h)
    assert bdg.h1_operator_norm(etas, disc) == pytest.approx(ref, rel=1e-8)
    rng = np.random.default_rng(3)
    eta = [rng.normal(size=(disc.size, disc.size)) for _ in range(disc.n_theta)]
    l2 = disc.weight * sum(np.sum(e ** 2) for e in eta)
    assert bdg.h1_operator_norm(eta, disc) >= l2


def test_scf_normal_fixed_point(tc21):
    params = tinv.ModelParams(2.0, MU, 1.0, 0.2)
    T = tinv.near_critical_temperature(params, tc21)
    disc = bdg.BlochDiscretization.for_model(0.2, MU, T, n_theta=8)
    res = bdg.self_consistent_gap(disc, params, ExternalPotential.zero(), PeriodicField.zeros(2),
                                  tc=tc21)
    assert np.all(res.delta.coeffs == 0) and res.free_energy == 0.0


def test_scf_translation_invariant(tc21):
    params = tinv.ModelParams(2.0, MU, 1.0, 0.2)
    T = tinv.near_critical_temperature(params, tc21)
    d0 = tinv.gap_delta0(2.0, MU, T, tc=tc21).delta0
    disc = bdg.BlochDiscretization.for_model(0.2, MU, T, n_theta=8)
    delta, free = bdg.self_consistent_gap(disc, params, ExternalPotential.zero(),
                                          PeriodicField.constant(-0.7 * d0, 2), tc=tc21)
    assert abs(abs(delta.coefficient(0)) - d0) <= 1e-6
    assert delta.coefficient(0).real < 0
    assert np.max(np.abs(delta.coeffs[np.arange(5) != 2])) <= 1e-9
    assert free < 0


def test_scf_errors(tc21):
    params = tinv.ModelParams(2.0, MU, 1.0, 0.2)
    disc = bdg.BlochDiscretization.for_model(0.2, MU, 0.8, n_theta=4)
    init = PeriodicField.constant(-0.1, 2)
    with pytest.raises(ValueError):
        bdg.self_consistent_gap(disc, params, ExternalPotential.zero(), init, damping=0.0, tc=tc21)
    with pytest.raises(bdg.SCFConvergenceError) as info:
        bdg.self_consistent_gap(disc, params, ExternalPotential.zero(), init, max_iter=2, tc=tc21)
    assert len(info.value.history) == 2


def test_dump_table():
    st = bdg.QuasiPeriodicState((np.array([[0.5, 0.1j], [-0.1j, 0.5]]),))
    buf = io.StringIO()
    bdg.dump_table(st, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "theta_index,row,col,real,imag"
    assert lines[2] == "0,0,1,0,0.10000000000000001"
    assert len(lines) == 5
