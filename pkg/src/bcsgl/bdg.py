"""Bloch-Floquet discretization of periodic Bogoliubov-de Gennes operators.

A periodic operator on L^2(R) (period 1) is represented fibrewise: at each
quasimomentum theta the plane waves exp(i (2 pi n + theta) x), n = -N..N,
span the fibre, and particle-hole (2x2) operators become blocks of size
2(2N+1). The trace per unit volume is the theta-average of fibre traces.

The theta grid is the midpoint rule theta_j = 2 pi (j + 1/2)/M - pi. It is
closed under theta -> -theta (theta_j <-> theta_{M-1-j}), which keeps the
discrete model exactly particle-hole symmetric.
"""
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as la

from .glfield import ExternalPotential, PeriodicField, evaluate
from .specfun import DispersionParams, f_log, inv_k_t0, rho_fermi, x_over_tanh_half
from .tinv import critical_temperature, gap_delta0, q_scale

ADMISSIBLE_TOL = 1e-10
COVERAGE_FACTOR = 25.0


class EigensolveError(RuntimeError):
    def __init__(self, message, theta_index):
        super().__init__(message)
        self.theta_index = theta_index


class ResolutionError(ValueError):
    """The plane-wave cutoff does not cover the required momentum window."""


class SCFConvergenceError(RuntimeError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


def worker_count():
    try:
        return max(1, int(os.environ.get("BCSGL_WORKERS", "1")))
    except ValueError:
        return 1


def _map_theta(fn, count):
    """fn(j) for j = 0..count-1, returned in order (deterministic reductions)."""
    workers = min(worker_count(), count)
    if workers <= 1:
        return [fn(j) for j in range(count)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(count)))


def _eigh(mat, j):
    try:
        return la.eigh(mat, check_finite=False)
    except (la.LinAlgError, ValueError) as exc:
        raise EigensolveError(f"eigendecomposition failed at theta index {j}: {exc}", j) from exc


def _eigvalsh(mat, j):
    try:
        return la.eigvalsh(mat, check_finite=False)
    except (la.LinAlgError, ValueError) as exc:
        raise EigensolveError(f"eigendecomposition failed at theta index {j}: {exc}", j) from exc


@dataclass(frozen=True)
class BlochDiscretization:
    n_modes: int
    n_theta: int
    h: float

    def __post_init__(self):
        if self.n_modes < 1 or self.n_theta < 1:
            raise ValueError("need n_modes >= 1 and n_theta >= 1")
        if not 0 < self.h:
            raise ValueError("h must be positive")

    @classmethod
    def for_model(cls, h, mu, temperature, n_theta=64, min_modes=1,
                  coverage_factor=COVERAGE_FACTOR):
        """Smallest cutoff with h 2 pi N >= coverage_factor * max(1, sqrt(mu + T))."""
        q_min = coverage_factor * q_scale(mu, temperature)
        n = max(int(math.ceil(q_min / (2.0 * math.pi * h))), min_modes)
        return cls(n, n_theta, h)

    @property
    def size(self):
        return 2 * self.n_modes + 1

    @property
    def weight(self):
        return 1.0 / self.n_theta

    @property
    def indices(self):
        return np.arange(-self.n_modes, self.n_modes + 1)

    @property
    def thetas(self):
        return 2.0 * math.pi * (np.arange(self.n_theta) + 0.5) / self.n_theta - math.pi

    @property
    def max_momentum(self):
        return self.h * 2.0 * math.pi * self.n_modes

    def theta(self, j):
        return 2.0 * math.pi * (j + 0.5) / self.n_theta - math.pi

    def momenta(self, j):
        return self.h * (2.0 * math.pi * self.indices + self.theta(j))

    def mirror(self, j):
        return self.n_theta - 1 - j

    def require_coverage(self, q_min):
        if self.max_momentum < q_min:
            raise ResolutionError(
                f"cutoff h*2*pi*N = {self.max_momentum:.4g} below required {q_min:.4g}")

    def refined(self, factor=2):
        return BlochDiscretization(self.n_modes * factor, self.n_theta * factor, self.h)


def convolution_matrix(fld, size):
    """Matrix of multiplication by a periodic field in the basis n = -N..N."""
    n_max = (size - 1) // 2
    col = np.zeros(size, dtype=complex)
    row = np.zeros(size, dtype=complex)
    for d in range(size):
        col[d] = fld.coefficient(d) if d <= fld.n_modes else 0.0
        row[d] = fld.coefficient(-d) if d <= fld.n_modes else 0.0
    if fld.truncation_order() > n_max:
        raise ResolutionError("field has modes beyond the plane-wave cutoff")
    return la.toeplitz(col, row)


@dataclass(frozen=True, eq=False)
class BdGBlocks:
    """Fibres of H = [[k, Delta], [conj(Delta), -conj(k)]] with k = -h^2 d^2 - mu + h^2 W.

    Blocks are built on demand; ``block(j)`` is the 2(2N+1) Hermitian matrix at
    theta_j, ordered particle modes first.
    """
    disc: BlochDiscretization
    mu: float
    w: ExternalPotential
    delta: PeriodicField
    _w_conv: np.ndarray = field(repr=False, default=None)
    _d_conv: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        size = self.disc.size
        object.__setattr__(self, "_w_conv", self.disc.h ** 2 * convolution_matrix(self.w.field, size))
        object.__setattr__(self, "_d_conv", convolution_matrix(self.delta, size))

    @property
    def n_blocks(self):
        return self.disc.n_theta

    @property
    def weight(self):
        return self.disc.weight

    @property
    def has_pairing(self):
        return bool(np.any(self.delta.coeffs))

    def kinetic(self, j):
        p = self.disc.momenta(j)
        return np.diag(p * p - self.mu).astype(complex) + self._w_conv

    def block(self, j):
        k = self.kinetic(j)
        size = self.disc.size
        out = np.empty((2 * size, 2 * size), dtype=complex)
        out[:size, :size] = k
        out[size:, size:] = -k
        out[:size, size:] = self._d_conv
        out[size:, :size] = self._d_conv.conj().T
        return out

    def spectrum(self, j):
        """Eigenpairs of block j; the pairing-free case uses the k-block only."""
        if self.has_pairing:
            return _eigh(self.block(j), j)
        lam, vec = _eigh(self.kinetic(j), j)
        size = self.disc.size
        full_vec = np.zeros((2 * size, 2 * size), dtype=complex)
        full_vec[:size, :size] = vec
        full_vec[size:, size:] = vec[:, ::-1]
        return np.concatenate([lam, -lam[::-1]]), full_vec

    def eigenvalues(self, j):
        if self.has_pairing:
            return _eigvalsh(self.block(j), j)
        lam = _eigvalsh(self.kinetic(j), j)
        return np.concatenate([lam, -lam[::-1]])

    def __len__(self):
        return self.n_blocks

    def __getitem__(self, j):
        return self.block(j)


@dataclass(frozen=True, eq=False)
class ExplicitBlocks:
    """Arbitrary Hermitian matrices treated as fibres with equal weights."""
    matrices: Sequence[np.ndarray]

    @property
    def n_blocks(self):
        return len(self.matrices)

    @property
    def weight(self):
        return 1.0 / len(self.matrices)

    def block(self, j):
        return np.asarray(self.matrices[j], dtype=complex)

    def spectrum(self, j):
        return _eigh(self.block(j), j)

    def eigenvalues(self, j):
        return _eigvalsh(self.block(j), j)

    def __len__(self):
        return self.n_blocks

    def __getitem__(self, j):
        return self.block(j)


def assemble_h_delta(disc, mu, w, delta_field):
    for name, fld in (("W", w.field), ("Delta", delta_field)):
        if fld.truncation_order() > disc.n_modes:
            raise ResolutionError(f"{name} has modes beyond the cutoff N={disc.n_modes}")
    return BdGBlocks(disc, float(mu), w, delta_field)


@dataclass(frozen=True, eq=False)
class QuasiPeriodicState:
    """Per-theta density matrices; ``spectra`` caches (eigenvalues, eigenvectors) when known."""
    matrices: tuple
    disc: Optional[BlochDiscretization] = None
    spectra: Optional[tuple] = field(default=None, repr=False)

    @property
    def n_blocks(self):
        return len(self.matrices)

    @property
    def weight(self):
        return self.disc.weight if self.disc is not None else 1.0 / len(self.matrices)

    @property
    def half(self):
        return self.matrices[0].shape[0] // 2

    def gamma(self, j):
        s = self.half
        return self.matrices[j][:s, :s]

    def alpha(self, j):
        s = self.half
        return self.matrices[j][:s, s:]

    def occupations(self, j):
        if self.spectra is not None:
            return self.spectra[j][0]
        return _eigvalsh(self.matrices[j], j)

    def check_admissible(self, tol=ADMISSIBLE_TOL):
        for j, g in enumerate(self.matrices):
            if np.max(np.abs(g - g.conj().T)) > 1e-12 * max(1.0, np.max(np.abs(g))):
                raise ValueError(f"state block {j} is not Hermitian")
            occ = self.occupations(j)
            if occ.min() < -tol or occ.max() > 1.0 + tol:
                raise ValueError(f"state block {j} has eigenvalues outside [0, 1]")
        return True


def fermi_state(blocks, beta):
    """Gibbs state (1 + exp(beta H))^{-1}, fibre by fibre."""
    if not beta > 0:
        raise ValueError("beta must be positive")

    def one(j):
        lam, vec = blocks.spectrum(j)
        occ = rho_fermi(beta * lam)
        return (vec * occ) @ vec.conj().T, (occ, vec)

    out = _map_theta(one, blocks.n_blocks)
    disc = getattr(blocks, "disc", None)
    return QuasiPeriodicState(tuple(m for m, _ in out), disc, tuple(s for _, s in out))


def _fsum_weighted(values, weight):
    return weight * math.fsum(values)


def trace_per_unit_volume(obj, part=None):
    """Average fibre trace. ``part`` selects a sub-block: None, '11', '12', '21' or '22'."""
    mats = obj.matrices if isinstance(obj, QuasiPeriodicState) else [obj.block(j) for j in range(obj.n_blocks)]
    traces = []
    for m in mats:
        s = m.shape[0] // 2
        sub = {None: m, "11": m[:s, :s], "12": m[:s, s:], "21": m[s:, :s], "22": m[s:, s:]}[part]
        traces.append(np.trace(sub))
    re = _fsum_weighted([t.real for t in traces], obj.weight)
    im = _fsum_weighted([t.imag for t in traces], obj.weight)
    return re if im == 0.0 else complex(re, im)


def _xlogx(x):
    x = np.clip(x, 1e-300, 1.0)
    return x * np.log(x)


def _checked_occupations(state, j):
    occ = state.occupations(j)
    if occ.min() < -ADMISSIBLE_TOL or occ.max() > 1.0 + ADMISSIBLE_TOL:
        raise ValueError(f"eigenvalue outside [0, 1] in block {j}: [{occ.min()}, {occ.max()}]")
    return np.clip(occ, 0.0, 1.0)


def entropy(state):
    """-Tr Gamma ln Gamma over the doubled space, per unit volume."""
    vals = [-math.fsum(_xlogx(_checked_occupations(state, j))) for j in range(state.n_blocks)]
    return _fsum_weighted(vals, state.weight)


@dataclass(frozen=True, eq=False)
class PairDiagonal:
    """alpha(x, x) on the grid x_j = j / len(samples) and its Fourier coefficients."""
    samples: np.ndarray
    coefficients: PeriodicField

    @property
    def grid(self):
        return np.arange(self.samples.size) / self.samples.size

    def l2_squared(self):
        return float(np.mean(np.abs(self.samples) ** 2))


def _offset_sums(mat):
    """s_d = sum_n A[n, n - d] for d = -(L-1)..(L-1)."""
    size = mat.shape[0]
    idx = (np.arange(size)[:, None] - np.arange(size)[None, :] + size - 1).ravel()
    re = np.bincount(idx, weights=mat.real.ravel(), minlength=2 * size - 1)
    im = np.bincount(idx, weights=mat.imag.ravel(), minlength=2 * size - 1)
    return re + 1j * im


def pair_diagonal_from_alphas(alphas, weight, grid_points=None):
    size = alphas[0].shape[0]
    sums = np.zeros(2 * size - 1, dtype=complex)
    for a in alphas:  # fixed order
        sums += _offset_sums(a)
    coeffs = PeriodicField(weight * sums)
    g = grid_points or 2 * coeffs.n_modes + 2
    if g < 2 * coeffs.n_modes + 2:
        raise ValueError("pair-diagonal grid too coarse")
    return PairDiagonal(evaluate(coeffs, g), coeffs)


def pair_diagonal(state, grid_points=None):
    """alpha(x, x) = <1/M sum_theta sum_{n,m} [Gamma_theta]_12,nm e^{2 pi i (n-m) x}>."""
    return pair_diagonal_from_alphas([state.alpha(j) for j in range(state.n_blocks)],
                                     state.weight, grid_points)


def _kinetic_blocks(disc, mu, w):
    return assemble_h_delta(disc, mu, w, PeriodicField.zeros(1))


def bcs_free_energy(state, disc, mu, w, a, temperature):
    """Tr k gamma - T S(Gamma) - a h int |alpha(x,x)|^2, per unit volume."""
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    kb = _kinetic_blocks(disc, mu, w)
    kin = [np.real(np.sum(kb.kinetic(j).T * state.gamma(j))) for j in range(state.n_blocks)]
    kinetic = _fsum_weighted(kin, state.weight)
    pair = pair_diagonal(state)
    interaction = a * disc.h * pair.l2_squared()
    return kinetic - temperature * entropy(state) - interaction


def normal_state(disc, mu, w, temperature):
    """Gibbs state of the pairing-free operator and its free energy T Tr f(beta k)."""
    beta = 1.0 / temperature
    blocks = _kinetic_blocks(disc, mu, w)
    state = fermi_state(blocks, beta)
    vals = []
    for j in range(disc.n_theta):
        lam = _eigvalsh(blocks.kinetic(j), j)
        vals.append(math.fsum(f_log(beta * lam)))
    return state, temperature * _fsum_weighted(vals, disc.weight)


def _trace_f(eigs, beta):
    return math.fsum(f_log(beta * eigs))


def log_partition_difference(blocks_delta, blocks_zero, beta):
    """Tr[f(beta H_Delta) - f(beta H_0)] per unit volume, f(z) = -ln(1 + e^{-z})."""
    if blocks_delta.n_blocks != blocks_zero.n_blocks:
        raise ValueError("block families use different discretizations")

    def one(j):
        return _trace_f(blocks_delta.eigenvalues(j), beta) - _trace_f(blocks_zero.eigenvalues(j), beta)

    return _fsum_weighted(_map_theta(one, blocks_delta.n_blocks), blocks_delta.weight)


def matched_coupling(disc, mu, temperature, delta0):
    """Coupling a_N for which the discrete gap equation holds at delta0.

    1/a_N = h/M sum_theta sum_n 1/K_T^0(h (2 pi n + theta)); in the limit N, M -> oo
    this is the continuum gap equation, so a_N -> a.
    """
    params = DispersionParams(mu, temperature, delta0)
    vals = [math.fsum(inv_k_t0(disc.momenta(j), params)) for j in range(disc.n_theta)]
    return 1.0 / (disc.h * _fsum_weighted(vals, disc.weight))


@dataclass(frozen=True)
class TrialBound:
    f_trial: float
    identity_residual: float
    direct: float
    via_identity: float
    log_partition_term: float
    quadratic_term: float
    correction_term: float
    delta0: float
    temperature: float
    coupling: float
    n_modes: int
    n_theta: int

    def __iter__(self):
        return iter((self.f_trial, self.identity_residual))


def _gibbs_pieces(blocks, beta, j, kin):
    """Fibre contributions of the Gibbs state: Tr k gamma, -Tr G ln G, Tr f - beta tr H22, alpha.

    Tr f(beta H) is evaluated through the Gibbs variational form
    beta Tr(H G) - S(G), which is stationary in G: eigenvector rounding then
    enters only at second order, whereas summing f over computed eigenvalues
    carries an O(eps ||H||) error. The hole block is written through 1 - G22
    so that every entry stays small at large momenta; the constant beta tr H22
    is dropped (it is the same for H_Delta and H_0 built on one kinetic part).
    """
    lam, vec = blocks.spectrum(j)
    z = beta * lam
    occ = rho_fermi(z)
    occ_c = rho_fermi(-z)
    size = blocks.disc.size
    top, bot = vec[:size], vec[size:]
    gamma = (top * occ) @ top.conj().T
    alpha = (top * occ) @ bot.conj().T
    hole = (bot * occ_c) @ bot.conj().T  # 1 - G22
    blk = blocks.block(j)
    k_gamma = float(np.real(np.sum(kin.T * gamma)))
    energy = (float(np.real(np.sum(blk[:size, :size].T * gamma)))
              + 2.0 * float(np.real(np.sum(blk[:size, size:] * alpha.conj())))
              - float(np.real(np.sum(blk[size:, size:].T * hole))))
    # ln rho(z) = f(-z) keeps tiny occupations accurate
    ln_occ, ln_occ_c = np.asarray(f_log(-z)), np.asarray(f_log(z))
    ent = -math.fsum(occ * ln_occ)
    ent_full = -math.fsum(np.concatenate([occ * ln_occ, occ_c * ln_occ_c]))
    return k_gamma, ent, beta * energy - ent_full, alpha


def _delta_field(psi, delta0):
    order = max(psi.truncation_order(1e-15 * max(1.0, float(np.abs(psi.coeffs).max()))), 1)
    return psi.resized(order).scaled(-delta0)


def trial_upper_bound(psi, params, w, disc=None, coupling="matched", n_theta=64,
                      coverage_factor=COVERAGE_FACTOR, tc=None):
    """F^BCS(Gamma_Delta) - F^BCS(Gamma_0) for Delta = -Delta_0 psi at T = T_c (1 - D h^2).

    Evaluated directly from the functional and through the log-partition
    identity; the two agree exactly on the discrete level, and their
    difference is returned as ``identity_residual``.

    coupling="matched" replaces a by the discrete coupling a_N that makes the
    truncated gap equation hold at the continuum Delta_0 (see
    ``matched_coupling``); coupling="bare" uses a itself.
    """
    tc = critical_temperature(params.a, params.mu) if tc is None else tc
    temperature = tc * (1.0 - params.D * params.h ** 2)
    beta = 1.0 / temperature
    delta0 = gap_delta0(params.a, params.mu, temperature, tc=tc).delta0
    dfield = _delta_field(psi, delta0)
    if disc is None:
        disc = BlochDiscretization.for_model(params.h, params.mu, temperature, n_theta,
                                             min_modes=max(dfield.n_modes, w.field.n_modes),
                                             coverage_factor=coverage_factor)
    else:
        disc.require_coverage(coverage_factor * q_scale(params.mu, temperature))
    if disc.h != params.h:
        raise ValueError("discretization and model use different h")
    if coupling == "matched":
        a_eff = matched_coupling(disc, params.mu, temperature, delta0)
    elif coupling == "bare":
        a_eff = params.a
    else:
        raise ValueError(f"unknown coupling mode {coupling!r}")
    h_delta = assemble_h_delta(disc, params.mu, w, dfield)
    h_zero = _kinetic_blocks(disc, params.mu, w)

    def one(j):
        kin = h_zero.kinetic(j)
        kd, sd, fd, alpha = _gibbs_pieces(h_delta, beta, j, kin)
        k0, s0, f0, _ = _gibbs_pieces(h_zero, beta, j, kin)
        return kd - k0, sd - s0, fd - f0, alpha

    parts = _map_theta(one, disc.n_theta)
    wgt = disc.weight
    d_kin = _fsum_weighted([p[0] for p in parts], wgt)
    d_ent = _fsum_weighted([p[1] for p in parts], wgt)
    d_logz = _fsum_weighted([p[2] for p in parts], wgt)
    pair = pair_diagonal_from_alphas([p[3] for p in parts], wgt)
    h = params.h

    direct = d_kin - temperature * d_ent - a_eff * h * pair.l2_squared()

    psi_d = dfield.scaled(-1.0 / (2.0 * h * a_eff))  # Delta_0 psi / (2 h a)
    n_pair = pair.coefficients.n_modes
    mismatch = psi_d.resized(max(n_pair, psi_d.n_modes)) - pair.coefficients.resized(
        max(n_pair, psi_d.n_modes))
    correction = h * a_eff * math.fsum(np.abs(mismatch.coeffs) ** 2)
    quadratic = math.fsum(np.abs(dfield.coeffs) ** 2) / (4.0 * h * a_eff)
    logz_term = d_logz / (2.0 * beta)
    via = logz_term + quadratic - correction
    return TrialBound(direct, abs(direct - via), direct, via, logz_term, quadratic, correction,
                      delta0, temperature, a_eff, disc.n_modes, disc.n_theta)


def _relative_entropy_block(g, g0_spec, g_spec):
    x, u = g_spec
    y, v = g0_spec
    if y.min() <= 0.0 or y.max() >= 1.0:
        raise ValueError("reference state must have spectrum strictly inside (0, 1)")
    x = np.clip(x, 0.0, 1.0)
    overlap = np.abs(u.conj().T @ v) ** 2  # |<u_i|v_j>|^2
    ln_y, ln_1y = np.log(y), np.log1p(-y)
    cross = overlap @ ln_y  # <u_i| ln Gamma0 |u_i>
    cross_c = overlap @ ln_1y
    terms = _xlogx(x) + _xlogx(1.0 - x) - x * cross - (1.0 - x) * cross_c
    return math.fsum(terms)


def _state_spectrum(state, j):
    if state.spectra is not None:
        return state.spectra[j]
    return _eigh(state.matrices[j], j)


def relative_entropy(state, ref_state):
    """Tr[G (ln G - ln G0) + (1 - G)(ln(1 - G) - ln(1 - G0))] per unit volume."""
    if state.n_blocks != ref_state.n_blocks:
        raise ValueError("states use different discretizations")
    vals = []
    for j in range(state.n_blocks):
        gs = _state_spectrum(state, j)
        if gs[0].min() < -ADMISSIBLE_TOL or gs[0].max() > 1.0 + ADMISSIBLE_TOL:
            raise ValueError(f"state block {j} is not admissible")
        vals.append(_relative_entropy_block(state.matrices[j], _state_spectrum(ref_state, j), gs))
    return _fsum_weighted(vals, state.weight)


def klein_lower_bound(state, ref_blocks, beta):
    """Tr[beta H0 / tanh(beta H0 / 2) (G - G0)^2] + (1/3) t^2 / (|t| + Tr G0(1 - G0)),

    with t = Tr G(1 - G) - Tr G0(1 - G0) and G0 = (1 + exp(beta H0))^{-1}.
    """
    first, pg, pg0 = [], [], []
    for j in range(ref_blocks.n_blocks):
        lam, vec = ref_blocks.spectrum(j)
        occ0 = rho_fermi(beta * lam)
        g0 = (vec * occ0) @ vec.conj().T
        diff = state.matrices[j] - g0
        kappa = x_over_tanh_half(beta * lam)
        dv = diff @ vec
        first.append(math.fsum(kappa * np.sum(np.abs(dv) ** 2, axis=0)))
        g = state.matrices[j]
        pg.append(float(np.real(np.trace(g) - np.sum(np.abs(g) ** 2))))
        pg0.append(math.fsum(occ0 * (1.0 - occ0)))
    wgt = state.weight
    t = _fsum_weighted(pg, wgt) - _fsum_weighted(pg0, wgt)
    b = _fsum_weighted(pg0, wgt)
    second = t * t / (abs(t) + b) / 3.0 if (abs(t) + b) > 0 else 0.0
    return _fsum_weighted(first, wgt) + second


def h1_operator_norm(eta_blocks, disc):
    """Tr[eta^* (1 - h^2 d^2) eta] per unit volume for fibre matrices eta_theta."""
    vals = []
    for j, eta in enumerate(eta_blocks):
        p = disc.momenta(j)
        vals.append(math.fsum((1.0 + p * p) * np.sum(np.abs(eta) ** 2, axis=1)))
    return _fsum_weighted(vals, disc.weight)


@dataclass(frozen=True)
class SCFResult:
    delta: PeriodicField
    free_energy: float
    iterations: int
    history: tuple
    coupling: float

    def __iter__(self):
        return iter((self.delta, self.free_energy))


def _scf_map(delta, disc, mu, w, beta, a_eff, n_modes):
    blocks = assemble_h_delta(disc, mu, w, delta)
    state = fermi_state(blocks, beta)
    pair = pair_diagonal(state)
    return pair.coefficients.resized(n_modes).scaled(-2.0 * a_eff * disc.h), state


def self_consistent_gap(disc, params, w, init_delta, damping=0.5, tol=1e-10, max_iter=500,
                        coupling="matched", anderson=5, tc=None):
    """Fixed point of Delta = -2 a h alpha_Delta(x, x) at T = T_c (1 - D h^2).

    Damped iteration with Anderson mixing over the last ``anderson`` residuals
    (0 disables it). The sign makes the translation-invariant fixed point at W = 0
    equal to Delta = -Delta_0. Returns the fixed point and
    F^BCS(Gamma_Delta) - F^BCS(Gamma_0).
    """
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    tc = critical_temperature(params.a, params.mu) if tc is None else tc
    temperature = tc * (1.0 - params.D * params.h ** 2)
    beta = 1.0 / temperature
    if coupling == "matched":
        delta0 = gap_delta0(params.a, params.mu, temperature, tc=tc).delta0
        a_eff = matched_coupling(disc, params.mu, temperature, delta0)
    elif coupling == "bare":
        a_eff = params.a
    else:
        raise ValueError(f"unknown coupling mode {coupling!r}")
    n_modes = init_delta.n_modes
    if n_modes > disc.n_modes:
        raise ResolutionError("initial gap has more modes than the discretization")

    def to_vec(f):
        return np.concatenate([f.coeffs.real, f.coeffs.imag])

    def to_field(v):
        m = v.size // 2
        return PeriodicField(v[:m] + 1j * v[m:])

    x = to_vec(init_delta)
    xs, rs = [], []
    history = []
    for it in range(1, max_iter + 1):
        mapped, _ = _scf_map(to_field(x), disc, params.mu, w, beta, a_eff, n_modes)
        r = to_vec(mapped) - x
        res = float(np.linalg.norm(r))
        history.append(res)
        if res <= tol:
            x = to_vec(mapped)
            break
        xs.append(x.copy())
        rs.append(r)
        if anderson and len(rs) > 1:
            xs, rs = xs[-(anderson + 1):], rs[-(anderson + 1):]
            dr = np.array([rs[i + 1] - rs[i] for i in range(len(rs) - 1)]).T
            dx = np.array([xs[i + 1] - xs[i] for i in range(len(xs) - 1)]).T
            coef, *_ = np.linalg.lstsq(dr, r, rcond=None)
            x = x + damping * r - (dx + damping * dr) @ coef
        else:
            x = x + damping * r
    else:
        raise SCFConvergenceError(f"no convergence in {max_iter} iterations "
                                  f"(last residual {history[-1]:.3e})", tuple(history))
    delta = to_field(x)
    free = _free_energy_difference(delta, disc, params, w, temperature, a_eff)
    return SCFResult(delta, free, len(history), tuple(history), a_eff)


def _free_energy_difference(delta, disc, params, w, temperature, a_eff):
    beta = 1.0 / temperature
    h_delta = assemble_h_delta(disc, params.mu, w, delta)
    h_zero = _kinetic_blocks(disc, params.mu, w)

    def one(j):
        kin = h_zero.kinetic(j)
        kd, sd, _, alpha = _gibbs_pieces(h_delta, beta, j, kin)
        k0, s0, _, _ = _gibbs_pieces(h_zero, beta, j, kin)
        return kd - k0, sd - s0, alpha

    parts = _map_theta(one, disc.n_theta)
    wgt = disc.weight
    pair = pair_diagonal_from_alphas([p[2] for p in parts], wgt)
    return (_fsum_weighted([p[0] for p in parts], wgt)
            - temperature * _fsum_weighted([p[1] for p in parts], wgt)
            - a_eff * disc.h * pair.l2_squared())


def dump_table(obj, stream, tol=0.0):
    """Write 'theta_index row col real imag' lines for a state or block family."""
    stream.write("theta_index,row,col,real,imag\n")
    mats = obj.matrices if isinstance(obj, QuasiPeriodicState) else [obj.block(j) for j in range(obj.n_blocks)]
    for j, m in enumerate(mats):
        rows, cols = np.nonzero(np.abs(m) > tol)
        for r, c in zip(rows, cols):
            v = m[r, c]
            stream.write(f"{j},{r},{c},{v.real:.17g},{v.imag:.17g}\n")
