"""Command-line driver: solvers, verification suites and their reports.

Every subcommand writes ``<stem>.csv`` and ``<stem>.json`` into the output
directory and prints a one-line summary. Exit codes: 0 success, 1 solver
error, 2 failed verification criterion, 64 malformed configuration.
"""
import argparse
import copy
import csv
import json
import math
import os
import sys

import numpy as np

from . import asymp, bdg, glcoef, glfield, tinv
from .numerics import QuadratureError, RootFindingError

SCHEMA_VERSION = 1
EXIT_OK, EXIT_SOLVER, EXIT_CRITERION, EXIT_CONFIG = 0, 1, 2, 64

DEFAULTS = {
    "model": {"a": 2.0, "mu": 1.0, "D": 1.0, "h": 0.1},
    "potential": {"cos": [], "sin": []},
    "psi": {"modes": {"0": [1.0, 0.0], "1": [0.2, 0.0]}},
    "discretization": {"n_modes": None, "n_theta": 16, "coverage_factor": 25.0},
    "tolerances": {"gl": 1e-10, "scf": 1e-10, "identity": 1e-7, "b1_identity": 1e-8,
                   "birman_schwinger": 1e-9, "klein_slack": -1e-10},
    "output": {"dir": ".", "stem": None},
    "options": {},
}

COMMAND_OPTIONS = {
    "tc": {},
    "gap": {"t_min": 0.5, "t_max": 0.999, "n_temps": 20},
    "coeffs": {},
    "alpha0": {"x_max": None, "n_points": 201},
    "gl": {"n_field_modes": 32},
    "trial-energy": {"coupling": "matched", "n_field_modes": 32},
    "scf": {"damping": 0.5, "max_iter": 500, "init": "gl", "coupling": "matched",
            "n_field_modes": 32},
    "semiclassics": {"h_list": [0.2, 0.141, 0.1, 0.071, 0.05], "min_order": 5.5},
    "pair-kernel": {"h_list": [0.2, 0.141, 0.1, 0.071, 0.05], "min_order": 4.5},
    "main-theorem": {"h_list": [0.2, 0.1, 0.05], "min_order": 4.0, "coupling": "matched",
                     "n_field_modes": 32},
    "klein": {"samples": 200, "seed": 7, "min_size": 2, "max_size": 16, "grid": 100},
}

CSV_HELP = """CSV columns:
  tc             a, mu, tc, residual
  gap            temperature, t_over_tc, delta0, residual
  coeffs         a, mu, D, tc, c, b1, b2, b3, b1_alternative, b1_rel_diff
  alpha0         x, alpha0
  gl             index, real, imag                (Fourier coefficients of psi*)
  trial-energy   h, temperature, delta0, f_trial, identity_residual, n_modes, n_theta
  scf            index, real, imag                (Fourier coefficients of Delta)
  verify semiclassics|pair-kernel|main-theorem
                 h, measured, predicted, remainder
  verify klein   sample, size, slack

Configuration is JSON with sections model, potential {cos, sin}, psi {modes:
{k: [re, im]}}, discretization {n_modes, n_theta, coverage_factor},
tolerances, output {dir, stem} and options (subcommand specific). Command line
flags override the file. BCSGL_WORKERS caps the per-quasimomentum worker
threads (default 1).
"""


class ConfigError(ValueError):
    pass


SOLVER_ERRORS = (QuadratureError, RootFindingError, tinv.NoCriticalTemperature,
                 glfield.GLMinimizationError, bdg.SCFConvergenceError, bdg.EigensolveError,
                 bdg.ResolutionError, asymp.FitError, np.linalg.LinAlgError)


def _merge(base, over, path=""):
    for key, val in over.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"field '{where}': unknown key")
        if isinstance(base[key], dict) and key != "modes":
            if not isinstance(val, dict):
                raise ConfigError(f"field '{where}': expected an object")
            _merge(base[key], val, where + ".")
        else:
            base[key] = val


def _load_file(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def _number(cfg, section, key, positive=False, integer=False, allow_none=False):
    val = cfg[section][key]
    if val is None and allow_none:
        return None
    ok = isinstance(val, (int, float)) and not isinstance(val, bool) and math.isfinite(val)
    if integer:
        ok = ok and float(val).is_integer()
    if not ok or (positive and val <= 0):
        kind = "positive " if positive else ""
        kind += "integer" if integer else "number"
        raise ConfigError(f"field '{section}.{key}': expected a {kind}, got {val!r}")
    return int(val) if integer else float(val)


def resolve_config(command, file_data=None, overrides=None):
    """Defaults, then the config file, then flag overrides; validated."""
    cfg = copy.deepcopy(DEFAULTS)
    cfg["options"] = copy.deepcopy(COMMAND_OPTIONS[command])
    if file_data:
        pot = file_data.get("potential")
        if isinstance(pot, dict) and ({"constant", "mean", "c0"} & set(pot)):
            raise ConfigError("field 'potential': constant mode is not allowed "
                              "(W must have zero mean)")
        _merge(cfg, file_data)
    for dotted, val in (overrides or {}).items():
        section, key = dotted.split(".", 1)
        cfg[section][key] = val
    if cfg["output"]["stem"] is None:
        cfg["output"]["stem"] = command.replace("-", "_")

    for key in ("a", "D", "h"):
        _number(cfg, "model", key, positive=True)
    _number(cfg, "model", "mu")
    try:
        tinv.ModelParams(**cfg["model"])
    except ValueError as exc:
        raise ConfigError(f"field 'model': {exc}") from exc
    pot = cfg["potential"]
    for key in ("cos", "sin"):
        amps = pot[key]
        if not isinstance(amps, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)
                for v in amps):
            raise ConfigError(f"field 'potential.{key}': expected a list of numbers")
    modes = cfg["psi"]["modes"]
    if not isinstance(modes, dict):
        raise ConfigError("field 'psi.modes': expected an object {k: [re, im]}")
    for k, v in modes.items():
        try:
            int(k)
        except ValueError as exc:
            raise ConfigError(f"field 'psi.modes.{k}': key must be an integer") from exc
        if not (isinstance(v, list) and len(v) == 2
                and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v)):
            raise ConfigError(f"field 'psi.modes.{k}': expected [re, im]")
    _number(cfg, "discretization", "n_modes", positive=True, integer=True, allow_none=True)
    _number(cfg, "discretization", "n_theta", positive=True, integer=True)
    _number(cfg, "discretization", "coverage_factor", positive=True)
    for key in cfg["tolerances"]:
        _number(cfg, "tolerances", key, positive=key != "klein_slack")
    for key, val in cfg["options"].items():
        if key == "h_list":
            if not (isinstance(val, list) and len(val) >= 3
                    and all(isinstance(x, (int, float)) and 0 < x < 1 for x in val)
                    and all(b < a for a, b in zip(val, val[1:]))):
                raise ConfigError("field 'options.h_list': expected >= 3 strictly decreasing "
                                  "values in (0, 1)")
        elif key in ("coupling",):
            if val not in ("matched", "bare"):
                raise ConfigError("field 'options.coupling': expected 'matched' or 'bare'")
        elif key == "init":
            if val not in ("gl", "constant", "zero"):
                raise ConfigError("field 'options.init': expected 'gl', 'constant' or 'zero'")
        elif key in ("n_points", "n_temps", "samples", "max_iter", "n_field_modes",
                     "min_size", "max_size", "grid"):
            _number(cfg, "options", key, positive=True, integer=True)
        elif key == "seed":
            _number(cfg, "options", key, integer=True)
        elif key == "x_max":
            _number(cfg, "options", key, positive=True, allow_none=True)
        else:
            _number(cfg, "options", key)
    opts = cfg["options"]
    if "damping" in opts and not 0 < opts["damping"] <= 1:
        raise ConfigError("field 'options.damping': must lie in (0, 1]")
    if "t_min" in opts and not 0 < opts["t_min"] < opts["t_max"] <= 1:
        raise ConfigError("field 'options.t_min/t_max': need 0 < t_min < t_max <= 1")
    if "min_size" in opts and opts["min_size"] > opts["max_size"]:
        raise ConfigError("field 'options.min_size': exceeds max_size")
    return cfg


# -- objects from the resolved configuration ---------------------------------

def _params(cfg):
    return tinv.ModelParams(**cfg["model"])


def _potential(cfg):
    pot = cfg["potential"]
    if not pot["cos"] and not pot["sin"]:
        return glfield.ExternalPotential.zero()
    return glfield.ExternalPotential.from_trig(pot["cos"], pot["sin"])


def _psi(cfg):
    modes = {int(k): complex(*v) for k, v in cfg["psi"]["modes"].items()}
    n = max([abs(k) for k in modes] + [1])
    return glfield.PeriodicField.from_modes(modes, n)


def _discretization(cfg, temperature, min_modes=1):
    d = cfg["discretization"]
    h, mu = cfg["model"]["h"], cfg["model"]["mu"]
    if d["n_modes"] is not None:
        disc = bdg.BlochDiscretization(int(d["n_modes"]), int(d["n_theta"]), h)
        disc.require_coverage(d["coverage_factor"] * tinv.q_scale(mu, temperature))
        return disc
    return bdg.BlochDiscretization.for_model(h, mu, temperature, int(d["n_theta"]),
                                             min_modes=min_modes,
                                             coverage_factor=d["coverage_factor"])


def _gl_minimizer(cfg, tc, w):
    m = cfg["model"]
    coeffs = glcoef.compute_coefficients(m["a"], m["mu"], m["D"], tc=tc)
    n = max(int(cfg["options"].get("n_field_modes", 32)), w.field.n_modes)
    psi, e_gl = glfield.gl_minimize(w, coeffs, tol=cfg["tolerances"]["gl"], n_modes=n)
    return coeffs, psi, e_gl


def _field_rows(f):
    return [(int(k), float(c.real), float(c.imag)) for k, c in zip(f.indices, f.coeffs)]


def _scaling_rows(report):
    return [tuple(float(x) for x in r[:4]) for r in report.rows]


def _scaling_results(report):
    return {"fitted_order": report.fitted_order, "r_squared": report.r_squared,
            "excluded_h": [float(r[0]) for r in report.excluded]}


# -- subcommands ----------------------------------------------------------------
# Each returns (columns, rows, results, summary, failures).

def cmd_tc(cfg):
    m = cfg["model"]
    tc = tinv.critical_temperature(m["a"], m["mu"])
    chi = tinv.pair_susceptibility(1.0 / tc, m["mu"])
    residual = abs(m["a"] * chi - 1.0)
    results = {"tc": tc, "beta_c": 1.0 / tc, "residual": residual}
    return (["a", "mu", "tc", "residual"], [(m["a"], m["mu"], tc, residual)], results,
            f"T_c = {tc:.15g} (relative residual {residual:.2e})", [])


def cmd_gap(cfg):
    m, o = cfg["model"], cfg["options"]
    tc = tinv.critical_temperature(m["a"], m["mu"])
    rows = []
    for frac in np.linspace(o["t_min"], o["t_max"], int(o["n_temps"])):
        sol = tinv.gap_delta0(m["a"], m["mu"], float(frac) * tc, tc=tc)
        rows.append((sol.temperature, float(frac), sol.delta0, sol.residual))
    results = {"tc": tc, "max_residual": max(r[3] for r in rows)}
    return (["temperature", "t_over_tc", "delta0", "residual"], rows, results,
            f"{len(rows)} temperatures, delta0 in [{rows[-1][2]:.6g}, {rows[0][2]:.6g}]", [])


def cmd_coeffs(cfg):
    m = cfg["model"]
    tc = tinv.critical_temperature(m["a"], m["mu"])
    co = glcoef.compute_coefficients(m["a"], m["mu"], m["D"], tc=tc)
    alt = glcoef.b1_alternative(m["a"], m["mu"], m["D"], tc=tc)
    diff = abs(co.b1 - alt) / abs(co.b1)
    results = {"tc": tc, "beta_c": co.beta_c, "c": co.c, "b1": co.b1, "b2": co.b2, "b3": co.b3,
               "b1_alternative": alt, "b1_rel_diff": diff}
    fails = []
    if diff > cfg["tolerances"]["b1_identity"]:
        fails.append(f"b1 cross-check {diff:.2e} > {cfg['tolerances']['b1_identity']:g}")
    row = (m["a"], m["mu"], m["D"], tc, co.c, co.b1, co.b2, co.b3, alt, diff)
    return (["a", "mu", "D", "tc", "c", "b1", "b2", "b3", "b1_alternative", "b1_rel_diff"],
            [row], results,
            f"b1={co.b1:.10g} b2={co.b2:.10g} b3={co.b3:.10g} c={co.c:.10g} "
            f"(b1 cross-check residual {diff:.2e})", fails)


def cmd_alpha0(cfg):
    params, o = _params(cfg), cfg["options"]
    tc = tinv.critical_temperature(params.a, params.mu)
    temperature = tinv.near_critical_temperature(params, tc)
    sol = tinv.gap_delta0(params.a, params.mu, temperature, tc=tc)
    x_max = o["x_max"] if o["x_max"] is not None else tinv.alpha0_decay_length(sol, params.mu)
    grid = np.linspace(0.0, x_max, int(o["n_points"]))
    prof = tinv.alpha0_profile(sol, params.mu, grid)
    bs = tinv.birman_schwinger_residual(sol, params.a, params.mu)
    expected = sol.delta0 / (2.0 * params.a)
    results = {"tc": tc, "temperature": temperature, "delta0": sol.delta0,
               "alpha0_at_0": float(prof.values[0]), "delta0_over_2a": expected,
               "birman_schwinger_residual": bs,
               "decay_rate": tinv.alpha0_decay_rate(sol, params.mu), "x_max": x_max}
    fails = []
    if bs > cfg["tolerances"]["birman_schwinger"]:
        fails.append(f"Birman-Schwinger residual {bs:.2e}")
    return (["x", "alpha0"], list(zip(grid.tolist(), prof.values.tolist())), results,
            f"alpha0(0)={prof.values[0]:.12g} vs delta0/2a={expected:.12g}, "
            f"BS residual {bs:.2e}", fails)


def cmd_gl(cfg):
    m = cfg["model"]
    tc = tinv.critical_temperature(m["a"], m["mu"])
    w = _potential(cfg)
    coeffs, psi, e_gl = _gl_minimizer(cfg, tc, w)
    grad = glfield.field_l2(glfield.gl_gradient(psi, w, coeffs))
    l2, h1, h2, l4 = glfield.norms(psi)
    # second start away from psi = 1; uniqueness of the minimizer is not known
    alt_init = glfield.PeriodicField.from_modes({0: 0.5, 1: 0.1j, -1: 0.1}, psi.n_modes)
    _, e_alt = glfield.gl_minimize(w, coeffs, init=alt_init, tol=cfg["tolerances"]["gl"],
                                   n_modes=psi.n_modes)
    disagreement = abs(e_alt - e_gl)
    results = {"e_gl": e_gl, "gradient_norm": grad, "b1": coeffs.b1, "b2": coeffs.b2,
               "b3": coeffs.b3, "psi_norms": {"L2": l2, "H1": h1, "H2": h2, "L4": l4},
               "e_gl_second_start": e_alt, "init_disagreement": disagreement,
               "inits_disagree": disagreement > cfg["tolerances"]["gl"]}
    note = " (second start disagrees)" if results["inits_disagree"] else ""
    return (["index", "real", "imag"], _field_rows(psi), results,
            f"E_GL = {e_gl:.15g} (gradient norm {grad:.2e}){note}", [])


def cmd_trial_energy(cfg):
    params = _params(cfg)
    tc = tinv.critical_temperature(params.a, params.mu)
    temperature = tinv.near_critical_temperature(params, tc)
    w = _potential(cfg)
    _, psi, e_gl = _gl_minimizer(cfg, tc, w)
    disc = _discretization(cfg, temperature, max(psi.truncation_order(1e-15 * np.abs(psi.coeffs).max()),
                                                 w.field.n_modes))
    tb = bdg.trial_upper_bound(psi, params, w, disc=disc, coupling=cfg["options"]["coupling"], tc=tc)
    bound = cfg["tolerances"]["identity"] * max(1.0, abs(tb.f_trial))
    results = {"tc": tc, "temperature": temperature, "delta0": tb.delta0, "e_gl": e_gl,
               "f_trial": tb.f_trial, "identity_residual": tb.identity_residual,
               "direct": tb.direct, "via_identity": tb.via_identity, "coupling": tb.coupling,
               "n_modes": disc.n_modes, "n_theta": disc.n_theta,
               "coverage": disc.max_momentum / tinv.q_scale(params.mu, temperature)}
    fails = [] if tb.identity_residual <= bound else [
        f"identity residual {tb.identity_residual:.2e} > {bound:.2e}"]
    row = (params.h, temperature, tb.delta0, tb.f_trial, tb.identity_residual,
           disc.n_modes, disc.n_theta)
    return (["h", "temperature", "delta0", "f_trial", "identity_residual", "n_modes", "n_theta"],
            [row], results,
            f"F_trial = {tb.f_trial:.12g} (identity residual {tb.identity_residual:.2e}, "
            f"N={disc.n_modes}, M={disc.n_theta})", fails)


def cmd_scf(cfg):
    params, o = _params(cfg), cfg["options"]
    tc = tinv.critical_temperature(params.a, params.mu)
    temperature = tinv.near_critical_temperature(params, tc)
    delta0 = tinv.gap_delta0(params.a, params.mu, temperature, tc=tc).delta0
    w = _potential(cfg)
    n_init = max(w.field.n_modes, 2) * 2
    if o["init"] == "gl":
        _, psi, _ = _gl_minimizer(cfg, tc, w)
        init = psi.resized(n_init).scaled(-delta0)
    elif o["init"] == "constant":
        init = glfield.PeriodicField.constant(-delta0, n_init)
    else:
        init = glfield.PeriodicField.zeros(n_init)
    disc = _discretization(cfg, temperature, n_init)
    res = bdg.self_consistent_gap(disc, params, w, init, damping=o["damping"],
                                  tol=cfg["tolerances"]["scf"], max_iter=int(o["max_iter"]),
                                  coupling=o["coupling"], tc=tc)
    results = {"tc": tc, "temperature": temperature, "delta0_translation_invariant": delta0,
               "free_energy": res.free_energy, "iterations": res.iterations,
               "final_residual": res.history[-1], "coupling": res.coupling,
               "n_modes": disc.n_modes, "n_theta": disc.n_theta}
    return (["index", "real", "imag"], _field_rows(res.delta), results,
            f"SCF converged in {res.iterations} iterations, F = {res.free_energy:.12g}", [])


def _verify_beta(cfg):
    m = cfg["model"]
    tc = tinv.critical_temperature(m["a"], m["mu"])
    return tc, 1.0 / tc


def _order_check(report, min_order, name):
    if report.fitted_order is None:
        return [f"{name}: remainders below noise floor, no order fitted"]
    if report.fitted_order < min_order:
        return [f"{name}: fitted order {report.fitted_order:.3f} < {min_order}"]
    return []


def cmd_semiclassics(cfg):
    o, d = cfg["options"], cfg["discretization"]
    tc, beta = _verify_beta(cfg)
    rep = asymp.verify_trace_expansion(_psi(cfg), _potential(cfg), beta, cfg["model"]["mu"],
                                       o["h_list"], n_theta=int(d["n_theta"]),
                                       coverage_factor=d["coverage_factor"])
    results = dict(_scaling_results(rep), tc=tc, e1=rep.extra["e1"], e2=rep.extra["e2"],
                   n_modes=rep.extra["n_modes"])
    fails = _order_check(rep, o["min_order"], "trace expansion")
    return (["h", "measured", "predicted", "remainder"], _scaling_rows(rep), results,
            f"trace expansion remainder order {rep.fitted_order} (r^2 {rep.r_squared})", fails)


def cmd_pair_kernel(cfg):
    o, d = cfg["options"], cfg["discretization"]
    tc, beta = _verify_beta(cfg)
    rep = asymp.leading_pair_kernel(_psi(cfg), _potential(cfg), beta, cfg["model"]["mu"],
                                    o["h_list"], n_theta=int(d["n_theta"]),
                                    coverage_factor=d["coverage_factor"])
    results = dict(_scaling_results(rep), tc=tc, n_modes=rep.extra["n_modes"])
    fails = _order_check(rep, o["min_order"], "pair kernel")
    return (["h", "measured", "predicted", "remainder"], _scaling_rows(rep), results,
            f"pair kernel H1 remainder order {rep.fitted_order} (r^2 {rep.r_squared})", fails)


def cmd_main_theorem(cfg):
    m, o, d = cfg["model"], cfg["options"], cfg["discretization"]
    rep = asymp.verify_main_theorem(m["a"], m["mu"], m["D"], _potential(cfg), o["h_list"],
                                    n_theta=int(d["n_theta"]), coupling=o["coupling"],
                                    coverage_factor=d["coverage_factor"],
                                    gl_tol=cfg["tolerances"]["gl"],
                                    n_field_modes=int(o["n_field_modes"]))
    ratios = [float(r) for r in rep.extra["ratio"]]
    gaps = [abs(1.0 - r) for r in ratios]
    results = dict(_scaling_results(rep), ratio=ratios,
                   identity_residual=[float(x) for x in rep.extra["identity_residual"]],
                   e_gl=rep.extra["e_gl"], b3=rep.extra["b3"], tc=rep.extra["tc"])
    fails = _order_check(rep, o["min_order"], "free energy")
    if any(b >= a for a, b in zip(gaps, gaps[1:])):
        fails.append(f"ratios do not approach 1 monotonically: {ratios}")
    if not rep.measured[-1] < 0:
        fails.append("F_trial is not negative at the smallest h")
    return (["h", "measured", "predicted", "remainder"], _scaling_rows(rep), results,
            f"F_trial / h^3(E_GL - b3) = {', '.join(f'{r:.6f}' for r in ratios)}; "
            f"remainder order {rep.fitted_order}", fails)


def cmd_klein(cfg):
    o = cfg["options"]
    out = asymp.verify_klein(int(o["samples"]), int(o["seed"]),
                             (int(o["min_size"]), int(o["max_size"])), grid=int(o["grid"]))
    floor = cfg["tolerances"]["klein_slack"]
    # the scalar inequality is tight to ~1e-34 at the grid corners, where
    # floating point leaves O(1e-16) cancellation error; hence the floor
    results = {"min_slack": out["min_matrix_slack"], "min_scalar_slack": out["min_scalar_slack"],
               "samples": out["samples"], "seed": out["seed"], "scalar_grid": out["scalar_grid"]}
    fails = []
    if out["min_matrix_slack"] < floor:
        fails.append(f"matrix slack {out['min_matrix_slack']:.3e} < {floor:g}")
    if out["min_scalar_slack"] < floor:
        fails.append(f"scalar slack {out['min_scalar_slack']:.3e} < {floor:g}")
    rows = [(i, int(n), float(s)) for i, (n, s) in enumerate(zip(out["sizes"], out["matrix_slack"]))]
    return (["sample", "size", "slack"], rows, results,
            f"Klein bound: min matrix slack {out['min_matrix_slack']:.3e}, "
            f"min scalar slack {out['min_scalar_slack']:.3e}", fails)


COMMANDS = {"tc": cmd_tc, "gap": cmd_gap, "coeffs": cmd_coeffs, "alpha0": cmd_alpha0,
            "gl": cmd_gl, "trial-energy": cmd_trial_energy, "scf": cmd_scf,
            "semiclassics": cmd_semiclassics, "pair-kernel": cmd_pair_kernel,
            "main-theorem": cmd_main_theorem, "klein": cmd_klein}

# flag name -> (config path, type, help)
MODEL_FLAGS = {
    "--a": ("model.a", float, "coupling a"),
    "--mu": ("model.mu", float, "chemical potential"),
    "--D": ("model.D", float, "temperature offset, T = T_c (1 - D h^2)"),
    "--h": ("model.h", float, "semiclassical parameter"),
    "--n-modes": ("discretization.n_modes", int, "plane-wave cutoff N (default: coverage rule)"),
    "--n-theta": ("discretization.n_theta", int, "quasimomentum points M"),
    "--coverage": ("discretization.coverage_factor", float, "coverage factor of the cutoff rule"),
    "--out-dir": ("output.dir", str, "report directory"),
    "--stem": ("output.stem", str, "report file stem"),
}

OPTION_FLAGS = {
    "gap": {"--t-min": float, "--t-max": float, "--n-temps": int},
    "alpha0": {"--x-max": float, "--n-points": int},
    "gl": {"--n-field-modes": int},
    "trial-energy": {"--coupling": str, "--n-field-modes": int},
    "scf": {"--damping": float, "--max-iter": int, "--init": str, "--coupling": str},
    "semiclassics": {"--h-list": float, "--min-order": float},
    "pair-kernel": {"--h-list": float, "--min-order": float},
    "main-theorem": {"--h-list": float, "--min-order": float, "--coupling": str},
    "klein": {"--samples": int, "--seed": int, "--min-size": int, "--max-size": int,
              "--grid": int},
}


def _add_common(p, name):
    p.add_argument("--config", help="JSON configuration file")
    for flag, (path, typ, hlp) in MODEL_FLAGS.items():
        p.add_argument(flag, dest=path.replace(".", "__"), type=typ, help=hlp)
    p.add_argument("--w-cos", dest="potential__cos", type=float, nargs="*",
                   help="cosine amplitudes of W for k = 1, 2, ...")
    p.add_argument("--w-sin", dest="potential__sin", type=float, nargs="*",
                   help="sine amplitudes of W for k = 1, 2, ...")
    for flag, typ in OPTION_FLAGS.get(name, {}).items():
        dest = "options__" + flag[2:].replace("-", "_")
        if flag == "--h-list":
            p.add_argument(flag, dest=dest, type=typ, nargs="+")
        else:
            p.add_argument(flag, dest=dest, type=typ)
    p.set_defaults(command=name)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="bcsgl", description="BCS theory near T_c: solvers and Ginzburg-Landau checks.",
        epilog=CSV_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="group", required=True)
    for name in ("tc", "gap", "coeffs", "alpha0", "gl", "trial-energy", "scf"):
        _add_common(sub.add_parser(name, epilog=CSV_HELP,
                                   formatter_class=argparse.RawDescriptionHelpFormatter), name)
    verify = sub.add_parser("verify", help="verification suites")
    suites = verify.add_subparsers(dest="suite", required=True)
    for name in ("semiclassics", "pair-kernel", "main-theorem", "klein"):
        _add_common(suites.add_parser(name, epilog=CSV_HELP,
                                      formatter_class=argparse.RawDescriptionHelpFormatter), name)
    return parser


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, glfield.PeriodicField):
        return _jsonable(_field_rows(obj))
    return obj


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_reports(cfg, command, columns, rows, results, status, failures):
    out_dir = cfg["output"]["dir"]
    os.makedirs(out_dir, exist_ok=True)
    stem = os.path.join(out_dir, cfg["output"]["stem"])
    with open(stem + ".csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for r in rows:
            writer.writerow([_fmt(v) for v in r])
    report = {"schema_version": SCHEMA_VERSION, "command": command, "config": cfg,
              "status": status, "failures": failures, "results": results,
              "columns": columns, "rows": rows}
    with open(stem + ".json", "w") as fh:
        json.dump(_jsonable(report), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return stem


def run(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    command = args.command
    overrides = {k.replace("__", "."): v for k, v in vars(args).items()
                 if "__" in k and v is not None}
    try:
        file_data = _load_file(args.config) if args.config else None
        cfg = resolve_config(command, file_data, overrides)
    except ConfigError as exc:
        print(f"bcsgl: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        columns, rows, results, summary, failures = COMMANDS[command](cfg)
    except SOLVER_ERRORS as exc:
        print(f"bcsgl {command}: solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        write_reports(cfg, command, [], [], {"error": f"{type(exc).__name__}: {exc}"},
                      "solver_error", [])
        return EXIT_SOLVER
    status = "failed" if failures else "ok"
    write_reports(cfg, command, columns, rows, results, status, failures)
    print(f"{command}: {summary}" + ("" if not failures else " FAILED: " + "; ".join(failures)))
    return EXIT_CRITERION if failures else EXIT_OK


def main():
    sys.exit(run())
