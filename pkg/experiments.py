"""
Experiment Runners

Each experiment reads an ExperimentConfig, runs the numerics and writes its
CSV/JSON artifacts into the output directory. run_experiment wraps any of
them with the error record and the manifest; run_sweep fans a list of
override sets out over worker processes.
"""

import logging
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import linregress

from artifacts import Table, graph_function_to_json, write_csv, write_error, write_json, write_manifest
from errors import EXIT_OK, ConfigError, HypothesisCheckError, exit_code_for
from evolution import TRAJECTORY_COLUMNS, evolve, free_propagate
from graph_core import BoundarySpec, GraphFunction, enforce_kirchhoff, graph_norm, kirchhoff_residual, l2_inner
from linearized import (assemble_H, assemble_J, assemble_J0, discrete_root_space, evolve_linearized,
                        free_flow, generalized_eigenfunctions, kirchhoff_admissible, project_continuous,
                        scattering_limit_check, theta3_apply)
from modulation import (MODULATION_COLUMNS, analytic_root_space, asymptotic_profile, forcing_series,
                        limit_trajectory, perturbation_norm, track_modulation)
from resolvent import (SPECTRAL_FILTER_LIMIT, SpectralPoint, born_series_apply, free_resolvent_apply,
                       hypothesis_C_check, jost_solve, kirchhoff_resolvent_direct,
                       kirchhoff_resolvent_scattering, resolvent_pole_order, resolvent_residual,
                       spectral_decomposition, spectral_filter, spectral_jump, vertex_determinant)
from run_config import EXPERIMENT_SECTIONS, ExperimentConfig, resolve_sections
from soliton import graph_profile, mass_slope, profile, profile_mass, profile_values, soliton_graph

logger = logging.getLogger(__name__)

RESOLVENT_COLUMNS = ("path", "lambda_re", "lambda_im", "k", "residual", "term_ratio", "W_abs", "runtime_ms")
JOST_COLUMNS = ("k", "s_re", "s_im", "r_re", "r_im", "h_re", "h_im", "unitarity", "symmetry", "W_abs")
DISPERSIVE_COLUMNS = ("t", "l2", "sup", "weighted_l2", "weighted_sup")
LIMIT_COLUMNS = ("t", "beta", "omega", "gamma", "beta_plus", "defect")
MIN_FIT_SAMPLES = 8

EXPERIMENTS = {}


def experiment(name):
    """Register fn(cfg, out_dir, rng) -> list of written paths under an experiment name."""
    def register(fn):
        EXPERIMENTS[name] = fn
        return fn
    return register


@dataclass
class DecayFit:
    window: tuple
    slope: float
    intercept: float
    r2: float
    stderr: float
    residual_max: float
    n: int


def fit_decay_exponent(times, values, window):
    """
    Least-squares slope of log(values) against log(times) inside a time window.

    Args:
        times: Sample times
        values: Positive samples
        window: (t_min, t_max), both ends included

    Returns:
        DecayFit; the decay exponent is -slope
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    lo, hi = window
    mask = (times >= lo) & (times <= hi)
    if mask.sum() < MIN_FIT_SAMPLES:
        raise ValueError(f"Decay fit needs at least {MIN_FIT_SAMPLES} samples in {window}, got {int(mask.sum())}")
    if np.any(values[mask] <= 0) or np.any(times[mask] <= 0):
        raise ValueError("Decay fit needs positive times and values")
    log_t = np.log(times[mask])
    log_v = np.log(values[mask])
    fit = linregress(log_t, log_v)
    residual = np.abs(log_v - (fit.intercept + fit.slope * log_t)).max()
    return DecayFit((float(lo), float(hi)), float(fit.slope), float(fit.intercept), float(fit.rvalue ** 2),
                    float(fit.stderr), float(residual), int(mask.sum()))


@dataclass
class RunResult:
    exit_code: int
    out_dir: Path
    artifacts: list = field(default_factory=list)
    error: str = None


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def perturbed_soliton(cfg, epsilon=None):
    """Soliton plus epsilon * exp(-((x - c)/w)^2) on every edge, with the vertex rows enforced."""
    s = cfg['soliton']
    grid = cfg.grid()
    epsilon = s['epsilon'] if epsilon is None else epsilon
    u = soliton_graph(cfg.soliton_params(), cfg.nonlinearity(), grid, method=s['method'])
    bump = epsilon * np.exp(-((grid.x - s['bump_center']) / s['bump_width']) ** 2)
    return enforce_kirchhoff(u.replace(u.data + bump[None, None, :]))


def random_bump_spinor(grid, rng, n_bumps=3, support=(2.5, 6.0), width=0.5):
    """Sum of Gaussian bumps with random centers and complex amplitudes, negligible at the vertex."""
    data = np.zeros((grid.n_edges, 2, grid.samples_per_edge), dtype=complex)
    x = grid.x
    for j in range(grid.n_edges):
        for c in range(2):
            for _ in range(n_bumps):
                center = rng.uniform(*support)
                amplitude = complex(rng.normal(), rng.normal())
                data[j, c] += amplitude * np.exp(-((x - center) / width) ** 2)
    return GraphFunction(grid, data)


def _relative(a, b):
    scale = np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / scale) if scale > 0 else float(np.linalg.norm(a))


def _check_hypothesis(cfg, passed, message):
    if passed:
        return
    if cfg['tolerances']['fatal_hypothesis']:
        raise HypothesisCheckError(message)
    logger.warning("%s", message)


@experiment('soliton')
def run_soliton(cfg, out_dir, rng):
    s = cfg['soliton']
    grid, nl = cfg.grid(), cfg.nonlinearity()
    alpha = s['alpha']
    prof = profile(nl, alpha, grid, s['method'])
    table = Table(("x", "phi", "phi_prime"))
    for row in zip(grid.x, prof.samples, prof.derivative):
        table.append([float(v) for v in row])

    u = soliton_graph(cfg.soliton_params(), nl, grid, method=s['method'])
    residual = kirchhoff_residual(u)
    summary = {
        "alpha": alpha,
        "omega": cfg.soliton_params().omega,
        "nonlinearity": nl.as_pairs(),
        "method": prof.method,
        "amplitude": prof.amplitude,
        "mass_per_edge": profile_mass(nl, alpha, grid, s['method']),
        "mass_slope": mass_slope(nl, alpha, grid, method=s['method']),
        "kirchhoff_continuity": residual.continuity,
        "kirchhoff_flux": residual.flux,
    }
    if nl.pure_power is not None:
        quadrature = profile_values(nl, alpha, grid.x, method="quadrature")
        closed = profile_values(nl, alpha, grid.x, method="closed")
        summary["closed_form_defect"] = float(np.abs(quadrature - closed).max())
    return [write_csv(out_dir / "profile.csv", table), write_json(out_dir / "soliton.json", summary)]


@experiment('evolve')
def run_evolve(cfg, out_dir, rng):
    grid, nl = cfg.grid(), cfg.nonlinearity()
    alpha = cfg['soliton']['alpha']
    ecfg = cfg.evolution_config()
    record = evolve(perturbed_soliton(cfg), ecfg)

    table = Table(TRAJECTORY_COLUMNS, record.rows())
    mass = record.series("mass")
    times = np.array(record.times)
    virial = record.series("virial")
    phi = graph_profile(nl, alpha, grid, cfg['soliton']['method'])
    deviation = float(np.abs(np.abs(record.final.data[:, 0]) - phi[None, :]).max())
    summary = {
        "T": ecfg.T,
        "steps": ecfg.n_steps,
        "mass_drift": float(np.abs(mass - mass[0]).max() / mass[0]) if mass[0] > 0 else 0.0,
        "max_kirchhoff_continuity": float(record.series("kirchhoff_continuity").max()),
        "max_kirchhoff_flux": float(record.series("kirchhoff_flux").max()),
        "profile_deviation": deviation,
    }
    if times.size >= 3:
        quadratic = np.polyfit(times, virial ** 2, 2)
        summary["virial_quadratic_coefficient"] = float(quadratic[0])
    written = [write_csv(out_dir / "trajectory.csv", table), write_json(out_dir / "evolve.json", summary)]
    if ecfg.snapshot_stride:
        written.append(write_json(out_dir / "snapshots.json", {
            "snapshots": [{"t": t, "u": graph_function_to_json(u)} for t, u in record.snapshots],
        }))
    return written


def _chain_residuals(H, E):
    """Interior residuals of H E1 = 0 and H E2 = i E1."""
    mask = H.operator.interior_mask()
    first = H.apply(E.E1).flat()[mask]
    second = (H.apply(E.E2) - E.E1 * 1j).flat()[mask]
    scale = max(np.linalg.norm(E.E1.flat()[mask]), 1e-300)
    return {"H_E1": float(np.linalg.norm(first) / scale), "H_E2_minus_iE1": float(np.linalg.norm(second) / scale)}


def _filter_partition(H, sample, cluster_radius):
    """||high + low + root - f|| / ||f|| on the one-edge reduction of H."""
    reduced = H.on_grid(H.grid.with_edges(1))
    if reduced.operator.size > SPECTRAL_FILTER_LIMIT:
        return None
    f = GraphFunction(reduced.grid, sample.data[:1])
    decomposition = spectral_decomposition(reduced)
    lambda0 = 2.0 * reduced.w
    parts = [spectral_filter(reduced, window, f, lambda0, cluster_radius, decomposition)
             for window in ("high", "low", "root")]
    total = parts[0] + parts[1] + parts[2]
    return _relative(total.flat(), f.flat())


@experiment('spectrum')
def run_spectrum(cfg, out_dir, rng):
    lin = cfg['linearized']
    grid, nl = cfg.grid(), cfg.nonlinearity()
    alpha, method = cfg['soliton']['alpha'], cfg['soliton']['method']
    H = assemble_H(alpha, nl, grid, method=method)
    rs = discrete_root_space(H, sector=lin['sector'], n_shifts=lin['n_shifts'],
                             cluster_radius=lin['cluster_radius'], rng=rng)
    E = generalized_eigenfunctions(alpha, nl, grid, method)
    admissibility = {}
    for name, vector in zip(("E1", "E2", "E3", "E4"), E):
        report = kirchhoff_admissible(vector)
        admissibility[name] = {"admissible": report.admissible, "continuity": report.continuity,
                               "flux": report.flux, "tolerance": report.tolerance}

    sample = random_bump_spinor(grid, rng)
    sample = sample.replace(np.stack([sample.data[:, 0], np.conj(sample.data[:, 0])], axis=1))
    payload = {
        "alpha": alpha,
        "N": grid.n_edges,
        "M": grid.samples_per_edge,
        "L": grid.edge_length,
        "w": H.w,
        "sector": lin['sector'],
        "gap_eigenvalues": [[value.real, value.imag, residual] for value, residual in rs.gap_eigenvalues],
        "root_space_dim": rs.root_space_dim,
        "full_root_space_dim": rs.full_root_space_dim,
        "gap_margin": rs.gap_margin,
        "pairing_gram": rs.pairing_gram,
        "hypothesis_a_consistent": rs.hypothesis_a_consistent,
        "admissibility": admissibility,
        "chain_residuals": _chain_residuals(H, E),
        "pole_orders": {"E1": resolvent_pole_order(H, E.E1), "E2": resolvent_pole_order(H, E.E2)},
        "filter_partition_defect": _filter_partition(H, sample, lin['cluster_radius']),
        "eigen_failures": rs.failures,
    }
    written = [write_json(out_dir / "spectrum.json", payload)]
    _check_hypothesis(cfg, rs.hypothesis_a_consistent,
                      f"Root space at zero has dimension {rs.root_space_dim}, expected 2")
    return written


def _timed(fn, *args, **kwargs):
    start = time.perf_counter()
    value = fn(*args, **kwargs)
    return value, (time.perf_counter() - start) * 1000.0


def _random_gap_points(rng, count):
    return [complex(rng.uniform(-5.0, 5.0), rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 2.0)) for _ in range(count)]


@experiment('resolvent-check')
def run_resolvent_check(cfg, out_dir, rng):
    r, tol = cfg['resolvent'], cfg['tolerances']
    grid, nl = cfg.grid(), cfg.nonlinearity()
    alpha, method = cfg['soliton']['alpha'], cfg['soliton']['method']
    H = assemble_H(alpha, nl, grid, method=method)
    table = Table(RESOLVENT_COLUMNS)
    worst = {}

    def record(path, pt, residual, runtime, term_ratio=None, W_abs=None, k=None):
        table.append([path, pt.lam.real, pt.lam.imag, k, residual, term_ratio, W_abs, runtime])
        worst[path] = max(worst.get(path, 0.0), residual)

    points = [SpectralPoint(lam, H.w) for lam in _random_gap_points(rng, r['n_random'])]
    solutions = []
    for pt in points:
        f = random_bump_spinor(grid, rng)
        u, runtime = _timed(kirchhoff_resolvent_direct, pt, f, H, far="dirichlet")
        record("direct", pt, resolvent_residual(pt, u, f, H), runtime)
        solutions.append((pt, f, u))

    for (p1, f, u1), (p2, _, _) in zip(solutions, solutions[1:]):
        start = time.perf_counter()
        u2 = kirchhoff_resolvent_direct(p2, f, H, far="dirichlet")
        u12 = kirchhoff_resolvent_direct(p1, u2, H, far="dirichlet")
        defect = (u1 - u2) - u12 * (p2.lam - p1.lam)
        runtime = (time.perf_counter() - start) * 1000.0
        record("identity", p1, _relative(defect.flat(), u1.flat()), runtime)

    J = assemble_J(alpha, grid)
    gap = SpectralPoint(0.5 * H.w, H.w)
    f = random_bump_spinor(grid, rng)
    closed, runtime = _timed(free_resolvent_apply, gap, f, J.alphas)
    direct = kirchhoff_resolvent_direct(gap, f, J, far="dirichlet")
    record("free", gap, _relative(closed.flat(), direct.flat()), runtime)

    pt = SpectralPoint.from_k(r['k_born'], H.w, "+i0")
    born, runtime = _timed(born_series_apply, pt, f, H, n_max=r['n_max'], free=r['born_free'], eta=r['eta'])
    direct = kirchhoff_resolvent_direct(pt, f, H, eta=r['eta'])
    record("born", pt, _relative(born.approx.flat(), direct.flat()), runtime,
           term_ratio=born.term_ratio, k=r['k_born'])

    inside = grid.x <= r['x_max']
    for k in r['k_values']:
        pt = SpectralPoint.from_k(k, H.w, "+i0")
        jost = jost_solve(k, alpha, nl, grid, coupling=r['coupling'])
        (u, solve), runtime = _timed(kirchhoff_resolvent_scattering, k, f, "+i0", jost, r['x_max'])
        direct = kirchhoff_resolvent_direct(pt, f, H, eta=r['eta'])
        record("scattering", pt, _relative(u.data[..., inside], direct.data[..., inside]), runtime,
               W_abs=abs(solve.W), k=k)

    thresholds = {"direct": tol['resolvent_residual'], "identity": tol['resolvent_identity'],
                  "free": tol['free_defect'], "born": tol['born_defect'], "scattering": tol['scattering_defect']}
    passed = {path: worst[path] <= thresholds[path] for path in worst}
    for path, ok in passed.items():
        if not ok:
            logger.warning("Resolvent path %s: residual %.3e above %.1e", path, worst[path], thresholds[path])
    summary = {"worst": worst, "thresholds": thresholds, "passed": passed, "born_diverged": born.diverged}
    return [write_csv(out_dir / "resolvent.csv", table), write_json(out_dir / "resolvent.json", summary)]


@experiment('jost')
def run_jost(cfg, out_dir, rng):
    r, tol = cfg['resolvent'], cfg['tolerances']
    grid, nl = cfg.grid(), cfg.nonlinearity()
    alpha = cfg['soliton']['alpha']
    table = Table(JOST_COLUMNS)
    unitarity = []
    for k in r['k_jost']:
        jost = jost_solve(k, alpha, nl, grid, coupling=r['coupling'])
        s, rr = complex(jost.s), complex(jost.r)
        defect = abs(abs(s) ** 2 + abs(rr) ** 2 - 1.0)
        symmetry = abs(rr * np.conj(s) + s * np.conj(rr))
        W = vertex_determinant(jost, grid.n_edges)
        table.append([k, s.real, s.imag, rr.real, rr.imag, complex(jost.h).real, complex(jost.h).imag,
                      defect, symmetry, abs(W)])
        unitarity.append(defect)

    points = r['jump_points']
    jumps = []
    for k in r['k_jump']:
        jump = spectral_jump(points, points, k, alpha, nl, grid, eta=r['eta'])
        scale = max(float(np.abs(jump.right).max()), 1e-300)
        jumps.append({"k": k, "difference": jump.difference, "relative": jump.difference / scale})

    report = hypothesis_C_check(alpha, nl, grid, k_probe=r['k_probe'], threshold=tol['hypothesis_c'],
                                coupling=r['coupling'])
    summary = {
        "alpha": alpha,
        "coupling": r['coupling'],
        "unitarity_max": max(unitarity) if unitarity else 0.0,
        "unitarity_passed": all(u <= tol['unitarity'] for u in unitarity),
        "jump": jumps,
        "jump_passed": all(j["relative"] <= tol['jump'] for j in jumps),
        "hypothesis_c": {
            "k_probe": report.k_probe,
            "conj_value_det": report.conj_value_det,
            "conj_derivative_det": report.conj_derivative_det,
            "basis_value_det": report.basis_value_det,
            "basis_derivative_det": report.basis_derivative_det,
            "extrapolated": report.extrapolated,
            "min_vertex_det": report.min_vertex_det,
            "threshold": report.threshold,
            "passed": report.passed,
            "literal_passed": report.literal_passed,
        },
    }
    written = [write_csv(out_dir / "jost.csv", table), write_json(out_dir / "jost.json", summary)]
    _check_hypothesis(cfg, report.passed, f"Threshold determinants fall below {report.threshold}")
    return written


def _absorbing(cfg):
    e = cfg['evolution']
    return BoundarySpec(kind="absorbing", width=e['absorbing_width'], strength=e['absorbing_strength'])


def _safe_fit(times, values, window):
    try:
        return vars(fit_decay_exponent(times, values, window))
    except ValueError as exc:
        logger.warning("Decay fit skipped: %s", exc)
        return None


def root_pairings(f, root_space):
    """|(f, theta3 xi)| / ||xi||_2 for every root vector xi; zero for P_c f."""
    return [float(abs(l2_inner(f, theta3_apply(xi))) / graph_norm(xi)) for xi in root_space.basis]


@experiment('dispersive')
def run_dispersive(cfg, out_dir, rng):
    lin = cfg['linearized']
    grid, nl = cfg.grid(), cfg.nonlinearity()
    alpha, method = cfg['soliton']['alpha'], cfg['soliton']['method']
    boundary = _absorbing(cfg)
    window = tuple(lin['fit_window'])

    bump = GraphFunction(grid, np.tile(np.exp(-((grid.x - 3.0) / 1.0) ** 2) + 0j, (grid.n_edges, 1, 1)))
    free_times = np.linspace(0.0, lin['free_T'], lin['free_samples'] + 1)
    free_table = Table(("t", "sup"))
    u, free_sup = bump, []
    for previous, t in zip(np.concatenate([[0.0], free_times[:-1]]), free_times):
        u = free_propagate(u, t - previous, dt=lin['dt'], boundary=boundary)
        free_sup.append(float(np.abs(u.data).max()))
        free_table.append([float(t), free_sup[-1]])

    H = assemble_H(alpha, nl, grid, boundary=boundary, method=method)
    root_space = analytic_root_space(alpha, nl, grid, method, sector="full")
    f = project_continuous(random_bump_spinor(grid, rng), root_space)
    trajectory = evolve_linearized(f, H, lin['T'], lin['dt'], record_stride=lin['record_stride'])
    times = np.array(trajectory.times)
    norms = {
        "l2": trajectory.norms(),
        "sup": trajectory.norms(p=np.inf),
        "weighted_l2": trajectory.norms(kind="weighted", m=2),
        "weighted_sup": trajectory.norms(kind="weighted", p=np.inf, m=2),
    }
    table = Table(DISPERSIVE_COLUMNS)
    for i, t in enumerate(times):
        table.append([float(t)] + [float(norms[name][i]) for name in norms])

    summary = {
        "fit_window": list(window),
        "free_sup_fit": _safe_fit(free_times, free_sup, window),
        "fits": {name: _safe_fit(times, values, window) for name, values in norms.items()},
        "l2_growth": float(norms["l2"].max() / norms["l2"][0]),
        "projection": {"sector": root_space.sector, "basis_size": len(root_space.basis),
                       "max_root_pairing": max(root_pairings(f, root_space))},
        "boundary": {"kind": boundary.kind, "width": boundary.width, "strength": boundary.strength},
    }
    return [write_csv(out_dir / "free.csv", free_table), write_csv(out_dir / "dispersive.csv", table),
            write_json(out_dir / "dispersive.json", summary)]


def _rate_bound(series):
    """Slope of log(|gamma'| + |omega'|) against log(M1 + M2) along the run."""
    rates = np.abs(series.gamma_dot) + np.abs(series.omega_dot)
    scale = np.array([d.M1 + d.M2 for d in series.diagnostics])
    keep = (rates > 0) & (scale > 0)
    if keep.sum() < 3 or np.ptp(np.log(scale[keep])) == 0:
        return None
    return float(linregress(np.log(scale[keep]), np.log(rates[keep])).slope)


@experiment('modulate')
def run_modulate(cfg, out_dir, rng):
    alpha = cfg['soliton']['alpha']
    method = cfg['soliton']['method']
    ecfg = cfg.evolution_config()
    reference = soliton_graph(cfg.soliton_params(), cfg.nonlinearity(), cfg.grid(), method=method)
    written, runs = [], []
    for index, epsilon in enumerate(cfg['modulation']['epsilons']):
        u0 = perturbed_soliton(cfg, epsilon)
        series = track_modulation(u0, ecfg, alpha, guess=cfg.soliton_params(), method=method)
        written.append(write_csv(out_dir / f"modulation_{index}.csv", Table(MODULATION_COLUMNS, series.rows())))
        diags = series.diagnostics
        runs.append({
            "epsilon": epsilon,
            "perturbation_norm": perturbation_norm(u0 - reference),
            "max_M1": max((d.M1 for d in diags), default=0.0),
            "max_M2": max((d.M2 for d in diags), default=0.0),
            "max_rate": float(np.max(np.abs(series.gamma_dot) + np.abs(series.omega_dot))) if diags else 0.0,
            "max_ortho_residual": max((s.ortho_residual for s in series.states), default=0.0),
            "rate_bound_slope": _rate_bound(series),
            "aborted": series.aborted,
        })

    scaling = {}
    for a, b in zip(runs, runs[1:]):
        ratio = np.log(a["epsilon"] / b["epsilon"])
        for key in ("max_M1", "max_M2", "max_rate"):
            if a[key] > 0 and b[key] > 0:
                scaling.setdefault(key, []).append(float(np.log(a[key] / b[key]) / ratio))
    written.append(write_json(out_dir / "modulation.json", {"runs": runs, "scaling": scaling}))
    return written


@experiment('limit')
def run_limit(cfg, out_dir, rng):
    mod, lin = cfg['modulation'], cfg['linearized']
    grid, nl = cfg.grid(), cfg.nonlinearity()
    alpha, method = cfg['soliton']['alpha'], cfg['soliton']['method']
    ecfg = cfg.evolution_config()
    epsilon = mod['epsilons'][0]
    u0 = perturbed_soliton(cfg, epsilon)
    series = track_modulation(u0, ecfg, alpha, guess=cfg.soliton_params(), method=method)
    if series.aborted:
        raise ConfigError(f"Modulation tracking stopped ({series.aborted}); reduce epsilon or T")

    times = series.times
    lt = limit_trajectory(times, series.series("omega"), series.series("gamma"), series.series("beta"),
                          fit_fraction=mod['fit_fraction'])
    alpha_plus = 2.0 * np.sqrt(-lt.omega_plus) if lt.has_limit and lt.omega_plus < 0 else series.states[-1].alpha
    H = assemble_H(alpha_plus, nl, grid, method=method)
    last = series.states[-1]
    ap = asymptotic_profile(series.states[0].h, forcing_series(series, nl), H, dt=mod['limit_dt'],
                            check=[(last.t, last.h)])
    scattering = scattering_limit_check(ap.h_inf, H, T_max=ecfg.T, dt=mod['limit_dt'])

    T = float(times[-1])
    beta_T = float(lt.beta_plus(T))
    radiation = free_flow(scattering.f_plus, assemble_J0(grid), H.w, T, mod['limit_dt'])
    phi_plus = profile_values(nl, alpha_plus, grid.x, method)
    approx = np.exp(-1j * beta_T) * (phi_plus[None, :] + radiation.data[:, 0])
    u_T = last.chi.data[:, 0] + np.exp(-1j * last.beta) * profile_values(nl, last.alpha, grid.x, method)[None, :]
    chi0_norm = perturbation_norm(u0 - soliton_graph(cfg.soliton_params(), nl, grid, method=method))
    rehearsal = graph_norm(GraphFunction(grid, (u_T - approx)[:, None, :]))

    table = Table(LIMIT_COLUMNS)
    for t, state, defect in zip(times, series.states, lt.defects):
        table.append([float(t), state.beta, state.omega, state.gamma, float(lt.beta_plus(t)), float(defect)])
    summary = {
        "epsilon": epsilon,
        "perturbation_norm": chi0_norm,
        "has_limit": lt.has_limit,
        "sigma_plus": {"omega": lt.omega_plus, "gamma": lt.gamma_plus, "alpha": alpha_plus},
        "fits": {"omega": vars(lt.omega_fit), "gamma": vars(lt.gamma_fit), "tail_integral": lt.tail_integral},
        "max_tail_defect": float(np.max(lt.defects[len(lt.defects) // 2:])),
        "asymptotic": {"tail_exponent": ap.tail_exponent, "tail_bound": ap.tail_bound,
                       "tail_weight": ap.tail_weight, "truncated_at": ap.truncated_at,
                       "integrable": ap.integrable, "defects": ap.defects},
        "scattering": {"checkpoints": scattering.checkpoints, "increments": scattering.increments,
                       "defects": scattering.defects, "final_defect": scattering.final_defect,
                       "decay_observed": scattering.decay_observed, "tags": scattering.tags},
        "rehearsal": {"T": T, "defect": rehearsal, "threshold": 0.1 * chi0_norm,
                      "passed": rehearsal <= 0.1 * chi0_norm},
    }
    return [write_csv(out_dir / "limit.csv", table), write_json(out_dir / "limit.json", summary)]


def _sweep_entry(args):
    index, overrides, cfg = args
    return index, overrides, run_experiment(cfg)


@experiment('sweep')
def run_sweep(cfg, out_dir, rng):
    """Run one experiment per override set; each run gets its own sub-directory and manifest."""
    sweep = cfg['sweep']
    target = sweep['experiment']
    if target == 'sweep' or target not in EXPERIMENT_SECTIONS:
        raise ConfigError(f"Sweep target must be a single experiment, got '{target}'")
    base = {name: values for name, values in cfg.sections.items() if name in EXPERIMENT_SECTIONS[target]}
    jobs = []
    for index, overrides in enumerate(sweep['overrides'] or [[]]):
        if isinstance(overrides, str):
            overrides = [overrides]
        sections = resolve_sections(target, base, overrides)
        jobs.append((index, overrides, ExperimentConfig(target, sections, cfg.seed, out_dir / f"run_{index:03d}")))

    with ProcessPoolExecutor(max_workers=max(1, sweep['workers'])) as pool:
        results = sorted(pool.map(_sweep_entry, jobs), key=lambda item: item[0])
    entries = [{"index": index, "overrides": overrides, "out_dir": result.out_dir.name,
                "exit_code": result.exit_code, "error": result.error} for index, overrides, result in results]
    failed = sum(1 for entry in entries if entry["exit_code"] != EXIT_OK)
    if failed:
        logger.warning("%d of %d sweep runs failed", failed, len(entries))
    return [write_json(out_dir / "sweep_index.json", {"experiment": target, "entries": entries})]


def run_experiment(cfg):
    """
    Run cfg.experiment, writing its artifacts, error.json on failure and manifest.json always.

    Returns:
        RunResult with the exit code (0 ok, 2 config, 3 numeric, 4 hypothesis)
    """
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError(f"Unknown experiment '{cfg.experiment}', expected one of {sorted(EXPERIMENTS)}")
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    logger.info("Running %s into %s (seed=%d)", cfg.experiment, out_dir, cfg.seed)
    start = time.perf_counter()
    artifacts, error, exit_code = [], None, EXIT_OK
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            artifacts = EXPERIMENTS[cfg.experiment](cfg, out_dir, make_rng(cfg.seed))
        except Exception as exc:  # noqa: BLE001 - every failure becomes an error record
            exit_code = exit_code_for(exc)
            error = f"{type(exc).__name__}: {exc}"
            logger.error("%s failed: %s", cfg.experiment, error)
            artifacts = [write_error(out_dir, exc, exit_code)]
    seen = []
    for item in caught:
        message = str(item.message)
        if message not in seen:
            seen.append(message)
            logger.warning("%s", message)
    write_manifest(out_dir, cfg.experiment, cfg.as_dict(), artifacts, time.perf_counter() - start, seen)
    logger.info("%s finished with exit code %d", cfg.experiment, exit_code)
    return RunResult(exit_code, out_dir, [Path(a) for a in artifacts], error)
