"""
Modulation Module

Writes a solution near a standing wave as u = exp(-i beta) phi(alpha) + chi
with chi constrained by the two orthogonality conditions against the phase
and scaling modes, splits the gauge-transformed remainder into discrete and
continuous parts, evaluates the forcing terms of the remainder equation and
the smallness diagnostics, and extracts the limit trajectory and the
asymptotic profile of the remainder.

Sign conventions follow soliton_graph: the standing wave with parameters
(beta0, alpha) is exp(-i(beta0 + omega t)) phi with omega = -alpha^2/4, so
the recovered phase satisfies beta(t) = int_0^t omega + gamma(t) with
gamma constant along an exact standing wave.
"""

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.optimize import curve_fit

from errors import ConvergenceError, GramError
from evolution import evolve
from graph_core import GraphFunction, graph_norm, l2_inner, to_spinor
from linearized import (
    RootSpace,
    flow,
    generalized_eigenfunctions,
    pairing_gram,
    project_continuous,
    root_space_basis,
    theta3_apply,
)
from soliton import (
    SolitonParams,
    eval_F,
    eval_F_prime,
    graph_profile,
    graph_profile_alpha_derivative,
)

logger = logging.getLogger(__name__)

MODULATION_COLUMNS = (
    "t", "beta", "omega", "alpha", "gamma", "k1_re", "k1_im", "k2_re", "k2_im",
    "M0", "M1", "M2", "M3", "supM1", "supM2", "supM3", "ortho_residual",
)

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 25


class _ProfileCache:
    """Vertex-consistent phi and phi_alpha per alpha, tiled over the edges."""

    def __init__(self, nl, grid, method="auto"):
        self.nl = nl
        self.grid = grid
        self.method = method
        self._store = {}

    def __call__(self, alpha):
        key = float(alpha)
        if key not in self._store:
            phi = graph_profile(self.nl, key, self.grid, self.method)
            phi_alpha = graph_profile_alpha_derivative(self.nl, key, self.grid, method=self.method)
            self._store[key] = (np.tile(phi, (self.grid.n_edges, 1)), np.tile(phi_alpha, (self.grid.n_edges, 1)))
            if len(self._store) > 64:
                self._store.pop(next(iter(self._store)))
        return self._store[key]


def _edge_integral(values, grid):
    return complex(trapezoid(values, dx=grid.spacing, axis=-1).sum())


def _orthogonality(data, beta, alpha, profiles):
    """Sum_j Im(u - e^{-i beta} phi, e^{-i beta} i phi) and Sum_j Im(u - e^{-i beta} phi, e^{-i beta} phi_alpha)."""
    phi, phi_alpha = profiles(alpha)
    rotation = np.exp(-1j * beta)
    chi = data - rotation * phi
    grid = profiles.grid
    first = _edge_integral(chi * np.conj(rotation * 1j * phi), grid).imag
    second = _edge_integral(chi * np.conj(rotation * phi_alpha), grid).imag
    return np.array([first, second])


def _jacobian(data, beta, alpha, profiles, step=1e-6):
    columns = []
    for delta in (np.array([step, 0.0]), np.array([0.0, step * max(1.0, alpha)])):
        upper = _orthogonality(data, beta + delta[0], alpha + delta[1], profiles)
        lower = _orthogonality(data, beta - delta[0], alpha - delta[1], profiles)
        columns.append((upper - lower) / (2.0 * np.linalg.norm(delta)))
    return np.stack(columns, axis=1)


def decompose_jacobian(u, params, nl, method="auto"):
    """Finite-difference Jacobian of the orthogonality conditions with respect to (beta, alpha)."""
    profiles = _ProfileCache(nl, u.grid, method)
    return _jacobian(u.data[:, 0, :], params.beta, params.alpha, profiles)


def scaling_pairing(alpha, nl, grid, method="auto"):
    """Sum_j int phi phi_alpha, half the alpha-derivative of the graph mass."""
    phi, phi_alpha = _ProfileCache(nl, grid, method)(alpha)
    return _edge_integral(phi * phi_alpha, grid).real


@dataclass
class ModulationState:
    """Standing-wave parameters, discrete amplitudes and continuous remainder at one time."""

    t: float
    sigma: SolitonParams
    chi: GraphFunction
    ortho_residual: float
    iterations: int = 0
    gamma: float = 0.0
    k1: complex = 0j
    k2: complex = 0j
    h: GraphFunction = None

    @property
    def beta(self):
        return self.sigma.beta

    @property
    def alpha(self):
        return self.sigma.alpha

    @property
    def omega(self):
        return self.sigma.omega

    def gauge_remainder(self):
        """g = exp(i beta) chi."""
        return self.chi * np.exp(1j * self.beta)


def decompose(u, guess, nl, t=0.0, tol=NEWTON_TOL, max_iter=NEWTON_MAX_ITER, method="auto", profiles=None):
    """
    Newton solve for (beta, alpha) with u - exp(-i beta) phi(alpha) orthogonal to the modes.

    Args:
        u: Scalar GraphFunction close to a standing wave
        guess: SolitonParams starting point (b = v = 0)
        nl: Nonlinearity
        t: Time stamp stored in the state
        tol: Bound on the largest orthogonality residual
        max_iter: Newton iteration cap
        method: Profile method
        profiles: Optional profile cache shared across calls

    Returns:
        ModulationState with chi = u - w(sigma)
    """
    if u.components != 1:
        raise ValueError(f"decompose expects a scalar GraphFunction, got {u.components} components")
    if not guess.kirchhoff_admissible:
        raise ValueError(f"decompose needs b = v = 0, got b={guess.b}, v={guess.v}")
    profiles = profiles or _ProfileCache(nl, u.grid, method)
    data = u.data[:, 0, :]
    beta, alpha = float(guess.beta), float(guess.alpha)
    residual = _orthogonality(data, beta, alpha, profiles)
    iterations = 0
    while np.abs(residual).max() >= tol:
        if iterations >= max_iter:
            raise ConvergenceError(
                f"decompose did not converge in {max_iter} iterations (residual {np.abs(residual).max():.3e})"
            )
        jacobian = _jacobian(data, beta, alpha, profiles)
        if abs(np.linalg.det(jacobian)) < 1e-12:
            raise ConvergenceError(f"Singular decomposition Jacobian at alpha={alpha}; d/dalpha ||phi||^2 ~ 0")
        step = np.linalg.solve(jacobian, -residual)
        beta += step[0]
        alpha += step[1]
        if not alpha > 0:
            raise ConvergenceError(f"Newton step left the admissible range (alpha={alpha})")
        residual = _orthogonality(data, beta, alpha, profiles)
        iterations += 1
    logger.debug("decompose t=%g: %d Newton iterations, residual %.2e", t, iterations, np.abs(residual).max())
    phi, _ = profiles(alpha)
    chi = u.replace(u.data - np.exp(-1j * beta) * phi[:, None, :])
    return ModulationState(float(t), SolitonParams(beta=beta, alpha=alpha), chi,
                           float(np.abs(residual).max()), iterations)


def split_basis(alpha, nl, grid, method="auto"):
    """xi1 = (-i phi, i phi) and xi2 = (phi_alpha, phi_alpha) on every edge."""
    phi, phi_alpha = _ProfileCache(nl, grid, method)(alpha)
    xi1 = GraphFunction(grid, np.stack([-1j * phi, 1j * phi], axis=1))
    xi2 = GraphFunction(grid, np.stack([phi_alpha, phi_alpha], axis=1).astype(complex))
    return xi1, xi2


def split_discrete_continuous(g, alpha1, nl, method="auto", basis=None):
    """
    g = k1 xi1 + k2 xi2 + h with (h, theta3 xi_i) = 0.

    Args:
        g: Spinor GraphFunction
        alpha1: Parameter of the basis profiles
        nl: Nonlinearity
        method: Profile method
        basis: Optional precomputed (xi1, xi2)

    Returns:
        (k1, k2, h)
    """
    if not g.is_spinor:
        raise ValueError("split_discrete_continuous expects a spinor GraphFunction")
    xi = basis or split_basis(alpha1, nl, g.grid, method)
    twisted = [theta3_apply(v) for v in xi]
    gram = np.array([[l2_inner(xa, tb) for xa in xi] for tb in twisted])
    if np.linalg.cond(gram) > 1e12:
        raise GramError(f"Discrete-part Gram matrix is singular at alpha={alpha1}")
    rhs = np.array([l2_inner(g, tb) for tb in twisted])
    k1, k2 = np.linalg.solve(gram, rhs)
    h = g - xi[0] * k1 - xi[1] * k2
    return complex(k1), complex(k2), h


def nonlinear_remainder(nl, phi, chi):
    """N(phi, chi) = F(|phi+chi|^2)(phi+chi) - F(phi^2)phi - [(F + F' phi^2) chi + F' phi^2 conj(chi)]."""
    xi = phi * phi
    total = phi + chi
    slope = eval_F_prime(nl, xi) * xi
    linear = (eval_F(nl, xi) + slope) * chi + slope * np.conj(chi)
    return eval_F(nl, np.abs(total) ** 2) * total - eval_F(nl, xi) * phi - linear


@dataclass(frozen=True)
class ForcingTerms:
    """First components D0..D4 of the remainder forcing, each (N, M)."""

    D0: np.ndarray
    D1: np.ndarray
    D2: np.ndarray
    D3: np.ndarray
    D4: np.ndarray

    def total(self):
        return self.D0 + self.D1 + self.D2 + self.D3 + self.D4

    def spinor(self, grid):
        """(D, -conj D) as a spinor GraphFunction."""
        D = self.total()
        return GraphFunction(grid, np.stack([D, -np.conj(D)], axis=1))


def forcing_terms_D(g, sigma, sigma1, nl, gamma_dot=0.0, omega_dot=0.0, method="auto"):
    """
    Forcing of i g_t = H(alpha1) g + D for the gauge-transformed remainder.

    With Omega = beta - beta1 and alpha_dot = -2 omega_dot / alpha:
      D0 = -e^{-i Omega} [gamma' phi + i alpha' phi_alpha]
      D1 = F'(phi^2) phi^2 (e^{-2i Omega} - 1) conj(g)
      D2 = [(F + F' phi^2)(alpha) - (F + F' phi^2)(alpha1)] g
      D3 = [F' phi^2 (alpha) - F' phi^2 (alpha1)] conj(g)
      D4 = e^{-i Omega} N(phi, e^{i Omega} g)

    Args:
        g: Scalar GraphFunction, or a spinor whose first component is used
        sigma, sigma1: SolitonParams with b = v = 0
        nl: Nonlinearity
        gamma_dot, omega_dot: Parameter rates
        method: Profile method

    Returns:
        ForcingTerms
    """
    for params in (sigma, sigma1):
        if not params.kirchhoff_admissible:
            raise ValueError(f"Forcing terms need b = v = 0, got {params}")
    grid = g.grid
    data = g.data[:, 0, :]
    profiles = _ProfileCache(nl, grid, method)
    phi, phi_alpha = profiles(sigma.alpha)
    phi1, _ = profiles(sigma1.alpha)
    omega_gap = sigma.beta - sigma1.beta
    rotation = np.exp(-1j * omega_gap)
    alpha_dot = -2.0 * omega_dot / sigma.alpha

    def coupling(samples):
        xi = samples * samples
        slope = eval_F_prime(nl, xi) * xi
        return eval_F(nl, xi) + slope, slope

    diagonal, off_diagonal = coupling(phi)
    diagonal1, off_diagonal1 = coupling(phi1)
    D0 = -rotation * (gamma_dot * phi + 1j * alpha_dot * phi_alpha)
    D1 = off_diagonal * (rotation ** 2 - 1.0) * np.conj(data)
    D2 = (diagonal - diagonal1) * data
    D3 = (off_diagonal - off_diagonal1) * np.conj(data)
    D4 = rotation * nonlinear_remainder(nl, phi, np.conj(rotation) * data)
    return ForcingTerms(D0 + 0j, D1, D2, D3, D4)


@dataclass(frozen=True)
class DiagnosticsM:
    M0: float
    M1: float
    M2: float
    M3: float
    sup_M0: float
    sup_M1: float
    sup_M2: float
    sup_M3: float


def diagnostics(state, alpha0, previous=None):
    """
    Smallness measures of one state and the running sup-norms.

    M0 = |alpha^2 - alpha0^2|, M1 = |(k1, k2)|, M2 = ||rho^2 h||_2,
    M3 = ||g||_inf; the sups carry (1+t)^{3/2} for M1, M2 and (1+t)^{1/2} for M3.
    """
    M0 = abs(state.alpha ** 2 - alpha0 ** 2)
    M1 = float(np.hypot(abs(state.k1), abs(state.k2)))
    M2 = graph_norm(state.h, kind="weighted", p=2.0, m=2) if state.h is not None else 0.0
    M3 = float(np.abs(state.chi.data).max())
    weight = 1.0 + state.t
    current = (M0, weight ** 1.5 * M1, weight ** 1.5 * M2, weight ** 0.5 * M3)
    if previous is not None:
        current = tuple(max(a, b) for a, b in zip(current, (previous.sup_M0, previous.sup_M1,
                                                             previous.sup_M2, previous.sup_M3)))
    return DiagnosticsM(M0, M1, M2, M3, *current)


def perturbation_norm(chi0):
    """N = ||(1 + x^2) chi0||_2 + ||chi0'||_2."""
    x = chi0.grid.x
    weighted = chi0.replace(chi0.data * (1.0 + x * x))
    derivative = chi0.replace(np.gradient(chi0.data, chi0.grid.spacing, axis=-1, edge_order=2))
    return graph_norm(weighted) + graph_norm(derivative)


@dataclass
class ModulationSeries:
    """States and diagnostics along a run; `aborted` holds the failure message if decompose gave up."""

    states: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    gamma_dot: np.ndarray = None
    omega_dot: np.ndarray = None
    aborted: str = None

    @property
    def times(self):
        return np.array([s.t for s in self.states])

    def series(self, name):
        return np.array([getattr(s, name) for s in self.states])

    def rows(self):
        rows = []
        for state, diag in zip(self.states, self.diagnostics):
            rows.append([state.t, state.beta, state.omega, state.alpha, state.gamma,
                         state.k1.real, state.k1.imag, state.k2.real, state.k2.imag,
                         diag.M0, diag.M1, diag.M2, diag.M3, diag.sup_M1, diag.sup_M2, diag.sup_M3,
                         state.ortho_residual])
        return rows


def _finish_state(state, nl, profiles, basis_cache):
    alpha = state.alpha
    if alpha not in basis_cache:
        phi, phi_alpha = profiles(alpha)
        grid = profiles.grid
        basis_cache.clear()
        basis_cache[alpha] = (GraphFunction(grid, np.stack([-1j * phi, 1j * phi], axis=1)),
                              GraphFunction(grid, np.stack([phi_alpha, phi_alpha], axis=1).astype(complex)))
    g = to_spinor(state.gauge_remainder())
    state.k1, state.k2, state.h = split_discrete_continuous(g, alpha, nl, basis=basis_cache[alpha])
    return state


def track_modulation(u0, cfg, alpha0, guess=None, method="auto"):
    """
    Evolve u0 and decompose every recorded state, warm-starting each Newton solve.

    Args:
        u0: Scalar GraphFunction near a standing wave
        cfg: EvolutionConfig
        alpha0: Reference parameter for M0
        guess: Initial SolitonParams (alpha0, beta 0 when None)
        method: Profile method

    Returns:
        ModulationSeries with gamma and the finite-difference rates filled in
    """
    nl = cfg.nonlinearity
    profiles = _ProfileCache(nl, u0.grid, method)
    basis_cache = {}
    series = ModulationSeries()
    current = [guess or SolitonParams(alpha=alpha0)]

    def observe(t, u):
        if series.aborted:
            return
        try:
            state = decompose(u, current[0], nl, t=t, profiles=profiles)
        except ConvergenceError as exc:
            series.aborted = f"t={t:g}: {exc}"
            logger.warning("Modulation tracking stopped at %s", series.aborted)
            return
        current[0] = state.sigma
        series.states.append(_finish_state(state, nl, profiles, basis_cache))

    evolve(u0, cfg, observers=(observe,))
    _fill_rates(series, alpha0)
    return series


def _fill_rates(series, alpha0):
    if not series.states:
        return
    times = series.times
    omega = series.series("omega")
    beta = series.series("beta")
    phase_integral = cumulative_trapezoid(omega, times, initial=0.0) if times.size > 1 else np.zeros(1)
    gamma = beta - phase_integral
    for state, value in zip(series.states, gamma):
        state.gamma = float(value)
    if times.size > 1:
        series.gamma_dot = np.gradient(gamma, times)
        series.omega_dot = np.gradient(omega, times)
    else:
        series.gamma_dot = np.zeros(1)
        series.omega_dot = np.zeros(1)
    previous = None
    series.diagnostics = []
    for state in series.states:
        previous = diagnostics(state, alpha0, previous)
        series.diagnostics.append(previous)


def forcing_series(series, nl):
    """Spinor forcing (D, -conj D) at every recorded state with sigma1 = sigma."""
    out = []
    for state, gd, od in zip(series.states, series.gamma_dot, series.omega_dot):
        terms = forcing_terms_D(state.gauge_remainder(), state.sigma, state.sigma, nl, gd, od)
        out.append((state.t, terms.spinor(state.chi.grid)))
    return out


def _power_law(t, limit, amplitude, exponent):
    return limit + amplitude * t ** (-exponent)


@dataclass
class PowerLawFit:
    limit: float
    amplitude: float
    exponent: float
    residual: float
    decaying: bool


def fit_power_tail(times, values):
    """Least-squares fit values ~ limit + a t^{-p}; constant data gives a = 0."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if np.ptp(values) <= 1e-14 * max(1.0, np.abs(values).max()):
        return PowerLawFit(float(values.mean()), 0.0, float("inf"), 0.0, True)
    start = (values[-1], (values[0] - values[-1]) * times[0], 1.0)
    try:
        params, _ = curve_fit(_power_law, times, values, p0=start,
                              bounds=([-np.inf, -np.inf, 1e-3], [np.inf, np.inf, 12.0]), maxfev=20000)
    except RuntimeError as exc:
        logger.warning("Power-law tail fit failed: %s", exc)
        return PowerLawFit(float(values[-1]), 0.0, 0.0, float("inf"), False)
    residual = float(np.abs(_power_law(times, *params) - values).max())
    return PowerLawFit(float(params[0]), float(params[1]), float(params[2]), residual, bool(params[2] > 0.05))


def _tail_integral(fit, t_end):
    """int_{t_end}^inf a t^{-p} dt, infinite when p <= 1."""
    if fit.amplitude == 0.0:
        return 0.0
    if fit.exponent <= 1.0:
        return float("inf")
    return fit.amplitude * t_end ** (1.0 - fit.exponent) / (fit.exponent - 1.0)


@dataclass
class LimitTrajectory:
    omega_inf: float
    gamma_inf: float
    omega_plus: float
    gamma_plus: float
    omega_fit: PowerLawFit
    gamma_fit: PowerLawFit
    tail_integral: float
    defects: np.ndarray
    has_limit: bool

    def beta_plus(self, t):
        return self.omega_plus * np.asarray(t) + self.gamma_plus


def limit_trajectory(times, omega, gamma, beta=None, fit_fraction=0.5, min_samples=20):
    """
    Extrapolate (omega, gamma) to t -> infinity and build sigma_plus.

    omega_plus = omega_inf and gamma_plus = gamma_inf + int_0^inf (omega - omega_inf),
    the integral taken over the data plus the fitted power-law tail.
    The defect sequence is (|beta - beta_plus| + |omega - omega_plus|) * t.

    Args:
        times, omega, gamma: Samples along the run (times starting at 0)
        beta: Recovered phases; int omega + gamma when None
        fit_fraction: Trailing fraction of the samples used for the fits
        min_samples: Fewest samples accepted in the fit window

    Returns:
        LimitTrajectory
    """
    times = np.asarray(times, dtype=float)
    omega = np.asarray(omega, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if beta is None:
        beta = cumulative_trapezoid(omega, times, initial=0.0) + gamma
    start = int(len(times) * (1.0 - fit_fraction))
    window = slice(start, None)
    if len(times) - start < min_samples:
        raise ValueError(f"Limit fit needs at least {min_samples} samples past the transient, "
                         f"got {len(times) - start}")
    if times[start] <= 0:
        raise ValueError("Fit window must start at positive times")
    omega_fit = fit_power_tail(times[window], omega[window])
    gamma_fit = fit_power_tail(times[window], gamma[window])
    integral = float(trapezoid(omega - omega_fit.limit, times)) + _tail_integral(omega_fit, times[-1])
    has_limit = omega_fit.decaying and gamma_fit.decaying and np.isfinite(integral)
    if not has_limit:
        warnings.warn("Parameter tails do not decay; no limit trajectory", stacklevel=2)
    gamma_plus = gamma_fit.limit + (integral if np.isfinite(integral) else 0.0)
    beta_plus = omega_fit.limit * times + gamma_plus
    defects = (np.abs(beta - beta_plus) + np.abs(omega - omega_fit.limit)) * times
    return LimitTrajectory(omega_fit.limit, gamma_fit.limit, omega_fit.limit, gamma_plus,
                           omega_fit, gamma_fit, integral, defects, bool(has_limit))


def analytic_root_space(alpha, nl, grid, method="auto", sector="symmetric"):
    """
    Root space at zero built from the analytic chain vectors, without an eigen-solve.

    The symmetric sector holds the phase and scaling modes E1, E2. The full
    sector adds the N-1 antisymmetric pairs a_j E3, a_j E4 with sum_j a_j = 0,
    which P_c must also remove from data that differs from edge to edge.
    """
    vectors = generalized_eigenfunctions(alpha, nl, grid, method)
    basis = root_space_basis(alpha, nl, grid, sector=sector, method=method)
    rs = RootSpace(float(alpha), sector, vectors, basis, pairing_gram(basis), root_space_dim=2)
    if sector == "full":
        rs.full_root_space_dim = len(basis)
    return rs


@dataclass
class AsymptoticProfile:
    h_inf: GraphFunction
    defects: dict
    tail_exponent: float
    tail_bound: float
    integrable: bool
    tail_weight: float = 0.0
    truncated_at: float = None


def _forcing_tail(taus, forcing):
    """Power-law exponent p of ||D(tau)|| over the second half of the forcing times."""
    norms = np.array([graph_norm(D) for _, D in forcing])
    tail = slice(len(taus) // 2, None)
    if len(taus) < 4 or taus[tail][0] <= 0 or not np.all(norms[tail] > 0):
        return None, norms
    slope = np.polyfit(np.log(taus[tail]), np.log(norms[tail]), 1)[0]
    return float(-slope), norms


def asymptotic_profile(h0, forcing, H, dt=0.01, check=(), root_space=None, tail=True):
    """
    h_inf = P_c(h0 - i int_0^inf e^{iH tau} D(tau) d tau), trapezoid in tau up to T.

    The sum is evaluated Horner-style with backward linearized flows between
    consecutive forcing times. Past the last time T the forcing is continued as
    D(T) (T/tau)^p with p fitted to ||D|| and the propagator frozen at e^{iHT},
    which adds T/(p - 1) to the trapezoid weight of D(T). When p <= 1 or no
    fit is possible the integral stays truncated at T and truncated_at says so.

    Args:
        h0: Spinor remainder at tau = 0
        forcing: Sequence of (tau, spinor D) with tau increasing from 0
        H: LinearizedOperator at the limit parameter
        dt: Step of the linearized flows
        check: Sequence of (t, h(t)) pairs for the defect ||h(t) - e^{-iHt} h_inf||_2
        root_space: RootSpace for P_c; the full analytic root space when None
        tail: Add the fitted tail beyond T

    Returns:
        AsymptoticProfile
    """
    if root_space is None:
        root_space = analytic_root_space(H.alpha, H.nl, H.grid, H.method, sector="full")
    taus = np.array([tau for tau, _ in forcing], dtype=float)
    exponent, bound, integrable, tail_weight, truncated_at = float("inf"), 0.0, True, 0.0, None
    if len(forcing) == 0:
        duhamel = h0.replace(np.zeros_like(h0.data))
    else:
        T = float(taus[-1])
        fitted, norms = _forcing_tail(taus, forcing)
        if fitted is not None:
            exponent = fitted
            integrable = exponent > 1.0
            bound = norms[-1] * T / (exponent - 1.0) if integrable else float("inf")
        if not integrable:
            warnings.warn(f"Forcing tail decays like t^-{exponent:.2f}; the Duhamel integral may not converge",
                          stacklevel=2)
        if tail and fitted is not None and integrable:
            tail_weight = T / (exponent - 1.0)
        else:
            truncated_at = T
        weights = np.zeros(len(taus))
        if len(taus) > 1:
            steps = np.diff(taus)
            weights[:-1] += 0.5 * steps
            weights[1:] += 0.5 * steps
        weights[-1] += tail_weight
        accumulator = forcing[-1][1] * weights[-1]
        for index in range(len(taus) - 2, -1, -1):
            accumulator = flow(accumulator, H, -(taus[index + 1] - taus[index]), dt) + forcing[index][1] * weights[index]
        if taus[0] > 0:
            accumulator = flow(accumulator, H, -taus[0], dt)
        duhamel = accumulator * (-1j)
    h_inf = project_continuous(h0 + duhamel, root_space)
    defects = {}
    for t, h in check:
        defects[float(t)] = graph_norm(h - flow(h_inf, H, t, dt))
    return AsymptoticProfile(h_inf, defects, exponent, float(bound), bool(integrable), float(tail_weight),
                             truncated_at)
