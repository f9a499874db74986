"""
Soliton Profiles Module

Polynomial nonlinearities F, the effective potential U, the smallest
positive root phi0 of U, and the standing-wave profile phi(x; alpha) solving
phi'' = alpha^2 phi / 4 + F(phi^2) phi with phi'(0) = 0, together with the
Kirchhoff-admissible soliton w = exp(-i beta) phi on a star graph.
"""

import logging
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from numpy.polynomial import Polynomial
from scipy.integrate import solve_ivp, trapezoid
from scipy.optimize import brentq

from errors import ConditionError, ConfigError
from graph_core import GraphFunction, enforce_kirchhoff

logger = logging.getLogger(__name__)

MIN_DEGREE = 4
ROOT_SCAN_POINTS = 20001
ROOT_SCAN_START = 1e-8
ROOT_XTOL = 1e-12
DEGENERATE_SLOPE = 1e-8
ALPHA_STEP = 1e-4


@dataclass(frozen=True)
class Nonlinearity:
    """F(xi) = sum_k c_k xi^k stored as sorted (degree, coefficient) pairs."""

    terms: tuple = ()
    allow_low_degree: bool = False

    def __post_init__(self):
        merged = {}
        for degree, coeff in self.terms:
            if int(degree) != degree or degree < 1:
                raise ConfigError(f"Nonlinearity degrees must be integers >= 1 (F(0)=0), got {degree}")
            merged[int(degree)] = merged.get(int(degree), 0.0) + float(coeff)
        terms = tuple((d, c) for d, c in sorted(merged.items()) if c != 0.0)
        object.__setattr__(self, "terms", terms)
        if terms and terms[0][0] < MIN_DEGREE:
            if not self.allow_low_degree:
                raise ConfigError(
                    f"Lowest degree of F is {terms[0][0]} but at least {MIN_DEGREE} is required; "
                    f"set allow_low_degree for desk experiments"
                )
            warnings.warn(
                f"Nonlinearity {self.describe()} is below the degree gate p >= {MIN_DEGREE} (override set)",
                stacklevel=3,
            )

    @property
    def lowest_degree(self):
        return self.terms[0][0] if self.terms else None

    @property
    def coefficients(self):
        """Dense coefficient array c[k] of xi^k."""
        top = self.terms[-1][0] if self.terms else 0
        coeffs = np.zeros(top + 1)
        for degree, coeff in self.terms:
            coeffs[degree] = coeff
        return coeffs

    @property
    def polynomial(self):
        return Polynomial(self.coefficients)

    @property
    def pure_power(self):
        """(mu, c) when F = c xi^mu with c < 0, otherwise None."""
        if len(self.terms) == 1 and self.terms[0][1] < 0:
            return self.terms[0]
        return None

    @property
    def is_zero(self):
        return not self.terms

    def describe(self):
        if not self.terms:
            return "F=0"
        return "F=" + " + ".join(f"{c:g}*xi^{d}" for d, c in self.terms)

    def as_pairs(self):
        return [[d, c] for d, c in self.terms]


def make_nonlinearity(pairs, allow_low_degree=False):
    """Build F from config pairs such as [[4, -1.0]] meaning -xi^4."""
    return Nonlinearity(tuple((d, c) for d, c in pairs), allow_low_degree=allow_low_degree)


def eval_F(nl, xi):
    return nl.polynomial(xi)


def eval_F_prime(nl, xi):
    return nl.polynomial.deriv()(xi)


def eval_G(nl, s):
    """Antiderivative G(s) = int_0^s F with G(0) = 0."""
    return nl.polynomial.integ()(s)


def potential_U(nl, phi, alpha):
    """U(phi, alpha) = -alpha^2 phi^2 / 8 - G(phi^2) / 2."""
    phi = np.asarray(phi, dtype=float)
    return -alpha ** 2 * phi ** 2 / 8.0 - 0.5 * eval_G(nl, phi ** 2)


def potential_U_phi(nl, phi, alpha):
    return -alpha ** 2 * phi / 4.0 - eval_F(nl, phi ** 2) * phi


def _q_coefficients(nl, alpha):
    """Coefficients of q(s) with -2U(phi) = phi^2 q(phi^2)."""
    g = nl.polynomial.integ().coef
    q = np.array(g[1:], dtype=float) if len(g) > 1 else np.zeros(1)
    q[0] += alpha ** 2 / 4.0
    return q


def _divided_difference(coeffs, a, b):
    """(q(a) - q(b)) / (a - b) evaluated without cancellation."""
    total = 0.0
    for k in range(1, len(coeffs)):
        powers = sum(a ** i * b ** (k - 1 - i) for i in range(k))
        total += coeffs[k] * powers
    return total


class RootInfo(NamedTuple):
    phi0: float
    slope: float


def smallest_positive_root(nl, alpha):
    """
    Locate phi0, the smallest positive zero of U(., alpha).

    Args:
        nl: Nonlinearity
        alpha: Positive profile parameter

    Returns:
        RootInfo(phi0, U_phi(phi0))
    """
    if alpha <= 0:
        raise ConfigError(f"Profile parameter alpha must be positive, got {alpha}")
    grid = np.linspace(ROOT_SCAN_START, 10.0 * alpha, ROOT_SCAN_POINTS)
    values = potential_U(nl, grid, alpha)
    crossings = np.nonzero((values[:-1] < 0) & (values[1:] >= 0))[0]
    if crossings.size == 0:
        raise ConditionError(
            f"U(phi, alpha={alpha}) has no positive root in [{ROOT_SCAN_START}, {10 * alpha}] "
            f"for {nl.describe()}"
        )
    i = crossings[0]
    phi0 = brentq(lambda p: float(potential_U(nl, p, alpha)), grid[i], grid[i + 1],
                  xtol=ROOT_XTOL, maxiter=200)
    slope = float(potential_U_phi(nl, phi0, alpha))
    if abs(slope) < DEGENERATE_SLOPE:
        raise ConditionError(f"Degenerate root phi0={phi0}: |U_phi(phi0)|={abs(slope):.3e}")
    return RootInfo(float(phi0), slope)


def _sech(z):
    z = np.abs(z)
    e = np.exp(-z)
    return 2.0 * e / (1.0 + e * e)


def profile_closed_form(x, mu, omega_pos, coefficient=-1.0):
    """phi = [(mu+1) omega / |c|]^(1/(2 mu)) sech^(1/mu)(mu sqrt(omega) x) for F = c xi^mu."""
    if omega_pos <= 0:
        raise ValueError(f"Closed-form profile needs a positive frequency, got {omega_pos}")
    amplitude = ((mu + 1) * omega_pos / abs(coefficient)) ** (1.0 / (2 * mu))
    return amplitude * _sech(mu * np.sqrt(omega_pos) * np.asarray(x, dtype=float)) ** (1.0 / mu)


@dataclass(frozen=True, eq=False)
class Profile:
    alpha: float
    x: np.ndarray
    samples: np.ndarray
    derivative: np.ndarray
    amplitude: float
    method: str = "quadrature"


@dataclass(eq=False)
class _FirstIntegral:
    """phi(x) from (1/2) phi'^2 + U(phi) = 0, integrated in two stages."""

    nl: Nonlinearity
    alpha: float
    root: RootInfo = field(init=False)

    def __post_init__(self):
        self.root = smallest_positive_root(self.nl, self.alpha)
        self.q = _q_coefficients(self.nl, self.alpha)
        self.q_poly = Polynomial(self.q)

    def _tau_rate(self, x, y):
        # phi = phi0 - tau^2 removes the inverse square root at the vertex
        tau = y[0]
        phi0 = self.root.phi0
        phi = phi0 - tau * tau
        slope = _divided_difference(self.q, phi * phi, phi0 * phi0)
        return [0.5 * np.sqrt(max(phi * phi * (2.0 * phi0 - tau * tau) * -slope, 0.0))]

    def _log_rate(self, x, y):
        phi = np.exp(y[0])
        return [-np.sqrt(max(self.q_poly(phi * phi), 0.0))]

    def solve(self, x_end):
        phi0 = self.root.phi0
        switch_tau = np.sqrt(phi0 / 2.0)

        def reached_half(x, y):
            return y[0] - switch_tau

        reached_half.terminal = True
        reached_half.direction = 1
        near = solve_ivp(self._tau_rate, (0.0, x_end), [0.0], method="DOP853",
                         rtol=1e-13, atol=1e-15, dense_output=True, events=reached_half)
        if not near.success:
            raise ConditionError(f"Profile integration failed near the vertex: {near.message}")
        x_switch = near.t_events[0][0] if near.t_events[0].size else None
        far = None
        if x_switch is not None and x_switch < x_end:
            far = solve_ivp(self._log_rate, (x_switch, x_end), [np.log(phi0 / 2.0)],
                            method="DOP853", rtol=1e-13, atol=1e-13, dense_output=True)
            if not far.success:
                raise ConditionError(f"Profile tail integration failed: {far.message}")
        return near, far, x_switch

    def evaluate(self, x):
        x = np.abs(np.asarray(x, dtype=float))
        x_end = float(x.max()) if x.size else 0.0
        phi = np.full(x.shape, self.root.phi0)
        if x_end == 0.0:
            return phi
        near, far, x_switch = self.solve(x_end)
        inner = x <= x_switch if x_switch is not None else np.ones(x.shape, dtype=bool)
        tau = near.sol(x[inner])[0]
        phi[inner] = self.root.phi0 - tau * tau
        if far is not None:
            phi[~inner] = np.exp(far.sol(x[~inner])[0])
        return phi

    def slope(self, phi):
        """phi'(x) = -phi sqrt(q(phi^2)) along the decaying branch."""
        return -phi * np.sqrt(np.clip(self.q_poly(phi * phi), 0.0, None))


def profile_values(nl, alpha, x, method="auto"):
    """Profile samples at arbitrary points (evaluated at |x|)."""
    x = np.asarray(x, dtype=float)
    power = nl.pure_power
    if method == "closed" or (method == "auto" and power is not None):
        if power is None:
            raise ValueError(f"Closed-form profile needs a focusing pure power, got {nl.describe()}")
        mu, coeff = power
        return profile_closed_form(x, mu, alpha ** 2 / 4.0, coeff)
    if method not in ("auto", "quadrature"):
        raise ValueError(f"Unknown profile method '{method}'")
    return _FirstIntegral(nl, alpha).evaluate(x)


def profile_quadrature(nl, alpha, grid):
    """
    Profile on one edge of the grid from the first integral of the profile ODE.

    Args:
        nl: Nonlinearity satisfying the root condition for alpha
        alpha: Positive profile parameter
        grid: StarGrid whose edge samples are used

    Returns:
        Profile with samples, exact first-integral derivative and amplitude phi0
    """
    integral = _FirstIntegral(nl, alpha)
    x = grid.x
    phi = integral.evaluate(x)
    logger.debug("Quadrature profile alpha=%g phi0=%.12g", alpha, integral.root.phi0)
    return Profile(float(alpha), x, phi, integral.slope(phi), integral.root.phi0, "quadrature")


def profile(nl, alpha, grid, method="auto"):
    """Profile on the grid; focusing pure powers use the closed form under method='auto'."""
    if method == "quadrature" or (method == "auto" and nl.pure_power is None):
        return profile_quadrature(nl, alpha, grid)
    x = grid.x
    phi = profile_values(nl, alpha, x, method="closed")
    q = Polynomial(_q_coefficients(nl, alpha))
    slope = -phi * np.sqrt(np.clip(q(phi * phi), 0.0, None))
    return Profile(float(alpha), x, phi, slope, float(phi[0]), "closed")


def profile_alpha_derivative(nl, alpha, grid, rel_step=ALPHA_STEP, method="auto"):
    """phi_alpha by a centered difference in alpha with step rel_step * alpha."""
    delta = rel_step * alpha
    upper = profile(nl, alpha + delta, grid, method).samples
    lower = profile(nl, alpha - delta, grid, method).samples
    return (upper - lower) / (2.0 * delta)


def profile_mass(nl, alpha, grid, method="auto"):
    """Per-edge integral of phi^2 by the trapezoid rule."""
    phi = profile(nl, alpha, grid, method).samples
    return float(trapezoid(phi ** 2, dx=grid.spacing))


def mass_slope(nl, alpha, grid, rel_step=ALPHA_STEP, method="auto"):
    """e = d/d alpha of the graph mass ||phi||^2 summed over all edges."""
    delta = rel_step * alpha
    upper = profile_mass(nl, alpha + delta, grid, method)
    lower = profile_mass(nl, alpha - delta, grid, method)
    return grid.n_edges * (upper - lower) / (2.0 * delta)


@dataclass(frozen=True)
class SolitonParams:
    """Soliton parameters; omega defaults to (v^2 - alpha^2)/4."""

    beta: float = 0.0
    omega: float = None
    b: float = 0.0
    v: float = 0.0
    alpha: float = 2.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigError(f"Soliton alpha must be positive, got {self.alpha}")
        expected = (self.v ** 2 - self.alpha ** 2) / 4.0
        if self.omega is None:
            object.__setattr__(self, "omega", expected)
        elif abs(self.omega - expected) > 1e-12 * max(1.0, abs(expected)):
            raise ConfigError(f"omega={self.omega} is inconsistent with (v^2 - alpha^2)/4 = {expected}")

    @property
    def omega_pos(self):
        return self.alpha ** 2 / 4.0

    @property
    def kirchhoff_admissible(self):
        return self.b == 0.0 and self.v == 0.0


def soliton_graph(params, nl, grid, t=0.0, force=False, method="auto"):
    """
    Soliton w_j = exp(-i(beta + omega t) + i v x / 2) phi(x - b; alpha) on every edge.

    Args:
        params: SolitonParams
        nl: Nonlinearity
        grid: StarGrid
        t: Time at which the phase is evaluated
        force: Allow moving or shifted solitons that violate the vertex condition
        method: Profile method passed to profile_values

    Returns:
        Scalar GraphFunction
    """
    if not params.kirchhoff_admissible and not force:
        raise ConfigError(
            f"Soliton with b={params.b}, v={params.v} violates the Kirchhoff condition; "
            f"only b = v = 0 is admissible (pass force=True to override)"
        )
    x = grid.x
    phi = profile_values(nl, params.alpha, x - params.b, method)
    phase = np.exp(-1j * (params.beta + params.omega * t) + 0.5j * params.v * x)
    u = GraphFunction(grid, np.tile(phi * phase, (grid.n_edges, 1, 1)))
    return enforce_kirchhoff(u) if params.kirchhoff_admissible else u


def vertex_consistent(samples):
    """Replace the vertex sample so the three-point flux of an identical-edge star vanishes."""
    adjusted = np.array(samples, dtype=float)
    adjusted[..., 0] = (4.0 * adjusted[..., 1] - adjusted[..., 2]) / 3.0
    return adjusted


def graph_profile(nl, alpha, grid, method="auto"):
    """Profile samples with a vertex value consistent with the discrete Kirchhoff rows."""
    return vertex_consistent(profile(nl, alpha, grid, method).samples)


def graph_profile_alpha_derivative(nl, alpha, grid, rel_step=ALPHA_STEP, method="auto"):
    return vertex_consistent(profile_alpha_derivative(nl, alpha, grid, rel_step, method))
