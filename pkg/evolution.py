"""
NLS Evolution Module

Time stepping of i u_t = -Laplacian u + F(|u|^2) u on a star graph with
Kirchhoff vertex rows: Strang splitting with an exact nonlinear phase
rotation around a Crank-Nicolson linear step, the free flow, conserved
quantities and the virial diagnostics.
"""

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.integrate import trapezoid
from scipy.sparse.linalg import splu

from errors import ConfigError, InstabilityError, KirchhoffConditionError, SolverError
from graph_core import (
    BoundarySpec,
    GraphFunction,
    assemble_graph_operator,
    enforce_kirchhoff,
    kirchhoff_residual,
)
from soliton import Nonlinearity, eval_F, eval_G

logger = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ("t", "mass", "energy", "kirchhoff_continuity", "kirchhoff_flux", "virial", "sup_norm")


class CrankNicolsonStepper:
    """Solves (B + i dt/2 A) u+ = (B - i dt/2 A) u for the pencil (A, B) of a GraphOperator.

    Constraint rows of the right-hand side are zeroed so every step lands on
    the vertex and far-boundary conditions. A negative dt gives the exact
    inverse of the positive step.
    """

    def __init__(self, operator, dt):
        self.operator = operator
        self.dt = float(dt)
        half = 0.5j * self.dt
        self._rhs = (operator.mass - half * operator.matrix).tocsr()
        self._rows = operator.constraint_rows
        try:
            self._lu = splu((operator.mass + half * operator.matrix).tocsc())
        except RuntimeError as exc:
            raise SolverError(f"Crank-Nicolson matrix is singular for dt={dt}: {exc}") from exc

    def step_flat(self, vector):
        rhs = self._rhs @ vector
        rhs[self._rows] = 0.0
        return self._lu.solve(rhs)

    def step(self, u):
        return GraphFunction.from_flat(u.grid, u.components, self.step_flat(u.flat()))


def damping_potential(grid, boundary, components=1):
    """-i W(x) on every component as an (N, C, C, M) potential, or None for Dirichlet."""
    if boundary.kind == "dirichlet":
        return None
    ramp = boundary.damping(grid)
    potential = np.zeros((grid.n_edges, components, components, grid.samples_per_edge), dtype=complex)
    for c in range(components):
        potential[:, c, c, :] = -1j * ramp
    return potential


@lru_cache(maxsize=16)
def _laplacian_stepper(grid, dt, boundary):
    operator = assemble_graph_operator(grid, [[1.0]], potential=damping_potential(grid, boundary))
    return CrankNicolsonStepper(operator, dt)


@dataclass(frozen=True)
class EvolutionConfig:
    """Crank-Nicolson/Strang run settings."""

    dt: float = 0.01
    T: float = 10.0
    nonlinearity: Nonlinearity = field(default_factory=Nonlinearity)
    boundary: BoundarySpec = field(default_factory=BoundarySpec)
    record_stride: int = 10
    snapshot_stride: int = 0
    mass_guard: float = 1e-3
    kirchhoff_tol: float = 1e-6
    scheme: str = "CrankNicolsonStrang"

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError(f"Time step must be positive, got dt={self.dt}")
        if self.T < 0:
            raise ConfigError(f"Final time must be nonnegative, got T={self.T}")
        if abs(self.n_steps * self.dt - self.T) > 1e-9 * max(1.0, self.T):
            raise ConfigError(f"T={self.T} is not an integer multiple of dt={self.dt}")
        if self.record_stride < 1:
            raise ConfigError(f"record_stride must be at least 1, got {self.record_stride}")
        if self.scheme != "CrankNicolsonStrang":
            raise ConfigError(f"Unknown scheme '{self.scheme}'")

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))


def _check_initial_data(u, cfg, caller):
    """Scalar data, dt <= h and the discrete Kirchhoff condition within cfg.kirchhoff_tol."""
    if u.components != 1:
        raise ValueError(f"{caller} expects a scalar GraphFunction, got {u.components} components")
    if cfg.dt > u.grid.spacing * (1.0 + 1e-12):
        raise ConfigError(f"dt={cfg.dt} exceeds the grid spacing h={u.grid.spacing}")
    residual = kirchhoff_residual(u)
    scale = max(1.0, float(np.abs(u.data).max()))
    if max(residual) > cfg.kirchhoff_tol * scale:
        raise KirchhoffConditionError(
            f"Initial data violates the Kirchhoff condition: continuity={residual.continuity:.3e}, "
            f"flux={residual.flux:.3e}"
        )


def _nonlinear_phase(data, nl, dt):
    if nl.is_zero:
        return data
    return data * np.exp(-1j * eval_F(nl, np.abs(data) ** 2) * dt)


def _reset_vertex(data, n_edges):
    data[:, :, 0] = ((4.0 * data[:, :, 1] - data[:, :, 2]).sum(axis=0) / (3.0 * n_edges))[None, :]
    return data


def _strang_step(data, stepper, nl, dt):
    grid = stepper.operator.grid
    data = _reset_vertex(_nonlinear_phase(data, nl, 0.5 * dt), grid.n_edges)
    data = stepper.step_flat(data.reshape(-1)).reshape(data.shape)
    return _reset_vertex(_nonlinear_phase(data, nl, 0.5 * dt), grid.n_edges)


def step_nls(u, cfg):
    """One Strang step: nonlinear half phase, Crank-Nicolson linear step, nonlinear half phase."""
    _check_initial_data(u, cfg, "step_nls")
    stepper = _laplacian_stepper(u.grid, cfg.dt, cfg.boundary)
    return u.replace(_strang_step(np.array(u.data), stepper, cfg.nonlinearity, cfg.dt))


def _tail_fraction(u, fraction=0.1):
    modulus = np.abs(u.data)
    peak = modulus.max()
    if peak == 0.0:
        return 0.0
    start = int(u.grid.samples_per_edge * (1.0 - fraction))
    return float(modulus[:, :, start:].max() / peak)


def free_propagate(u, t, dt=0.01, boundary=None):
    """
    Evolve i u_t = -Laplacian u with Kirchhoff vertex rows up to time t.

    Args:
        u: Scalar GraphFunction
        t: Final time (the step is shrunk so that t is hit exactly)
        dt: Largest step
        boundary: BoundarySpec, Dirichlet when None

    Returns:
        GraphFunction at time t
    """
    boundary = boundary or BoundarySpec()
    if u.components != 1:
        raise ValueError(f"free_propagate expects a scalar GraphFunction, got {u.components} components")
    if boundary.kind == "dirichlet" and _tail_fraction(u) > 1e-3:
        raise ConfigError(
            "Initial data does not decay towards the far boundary; use boundary=absorbing "
            f"(tail/peak ratio {_tail_fraction(u):.3g})"
        )
    if t == 0:
        return u
    n_steps = max(1, int(np.ceil(abs(t) / dt - 1e-9)))
    stepper = _laplacian_stepper(u.grid, float(t) / n_steps, boundary)
    vector = enforce_kirchhoff(u).flat()
    for _ in range(n_steps):
        vector = stepper.step_flat(vector)
    return GraphFunction.from_flat(u.grid, 1, vector)


@dataclass(frozen=True)
class ConservedQuantities:
    mass: float
    energy: float


def conserved(u, nl):
    """Trapezoid mass ||u||^2 and energy sum_j int |u'|^2 + G(|u|^2)."""
    h = u.grid.spacing
    density = np.abs(u.data) ** 2
    derivative = np.gradient(u.data, h, axis=-1, edge_order=2)
    mass = float(trapezoid(density, dx=h, axis=-1).sum())
    energy = float(trapezoid(np.abs(derivative) ** 2 + eval_G(nl, density), dx=h, axis=-1).sum())
    return ConservedQuantities(mass, energy)


def virial_weighted_norm(u):
    """||x u||_2 over the whole graph."""
    x = u.grid.x
    return float(np.sqrt(trapezoid((x ** 2) * np.abs(u.data) ** 2, dx=u.grid.spacing, axis=-1).sum()))


def virial_rate(u):
    """d/dt int x^2 |u|^2 = 4 Im sum_j int x conj(u) u'."""
    x = u.grid.x
    derivative = np.gradient(u.data, u.grid.spacing, axis=-1, edge_order=2)
    integrand = x * np.conj(u.data) * derivative
    return float(4.0 * trapezoid(integrand, dx=u.grid.spacing, axis=-1).sum().imag)


@dataclass
class TrajectoryRecord:
    """Recorded times, per-time diagnostics and optional snapshots of a run."""

    times: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    final: GraphFunction = None

    def rows(self):
        return [[row[c] for c in TRAJECTORY_COLUMNS] for row in self.diagnostics]

    def series(self, column):
        return np.array([row[column] for row in self.diagnostics])


def _diagnostics_row(t, u, nl):
    quantities = conserved(u, nl)
    residual = kirchhoff_residual(u)
    return {
        "t": float(t),
        "mass": quantities.mass,
        "energy": quantities.energy,
        "kirchhoff_continuity": residual.continuity,
        "kirchhoff_flux": residual.flux,
        "virial": virial_weighted_norm(u),
        "sup_norm": float(np.abs(u.data).max()),
    }


def evolve(u0, cfg, observers=()):
    """
    Run the NLS flow and record diagnostics every cfg.record_stride steps.

    Args:
        u0: Scalar GraphFunction satisfying the discrete Kirchhoff condition
        cfg: EvolutionConfig
        observers: Callables observer(t, u) invoked at every recorded time

    Returns:
        TrajectoryRecord
    """
    _check_initial_data(u0, cfg, "evolve")

    nl = cfg.nonlinearity
    stepper = _laplacian_stepper(u0.grid, cfg.dt, cfg.boundary)
    record = TrajectoryRecord()
    data = np.array(u0.data)
    mass0 = conserved(u0, nl).mass

    def capture(step, data):
        t = step * cfg.dt
        u = GraphFunction(u0.grid, data)
        row = _diagnostics_row(t, u, nl)
        record.times.append(t)
        record.diagnostics.append(row)
        if step == 0 or step == cfg.n_steps or (cfg.snapshot_stride and step % cfg.snapshot_stride == 0):
            record.snapshots.append((t, u))
        for observer in observers:
            observer(t, u)
        if cfg.boundary.kind == "dirichlet" and mass0 > 0:
            drift = abs(row["mass"] - mass0) / mass0
            if drift > cfg.mass_guard:
                raise InstabilityError(f"Mass drift {drift:.3e} exceeds guard {cfg.mass_guard} at t={t:g}")
        return u

    last = capture(0, data)
    for step in range(1, cfg.n_steps + 1):
        data = _strang_step(data, stepper, nl, cfg.dt)
        if step % cfg.record_stride == 0 or step == cfg.n_steps:
            last = capture(step, data)
    record.final = last
    logger.debug("Evolved %d steps to T=%g", cfg.n_steps, cfg.T)
    return record
