"""
Linearized Operator Module

Assembly of the complexified linearization H(alpha) = (-Laplacian + alpha^2/4) theta3 + V
around a Kirchhoff soliton, the free operators J and J0, the analytic
generalized eigenfunctions E1..E4, the numerical root space and the
continuous-spectrum projector P_c, the linearized Crank-Nicolson flow, the
phase transformation T_rho and the scattering-limit comparison.
"""

import logging
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigs, splu

from errors import ConfigError, GramError, KirchhoffConditionError, SolverError
from evolution import CrankNicolsonStepper, damping_potential
from graph_core import (
    BoundarySpec,
    GraphFunction,
    assemble_graph_operator,
    graph_norm,
    kirchhoff_residual,
    l2_inner,
)
from soliton import (
    eval_F,
    eval_F_prime,
    graph_profile,
    graph_profile_alpha_derivative,
    profile,
)

logger = logging.getLogger(__name__)

THETA2 = np.array([[0.0, -1j], [1j, 0.0]])
THETA3 = np.array([[1.0, 0.0], [0.0, -1.0]])


class PauliLikeMatrices(NamedTuple):
    theta2: np.ndarray
    theta3: np.ndarray


def pauli_like():
    return PauliLikeMatrices(THETA2.copy(), THETA3.copy())


def theta3_apply(f):
    """theta3 acting on every spinor pair: (f1, f2) -> (f1, -f2)."""
    data = np.array(f.data)
    data[:, 1, :] *= -1.0
    return f.replace(data)


def phase_transform(f, rho):
    """T_rho = diag(exp(i rho), exp(-i rho)) on every spinor pair."""
    if not f.is_spinor:
        raise ValueError("phase_transform expects a spinor GraphFunction")
    factors = np.array([np.exp(1j * rho), np.exp(-1j * rho)])
    return f.replace(f.data * factors[None, :, None])


@dataclass(frozen=True, eq=False)
class LinearizedOperator:
    """Discretized spinor operator with Kirchhoff (or Dirichlet) vertex rows.

    `potential` holds the pointwise 2x2 blocks on each edge including the
    alpha_j^2/4 theta3 shift; `profile` is the soliton profile per edge
    (zero for the free operators).
    """

    grid: object
    alphas: tuple
    operator: object
    potential: np.ndarray
    profile: np.ndarray
    nl: object = None
    vertex: str = "kirchhoff"
    boundary: BoundarySpec = field(default_factory=BoundarySpec)
    method: str = "auto"

    @property
    def w(self):
        return min(a * a for a in self.alphas) / 4.0

    @property
    def equal_alpha(self):
        return len(set(self.alphas)) == 1

    @property
    def alpha(self):
        if not self.equal_alpha:
            raise ConfigError(f"Operator has distinct edge parameters {self.alphas}")
        return self.alphas[0]

    def apply(self, f):
        """Stencil action of H on a spinor function (no vertex rows)."""
        return self.operator.apply(f)

    def free_part(self):
        return assemble_J(self.alphas, self.grid, vertex=self.vertex, boundary=self.boundary)

    def on_grid(self, grid):
        """Same operator reassembled on another grid."""
        if self.nl is None:
            return assemble_J(self.alphas[:1] * grid.n_edges, grid, self.vertex, self.boundary)
        return assemble_H(self.alpha, self.nl, grid, vertex=self.vertex, boundary=self.boundary,
                          method=self.method)


def _edge_alphas(alphas, grid):
    alphas = tuple(float(a) for a in np.broadcast_to(np.asarray(alphas, dtype=float), (grid.n_edges,)))
    if any(a < 0 for a in alphas):
        raise ConfigError(f"Edge parameters alpha_j must be nonnegative, got {alphas}")
    return alphas


def _finish(grid, alphas, potential, profile_samples, nl, vertex, boundary, method):
    absorbing = damping_potential(grid, boundary, components=2)
    total = potential if absorbing is None else potential + absorbing
    operator = assemble_graph_operator(grid, THETA3, potential=total, vertex=vertex)
    return LinearizedOperator(grid, alphas, operator, potential, profile_samples, nl, vertex, boundary, method)


def assemble_J(alphas, grid, vertex="kirchhoff", boundary=None):
    """Free operator [J f]_j = (-Laplacian + w_j) theta3 f_j with w_j = alpha_j^2/4."""
    boundary = boundary or BoundarySpec()
    alphas = _edge_alphas(alphas, grid)
    potential = np.zeros((grid.n_edges, 2, 2, grid.samples_per_edge))
    for j, a in enumerate(alphas):
        potential[j, 0, 0, :] = a * a / 4.0
        potential[j, 1, 1, :] = -a * a / 4.0
    zeros = np.zeros((grid.n_edges, grid.samples_per_edge))
    return _finish(grid, alphas, potential, zeros, None, vertex, boundary, "auto")


def assemble_J0(grid, vertex="kirchhoff", boundary=None):
    """J0 = diag(-Laplacian, Laplacian)."""
    return assemble_J(0.0, grid, vertex=vertex, boundary=boundary)


def assemble_H(alpha, nl, grid, vertex="kirchhoff", alphas=None, boundary=None, method="auto"):
    """
    Assemble H(alpha) = (-Laplacian + alpha^2/4) theta3 + V(alpha) on the star.

    V = [F(phi^2) + F'(phi^2) phi^2] theta3 + i F'(phi^2) phi^2 theta2, which
    is the real matrix [[a, b], [-b, -a]] per sample.

    Args:
        alpha: Profile parameter shared by every edge
        nl: Nonlinearity
        grid: StarGrid
        vertex: "kirchhoff" or "dirichlet" (control domain)
        alphas: Optional per-edge parameters overriding alpha
        boundary: Far boundary treatment (absorbing adds -iW to both components)
        method: Profile method

    Returns:
        LinearizedOperator
    """
    boundary = boundary or BoundarySpec()
    alphas = _edge_alphas(alpha if alphas is None else alphas, grid)
    n, m = grid.n_edges, grid.samples_per_edge
    potential = np.zeros((n, 2, 2, m))
    profiles = np.zeros((n, m))
    cache = {}
    for j, a in enumerate(alphas):
        if a not in cache:
            cache[a] = graph_profile(nl, a, grid, method)
        phi = cache[a]
        xi = phi ** 2
        diagonal = eval_F(nl, xi) + eval_F_prime(nl, xi) * xi
        coupling = eval_F_prime(nl, xi) * xi
        potential[j, 0, 0] = a * a / 4.0 + diagonal
        potential[j, 1, 1] = -a * a / 4.0 - diagonal
        potential[j, 0, 1] = coupling
        potential[j, 1, 0] = -coupling
        profiles[j] = phi
    logger.debug("Assembled H for alphas=%s on %d edges", alphas, n)
    return _finish(grid, alphas, potential, profiles, nl, vertex, boundary, method)


def pseudo_symmetry_defect(H):
    """max |theta3 H theta3 - H^*| over the interior nodes (one-sided end rows excluded)."""
    grid = H.grid
    m = grid.samples_per_edge
    theta = sparse.kron(sparse.identity(grid.n_edges), sparse.kron(sparse.csr_matrix(THETA3),
                                                                  sparse.identity(m)))
    stencil = H.operator.stencil
    difference = (theta @ stencil @ theta - stencil.conj().T).tocsr()
    interior = np.zeros(H.operator.size, dtype=bool)
    for block in range(grid.n_edges * 2):
        interior[block * m + 1:block * m + m - 1] = True
    restricted = difference[interior][:, interior]
    return float(np.abs(restricted.data).max()) if restricted.nnz else 0.0


class GeneralizedEigenfunctions(NamedTuple):
    E1: GraphFunction
    E2: GraphFunction
    E3: GraphFunction
    E4: GraphFunction


def _stack(grid, values):
    values = np.broadcast_to(values, (grid.n_edges, grid.samples_per_edge))
    return GraphFunction(grid, np.stack([values, np.conj(values)], axis=1))


def generalized_eigenfunctions(alpha, nl, grid, method="auto"):
    """E_j = (v_j, conj v_j) with v1 = -i phi, v2 = -(2/alpha) phi_alpha, v3 = -phi_y, v4 = (i/2) y phi."""
    phi = graph_profile(nl, alpha, grid, method)
    phi_alpha = graph_profile_alpha_derivative(nl, alpha, grid, method=method)
    slope = profile(nl, alpha, grid, method).derivative
    x = grid.x
    return GeneralizedEigenfunctions(
        _stack(grid, -1j * phi),
        _stack(grid, -(2.0 / alpha) * phi_alpha + 0j),
        _stack(grid, -slope + 0j),
        _stack(grid, 0.5j * x * phi),
    )


class AdmissibilityReport(NamedTuple):
    admissible: bool
    continuity: float
    flux: float
    tolerance: float


def kirchhoff_admissible(E, tol=None):
    """Kirchhoff verdict with tolerance max(1e-6, h^2) * ||E||_inf unless tol is given."""
    scale = float(np.abs(E.data).max())
    if tol is None:
        tol = max(1e-6, E.grid.spacing ** 2) * max(scale, 1e-300)
    residual = kirchhoff_residual(E)
    admissible = residual.continuity < tol and residual.flux < tol
    return AdmissibilityReport(bool(admissible), residual.continuity, residual.flux, float(tol))


def pairing_gram(basis):
    """G[a, b] = (xi_a, theta3 xi_b)."""
    twisted = [theta3_apply(xi) for xi in basis]
    return np.array([[l2_inner(xa, tb) for tb in twisted] for xa in basis])


def _antisymmetric_directions(n_edges):
    """Orthonormal vectors a with sum_j a_j = 0."""
    if n_edges < 2:
        return np.zeros((0, n_edges))
    basis = np.eye(n_edges) - 1.0 / n_edges
    q, _ = np.linalg.qr(basis[:, : n_edges - 1])
    return q.T


def root_space_basis(alpha, nl, grid, sector="symmetric", method="auto"):
    """E1, E2 plus, in the full sector, the antisymmetric chains a_j phi' and a_j y phi."""
    vectors = generalized_eigenfunctions(alpha, nl, grid, method)
    basis = [vectors.E1, vectors.E2]
    if sector == "full":
        for a in _antisymmetric_directions(grid.n_edges):
            weights = a[:, None, None]
            basis.append(vectors.E3.replace(vectors.E3.data * weights))
            basis.append(vectors.E4.replace(vectors.E4.data * weights))
    elif sector != "symmetric":
        raise ValueError(f"Unknown sector '{sector}', expected symmetric or full")
    return basis


@dataclass
class RootSpace:
    """Numerical root space of H at zero together with the analytic chain vectors."""

    alpha: float
    sector: str
    analytic_vectors: GeneralizedEigenfunctions
    basis: list
    pairing_gram: np.ndarray
    numeric_vectors: list = field(default_factory=list)
    gap_eigenvalues: list = field(default_factory=list)
    root_space_dim: int = 0
    full_root_space_dim: int = None
    gap_margin: float = float("inf")
    failures: list = field(default_factory=list)

    @property
    def hypothesis_a_consistent(self):
        return self.root_space_dim == 2


def _shift_invert_eigs(operator, shift, k, rng):
    """Eigenpairs of the pencil (matrix, mass) closest to shift."""
    try:
        lu = splu(operator.pencil(shift))
    except RuntimeError as exc:
        raise SolverError(f"Shifted pencil is singular at shift={shift}: {exc}") from exc
    mass = operator.mass
    size = operator.size
    inverse = LinearOperator((size, size), matvec=lambda v: lu.solve(mass @ v), dtype=complex)
    start = rng.standard_normal(size) + 1j * rng.standard_normal(size)
    start[operator.constraint_rows] = 0.0
    k = min(k, size - 2)
    try:
        theta, vectors = eigs(inverse, k=k, which="LM", v0=start, tol=1e-12, maxiter=5000)
        failure = None
    except ArpackNoConvergence as exc:
        theta, vectors = exc.eigenvalues, exc.eigenvectors
        failure = f"shift={shift:.4g}: {exc}"
    keep = np.abs(theta) > 1e-14
    values = shift + 1.0 / theta[keep]
    return values, vectors[:, keep], failure


def _residual(operator, value, vector):
    norm = np.linalg.norm(vector)
    return float(np.linalg.norm(operator.matrix @ vector - value * (operator.mass @ vector)) / norm)


def discrete_root_space(H, sector="symmetric", n_shifts=40, cluster_radius=0.25, gap_fraction=0.95,
                        k_near=8, k_shift=6, rng=None):
    """
    Count eigenvalues of the discretized H in the gap and the cluster at zero.

    Args:
        H: LinearizedOperator with equal edge parameters
        sector: "symmetric" analyses edge-symmetric functions on a one-edge
            grid; "full" works on the whole star and also reports the full
            root-space dimension
        n_shifts: Number of real shifts sampling (-gap_fraction*w, gap_fraction*w)
        cluster_radius: Eigenvalues with |lambda| < cluster_radius*w belong to the root space
        gap_fraction: Part of the gap scanned by the shifts
        k_near: Eigenvalues requested at the shift next to zero
        k_shift: Eigenvalues requested per scan shift
        rng: numpy Generator for the ARPACK start vectors

    Returns:
        RootSpace
    """
    if not H.equal_alpha:
        raise ConfigError("Root-space analysis needs equal edge parameters alpha_j")
    if H.nl is None:
        raise ConfigError("Root-space analysis needs an operator assembled around a soliton")
    rng = rng or np.random.Generator(np.random.PCG64(0))
    alpha, w = H.alpha, H.w
    work = H.on_grid(H.grid.with_edges(1)) if sector == "symmetric" else H
    operator = work.operator

    found = []

    def collect(shift, k):
        values, vectors, failure = _shift_invert_eigs(operator, shift, k, rng)
        if failure:
            logger.warning("Eigen-solve did not fully converge (%s)", failure)
            failures.append(failure)
        earlier = list(found)
        for value, vector in zip(values, vectors.T):
            if abs(value.real) >= w * gap_fraction:
                continue
            if any(abs(value - other) < 1e-7 * max(1.0, abs(value)) for other, _, _ in earlier):
                continue
            found.append((complex(value), vector, _residual(operator, value, vector)))

    failures = []
    collect(0.01 * w, k_near)
    for shift in np.linspace(-gap_fraction * w, gap_fraction * w, n_shifts):
        collect(float(shift), k_shift)

    radius = cluster_radius * w
    near = [item for item in found if abs(item[0]) < radius]
    others = [abs(item[0]) for item in found if abs(item[0]) >= radius]
    basis = root_space_basis(alpha, H.nl, H.grid, sector=sector, method=H.method)
    gram = pairing_gram(basis)
    rs = RootSpace(
        alpha=alpha,
        sector=sector,
        analytic_vectors=generalized_eigenfunctions(alpha, H.nl, H.grid, H.method),
        basis=basis,
        pairing_gram=gram,
        numeric_vectors=[vector for _, vector, _ in near],
        gap_eigenvalues=[(value, residual) for value, _, residual in sorted(found, key=lambda v: abs(v[0]))],
        root_space_dim=len(near),
        gap_margin=min(others) if others else float("inf"),
        failures=failures,
    )
    if sector == "full":
        rs.full_root_space_dim = len(near)
        rs.root_space_dim = _symmetric_count(near, operator)
    logger.info("Root space (%s sector): dim=%d, gap margin=%.4g", sector, rs.root_space_dim, rs.gap_margin)
    return rs


def _symmetric_count(near, operator):
    """Number of near-zero eigenvectors that are (numerically) identical on every edge."""
    grid = operator.grid
    count = 0
    for _, vector, _ in near:
        data = vector.reshape(grid.n_edges, 2, grid.samples_per_edge)
        spread = np.abs(data - data.mean(axis=0, keepdims=True)).max()
        if spread < 1e-3 * np.abs(data).max():
            count += 1
    return count


def project_continuous(f, rs):
    """P_c f = f - sum_a c_a xi_a with (P_c f, theta3 xi_b) = 0 for every root vector."""
    gram = rs.pairing_gram
    if np.linalg.cond(gram) > 1e12:
        raise GramError(f"Root-space pairing matrix is singular (cond={np.linalg.cond(gram):.3e})")
    rhs = np.array([l2_inner(f, theta3_apply(xi)) for xi in rs.basis])
    coefficients = np.linalg.solve(gram.T, rhs)
    data = np.array(f.data)
    for c, xi in zip(coefficients, rs.basis):
        data -= c * xi.data
    return f.replace(data)


@dataclass
class LinearizedTrajectory:
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)

    def norms(self, kind="Lp", p=2.0, m=0):
        return np.array([graph_norm(s, kind=kind, p=p, m=m) for s in self.states])


def evolve_linearized(f0, H, T, dt, record_stride=10, observers=()):
    """
    Crank-Nicolson stepping of i f_t = H f with the vertex rows of H.

    Args:
        f0: Spinor GraphFunction continuous at the vertex
        H: LinearizedOperator (absorbing far boundary if assembled with one)
        T: Final time; negative values run backwards
        dt: Step size magnitude
        record_stride: Steps between recorded states
        observers: Callables observer(t, f) at recorded times

    Returns:
        LinearizedTrajectory
    """
    if not f0.is_spinor:
        raise ValueError("evolve_linearized expects a spinor GraphFunction")
    scale = max(1.0, float(np.abs(f0.data).max()))
    if kirchhoff_residual(f0).continuity > 1e-6 * scale:
        raise KirchhoffConditionError("Initial data for the linearized flow is not continuous at the vertex")
    n_steps = int(np.ceil(abs(T) / dt - 1e-9))
    trajectory = LinearizedTrajectory([0.0], [f0])
    if n_steps == 0:
        return trajectory
    step = T / n_steps
    stepper = CrankNicolsonStepper(H.operator, step)
    vector = f0.flat()
    for n in range(1, n_steps + 1):
        vector = stepper.step_flat(vector)
        if n % record_stride == 0 or n == n_steps:
            state = GraphFunction.from_flat(f0.grid, 2, vector)
            trajectory.times.append(n * step)
            trajectory.states.append(state)
            for observer in observers:
                observer(n * step, state)
    return trajectory


def flow(f, H, t, dt):
    """e^{-iHt} f by Crank-Nicolson."""
    return evolve_linearized(f, H, t, dt, record_stride=10 ** 9).states[-1]


def free_flow(f, J0, w, t, dt):
    """e^{-iJt} f = T_{-wt} e^{-iJ0 t} f for equal edge parameters."""
    return phase_transform(flow(f, J0, t, dt), -w * t)


@dataclass
class ScatteringLimit:
    checkpoints: list
    increments: list
    defects: list
    weighted_norms: list
    f_plus: GraphFunction
    final_defect: float
    decay_observed: bool
    tags: list = field(default_factory=list)


def scattering_limit_check(f, H, T_max, checkpoints=None, dt=0.01):
    """
    Compare e^{-iHt} f with the free flow of the extracted scattering state.

    h(t_m) = e^{iJ t_m} e^{-iH t_m} f is computed at every checkpoint; f_plus
    is h at the last checkpoint. Increments ||h(t_{m+1}) - h(t_m)||_2 and the
    defects ||e^{-iH t_m} f - e^{-iJ t_m} f_plus||_2 are reported, the latter
    through T_{-wt} e^{-iJ0 t}.

    Args:
        f: Spinor GraphFunction (usually P_c of a bump)
        H: LinearizedOperator with a Dirichlet far boundary and equal alpha
        T_max: Last checkpoint
        checkpoints: Increasing times, default eight equispaced up to T_max
        dt: Step size

    Returns:
        ScatteringLimit
    """
    if H.boundary.kind != "dirichlet":
        raise ConfigError("scattering_limit_check needs a Dirichlet far boundary for the backward free flow")
    if checkpoints is None:
        checkpoints = list(np.linspace(T_max / 8.0, T_max, 8))
    checkpoints = [float(t) for t in checkpoints]
    if any(b <= a for a, b in zip(checkpoints, checkpoints[1:])):
        raise ValueError(f"Checkpoints must be strictly increasing, got {checkpoints}")
    w = H.w
    J = H.free_part()
    J0 = assemble_J0(H.grid, vertex=H.vertex)

    states, pulled_back, weighted = [], [], []
    current, now = f, 0.0
    for t in checkpoints:
        current = flow(current, H, t - now, dt)
        now = t
        states.append(current)
        weighted.append(graph_norm(current, kind="weighted", m=2))
        pulled_back.append(flow(current, J, -t, dt))

    increments = [graph_norm(b - a) for a, b in zip(pulled_back, pulled_back[1:])]
    f_plus = pulled_back[-1]
    defects = [graph_norm(state - free_flow(f_plus, J0, w, t, dt)) for t, state in zip(checkpoints, states)]
    decay_observed = all(b < a for a, b in zip(weighted, weighted[1:]))
    tags = []
    if not decay_observed:
        tags.append("weighted-decay-not-observed")
        warnings.warn("Weighted decay of e^{-iHt} f was not observed; the scattering limit may not exist",
                      stacklevel=2)
    return ScatteringLimit(checkpoints, increments, defects, weighted, f_plus, defects[-1],
                           decay_observed, tags)


def spectrum_edges(H, rng=None, k=6):
    """Numerical edges of the continuous spectrum nearest to +w and -w."""
    rng = rng or np.random.Generator(np.random.PCG64(0))
    w = H.w
    edges = []
    for sign in (1.0, -1.0):
        values, _, _ = _shift_invert_eigs(H.operator, sign * 1.02 * w, k, rng)
        real = values.real[np.abs(values.imag) < 1e-6 * max(1.0, w)]
        outside = real[sign * real >= 0.9 * w]
        edges.append(float(sign * np.abs(outside).min()) if outside.size else float("nan"))
    return tuple(edges)
