"""
Star Graph Core Module

Discretized star graphs, complex graph functions (scalar and spinor),
norms and inner products, Kirchhoff residuals, and the sparse assembly of
vertex-coupled operators that the evolution, linearized and resolvent
modules build on.

Unknowns are flattened row-major as (edge, component, sample). Vertex
samples are algebraic: operator rows at the vertex are replaced by
continuity rows and one three-point flux row per component.
"""

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import sparse
from scipy.integrate import trapezoid

from errors import ConfigError, GridError

logger = logging.getLogger(__name__)

MIN_SAMPLES = 8


@dataclass(frozen=True)
class StarGrid:
    """N half-line edges truncated to [0, L], each with M uniform samples."""

    n_edges: int
    edge_length: float
    samples_per_edge: int

    @property
    def spacing(self):
        return self.edge_length / (self.samples_per_edge - 1)

    @property
    def x(self):
        return np.linspace(0.0, self.edge_length, self.samples_per_edge)

    @property
    def shape(self):
        return (self.n_edges, self.samples_per_edge)

    def with_edges(self, n_edges):
        """Same edge discretization on a star with a different edge count."""
        return build_star_grid(n_edges, self.edge_length, self.samples_per_edge)


def build_star_grid(n_edges, edge_length, samples_per_edge):
    """
    Build a uniform star grid.

    Args:
        n_edges: Number of half-line edges N (at least 1)
        edge_length: Truncation length L of every edge
        samples_per_edge: Samples M per edge including the vertex (at least 8)

    Returns:
        StarGrid with spacing h = L/(M-1)
    """
    if int(n_edges) != n_edges or n_edges < 1:
        raise GridError(f"Star grid needs at least one edge, got n_edges={n_edges}")
    if int(samples_per_edge) != samples_per_edge or samples_per_edge < MIN_SAMPLES:
        raise GridError(
            f"Star grid needs at least {MIN_SAMPLES} samples per edge, got {samples_per_edge}"
        )
    if not np.isfinite(edge_length) or edge_length <= 0:
        raise GridError(f"Edge length must be positive, got {edge_length}")
    return StarGrid(int(n_edges), float(edge_length), int(samples_per_edge))


@dataclass(frozen=True, eq=False)
class GraphFunction:
    """Complex samples of shape (N, components, M) on a star grid.

    The spinor layout (components=2) stacks (u_{1,1}, u_{1,2}, ..., u_{N,1},
    u_{N,2}) edge by edge. The sample array is read-only.
    """

    grid: StarGrid
    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=complex)
        if data.ndim == 2:
            data = data[:, None, :]
        expected = (self.grid.n_edges, self.grid.samples_per_edge)
        if data.ndim != 3 or (data.shape[0], data.shape[2]) != expected:
            raise ValueError(
                f"GraphFunction data must have shape (N, C, M) = "
                f"({expected[0]}, C, {expected[1]}), got {data.shape}"
            )
        if data.shape[1] not in (1, 2):
            raise ValueError(f"GraphFunction must have 1 or 2 components, got {data.shape[1]}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def components(self):
        return self.data.shape[1]

    @property
    def is_spinor(self):
        return self.components == 2

    @classmethod
    def zeros(cls, grid, components=1):
        return cls(grid, np.zeros((grid.n_edges, components, grid.samples_per_edge), dtype=complex))

    @classmethod
    def from_flat(cls, grid, components, vector):
        shape = (grid.n_edges, components, grid.samples_per_edge)
        return cls(grid, np.asarray(vector, dtype=complex).reshape(shape))

    def flat(self):
        """Row-major copy of the samples as a 1-D vector."""
        return self.data.reshape(-1).copy()

    def replace(self, data):
        return GraphFunction(self.grid, data)

    def conj(self):
        return self.replace(np.conj(self.data))

    def component(self, c):
        """Scalar GraphFunction holding spinor component c."""
        return GraphFunction(self.grid, self.data[:, c:c + 1, :])

    def _check_compatible(self, other):
        if self.grid != other.grid or self.components != other.components:
            raise ValueError(
                f"GraphFunctions do not match: {self.grid}/{self.components} "
                f"vs {other.grid}/{other.components}"
            )

    def __add__(self, other):
        self._check_compatible(other)
        return self.replace(self.data + other.data)

    def __sub__(self, other):
        self._check_compatible(other)
        return self.replace(self.data - other.data)

    def __mul__(self, scalar):
        return self.replace(self.data * scalar)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self.replace(self.data / scalar)

    def __neg__(self):
        return self.replace(-self.data)


def to_spinor(u):
    """Stack a scalar function with its conjugate: u -> (u, conj u) per edge."""
    if u.components != 1:
        raise ValueError(f"to_spinor expects a scalar GraphFunction, got {u.components} components")
    return GraphFunction(u.grid, np.concatenate([u.data, np.conj(u.data)], axis=1))


@dataclass(frozen=True, eq=False)
class WeightProfile:
    """Samples of rho(x)^m with rho(x) = (1+|x|)^(-1)."""

    exponent: int
    samples: np.ndarray


def weight_profile(grid, m):
    return WeightProfile(int(m), (1.0 + np.abs(grid.x)) ** (-float(m)))


def l2_inner(u, v):
    """(u, v) = sum over edges and components of the trapezoid integral of u conj(v)."""
    u._check_compatible(v)
    integrand = u.data * np.conj(v.data)
    return complex(trapezoid(integrand, dx=u.grid.spacing, axis=-1).sum())


def _edge_lp(modulus, p, h):
    if np.isinf(p):
        return modulus.max(axis=-1)
    return trapezoid(modulus ** p, dx=h, axis=-1) ** (1.0 / p)


def _combine_edges(per_edge, p, edge_sum):
    if edge_sum == "edgewise":
        return float(per_edge.max() if np.isinf(p) else per_edge.sum())
    if edge_sum == "sum":
        return float(per_edge.sum())
    if edge_sum == "lp":
        if np.isinf(p):
            return float(per_edge.max())
        return float((per_edge ** p).sum() ** (1.0 / p))
    raise ValueError(f"Unknown edge combination '{edge_sum}', expected edgewise, sum or lp")


def graph_norm(u, kind="Lp", p=2.0, m=0, edge_sum="edgewise"):
    """
    Norm of a graph function as a combination of per-edge norms.

    Args:
        u: GraphFunction (spinor components enter through the pointwise
            Euclidean modulus)
        kind: "Lp", "Hm" or "weighted"
        p: Exponent in [1, inf] for Lp and weighted
        m: Derivative order for Hm (0, 1, 2) or weight exponent for weighted
            (rho^m multiplies u)
        edge_sum: "edgewise" sums edge norms (sup over edges when p is inf),
            "sum" always sums, "lp" takes the l^p combination

    Returns:
        float norm value
    """
    p = float(p)
    if not (p >= 1.0):
        raise ValueError(f"Norm exponent must lie in [1, inf], got p={p}")
    h = u.grid.spacing
    if kind == "Lp":
        modulus = np.sqrt((np.abs(u.data) ** 2).sum(axis=1))
        return _combine_edges(_edge_lp(modulus, p, h), p, edge_sum)
    if kind == "weighted":
        weight = weight_profile(u.grid, m).samples
        modulus = np.sqrt((np.abs(u.data) ** 2).sum(axis=1)) * weight
        return _combine_edges(_edge_lp(modulus, p, h), p, edge_sum)
    if kind == "Hm":
        if m not in (0, 1, 2):
            raise ValueError(f"Sobolev order must be 0, 1 or 2, got m={m}")
        total = np.zeros(u.grid.n_edges)
        derivative = u.data
        for order in range(m + 1):
            if order > 0:
                derivative = np.gradient(derivative, h, axis=-1, edge_order=2)
            total += trapezoid((np.abs(derivative) ** 2).sum(axis=1), dx=h, axis=-1)
        return _combine_edges(np.sqrt(total), 2.0, "sum" if edge_sum == "edgewise" else edge_sum)
    raise ValueError(f"Unsupported norm kind '{kind}', expected Lp, Hm or weighted")


def vertex_values(u):
    """Vertex samples, shape (N, C)."""
    return u.data[:, :, 0]


def vertex_derivatives(u):
    """Three-point one-sided derivatives at the vertex, shape (N, C)."""
    d = u.data
    return (-3.0 * d[:, :, 0] + 4.0 * d[:, :, 1] - d[:, :, 2]) / (2.0 * u.grid.spacing)


class KirchhoffResidual(NamedTuple):
    continuity: float
    flux: float


def kirchhoff_residual(u):
    """Continuity spread and flux defect of u at the vertex, max over components."""
    values = vertex_values(u)
    spread = np.abs(values[:, None, :] - values[None, :, :])
    continuity = float(spread.max()) if spread.size else 0.0
    flux = float(np.abs(vertex_derivatives(u).sum(axis=0)).max())
    return KirchhoffResidual(continuity, flux)


def enforce_kirchhoff(u):
    """Reset the shared vertex value so the three-point flux vanishes exactly."""
    d = np.array(u.data)
    n_edges = u.grid.n_edges
    shared = (4.0 * d[:, :, 1] - d[:, :, 2]).sum(axis=0) / (3.0 * n_edges)
    d[:, :, 0] = shared[None, :]
    return u.replace(d)


def sample_on_grid(edge_formulas, grid):
    """
    Evaluate formulas at the grid nodes.

    Args:
        edge_formulas: A number or callable applied on every edge, or a
            sequence with one entry per edge. An entry may itself be a pair
            of numbers/callables, which yields a spinor function.
        grid: StarGrid

    Returns:
        GraphFunction with the sampled values
    """
    x = grid.x

    def evaluate(formula):
        if callable(formula):
            return np.broadcast_to(np.asarray(formula(x), dtype=complex), x.shape)
        return np.full(x.shape, complex(formula))

    if callable(edge_formulas) or np.isscalar(edge_formulas):
        values = evaluate(edge_formulas)
        return GraphFunction(grid, np.tile(values, (grid.n_edges, 1, 1)))

    entries = list(edge_formulas)
    if len(entries) != grid.n_edges:
        raise ValueError(f"Need one formula per edge ({grid.n_edges}), got {len(entries)}")
    spinor = any(isinstance(e, (list, tuple)) for e in entries)
    rows = []
    for entry in entries:
        if spinor:
            if not isinstance(entry, (list, tuple)) or len(entry) != 2:
                raise ValueError("Spinor sampling needs a pair of formulas on every edge")
            rows.append([evaluate(entry[0]), evaluate(entry[1])])
        else:
            rows.append([evaluate(entry)])
    return GraphFunction(grid, np.array(rows))


@dataclass(frozen=True)
class BoundarySpec:
    """Far-boundary treatment: homogeneous Dirichlet or an absorbing ramp."""

    kind: str = "dirichlet"
    width: float = 0.1
    strength: float = 1.0

    def __post_init__(self):
        if self.kind not in ("dirichlet", "absorbing"):
            raise ConfigError(f"Boundary must be dirichlet or absorbing, got '{self.kind}'")
        if not 0.0 < self.width < 1.0:
            raise ConfigError(f"Absorbing width must be a fraction in (0, 1), got {self.width}")
        if self.strength < 0:
            raise ConfigError(f"Absorbing strength must be nonnegative, got {self.strength}")

    def damping(self, grid):
        """Quadratic ramp W(x) over the last width*L of each edge (zero for Dirichlet)."""
        x = grid.x
        if self.kind == "dirichlet":
            return np.zeros_like(x)
        start = grid.edge_length * (1.0 - self.width)
        ramp = np.clip((x - start) / (grid.edge_length - start), 0.0, None)
        return self.strength * ramp ** 2


def _second_difference(grid):
    """Matrix of -d^2/dx^2 on one edge; one-sided four-point rows at both ends."""
    m = grid.samples_per_edge
    h2 = grid.spacing ** 2
    main = np.full(m, 2.0)
    off = np.full(m - 1, -1.0)
    matrix = sparse.diags([off, main, off], [-1, 0, 1], shape=(m, m), format="lil")
    matrix[0, :4] = [-2.0, 5.0, -4.0, 1.0]
    matrix[m - 1, m - 4:] = [1.0, -4.0, 5.0, -2.0]
    return matrix.tocsr() / h2


def node_index(grid, components, edge, component, sample):
    return (edge * components + component) * grid.samples_per_edge + sample


@dataclass(frozen=True, eq=False)
class GraphOperator:
    """Sparse operator on flattened graph functions.

    `stencil` evaluates the differential expression at every node; `matrix`
    has the vertex and far-boundary rows replaced by constraint rows and
    `mass` is the identity with zeros on those rows, so time stepping and
    eigenproblems work with the pencil (matrix, mass).
    """

    grid: StarGrid
    components: int
    stencil: sparse.csr_matrix
    matrix: sparse.csr_matrix
    mass: sparse.csr_matrix
    constraint_rows: np.ndarray

    @property
    def size(self):
        return self.matrix.shape[0]

    def apply(self, u):
        if u.grid != self.grid or u.components != self.components:
            raise ValueError("Operator and GraphFunction live on different grids or layouts")
        return GraphFunction.from_flat(self.grid, self.components, self.stencil @ u.flat())

    def pencil(self, shift):
        """matrix - shift*mass in CSC form, ready for factorization."""
        return (self.matrix - shift * self.mass).tocsc()

    def interior_mask(self):
        mask = np.ones(self.size, dtype=bool)
        mask[self.constraint_rows] = False
        return mask


def assemble_graph_operator(grid, second_order, potential=None, vertex="kirchhoff", far_factors=None):
    """
    Assemble sum_j [s (-d^2/dx^2) + P_j(x)] on a star with vertex coupling.

    Args:
        grid: StarGrid
        second_order: (C, C) matrix s multiplying -d^2/dx^2 componentwise
        potential: Optional array (N, C, C, M) of pointwise coupling matrices
        vertex: "kirchhoff" (continuity plus three-point zero flux) or
            "dirichlet" (u=0 at the vertex)
        far_factors: None for Dirichlet at x=L, otherwise one complex factor
            q_c per component imposing u[M-1] = q_c u[M-2]

    Returns:
        GraphOperator
    """
    second_order = np.atleast_2d(np.asarray(second_order, dtype=complex))
    components = second_order.shape[0]
    n, m, h = grid.n_edges, grid.samples_per_edge, grid.spacing
    size = n * components * m

    d2 = _second_difference(grid)
    stencil = sparse.kron(sparse.identity(n), sparse.kron(second_order, d2), format="csr")
    if potential is not None:
        potential = np.asarray(potential, dtype=complex)
        if potential.shape != (n, components, components, m):
            raise ValueError(
                f"Potential must have shape {(n, components, components, m)}, got {potential.shape}"
            )
        blocks = [
            sparse.bmat([[sparse.diags(potential[j, a, b]) for b in range(components)]
                         for a in range(components)])
            for j in range(n)
        ]
        stencil = (stencil + sparse.block_diag(blocks)).tocsr()

    rows, cols, vals = [], [], []
    constrained = []

    def add(row, col, value):
        rows.append(row)
        cols.append(col)
        vals.append(value)

    for c in range(components):
        first = node_index(grid, components, 0, c, 0)
        if vertex == "kirchhoff":
            for j in range(n):
                base = node_index(grid, components, j, c, 0)
                add(first, base, -3.0 / (2.0 * h))
                add(first, base + 1, 4.0 / (2.0 * h))
                add(first, base + 2, -1.0 / (2.0 * h))
            constrained.append(first)
            for j in range(1, n):
                row = node_index(grid, components, j, c, 0)
                add(row, row, 1.0)
                add(row, first, -1.0)
                constrained.append(row)
        elif vertex == "dirichlet":
            for j in range(n):
                row = node_index(grid, components, j, c, 0)
                add(row, row, 1.0)
                constrained.append(row)
        else:
            raise ValueError(f"Unknown vertex condition '{vertex}', expected kirchhoff or dirichlet")

        factor = None if far_factors is None else complex(far_factors[c])
        for j in range(n):
            row = node_index(grid, components, j, c, m - 1)
            add(row, row, 1.0)
            if factor is not None:
                add(row, row - 1, -factor)
            constrained.append(row)

    constrained = np.array(sorted(constrained))
    keep = np.ones(size)
    keep[constrained] = 0.0
    keep_matrix = sparse.diags(keep)
    constraints = sparse.csr_matrix((vals, (rows, cols)), shape=(size, size), dtype=complex)
    matrix = (keep_matrix @ stencil + constraints).tocsr()
    logger.debug("Assembled %d x %d graph operator (%s vertex)", size, size, vertex)
    return GraphOperator(grid, components, stencil, matrix, keep_matrix.tocsr().astype(complex), constrained)
