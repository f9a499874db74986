import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from errors import ConfigError, GridError
from graph_core import (BoundarySpec, GraphFunction, assemble_graph_operator, build_star_grid,
                        enforce_kirchhoff, graph_norm, kirchhoff_residual, l2_inner, sample_on_grid,
                        to_spinor, weight_profile)

seeds = st.integers(min_value=0, max_value=2 ** 32 - 1)
scalars = st.complex_numbers(max_magnitude=1e3, allow_nan=False, allow_infinity=False)


def random_function(seed, grid=None, components=1):
    """Random complex samples on a small star"""
    grid = grid or build_star_grid(3, 5.0, 51)
    rng = np.random.Generator(np.random.PCG64(seed))
    shape = (grid.n_edges, components, grid.samples_per_edge)
    return GraphFunction(grid, rng.normal(size=shape) + 1j * rng.normal(size=shape))


class TestStarGrid:
    """Grid construction and validation"""

    def test_spacing_and_nodes(self):
        """Spacing is L/(M-1) and the nodes run from the vertex to L"""
        grid = build_star_grid(3, 40.0, 401)
        assert grid.spacing == pytest.approx(0.1), f"Expected spacing 0.1, got {grid.spacing}"
        assert grid.x[0] == 0.0 and grid.x[-1] == pytest.approx(40.0)

    @pytest.mark.parametrize("args", [(0, 10.0, 101), (3, 10.0, 4), (3, -1.0, 101), (2.5, 10.0, 101)])
    def test_invalid_grids_raise(self, args):
        """Invalid edge counts, sample counts and lengths raise GridError"""
        with pytest.raises(GridError):
            build_star_grid(*args)

    def test_grid_error_is_config_error(self):
        """GridError belongs to the config family (exit code 2)"""
        with pytest.raises(ConfigError):
            build_star_grid(0, 1.0, 10)

    def test_with_edges_keeps_discretization(self):
        """with_edges changes only the edge count"""
        grid = build_star_grid(3, 12.0, 61).with_edges(1)
        assert (grid.n_edges, grid.edge_length, grid.samples_per_edge) == (1, 12.0, 61)


class TestGraphFunction:
    """Layout, arithmetic and spinor helpers"""

    def test_shape_is_validated(self, coarse_grid):
        """Data with the wrong sample count is rejected"""
        with pytest.raises(ValueError):
            GraphFunction(coarse_grid, np.zeros((3, 1, 60)))

    def test_two_dimensional_data_becomes_scalar(self, coarse_grid):
        """(N, M) data is read as a scalar function"""
        u = GraphFunction(coarse_grid, np.ones((3, 61)))
        assert u.components == 1 and not u.is_spinor

    def test_data_is_read_only(self, coarse_grid):
        """Sample arrays cannot be modified in place"""
        u = GraphFunction.zeros(coarse_grid)
        with pytest.raises(ValueError):
            u.data[0, 0, 0] = 1.0

    def test_flat_round_trip(self):
        """from_flat inverts flat with the (edge, component, sample) ordering"""
        u = random_function(3, components=2)
        v = GraphFunction.from_flat(u.grid, 2, u.flat())
        assert np.array_equal(u.data, v.data), "Flattening must be row-major and lossless"
        assert u.flat()[u.grid.samples_per_edge] == u.data[0, 1, 0], "Second block must be component 2 of edge 1"

    def test_to_spinor_stacks_conjugate(self):
        """to_spinor gives (u, conj u)"""
        u = random_function(5)
        s = to_spinor(u)
        assert s.is_spinor
        assert np.array_equal(s.data[:, 1], np.conj(u.data[:, 0]))

    def test_mismatched_functions_do_not_add(self, coarse_grid):
        """Adding scalar and spinor functions raises"""
        with pytest.raises(ValueError):
            GraphFunction.zeros(coarse_grid) + GraphFunction.zeros(coarse_grid, 2)

    def test_sample_on_grid_pairs_give_spinor(self, coarse_grid):
        """A pair of formulas per edge samples a spinor function"""
        u = sample_on_grid([(1.0, np.cos)] * 3, coarse_grid)
        assert u.is_spinor
        assert np.allclose(u.data[2, 1], np.cos(coarse_grid.x))


class TestNorms:
    """Inner products and norm conventions"""

    def test_constant_l2_norm_sums_edges(self):
        """||1||_2 sums the per-edge norms sqrt(L)"""
        grid = build_star_grid(3, 4.0, 41)
        u = GraphFunction(grid, np.ones((3, 1, 41)))
        assert graph_norm(u) == pytest.approx(3 * 2.0), f"Expected 6, got {graph_norm(u)}"
        assert graph_norm(u, edge_sum="lp") == pytest.approx(np.sqrt(12.0))

    def test_exponential_l2_norm(self):
        """||e^-x||_2 on three edges is 3 / sqrt(2)"""
        u = sample_on_grid(lambda x: np.exp(-x), build_star_grid(3, 20.0, 2001))
        assert graph_norm(u) == pytest.approx(2.12132, rel=1e-4), f"Got {graph_norm(u)}"

    def test_sup_norm_is_max_over_edges(self, coarse_grid):
        """The default p = inf combination is the sup over edges"""
        data = np.zeros((3, 1, 61))
        data[1, 0, 10] = 2.0
        data[2, 0, 5] = -5.0
        u = GraphFunction(coarse_grid, data)
        assert graph_norm(u, p=np.inf) == 5.0
        assert graph_norm(u, p=np.inf, edge_sum="sum") == 7.0

    def test_weighted_with_zero_exponent_is_lp(self):
        """rho^0 = 1 so the weighted norm reduces to Lp"""
        u = random_function(11)
        assert graph_norm(u, kind="weighted", m=0) == pytest.approx(graph_norm(u))

    def test_weight_profile_values(self, coarse_grid):
        """rho(x)^m = (1 + x)^-m"""
        w = weight_profile(coarse_grid, 2)
        assert w.samples[0] == 1.0
        assert w.samples[-1] == pytest.approx(1.0 / 13.0 ** 2)

    def test_sobolev_order_zero_matches_l2(self):
        """H^0 equals the L2 norm"""
        u = random_function(7)
        assert graph_norm(u, kind="Hm", m=0) == pytest.approx(graph_norm(u))

    def test_invalid_exponent_and_kind(self):
        """p < 1 and unknown kinds are rejected"""
        u = random_function(1)
        with pytest.raises(ValueError):
            graph_norm(u, p=0.5)
        with pytest.raises(ValueError):
            graph_norm(u, kind="Besov")

    @given(seed=seeds, scale=scalars)
    def test_norm_homogeneity(self, seed, scale):
        """||c u|| = |c| ||u|| for every norm kind"""
        u = random_function(seed)
        for kind, p in (("Lp", 2.0), ("Lp", np.inf), ("weighted", 2.0)):
            expected = abs(scale) * graph_norm(u, kind=kind, p=p, m=1)
            got = graph_norm(u * scale, kind=kind, p=p, m=1)
            assert got == pytest.approx(expected, rel=1e-10, abs=1e-12), f"{kind} p={p}: {got} vs {expected}"

    @given(a=seeds, b=seeds)
    def test_triangle_inequality(self, a, b):
        """||u + v|| <= ||u|| + ||v||"""
        u, v = random_function(a, components=2), random_function(b, components=2)
        for p in (1.0, 2.0, np.inf):
            assert graph_norm(u + v, p=p) <= graph_norm(u, p=p) + graph_norm(v, p=p) + 1e-12

    @given(a=seeds, b=seeds)
    def test_inner_product_conjugate_symmetry(self, a, b):
        """(u, v) = conj (v, u)"""
        u, v = random_function(a), random_function(b)
        assert l2_inner(u, v) == pytest.approx(np.conj(l2_inner(v, u)), rel=1e-12, abs=1e-12)

    @given(seed=seeds)
    def test_inner_product_matches_norm(self, seed):
        """(u, u) = sum of squared edge norms"""
        u = random_function(seed)
        assert l2_inner(u, u).real == pytest.approx(graph_norm(u, edge_sum="lp") ** 2, rel=1e-10)


class TestKirchhoff:
    """Vertex residuals and the discrete projection"""

    @given(seed=seeds)
    def test_enforce_gives_zero_residual(self, seed):
        """enforce_kirchhoff makes vertex values equal and the three-point flux vanish"""
        residual = kirchhoff_residual(enforce_kirchhoff(random_function(seed, components=2)))
        assert residual.continuity == 0.0, f"Continuity spread {residual.continuity}"
        assert residual.flux < 1e-10, f"Flux defect {residual.flux}"

    def test_enforce_is_idempotent(self):
        """Projecting twice changes nothing"""
        once = enforce_kirchhoff(random_function(2))
        twice = enforce_kirchhoff(once)
        assert np.allclose(once.data, twice.data, atol=1e-14)

    def test_random_data_violates_condition(self):
        """Independent random edges do not satisfy the vertex rows"""
        residual = kirchhoff_residual(random_function(4))
        assert residual.continuity > 1e-3

    def test_linear_edges(self, coarse_grid):
        """u_j = x is continuous with outgoing derivatives summing to N = 3"""
        residual = kirchhoff_residual(sample_on_grid(lambda x: x, coarse_grid))
        assert residual.continuity == 0.0
        assert residual.flux == pytest.approx(3.0, rel=1e-12), f"Flux {residual.flux}"

    def test_single_edge_vertex_value(self, coarse_grid):
        """u_1(0) = 1 with every other sample zero has continuity spread 1"""
        data = np.zeros((3, 1, coarse_grid.samples_per_edge))
        data[0, 0, 0] = 1.0
        assert kirchhoff_residual(GraphFunction(coarse_grid, data)).continuity == 1.0


class TestBoundarySpec:
    """Far-boundary settings"""

    def test_unknown_kind_is_config_error(self):
        """Unknown boundary kinds raise ConfigError"""
        with pytest.raises(ConfigError):
            BoundarySpec(kind="periodic")

    def test_width_must_be_fraction(self):
        """Absorbing width outside (0, 1) is rejected"""
        with pytest.raises(ConfigError):
            BoundarySpec(kind="absorbing", width=1.5)

    def test_ramp_profile(self, small_grid):
        """Zero before the layer, quadratic inside, strength at x = L"""
        damping = BoundarySpec(kind="absorbing", width=0.1, strength=2.0).damping(small_grid)
        assert np.all(damping[small_grid.x < 17.9] == 0.0)
        assert damping[-1] == pytest.approx(2.0)
        assert damping[190] == pytest.approx(0.5)

    def test_dirichlet_has_no_damping(self, small_grid):
        """Dirichlet boundaries add no potential"""
        assert not BoundarySpec().damping(small_grid).any()


class TestOperatorAssembly:
    """Sparse stencil and vertex rows"""

    def test_second_difference_of_quadratic(self, coarse_grid):
        """-d^2/dx^2 x^2 = -2 at every node, one-sided rows included"""
        op = assemble_graph_operator(coarse_grid, 1.0)
        u = sample_on_grid(lambda x: x ** 2, coarse_grid)
        out = op.apply(u).data
        assert np.allclose(out, -2.0, atol=1e-8), f"Max deviation {np.abs(out + 2.0).max()}"

    def test_constraint_row_count(self, coarse_grid):
        """N continuity/flux rows plus N far rows per component"""
        op = assemble_graph_operator(coarse_grid, np.diag([1.0, -1.0]))
        assert len(op.constraint_rows) == 2 * 2 * coarse_grid.n_edges
        assert not op.interior_mask()[op.constraint_rows].any()

    def test_vertex_rows_vanish_on_kirchhoff_data(self, coarse_grid):
        """Constraint rows of the vertex annihilate data satisfying the discrete condition"""
        u = enforce_kirchhoff(sample_on_grid(np.cos, coarse_grid))
        out = assemble_graph_operator(coarse_grid, 1.0).matrix @ u.flat()
        vertex_rows = [j * coarse_grid.samples_per_edge for j in range(coarse_grid.n_edges)]
        assert np.abs(out[vertex_rows]).max() < 1e-10, f"Vertex rows {out[vertex_rows]}"

    def test_far_factor_row(self, coarse_grid):
        """far_factors impose u[M-1] = q u[M-2]"""
        op = assemble_graph_operator(coarse_grid, 1.0, far_factors=[0.5])
        last = coarse_grid.samples_per_edge - 1
        row = op.matrix[last].toarray().ravel()
        assert row[last] == 1.0 and row[last - 1] == -0.5

    def test_potential_shape_checked(self, coarse_grid):
        """A potential with the wrong shape is rejected"""
        with pytest.raises(ValueError):
            assemble_graph_operator(coarse_grid, 1.0, potential=np.zeros((3, 1, 1, 10)))

    def test_unknown_vertex_condition(self, coarse_grid):
        """Only kirchhoff and dirichlet vertex rows exist"""
        with pytest.raises(ValueError):
            assemble_graph_operator(coarse_grid, 1.0, vertex="delta")

    def test_mass_zeroes_constraint_rows(self, coarse_grid):
        """The mass matrix is the identity off the constraint rows"""
        op = assemble_graph_operator(coarse_grid, 1.0)
        diagonal = op.mass.diagonal()
        assert np.all(diagonal[op.constraint_rows] == 0)
        assert np.all(diagonal[op.interior_mask()] == 1)


def edge_gaussians(grid, slopes):
    """(1 + s_j x) e^{-x^2} on edge j, continuous at the vertex, and its derivative"""
    values = [lambda x, s=s: (1.0 + s * x) * np.exp(-x * x) for s in slopes]
    derivatives = [lambda x, s=s: (s - 2.0 * x * (1.0 + s * x)) * np.exp(-x * x) for s in slopes]
    return sample_on_grid(values, grid), sample_on_grid(derivatives, grid)


class TestGreenIdentity:
    """(-f'', g) = (f', g') + g(0) sum_j f_j'(0) for the assembled stencil"""

    GRID = build_star_grid(3, 10.0, 2001)

    def test_kirchhoff_data_has_no_vertex_term(self):
        """Outgoing slopes summing to zero give (-f'', g) = (f', g')"""
        op = assemble_graph_operator(self.GRID, 1.0)
        f, df = edge_gaussians(self.GRID, (1.0, 2.0, -3.0))
        g, dg = edge_gaussians(self.GRID, (0.5, -1.0, 2.0))
        lhs = l2_inner(op.apply(f), g)
        rhs = l2_inner(df, dg)
        assert abs(lhs - rhs) < 1e-3 * abs(rhs), f"(-f'', g) = {lhs}, (f', g') = {rhs}"

    def test_flux_defect_appears_at_the_vertex(self):
        """Equal slopes 1 on three edges leave the vertex term g(0) * 3"""
        op = assemble_graph_operator(self.GRID, 1.0)
        f, df = edge_gaussians(self.GRID, (1.0, 1.0, 1.0))
        g, dg = edge_gaussians(self.GRID, (0.5, -1.0, 2.0))
        defect = l2_inner(op.apply(f), g) - l2_inner(df, dg)
        assert defect == pytest.approx(3.0, abs=1e-2), f"Vertex term {defect}"
