from dataclasses import replace
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from errors import ConfigError, GramError, KirchhoffConditionError
from graph_core import BoundarySpec, GraphFunction, build_star_grid, graph_norm, l2_inner, sample_on_grid
from linearized import (assemble_H, assemble_J, assemble_J0, discrete_root_space, evolve_linearized,
                        flow, free_flow, generalized_eigenfunctions, kirchhoff_admissible, pairing_gram,
                        pauli_like, phase_transform, project_continuous, pseudo_symmetry_defect,
                        root_space_basis, scattering_limit_check, theta3_apply)
from modulation import analytic_root_space
from soliton import make_nonlinearity

angles = st.floats(min_value=-10.0, max_value=10.0, allow_nan=False)
seeds = st.integers(min_value=0, max_value=2 ** 32 - 1)

GRID = build_star_grid(3, 20.0, 201)


def cubic_nl():
    return make_nonlinearity([[1, -1.0]], allow_low_degree=True)


@lru_cache(maxsize=None)
def phase_scaling_space():
    """Root space spanned by E1 and E2 without an eigen-solve"""
    return analytic_root_space(2.0, cubic_nl(), GRID)


def smooth_spinor(grid, seed, width=1.5):
    """Random complex multiples of Gaussians, vanishing at the vertex"""
    rng = np.random.Generator(np.random.PCG64(seed))
    x = grid.x
    data = np.zeros((grid.n_edges, 2, grid.samples_per_edge), dtype=complex)
    for j in range(grid.n_edges):
        for c in range(2):
            center = rng.uniform(5.0, 8.0)
            amplitude = complex(rng.normal(), rng.normal())
            data[j, c] = amplitude * np.exp(-((x - center) / width) ** 2) * (1.0 - np.exp(-x ** 2))
    return GraphFunction(grid, data)


class TestMatrices:
    """theta matrices and the phase transformation"""

    def test_pauli_like(self):
        """theta2 = [[0, -i], [i, 0]] and theta3 = diag(1, -1)"""
        theta2, theta3 = pauli_like()
        assert np.array_equal(theta2, [[0, -1j], [1j, 0]])
        assert np.array_equal(theta3, np.diag([1.0, -1.0]))

    def test_theta3_is_involution(self):
        """theta3 flips the second component and squares to one"""
        f = smooth_spinor(GRID, 1)
        assert np.array_equal(theta3_apply(f).data[:, 1], -f.data[:, 1])
        assert np.array_equal(theta3_apply(theta3_apply(f)).data, f.data)

    @given(a=angles, b=angles)
    def test_phase_composition(self, a, b):
        """T_a T_b = T_(a+b)"""
        f = smooth_spinor(build_star_grid(2, 10.0, 21), 3, width=1.0)
        left = phase_transform(phase_transform(f, a), b)
        right = phase_transform(f, a + b)
        assert np.allclose(left.data, right.data, atol=1e-12)

    def test_phase_transform_needs_spinor(self):
        """Scalar functions are rejected"""
        with pytest.raises(ValueError):
            phase_transform(GraphFunction.zeros(GRID), 1.0)


class TestAssembly:
    """Free and linearized operators"""

    def test_free_operator_spectrum_edge(self):
        """w = alpha^2/4 for equal edges"""
        J = assemble_J(2.0, GRID)
        assert J.w == 1.0 and J.equal_alpha and J.alpha == 2.0

    def test_distinct_alphas(self):
        """w is the smallest alpha_j^2/4 and alpha is undefined"""
        J = assemble_J([1.0, 2.0, 3.0], GRID)
        assert J.w == 0.25
        with pytest.raises(ConfigError):
            J.alpha

    def test_negative_alpha(self):
        """alpha_j must be nonnegative"""
        with pytest.raises(ConfigError):
            assemble_J(-1.0, GRID)

    def test_J0_has_no_shift(self):
        """J0 = diag(-Laplacian, Laplacian)"""
        assert assemble_J0(GRID).w == 0.0

    def test_pseudo_symmetry(self, cubic):
        """theta3 H theta3 = H^* on interior rows"""
        H = assemble_H(2.0, cubic, GRID)
        assert pseudo_symmetry_defect(H) < 1e-12

    def test_absorbing_layer_is_not_in_potential(self, cubic):
        """The absorbing ramp enters the operator but not the stored potential"""
        plain = assemble_H(2.0, cubic, GRID)
        damped = assemble_H(2.0, cubic, GRID, boundary=BoundarySpec(kind="absorbing"))
        assert np.array_equal(plain.potential, damped.potential)
        assert abs(damped.operator.stencil - plain.operator.stencil).max() > 0.5

    def test_dirichlet_vertex_control(self, cubic):
        """Dirichlet vertex rows pin every vertex sample"""
        H = assemble_H(2.0, cubic, GRID, vertex="dirichlet")
        row = H.operator.matrix[0].toarray().ravel()
        assert row[0] == 1.0 and np.count_nonzero(row) == 1


class TestGeneralizedEigenfunctions:
    """The chain H E1 = 0, H E2 = i E1"""

    @pytest.mark.parametrize("samples", [201, 401])
    def test_chain_residuals(self, cubic, samples):
        """Both chain relations hold up to the O(h^2) stencil error"""
        grid = build_star_grid(3, 20.0, samples)
        H = assemble_H(2.0, cubic, grid)
        E = generalized_eigenfunctions(2.0, cubic, grid)
        mask = H.operator.interior_mask()
        scale = np.linalg.norm(E.E1.flat()[mask])
        first = np.linalg.norm(H.apply(E.E1).flat()[mask]) / scale
        second = np.linalg.norm((H.apply(E.E2) - E.E1 * 1j).flat()[mask]) / scale
        assert first < 2e-2, f"||H E1|| / ||E1|| = {first}"
        assert second < 5e-2, f"||H E2 - i E1|| / ||E1|| = {second}"

    def test_chain_residual_converges(self, cubic):
        """Halving h reduces the residual of H E1 by about four"""
        residuals = []
        for samples in (201, 401):
            grid = build_star_grid(3, 20.0, samples)
            H = assemble_H(2.0, cubic, grid)
            E1 = generalized_eigenfunctions(2.0, cubic, grid).E1
            mask = H.operator.interior_mask()
            residuals.append(np.abs(H.apply(E1).flat()[mask]).max())
        assert residuals[0] / residuals[1] > 3.0, f"Residuals {residuals}"

    def test_admissibility(self, cubic):
        """E1 and E2 satisfy the vertex condition, E3 and E4 do not"""
        E = generalized_eigenfunctions(2.0, cubic, GRID)
        verdicts = [kirchhoff_admissible(v).admissible for v in E]
        assert verdicts == [True, True, False, False], f"Got {verdicts}"

    def test_pairing_constant(self, cubic):
        """(E1, theta3 E2) = 3i for the cubic soliton with alpha = 2 on three edges"""
        E = generalized_eigenfunctions(2.0, cubic, GRID)
        gram = pairing_gram([E.E1, E.E2])
        assert gram[0, 1] == pytest.approx(3j, rel=1e-3), f"Got {gram[0, 1]}"
        assert gram[1, 0] == pytest.approx(-3j, rel=1e-3)
        assert abs(gram[0, 0]) < 1e-12 and abs(gram[1, 1]) < 1e-12

    def test_full_sector_basis(self, cubic):
        """The full sector adds N-1 antisymmetric pairs, all Kirchhoff-admissible"""
        basis = root_space_basis(2.0, cubic, GRID, sector="full")
        assert len(basis) == 2 + 2 * (GRID.n_edges - 1)
        for vector in basis[2:]:
            assert np.abs(vector.data.sum(axis=0)).max() < 1e-12, "Antisymmetric modes sum to zero over edges"
            assert kirchhoff_admissible(vector).admissible

    def test_unknown_sector(self, cubic):
        """Only symmetric and full sectors exist"""
        with pytest.raises(ValueError):
            root_space_basis(2.0, cubic, GRID, sector="odd")


class TestRootSpace:
    """Discrete eigenvalues and the continuous projector"""

    def test_symmetric_root_space_has_dimension_two(self, cubic):
        """Only the phase and scaling modes sit near zero in the gap"""
        H = assemble_H(2.0, cubic, build_star_grid(3, 20.0, 401))
        rs = discrete_root_space(H, n_shifts=12, rng=np.random.Generator(np.random.PCG64(7)))
        assert rs.root_space_dim == 2, f"Gap eigenvalues {rs.gap_eigenvalues}"
        assert rs.hypothesis_a_consistent

    def test_distinct_alphas_rejected(self, cubic):
        """The root-space analysis needs equal alpha_j"""
        H = assemble_H(2.0, cubic, GRID, alphas=[2.0, 2.0, 1.5])
        with pytest.raises(ConfigError):
            discrete_root_space(H)

    def test_projector_removes_root_vectors(self):
        """P_c E1 = P_c E2 = 0"""
        rs = phase_scaling_space()
        for vector in rs.basis:
            projected = project_continuous(vector, rs)
            assert graph_norm(projected) < 1e-10 * graph_norm(vector)

    @given(seed=seeds)
    def test_projector_idempotent_and_orthogonal(self, seed):
        """P_c P_c f = P_c f and (P_c f, theta3 xi) = 0"""
        rs = phase_scaling_space()
        once = project_continuous(smooth_spinor(GRID, seed), rs)
        twice = project_continuous(once, rs)
        assert np.allclose(once.data, twice.data, atol=1e-10)
        for xi in rs.basis:
            assert abs(l2_inner(once, theta3_apply(xi))) < 1e-10

    def test_singular_gram(self):
        """A degenerate basis makes the projector fail"""
        rs = replace(phase_scaling_space(), pairing_gram=np.zeros((2, 2), dtype=complex))
        with pytest.raises(GramError):
            project_continuous(smooth_spinor(GRID, 0), rs)


class TestLinearizedFlow:
    """Crank-Nicolson flow of i f_t = H f"""

    def test_kernel_is_stationary(self, cubic):
        """exp(-iHt) E1 stays at E1"""
        H = assemble_H(2.0, cubic, GRID)
        E1 = generalized_eigenfunctions(2.0, cubic, GRID).E1
        moved = flow(E1, H, 1.0, 0.01)
        assert graph_norm(moved - E1) / graph_norm(E1) < 5e-2

    def test_generalized_eigenvector_grows_linearly(self, cubic):
        """exp(-iHt) E2 = E2 + t E1"""
        H = assemble_H(2.0, cubic, GRID)
        E = generalized_eigenfunctions(2.0, cubic, GRID)
        moved = flow(E.E2, H, 1.0, 0.01)
        expected = E.E2 + E.E1
        assert graph_norm(moved - expected) / graph_norm(E.E1) < 5e-2

    def test_forward_backward(self, cubic):
        """Running to t and back returns the data"""
        H = assemble_H(2.0, cubic, GRID)
        f = project_continuous(smooth_spinor(GRID, 4), phase_scaling_space())
        back = flow(flow(f, H, 0.5, 0.01), H, -0.5, 0.01)
        mask = H.operator.interior_mask()
        assert np.abs((back - f).flat()[mask]).max() < 1e-6

    def test_records(self, cubic):
        """States are recorded at t = 0, every stride and the end"""
        H = assemble_H(2.0, cubic, GRID)
        seen = []
        trajectory = evolve_linearized(smooth_spinor(GRID, 2), H, 0.25, 0.01, record_stride=10,
                                       observers=(lambda t, f: seen.append(t),))
        assert trajectory.times == pytest.approx([0.0, 0.1, 0.2, 0.25])
        assert seen == pytest.approx([0.1, 0.2, 0.25])
        assert trajectory.norms().shape == (4,)

    def test_requires_continuous_spinor(self, cubic):
        """Scalar and discontinuous data are rejected"""
        H = assemble_H(2.0, cubic, GRID)
        with pytest.raises(ValueError):
            evolve_linearized(GraphFunction.zeros(GRID), H, 1.0, 0.01)
        jump = sample_on_grid([(1.0, 1.0), (0.0, 0.0), (0.0, 0.0)], GRID)
        with pytest.raises(KirchhoffConditionError):
            evolve_linearized(jump, H, 1.0, 0.01)

    def test_free_flow_matches_J(self):
        """exp(-iJt) = T_(-wt) exp(-iJ0 t) for equal edges"""
        J = assemble_J(2.0, GRID)
        f = smooth_spinor(GRID, 9)
        direct = flow(f, J, 1.0, 0.01)
        factored = free_flow(f, assemble_J0(GRID), J.w, 1.0, 0.01)
        assert graph_norm(direct - factored) / graph_norm(direct) < 1e-2

    def test_scattering_limit_needs_dirichlet(self, cubic):
        """The backward free flow is not defined with an absorbing layer"""
        H = assemble_H(2.0, cubic, GRID, boundary=BoundarySpec(kind="absorbing"))
        with pytest.raises(ConfigError):
            scattering_limit_check(smooth_spinor(GRID, 0), H, 1.0)

    def test_scattering_limit_report(self, cubic):
        """Increments and defects come back per checkpoint"""
        H = assemble_H(2.0, cubic, GRID)
        f = project_continuous(smooth_spinor(GRID, 5), phase_scaling_space())
        report = scattering_limit_check(f, H, 2.0, checkpoints=[1.0, 2.0], dt=0.02)
        assert len(report.increments) == 1 and len(report.defects) == 2
        assert report.final_defect == report.defects[-1]
        assert report.f_plus.is_spinor
